use crate::element::Element;
use crate::error::{shape_mismatch, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

fn permute_data<E: Element>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<E>) {
    let n = shape.len();
    let mut in_strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut counter = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..data.len() {
        out.push(data[flat]);
        for ax in (0..n).rev() {
            counter[ax] += 1;
            flat += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            flat -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (out_shape, out)
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<E: Element> Graph<E> {
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).reshape(shape.to_vec())?;
        Ok(self.record(out, &[a], |args| {
            vec![Some(args.grad.reshape(args.inputs[0].shape().to_vec()).unwrap())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let n = t.ndim();
        let mut seen = vec![false; n];
        if axes.len() != n || axes.iter().any(|&x| x >= n || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::InvalidTensor(format!("bad permutation {axes:?} for rank {n}")));
        }
        let (shape, data) = permute_data(t.data(), t.shape(), axes);
        let mut inverse = vec![0; n];
        for (i, &x) in axes.iter().enumerate() {
            inverse[x] = i;
        }
        Ok(self.record(Tensor::from_parts(shape, data), &[a], move |args| {
            let (shape, data) = permute_data(args.grad.data(), args.grad.shape(), &inverse);
            vec![Some(Tensor::from_parts(shape, data))]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| {
            Error::InvalidTensor("concat of zero tensors".into())
        })?);
        if axis >= first.len() {
            return Err(Error::InvalidTensor(format!("concat axis {axis} out of range")));
        }
        let values: Vec<Tensor<E>> = parts
            .iter()
            .map(|&p| self.check(p).map(|_| self.value(p)))
            .collect::<Result<_>>()?;
        for v in &values {
            let s = v.shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_mismatch("concat", &first, s));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        Ok(self.record(Tensor::from_parts(shape, out), parts, move |args| {
            let g = args.grad.data();
            let mut grads = Vec::with_capacity(extents.len());
            let mut start = 0;
            for (i, &e) in extents.iter().enumerate() {
                if args.needs[i] {
                    let mut d = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        d.extend_from_slice(&g[base..base + e * inner]);
                    }
                    grads.push(Some(Tensor::from_parts(args.inputs[i].shape().to_vec(), d)));
                } else {
                    grads.push(None);
                }
                start += e;
            }
            grads
        }))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if axis >= t.ndim() || start + len > t.shape()[axis] || len == 0 {
            return Err(Error::InvalidTensor(format!(
                "narrow {start}..{} on axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        Ok(self.record(Tensor::from_parts(shape, out), &[a], move |args| {
            let g = args.grad.data();
            let mut d = vec![E::zero(); outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(args.inputs[0].shape().to_vec(), d))]
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        Ok(self.record(Tensor::scalar(s), &[a], |args| {
            vec![Some(Tensor::full(args.inputs[0].shape().to_vec(), args.grad.item()))]
        }))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Reduction over one axis, keeping it with extent 1. `Max` routes the
    /// gradient to the first maximal element.
    pub fn reduce(&self, a: Var, axis: usize, kind: Reduce) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if axis >= t.ndim() {
            return Err(Error::InvalidTensor(format!("reduce axis {axis} out of range")));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let x = t.data();
        let mut out = vec![E::zero(); outer * inner];
        let mut argmax = if kind == Reduce::Max { vec![0usize; outer * inner] } else { Vec::new() };
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dst = o * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let mut s = E::zero();
                        for l in 0..len {
                            s = s + x[base + l * inner];
                        }
                        out[dst] = if kind == Reduce::Mean { s / E::from_f64(len as f64) } else { s };
                    }
                    Reduce::Max => {
                        let mut best = 0;
                        for l in 1..len {
                            if x[base + l * inner] > x[base + best * inner] {
                                best = l;
                            }
                        }
                        argmax[dst] = best;
                        out[dst] = x[base + best * inner];
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        Ok(self.record(Tensor::from_parts(shape, out), &[a], move |args| {
            let g = args.grad.data();
            let mut dx = vec![E::zero(); outer * len * inner];
            let w = match kind {
                Reduce::Mean => E::one() / E::from_f64(len as f64),
                _ => E::one(),
            };
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let gv = g[o * inner + i];
                    match kind {
                        Reduce::Max => dx[base + argmax[o * inner + i] * inner] = gv,
                        _ => {
                            for l in 0..len {
                                dx[base + l * inner] = gv * w;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(args.inputs[0].shape().to_vec(), dx))]
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let n = *t.shape().last().unwrap();
        let mut out = t.to_vec();
        for row in out.chunks_exact_mut(n) {
            let m = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
            let mut s = E::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        Ok(self.record(Tensor::from_parts(t.shape().to_vec(), out), &[a], move |args| {
            let y = args.output.data();
            let g = args.grad.data();
            let mut dx = vec![E::zero(); y.len()];
            for ((dx, y), g) in dx.chunks_exact_mut(n).zip(y.chunks_exact(n)).zip(g.chunks_exact(n)) {
                let dot: E = y.iter().zip(g).map(|(&y, &g)| y * g).sum();
                for j in 0..n {
                    dx[j] = y[j] * (g[j] - dot);
                }
            }
            vec![Some(Tensor::from_parts(args.grad.shape().to_vec(), dx))]
        }))
    }
}
