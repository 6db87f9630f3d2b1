use crate::element::Element;
use crate::error::{shape_mismatch, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Silu,
    Relu,
    Square,
    /// Multiplication by a constant.
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

pub(crate) fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// Numpy-style broadcast of two shapes, aligned on the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat source index for every output element of a broadcast, or `None`
/// when `src` already has the output shape.
fn source_indices(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let n = out.len();
    let offset = n - src.len();
    // Source strides with 0 on broadcast axes.
    let mut strides = vec![0usize; n];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        idx.push(flat);
        for ax in (0..n).rev() {
            counter[ax] += 1;
            flat += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Some(idx)
}

fn gather<E: Element>(t: &Tensor<E>, idx: &Option<Vec<usize>>) -> Vec<E> {
    match idx {
        None => t.to_vec(),
        Some(idx) => {
            let d = t.data();
            idx.iter().map(|&i| d[i]).collect()
        }
    }
}

/// Sums `values` (output-shaped) back into a tensor of `shape`.
fn scatter_sum<E: Element>(values: Vec<E>, idx: &Option<Vec<usize>>, shape: &[usize]) -> Tensor<E> {
    match idx {
        None => Tensor::from_parts(shape.to_vec(), values),
        Some(idx) => {
            let mut out = vec![E::zero(); shape.iter().product()];
            for (&i, v) in idx.iter().zip(values) {
                out[i] = out[i] + v;
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
    }
}

impl<E: Element> Graph<E> {
    pub fn unary(&self, op: Unary, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let f: fn(E, E) -> E = match op {
            Unary::Tanh => |x, _| x.tanh(),
            Unary::Sigmoid => |x, _| sigmoid(x),
            Unary::Silu => |x, _| x * sigmoid(x),
            Unary::Relu => |x, _| if x > E::zero() { x } else { E::zero() },
            Unary::Square => |x, _| x * x,
            Unary::Scale(_) => |x, alpha| x * alpha,
        };
        let alpha = match op {
            Unary::Scale(alpha) => E::from_f64(alpha),
            _ => E::zero(),
        };
        let y = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().map(|&v| f(v, alpha)).collect(),
        );
        Ok(self.record(y, &[a], move |args| {
            let x = args.inputs[0].data();
            let y = args.output.data();
            let g = args.grad.data();
            let dx: Vec<E> = match op {
                Unary::Tanh => g
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * (E::one() - y * y))
                    .collect(),
                Unary::Sigmoid => g
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * y * (E::one() - y))
                    .collect(),
                Unary::Silu => g
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (E::one() - s))
                    })
                    .collect(),
                Unary::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                    .collect(),
                Unary::Square => g
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| g * (x + x))
                    .collect(),
                Unary::Scale(_) => g.iter().map(|&g| g * alpha).collect(),
            };
            vec![Some(Tensor::from_parts(args.grad.shape().to_vec(), dx))]
        }))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn silu(&self, a: Var) -> Result<Var> {
        self.unary(Unary::Silu, a)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn scale(&self, a: Var, alpha: f64) -> Result<Var> {
        self.unary(Unary::Scale(alpha), a)
    }

    /// Elementwise binary op with trailing-aligned broadcasting.
    pub fn binary(&self, op: Binary, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let ta = self.value(a);
        let tb = self.value(b);
        let out_shape = broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| shape_mismatch("elementwise", ta.shape(), tb.shape()))?;
        let ia = source_indices(ta.shape(), &out_shape);
        let ib = source_indices(tb.shape(), &out_shape);
        let va = gather(&ta, &ia);
        let vb = gather(&tb, &ib);
        let f: fn(E, E) -> E = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let out = Tensor::from_parts(
            out_shape,
            va.iter().zip(&vb).map(|(&x, &y)| f(x, y)).collect(),
        );
        // Broadcast operands are only kept for multiplication.
        let saved = if op == Binary::Mul { Some((va, vb)) } else { None };
        Ok(self.record(out, &[a, b], move |args| {
            let g = args.grad.data();
            let sa = args.inputs[0].shape();
            let sb = args.inputs[1].shape();
            let (ga, gb): (Option<Vec<E>>, Option<Vec<E>>) = match op {
                Binary::Add => (
                    args.needs[0].then(|| g.to_vec()),
                    args.needs[1].then(|| g.to_vec()),
                ),
                Binary::Sub => (
                    args.needs[0].then(|| g.to_vec()),
                    args.needs[1].then(|| g.iter().map(|&v| -v).collect()),
                ),
                Binary::Mul => {
                    let (va, vb) = saved.as_ref().unwrap();
                    (
                        args.needs[0].then(|| g.iter().zip(vb).map(|(&g, &y)| g * y).collect()),
                        args.needs[1].then(|| g.iter().zip(va).map(|(&g, &x)| g * x).collect()),
                    )
                }
            };
            vec![
                ga.map(|v| scatter_sum(v, &ia, sa)),
                gb.map(|v| scatter_sum(v, &ib, sb)),
            ]
        }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3, 4, 4], &[2, 3, 1, 1]), Some(vec![2, 3, 4, 4]));
        assert_eq!(broadcast_shape(&[1, 5], &[3, 1]), Some(vec![3, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
    }

    #[test]
    fn broadcast_index_map() {
        let idx = source_indices(&[2, 1], &[2, 3]).unwrap();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
        let idx = source_indices(&[3], &[2, 3]).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 0, 1, 2]);
        assert!(source_indices(&[2, 3], &[2, 3]).is_none());
    }
}
