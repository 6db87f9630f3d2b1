use crate::element::Element;
use crate::error::{shape_mismatch, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which way the affine parameters index a normalized row.
#[derive(Clone, Copy)]
enum Affine {
    /// One (γ, β) per row, cycling with period `channels` (norm2d).
    PerRow { channels: usize },
    /// One (γ, β) per position within the row (layer norm).
    PerColumn,
}

impl Affine {
    fn index(self, row: usize, col: usize) -> usize {
        match self {
            Affine::PerRow { channels } => row % channels,
            Affine::PerColumn => col,
        }
    }
}

struct RowStats<E> {
    xhat: Vec<E>,
    inv_std: Vec<E>,
}

fn normalize_rows<E: Element>(x: &[E], len: usize, eps: E) -> RowStats<E> {
    let rows = x.len() / len;
    let n = E::from_f64(len as f64);
    let mut xhat = vec![E::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        let mean = row.iter().copied().sum::<E>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / n;
        let is = E::one() / (var + eps).sqrt();
        for (dst, &v) in xhat[r * len..(r + 1) * len].iter_mut().zip(row) {
            *dst = (v - mean) * is;
        }
        inv_std.push(is);
    }
    RowStats { xhat, inv_std }
}

impl<E: Element> Graph<E> {
    fn row_norm(&self, x: Var, gamma: Var, beta: Var, len: usize, affine: Affine, eps: E) -> Result<Var> {
        let xt = self.value(x);
        let gt = self.value(gamma);
        let bt = self.value(beta);
        let stats = normalize_rows(xt.data(), len, eps);
        let out: Vec<E> = stats
            .xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| {
                let a = affine.index(i / len, i % len);
                xh * gt.data()[a] + bt.data()[a]
            })
            .collect();
        let out = Tensor::from_parts(xt.shape().to_vec(), out);
        let params = gt.numel();
        Ok(self.record(out, &[x, gamma, beta], move |args| {
            let g = args.grad.data();
            let gamma = args.inputs[1].data();
            let n = E::from_f64(len as f64);
            let mut dx = args.needs[0].then(|| vec![E::zero(); g.len()]);
            let mut dgamma = vec![E::zero(); params];
            let mut dbeta = vec![E::zero(); params];
            let mut dxhat = vec![E::zero(); len];
            for (r, is) in stats.inv_std.iter().enumerate() {
                let xh = &stats.xhat[r * len..(r + 1) * len];
                let gr = &g[r * len..(r + 1) * len];
                let (mut sum_d, mut sum_dx) = (E::zero(), E::zero());
                for j in 0..len {
                    let a = affine.index(r, j);
                    dgamma[a] = dgamma[a] + gr[j] * xh[j];
                    dbeta[a] = dbeta[a] + gr[j];
                    dxhat[j] = gr[j] * gamma[a];
                    sum_d = sum_d + dxhat[j];
                    sum_dx = sum_dx + dxhat[j] * xh[j];
                }
                if let Some(dx) = dx.as_mut() {
                    let scale = *is / n;
                    for j in 0..len {
                        dx[r * len + j] = scale * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
                    }
                }
            }
            let pshape = args.inputs[1].shape().to_vec();
            vec![
                dx.map(|d| Tensor::from_parts(args.inputs[0].shape().to_vec(), d)),
                Some(Tensor::from_parts(pshape.clone(), dgamma)),
                Some(Tensor::from_parts(pshape, dbeta)),
            ]
        }))
    }

    /// Per-(batch, channel) normalization over the spatial extent of
    /// `[B,C,H,W]`, followed by a per-channel affine map.
    pub fn norm2d(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x);
        let &[_, c, h, w] = shape.as_slice() else {
            return Err(shape_mismatch("norm2d", &shape, &[0, 0, 0, 0]));
        };
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(shape_mismatch("norm2d", &self.shape(p), &[c]));
            }
        }
        if eps < 0.0 || (eps == 0.0 && h * w == 1) {
            return Err(Error::DegenerateInput {
                op: "norm2d",
                detail: format!("eps = {eps} with {h}x{w} slices"),
            });
        }
        self.row_norm(x, gamma, beta, h * w, Affine::PerRow { channels: c }, E::from_f64(eps))
    }

    /// Normalization over the last axis with per-feature affine parameters.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x);
        let d = *shape.last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(shape_mismatch("layer_norm", &self.shape(p), &[d]));
            }
        }
        if eps < 0.0 || (eps == 0.0 && d == 1) {
            return Err(Error::DegenerateInput {
                op: "layer_norm",
                detail: format!("eps = {eps} with {d} features"),
            });
        }
        self.row_norm(x, gamma, beta, d, Affine::PerColumn, E::from_f64(eps))
    }
}
