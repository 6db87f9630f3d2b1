use crate::element::Element;
use crate::error::{geometry, shape_mismatch, Result};
use crate::graph::{Graph, Var};
use crate::ops::conv::Window;
use crate::ops::shape::Reduce;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Max,
    Avg,
    GlobalMax,
    GlobalAvg,
}

impl<E: Element> Graph<E> {
    /// 2-D pooling over `[B,C,H,W]`. Windowed kinds use kernel `k` and
    /// stride `s` without padding; global kinds ignore both and return
    /// `[B,C,1,1]`.
    pub fn pool2d(&self, kind: Pool, x: Var, k: usize, s: usize) -> Result<Var> {
        let shape = self.shape(x);
        let &[b, c, h, w] = shape.as_slice() else {
            return Err(shape_mismatch("pool2d", &shape, &[0, 0, 0, 0]));
        };
        match kind {
            Pool::GlobalMax | Pool::GlobalAvg => {
                let flat = self.reshape(x, &[b, c, h * w])?;
                let red = if kind == Pool::GlobalMax { Reduce::Max } else { Reduce::Mean };
                let r = self.reduce(flat, 2, red)?;
                self.reshape(r, &[b, c, 1, 1])
            }
            Pool::Max | Pool::Avg => self.window_pool(kind == Pool::Max, x, [b, c, h, w], k, s),
        }
    }

    fn window_pool(&self, is_max: bool, x: Var, [b, c, h, w]: [usize; 4], k: usize, s: usize) -> Result<Var> {
        let (ho, wo) = Window::new(k, k, s, 0)
            .output(h, w)
            .filter(|_| k >= 1)
            .ok_or_else(|| geometry("pool2d", format!("{h}x{w} input, window {k}, stride {s}")))?;
        let xt = self.value(x);
        let xd = xt.data();
        let planes = b * c;
        let mut out = vec![E::zero(); planes * ho * wo];
        let mut argmax = if is_max { vec![0usize; out.len()] } else { Vec::new() };
        let inv = E::one() / E::from_f64((k * k) as f64);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let dst = (p * ho + oi) * wo + oj;
                    if is_max {
                        let mut best = (oi * s) * w + oj * s;
                        for ki in 0..k {
                            for kj in 0..k {
                                let idx = (oi * s + ki) * w + oj * s + kj;
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                        }
                        argmax[dst] = p * h * w + best;
                        out[dst] = plane[best];
                    } else {
                        let mut acc = E::zero();
                        for ki in 0..k {
                            for kj in 0..k {
                                acc = acc + plane[(oi * s + ki) * w + oj * s + kj];
                            }
                        }
                        out[dst] = acc * inv;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![b, c, ho, wo], out);
        Ok(self.record(out, &[x], move |args| {
            let g = args.grad.data();
            let mut dx = vec![E::zero(); planes * h * w];
            if is_max {
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
            } else {
                for p in 0..planes {
                    for oi in 0..ho {
                        for oj in 0..wo {
                            let gv = g[(p * ho + oi) * wo + oj] * inv;
                            for ki in 0..k {
                                for kj in 0..k {
                                    let idx = p * h * w + (oi * s + ki) * w + oj * s + kj;
                                    dx[idx] = dx[idx] + gv;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![b, c, h, w], dx))]
        }))
    }

    /// Nearest-neighbour 2× upsampling: `out[.., i, j] = x[.., i/2, j/2]`.
    pub fn upsample_nearest2x(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let &[b, c, h, w] = shape.as_slice() else {
            return Err(shape_mismatch("upsample_nearest2x", &shape, &[0, 0, 0, 0]));
        };
        let xt = self.value(x);
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(b * c * h2 * w2);
        for plane in xt.data().chunks_exact(h * w) {
            for i in 0..h2 {
                let row = &plane[(i / 2) * w..(i / 2 + 1) * w];
                for j in 0..w2 {
                    out.push(row[j / 2]);
                }
            }
        }
        let out = Tensor::from_parts(vec![b, c, h2, w2], out);
        Ok(self.record(out, &[x], move |args| {
            let g = args.grad.data();
            let mut dx = vec![E::zero(); b * c * h * w];
            for (p, plane) in g.chunks_exact(h2 * w2).enumerate() {
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for i in 0..h2 {
                    for j in 0..w2 {
                        let d = &mut dst[(i / 2) * w + j / 2];
                        *d = *d + plane[i * w2 + j];
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![b, c, h, w], dx))]
        }))
    }
}
