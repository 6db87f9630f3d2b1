use crate::element::Element;
use crate::error::{geometry, shape_mismatch, Result};
use crate::graph::{Graph, Var};
use crate::ops::linalg::gemm;
use crate::tensor::Tensor;

/// Spatial geometry shared by convolution, its transpose, and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn new(kh: usize, kw: usize, stride: usize, padding: usize) -> Self {
        Self {
            kh,
            kw,
            stride,
            padding,
        }
    }

    /// Output extent `floor((n + 2p − k)/s) + 1`, or `None` if it would be < 1.
    pub fn out_extent(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
        if stride == 0 || n + 2 * padding < k {
            return None;
        }
        Some((n + 2 * padding - k) / stride + 1)
    }

    pub fn output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            Self::out_extent(h, self.kh, self.stride, self.padding)?,
            Self::out_extent(w, self.kw, self.stride, self.padding)?,
        ))
    }
}

/// Unfolds one `[c,h,w]` image into `[c·kh·kw, ho·wo]` patch columns.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    let (kh, kw, s, p) = (win.kh, win.kw, win.stride as isize, win.padding as isize);
    let n = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * n;
                let dst = &mut cols[row..row + n];
                for oi in 0..ho {
                    let ii = oi as isize * s - p + ki as isize;
                    let line = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize {
                        line.fill(E::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = oj as isize * s - p + kj as isize;
                        *v = if jj < 0 || jj >= w as isize {
                            E::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[c,h,w]`.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    x: &mut [E],
) {
    let (kh, kw, s, p) = (win.kh, win.kw, win.stride as isize, win.padding as isize);
    let n = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * n;
                let src = &cols[row..row + n];
                for oi in 0..ho {
                    let ii = oi as isize * s - p + ki as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = oj as isize * s - p + kj as isize;
                        if jj >= 0 && jj < w as isize {
                            dst[jj as usize] = dst[jj as usize] + src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(win: Window) -> bool {
    win.kh == 1 && win.kw == 1 && win.stride == 1 && win.padding == 0
}

fn four_d(op: &'static str, s: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(s).map_err(|_| shape_mismatch(op, s, &[0, 0, 0, 0]))
}

impl<E: Element> Graph<E> {
    /// Grouped 2-D cross-correlation. `x: [B,C,H,W]`, `w: [O,C/g,kh,kw]`,
    /// optional `bias: [O]`.
    pub fn conv2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let [b, c, h, wd] = four_d("conv2d", xt.shape())?;
        let [o, cg, kh, kw] = four_d("conv2d", wt.shape())?;
        if groups == 0 || c % groups != 0 || o % groups != 0 || cg != c / groups {
            return Err(shape_mismatch("conv2d", xt.shape(), wt.shape()));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [o] {
                return Err(shape_mismatch("conv2d", &self.shape(bv), &[o]));
            }
        }
        let win = Window::new(kh, kw, stride, padding);
        let (ho, wo) = win.output(h, wd).ok_or_else(|| {
            geometry("conv2d", format!("{h}x{wd} input, {kh}x{kw} kernel, stride {stride}, padding {padding}"))
        })?;
        let og = o / groups;
        let kk = cg * kh * kw;
        let n = ho * wo;
        let pointwise = is_pointwise(win);

        let mut out = vec![E::zero(); b * o * n];
        let mut cols = vec![E::zero(); if pointwise { 0 } else { kk * n }];
        for bi in 0..b {
            for gi in 0..groups {
                let xg = &xt.data()[(bi * c + gi * cg) * h * wd..(bi * c + (gi + 1) * cg) * h * wd];
                let cols_ref: &[E] = if pointwise {
                    xg
                } else {
                    im2col(xg, cg, h, wd, win, ho, wo, &mut cols);
                    &cols
                };
                let wg = &wt.data()[gi * og * kk..(gi + 1) * og * kk];
                let dst = &mut out[(bi * o + gi * og) * n..(bi * o + (gi + 1) * og) * n];
                gemm(og, kk, n, wg, false, cols_ref, false, dst, false);
            }
        }
        if let Some(bv) = bias {
            let bt = self.value(bv);
            for (plane, &bias) in out.chunks_exact_mut(n).zip(bt.data().iter().cycle()) {
                for v in plane {
                    *v = *v + bias;
                }
            }
        }

        let out = Tensor::from_parts(vec![b, o, ho, wo], out);
        let inputs: Vec<Var> = std::iter::once(x).chain([w]).chain(bias).collect();
        Ok(self.record(out, &inputs, move |args| {
            let (xv, wv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let mut dx = args.needs[0].then(|| vec![E::zero(); b * c * h * wd]);
            let mut dw = args.needs[1].then(|| vec![E::zero(); o * kk]);
            let mut cols = vec![E::zero(); if pointwise { 0 } else { kk * n }];
            let mut dcols = vec![E::zero(); if dx.is_some() { kk * n } else { 0 }];
            for bi in 0..b {
                for gi in 0..groups {
                    let gg = &g[(bi * o + gi * og) * n..(bi * o + (gi + 1) * og) * n];
                    if let Some(dw) = dw.as_mut() {
                        let xg = &xv[(bi * c + gi * cg) * h * wd..(bi * c + (gi + 1) * cg) * h * wd];
                        let cols_ref: &[E] = if pointwise {
                            xg
                        } else {
                            im2col(xg, cg, h, wd, win, ho, wo, &mut cols);
                            &cols
                        };
                        gemm(og, n, kk, gg, false, cols_ref, true, &mut dw[gi * og * kk..(gi + 1) * og * kk], true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let wg = &wv[gi * og * kk..(gi + 1) * og * kk];
                        let dst = &mut dx[(bi * c + gi * cg) * h * wd..(bi * c + (gi + 1) * cg) * h * wd];
                        if pointwise {
                            gemm(kk, og, n, wg, true, gg, false, dst, true);
                        } else {
                            gemm(kk, og, n, wg, true, gg, false, &mut dcols, false);
                            col2im(&dcols, cg, h, wd, win, ho, wo, dst);
                        }
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(vec![b, c, h, wd], d)),
                dw.map(|d| Tensor::from_parts(vec![o, cg, kh, kw], d)),
            ];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![E::zero(); o];
                    for (i, plane) in g.chunks_exact(n).enumerate() {
                        db[i % o] = db[i % o] + plane.iter().copied().sum();
                    }
                    Tensor::from_parts(vec![o], db)
                }));
            }
            grads
        }))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`] with
    /// `groups = 1`). `x: [B,Cin,H,W]`, `w: [Cin,Cout,kh,kw]`; output extent
    /// `(H−1)·s − 2p + kh`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let [b, cin, h, wd] = four_d("conv_transpose2d", xt.shape())?;
        let [wcin, cout, kh, kw] = four_d("conv_transpose2d", wt.shape())?;
        if wcin != cin {
            return Err(shape_mismatch("conv_transpose2d", xt.shape(), wt.shape()));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(shape_mismatch("conv_transpose2d", &self.shape(bv), &[cout]));
            }
        }
        let extent = |n: usize, k: usize| -> Option<usize> {
            let full = (n.checked_sub(1)?) * stride + k;
            full.checked_sub(2 * padding).filter(|&e| e >= 1)
        };
        let (ho, wo) = match (extent(h, kh), extent(wd, kw)) {
            (Some(ho), Some(wo)) if stride >= 1 => (ho, wo),
            _ => {
                return Err(geometry(
                    "conv_transpose2d",
                    format!("{h}x{wd} input, {kh}x{kw} kernel, stride {stride}, padding {padding}"),
                ))
            }
        };
        let win = Window::new(kh, kw, stride, padding);
        let kk = cout * kh * kw;
        let n = h * wd;
        let mut out = vec![E::zero(); b * cout * ho * wo];
        let mut cols = vec![E::zero(); kk * n];
        for bi in 0..b {
            let xb = &xt.data()[bi * cin * n..(bi + 1) * cin * n];
            gemm(kk, cin, n, wt.data(), true, xb, false, &mut cols, false);
            col2im(&cols, cout, ho, wo, win, h, wd, &mut out[bi * cout * ho * wo..(bi + 1) * cout * ho * wo]);
        }
        if let Some(bv) = bias {
            let bt = self.value(bv);
            for (plane, &bias) in out.chunks_exact_mut(ho * wo).zip(bt.data().iter().cycle()) {
                for v in plane {
                    *v = *v + bias;
                }
            }
        }
        let out = Tensor::from_parts(vec![b, cout, ho, wo], out);
        let inputs: Vec<Var> = std::iter::once(x).chain([w]).chain(bias).collect();
        Ok(self.record(out, &inputs, move |args| {
            let (xv, wv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let mut dx = args.needs[0].then(|| vec![E::zero(); b * cin * n]);
            let mut dw = args.needs[1].then(|| vec![E::zero(); cin * kk]);
            let mut cols = vec![E::zero(); kk * n];
            for bi in 0..b {
                // The gradient of a transposed conv is an ordinary conv of
                // the upstream gradient with the same kernel.
                let gb = &g[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
                im2col(gb, cout, ho, wo, win, h, wd, &mut cols);
                if let Some(dx) = dx.as_mut() {
                    gemm(cin, kk, n, wv, false, &cols, false, &mut dx[bi * cin * n..(bi + 1) * cin * n], false);
                }
                if let Some(dw) = dw.as_mut() {
                    gemm(cin, n, kk, &xv[bi * cin * n..(bi + 1) * cin * n], false, &cols, true, dw, true);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(vec![b, cin, h, wd], d)),
                dw.map(|d| Tensor::from_parts(vec![cin, cout, kh, kw], d)),
            ];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![E::zero(); cout];
                    for (i, plane) in g.chunks_exact(ho * wo).enumerate() {
                        db[i % cout] = db[i % cout] + plane.iter().copied().sum();
                    }
                    Tensor::from_parts(vec![cout], db)
                }));
            }
            grads
        }))
    }
}
