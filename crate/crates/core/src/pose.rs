//! Heatmap pose pipeline: stem tokens → ViT encoder → deconv head, plus
//! target rendering, loss, decoding and PCK.

use std::io::Write;

use kanfpn_autodiff::{Element, Tensor, Var};

use crate::error::{invalid, shape_mismatch, Result};
use crate::nn::{Conv2d, DeconvBlock, LayerNorm, Module, TransformerBlock};
use crate::params::{Bound, Init, ParamStore};
use crate::stem::{Stem, StemConfig, StemVariant};

pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseModelConfig {
    pub stem: StemConfig,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_keypoints: usize,
    /// Width of both deconv blocks of the head.
    pub head_channels: usize,
}

impl PoseModelConfig {
    pub const HEATMAP_STRIDE: usize = 4;

    pub fn new(variant: StemVariant, input: (usize, usize)) -> Self {
        Self {
            stem: StemConfig::new(variant, input, 64),
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            num_keypoints: 8,
            head_channels: 64,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.stem.embed_dim
    }

    pub fn input(&self) -> (usize, usize) {
        self.stem.input
    }

    pub fn heatmap_extent(&self) -> (usize, usize) {
        let (h, w) = self.stem.input;
        (h / Self::HEATMAP_STRIDE, w / Self::HEATMAP_STRIDE)
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        if self.heads == 0 || self.embed_dim() % self.heads != 0 {
            return Err(invalid(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim(),
                self.heads
            )));
        }
        if self.num_keypoints == 0 || self.head_channels == 0 {
            return Err(invalid("keypoint count and head width must be positive"));
        }
        Ok(())
    }
}

/// `depth` pre-norm transformer blocks (`encoder.block{i}`) and a final
/// layer norm (`encoder.norm`).
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new(dim: usize, depth: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            blocks: (0..depth)
                .map(|i| TransformerBlock::new(&format!("encoder.block{i}"), dim, heads, mlp_ratio))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new("encoder.norm", dim),
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, tokens: Var) -> Result<Var> {
        let mut h = tokens;
        for b in &self.blocks {
            h = b.forward(p, h)?;
        }
        self.norm.forward(p, h)
    }
}

impl Module for Encoder {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        for b in &self.blocks {
            b.init(store, init)?;
        }
        self.norm.init(store, init)
    }

    fn param_count(&self) -> usize {
        self.blocks.iter().map(Module::param_count).sum::<usize>() + self.norm.param_count()
    }
}

/// Two 2× deconv blocks and a 1×1 conv to `K` heatmaps.
#[derive(Debug, Clone)]
pub struct HeatmapHead {
    dim: usize,
    deconv1: DeconvBlock,
    deconv2: DeconvBlock,
    fin: Conv2d,
}

impl HeatmapHead {
    pub fn new(dim: usize, channels: usize, keypoints: usize) -> Self {
        Self {
            dim,
            deconv1: DeconvBlock::new("head.deconv1", dim, channels),
            deconv2: DeconvBlock::new("head.deconv2", channels, channels),
            fin: Conv2d::new("head.final", channels, keypoints, 1, 1, 0),
        }
    }

    /// `feat: [B, T, D]` with `T = h·w` → heatmaps `[B, K, 4h, 4w]`.
    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, feat: Var, grid: (usize, usize)) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(feat);
        if shape.len() != 3 || shape[1] != grid.0 * grid.1 || shape[2] != self.dim {
            return Err(shape_mismatch("heatmap head", &shape, &[shape[0], grid.0 * grid.1, self.dim]));
        }
        let x = g.permute(feat, &[0, 2, 1])?;
        let x = g.reshape(x, &[shape[0], self.dim, grid.0, grid.1])?;
        let x = self.deconv1.forward(p, x)?;
        let x = self.deconv2.forward(p, x)?;
        self.fin.forward(p, x)
    }
}

impl Module for HeatmapHead {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.deconv1.init(store, init)?;
        self.deconv2.init(store, init)?;
        self.fin.init(store, init)
    }

    fn param_count(&self) -> usize {
        self.deconv1.param_count() + self.deconv2.param_count() + self.fin.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct PoseModel {
    pub cfg: PoseModelConfig,
    pub stem: Stem,
    pub encoder: Encoder,
    pub head: HeatmapHead,
}

impl PoseModel {
    pub fn new(cfg: PoseModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim();
        Ok(Self {
            stem: Stem::new(cfg.stem.clone())?,
            encoder: Encoder::new(d, cfg.depth, cfg.heads, cfg.mlp_ratio)?,
            head: HeatmapHead::new(d, cfg.head_channels, cfg.num_keypoints),
            cfg,
        })
    }

    pub fn variant(&self) -> StemVariant {
        self.cfg.stem.variant
    }

    pub fn init_params<E: Element>(&self, seed: u64) -> Result<ParamStore<E>> {
        crate::nn::build_params(self, seed)
    }

    /// Images `[B,3,H,W]` → heatmaps `[B,K,H/4,W/4]`.
    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, images: Var) -> Result<Var> {
        let tokens = self.stem.forward(p, images)?;
        let feat = self.encoder.forward(p, tokens)?;
        self.head.forward(p, feat, self.cfg.stem.token_grid())
    }
}

impl Module for PoseModel {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.stem.init(store, init)?;
        self.encoder.init(store, init)?;
        self.head.init(store, init)
    }

    fn param_count(&self) -> usize {
        self.stem.param_count() + self.encoder.param_count() + self.head.param_count()
    }
}

/// One ground-truth keypoint in input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, visible: true }
    }

    pub fn hidden() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            visible: false,
        }
    }
}

/// A decoded keypoint; `score` is the heatmap peak value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Unnormalized Gaussians `exp(-d²/2σ²)` centred at `kp / stride` on an
/// `extent` grid (cell `j` has centre `j`). Invisible keypoints give zero
/// channels. Returns `[B, K, Hh, Wh]`.
pub fn render_targets<E: Element>(
    kps: &[Vec<Keypoint>],
    extent: (usize, usize),
    stride: f64,
    sigma: f64,
) -> Result<Tensor<E>> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let k = kps.first().map_or(0, Vec::len);
    if kps.iter().any(|s| s.len() != k) {
        return Err(invalid("samples disagree on keypoint count"));
    }
    let (hh, wh) = extent;
    let mut data = vec![E::zero(); kps.len() * k * hh * wh];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (b, sample) in kps.iter().enumerate() {
        for (j, kp) in sample.iter().enumerate() {
            if !kp.visible {
                continue;
            }
            let (u, v) = (kp.x / stride, kp.y / stride);
            let base = (b * k + j) * hh * wh;
            for y in 0..hh {
                let dy = y as f64 - v;
                for x in 0..wh {
                    let dx = x as f64 - u;
                    data[base + y * wh + x] = E::from_f64((-(dx * dx + dy * dy) * inv).exp());
                }
            }
        }
    }
    Ok(Tensor::new([kps.len(), k, hh, wh], data)?)
}

/// Visibility mask `[B, K]` as 0/1 values.
pub fn visibility<E: Element>(kps: &[Vec<Keypoint>]) -> Tensor<E> {
    let k = kps.first().map_or(0, Vec::len);
    let flags: Vec<E> = kps
        .iter()
        .flat_map(|s| s.iter().map(|kp| if kp.visible { E::one() } else { E::zero() }))
        .collect();
    Tensor::new([kps.len(), k], flags).expect("mask extents")
}

/// Mean squared error over the visible channels: the masked squared error
/// sum divided by `visible_channels · Hh · Wh`. With no visible channel the
/// loss is 0 and every gradient is exactly zero.
pub fn mse_loss<E: Element>(p: &Bound<'_, E>, pred: Var, target: &Tensor<E>, mask: &Tensor<E>) -> Result<Var> {
    let g = p.graph();
    let shape = g.shape(pred);
    if shape.as_slice() != target.shape() {
        return Err(shape_mismatch("mse_loss", &shape, target.shape()));
    }
    if mask.shape() != &shape[..2] {
        return Err(shape_mismatch("mse_loss mask", &shape[..2], mask.shape()));
    }
    let n_vis = mask.data().iter().filter(|&&m| m != E::zero()).count();
    let diff = g.sub(pred, g.constant(target.clone()))?;
    let sq = g.square(diff)?;
    let m = g.constant(mask.reshape([shape[0], shape[1], 1, 1])?);
    let total = g.sum(g.mul(sq, m)?)?;
    let denom = (n_vis * shape[2] * shape[3]) as f64;
    Ok(g.scale(total, if n_vis == 0 { 0.0 } else { 1.0 / denom })?)
}

/// Arg-max per channel (first maximum wins), shifted a quarter cell toward
/// the larger horizontal and vertical neighbour, then scaled by `stride`.
pub fn decode_keypoints<E: Element>(heatmaps: &Tensor<E>, stride: f64) -> Result<Vec<Vec<Prediction>>> {
    let &[b, k, h, w] = heatmaps.shape() else {
        return Err(invalid(format!("heatmaps must be [B,K,H,W], got {:?}", heatmaps.shape())));
    };
    let data = heatmaps.data();
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut sample = Vec::with_capacity(k);
        for ki in 0..k {
            let ch = &data[(bi * k + ki) * h * w..(bi * k + ki + 1) * h * w];
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            let (y, x) = (best / w, best % w);
            let at = |yy: usize, xx: usize| ch[yy * w + xx].as_f64();
            let mut fx = x as f64;
            let mut fy = y as f64;
            if x > 0 && x + 1 < w {
                fx += 0.25 * quarter_sign(at(y, x + 1) - at(y, x - 1));
            }
            if y > 0 && y + 1 < h {
                fy += 0.25 * quarter_sign(at(y + 1, x) - at(y - 1, x));
            }
            sample.push(Prediction {
                x: fx * stride,
                y: fy * stride,
                score: ch[best].as_f64(),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

fn quarter_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fraction of visible ground-truth keypoints whose prediction lies within
/// `tau` times the image diagonal. Returns 0 when nothing is visible.
pub fn pck(pred: &[Vec<Prediction>], gt: &[Vec<Keypoint>], tau: f64, image: (usize, usize)) -> f64 {
    let diag = ((image.0 * image.0 + image.1 * image.1) as f64).sqrt();
    let thresh = tau * diag;
    let (mut hit, mut total) = (0usize, 0usize);
    for (ps, gs) in pred.iter().zip(gt) {
        for (p, g) in ps.iter().zip(gs) {
            if !g.visible {
                continue;
            }
            total += 1;
            if (p.x - g.x).hypot(p.y - g.y) <= thresh {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Writes `sample_id,k,x,y,score` rows.
pub fn write_predictions(w: impl Write, ids: &[usize], preds: &[Vec<Prediction>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "k", "x", "y", "score"])?;
    for (&id, sample) in ids.iter().zip(preds) {
        for (k, p) in sample.iter().enumerate() {
            out.write_record([
                id.to_string(),
                k.to_string(),
                format!("{:.4}", p.x),
                format!("{:.4}", p.y),
                format!("{:.6}", p.score),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_sigma_values() {
        let t: Tensor<f64> = render_targets(&[vec![Keypoint::new(20.0, 12.0)]], (8, 8), 4.0, 2.0).unwrap();
        assert_eq!(t.at(&[0, 0, 3, 5]), 1.0);
        assert!((t.at(&[0, 0, 3, 7]) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn hidden_keypoint_renders_zero_channel() {
        let t: Tensor<f32> =
            render_targets(&[vec![Keypoint::hidden(), Keypoint::new(4.0, 4.0)]], (4, 4), 4.0, 2.0).unwrap();
        assert!(t.data()[..16].iter().all(|&v| v == 0.0));
        assert!(t.data()[16..].iter().any(|&v| v > 0.0));
    }

    #[test]
    fn constant_heatmap_decodes_to_origin() {
        let t = Tensor::<f64>::full([1, 1, 5, 6], 0.3);
        let d = decode_keypoints(&t, 4.0).unwrap();
        assert_eq!((d[0][0].x, d[0][0].y), (0.0, 0.0));
        assert_eq!(d[0][0].score, 0.3);
    }

    #[test]
    fn pck_examples() {
        let gt = vec![vec![Keypoint::new(10.0, 10.0), Keypoint::new(20.0, 5.0)]];
        let exact: Vec<Vec<Prediction>> =
            vec![gt[0].iter().map(|k| Prediction { x: k.x, y: k.y, score: 1.0 }).collect()];
        assert_eq!(pck(&exact, &gt, 0.05, (32, 32)), 1.0);
        let mut half = exact.clone();
        half[0][1].x += 30.0;
        assert_eq!(pck(&half, &gt, 0.05, (32, 32)), 0.5);
        let far = vec![vec![Prediction { x: 1e3, y: 1e3, score: 0.0 }; 2]];
        assert_eq!(pck(&far, &gt, 0.05, (32, 32)), 0.0);
        assert_eq!(pck(&far, &[vec![Keypoint::hidden(); 2]], 0.05, (32, 32)), 0.0);
    }

    #[test]
    fn prediction_csv_layout() {
        let mut buf = Vec::new();
        write_predictions(&mut buf, &[7], &[vec![Prediction { x: 1.5, y: 2.0, score: 0.9 }]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "sample_id,k,x,y,score\n7,0,1.5000,2.0000,0.900000\n");
    }
}
