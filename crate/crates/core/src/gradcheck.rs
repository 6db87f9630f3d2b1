//! Named finite-difference gradient checks at minimal `f64` geometries.
//!
//! Every scope builds a small input and a freshly initialized module,
//! jitters all parameters, contracts the output with fixed random weights
//! and compares reverse-mode gradients against central differences.

use kanfpn_autodiff::check::{check_gradients, GradCheckOptions, GradReport, Stencil};
use kanfpn_autodiff::{Graph, Pool, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cbam::{Cbam, CbamConfig};
use crate::error::{Error, Result};
use crate::kagn::{gram_basis, BottleneckKagnConv2d, KagnConv2d, KagnConvConfig};
use crate::nn::{build_params, ConvBlock, DeconvBlock, Linear, Mhsa, Module, TransformerBlock};
use crate::params::{Bound, ParamStore};
use crate::pose::{mse_loss, render_targets, visibility, Encoder, HeatmapHead, Keypoint, PoseModel, PoseModelConfig};
use crate::stem::{FeaturePyramid, Fpn, Stem, StemConfig, StemVariant};

/// Tolerance for single ops.
pub const OP_TOL: f64 = 1e-6;
/// Tolerance for composite layers and pipelines.
pub const LAYER_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeKind {
    Op,
    Layer,
}

impl ScopeKind {
    pub fn tolerance(self) -> f64 {
        match self {
            ScopeKind::Op => OP_TOL,
            ScopeKind::Layer => LAYER_TOL,
        }
    }
}

pub struct Scope {
    pub name: &'static str,
    pub kind: ScopeKind,
    run: fn(u64) -> Result<GradReport>,
}

impl Scope {
    pub fn run(&self, seed: u64) -> Result<GradReport> {
        (self.run)(seed)
    }
}

macro_rules! scopes {
    ($($name:literal => $kind:ident, $f:expr;)*) => {
        &[$(Scope { name: $name, kind: ScopeKind::$kind, run: $f },)*]
    };
}

pub static SCOPES: &[Scope] = scopes! {
    "matmul" => Op, |s| op(s, &[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
    "conv2d" => Op, |s| op(s, &[&[2, 4, 6, 5], &[4, 2, 3, 3], &[4]], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2));
    "conv_transpose2d" => Op, |s| op(s, &[&[1, 3, 3, 3], &[3, 2, 4, 4], &[2]], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1));
    "norm2d" => Op, |s| op(s, &[&[2, 3, 4, 4], &[3], &[3]], |g, v| g.norm2d(v[0], v[1], v[2], 1e-5));
    "layer_norm" => Op, |s| op(s, &[&[2, 3, 8], &[8], &[8]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-6));
    "softmax" => Op, |s| op(s, &[&[3, 6]], |g, v| g.softmax(v[0]));
    "max_pool" => Op, |s| op(s, &[&[1, 2, 4, 6]], |g, v| g.pool2d(Pool::Max, v[0], 2, 2));
    "global_pool" => Op, |s| op(s, &[&[2, 3, 3, 3]], |g, v| {
        let a = g.pool2d(Pool::GlobalAvg, v[0], 0, 0)?;
        let m = g.pool2d(Pool::GlobalMax, v[0], 0, 0)?;
        g.add(a, m)
    });
    "upsample" => Op, |s| op(s, &[&[1, 2, 3, 2]], |g, v| g.upsample_nearest2x(v[0]));
    "elementwise" => Op, |s| op(s, &[&[2, 5], &[5]], |g, v| {
        let a = g.mul(g.tanh(v[0])?, g.sigmoid(v[1])?)?;
        g.sub(g.silu(a)?, g.relu(v[0])?)
    });
    "gram_basis" => Op, gram_basis_scope;
    "linear" => Layer, |s| layer(s, &Linear::new("l", 5, 3), &[2, 4, 5], |m, p, x| m.forward(p, x));
    "conv_block" => Layer, |s| layer(s, &ConvBlock::new("cb", 3, 4, 3, 1), &[1, 3, 6, 6], |m, p, x| m.forward(p, x));
    "mhsa" => Layer, |s| layer(s, &Mhsa::new("attn", 8, 2)?, &[1, 4, 8], |m, p, x| m.forward(p, x));
    "transformer_block" => Layer, |s| layer(s, &TransformerBlock::new("blk", 8, 2, 2)?, &[1, 4, 8], |m, p, x| m.forward(p, x));
    "deconv_block" => Layer, |s| layer(s, &DeconvBlock::new("dc", 3, 2), &[1, 3, 3, 4], |m, p, x| m.forward(p, x));
    "channel_attention" => Layer, |s| layer(s, &cbam(4, 2)?, &[1, 4, 5, 5], |m, p, x| m.channel_attention(p, x));
    "spatial_attention" => Layer, |s| layer(s, &cbam(4, 2)?, &[1, 4, 5, 5], |m, p, x| m.spatial_attention(p, x));
    "cbam" => Layer, |s| layer(s, &cbam(4, 2)?, &[1, 4, 6, 6], |m, p, x| m.forward(p, x));
    "kagn_conv2d_d0" => Layer, |s| kagn_scope(s, 0);
    "kagn_conv2d_d1" => Layer, |s| kagn_scope(s, 1);
    "kagn_conv2d" => Layer, |s| kagn_scope(s, 3);
    "bottleneck_kagn_conv2d" => Layer, |s| {
        let m = BottleneckKagnConv2d::new("bk", KagnConvConfig::new(8, 8, 3).with_bottleneck(4))?;
        layer(s, &m, &[1, 8, 5, 5], |m, p, x| m.forward(p, x))
    };
    "patch_embed" => Layer, |s| stem_scope(s, StemVariant::S0Baseline);
    "cnn_stem" => Layer, |s| stem_scope(s, StemVariant::S1CnnStem);
    "backbone" => Layer, backbone_scope;
    "fpn_s2" => Layer, |s| fpn_scope(s, StemVariant::S2FpnStem);
    "fpn_s4" => Layer, |s| fpn_scope(s, StemVariant::S4Ours);
    "fpn_s5" => Layer, |s| fpn_scope(s, StemVariant::S5LateralCbam);
    "fpn_s6" => Layer, |s| fpn_scope(s, StemVariant::S6KagnFuse);
    "encoder" => Layer, |s| layer(s, &Encoder::new(16, 2, 2, 2)?, &[1, 6, 16], |m, p, x| m.forward(p, x));
    "heatmap_head" => Layer, |s| layer(s, &HeatmapHead::new(8, 4, 3), &[1, 6, 8], |m, p, x| m.forward(p, x, (2, 3)));
    "s4" => Layer, end_to_end_scope;
};

pub fn find(name: &str) -> Result<&'static Scope> {
    SCOPES
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScope(name.to_string()))
}

pub fn scope_names() -> impl Iterator<Item = &'static str> {
    SCOPES.iter().map(|s| s.name)
}

fn random(shape: &[usize], seed: u64, range: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-range..range))
}

fn tensor_err(e: Error) -> kanfpn_autodiff::Error {
    match e {
        Error::Tensor(t) => t,
        other => kanfpn_autodiff::Error::InvalidTensor(other.to_string()),
    }
}

fn options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        seed,
        ..Default::default()
    }
}

// FPN outputs sum to values large enough that central differences at
// h = 1e-5 drown in round-off. Their only kinks are the few CBAM ReLU and
// max units, so a fourth-order stencil at 1e-4 works there. In the ReLU
// backbones the wider step straddles kinks and central 1e-5 is kept.
fn smooth_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-4,
        stencil: Stencil::FivePoint,
        ..options(seed)
    }
}

/// `sum(y ⊙ R)` for a fixed random `R`.
fn project(g: &Graph<f64>, y: Var, seed: u64) -> kanfpn_autodiff::Result<Var> {
    let r = g.constant(random(&g.shape(y), seed ^ 0x9E37, 1.0));
    g.sum(g.mul(y, r)?)
}

fn op(seed: u64, shapes: &[&[usize]], f: fn(&Graph<f64>, &[Var]) -> kanfpn_autodiff::Result<Var>) -> Result<GradReport> {
    let inputs: Vec<(String, Tensor<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("in{i}"), random(s, seed * 101 + i as u64, 1.0)))
        .collect();
    Ok(check_gradients(&inputs, |g, v| project(g, f(g, v)?, seed), &options(seed))?)
}

/// Initialized parameters with every value jittered, so no weight sits on a
/// special point such as an all-zero bias.
fn jittered<M: Module>(module: &M, seed: u64) -> Result<ParamStore<f64>> {
    let mut store = build_params::<f64, M>(module, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_7733);
    for p in store.iter_mut() {
        let data = p.value.data();
        p.value = Tensor::from_fn(p.value.shape().to_vec(), |i| data[i] + rng.random_range(-0.2..0.2));
    }
    Ok(store)
}

fn inputs_with(store: &ParamStore<f64>, data: Vec<(String, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    let mut all = data;
    all.extend(store.iter().map(|p| (p.name.clone(), p.value.clone())));
    all
}

/// Checks a module with one data input `x` of `shape` plus all parameters.
fn layer<M: Module>(
    seed: u64,
    module: &M,
    shape: &[usize],
    f: impl Fn(&M, &Bound<'_, f64>, Var) -> Result<Var>,
) -> Result<GradReport> {
    let store = jittered(module, seed)?;
    let inputs = inputs_with(&store, vec![("x".into(), random(shape, seed * 7 + 1, 1.0))]);
    let report = check_gradients(
        &inputs,
        |g, v| {
            let p = store.bind_vars(g, &v[1..]).map_err(tensor_err)?;
            let y = f(module, &p, v[0]).map_err(tensor_err)?;
            project(g, y, seed)
        },
        &options(seed),
    )?;
    Ok(report)
}

fn cbam(c: usize, r: usize) -> Result<Cbam> {
    Cbam::new("cbam", CbamConfig::new(c).with_reduction(r))
}

fn gram_basis_scope(seed: u64) -> Result<GradReport> {
    let store = ParamStore::<f64>::new();
    let inputs = vec![("s".to_string(), random(&[1, 2, 3, 3], seed, 0.95))];
    Ok(check_gradients(
        &inputs,
        |g, v| {
            let p = store.bind(g);
            let y = gram_basis(&p, v[0], 3).map_err(tensor_err)?;
            project(g, y, seed)
        },
        &options(seed),
    )?)
}

fn kagn_scope(seed: u64, degree: usize) -> Result<GradReport> {
    let m = KagnConv2d::new("kagn", KagnConvConfig::new(3, 4, 3).with_degree(degree))?;
    layer(seed, &m, &[1, 3, 5, 5], |m, p, x| m.forward(p, x))
}

/// Minimal stem geometry: 32×32 input, every width halved.
fn small_stem(variant: StemVariant, embed: usize) -> StemConfig {
    StemConfig::new(variant, (32, 32), embed).narrowed(2)
}

fn stem_scope(seed: u64, variant: StemVariant) -> Result<GradReport> {
    let stem = Stem::new(small_stem(variant, 8))?;
    layer(seed, &stem, &[1, 3, 32, 32], |m, p, x| m.forward(p, x))
}

fn backbone_scope(seed: u64) -> Result<GradReport> {
    let stem = Stem::new(small_stem(StemVariant::S2FpnStem, 8))?;
    let backbone = stem.backbone().expect("pyramid stem").clone();
    layer(seed, &backbone, &[1, 3, 32, 32], |m, p, x| Ok(m.forward(p, x)?.levels[3]))
}

fn fpn_scope(seed: u64, variant: StemVariant) -> Result<GradReport> {
    let cfg = small_stem(variant, 8);
    let widths = cfg.backbone.widths;
    let fpn = Fpn::new("fpn", &cfg, widths)?;
    let store = jittered(&fpn, seed)?;
    let extents = [8usize, 4, 2, 1];
    let data: Vec<(String, Tensor<f64>)> = (0..4)
        .map(|i| {
            let e = extents[i];
            (format!("c{}", i + 2), random(&[1, widths[i], e, e], seed * 13 + i as u64, 1.0))
        })
        .collect();
    let inputs = inputs_with(&store, data);
    Ok(check_gradients(
        &inputs,
        |g, v| {
            let p = store.bind_vars(g, &v[4..]).map_err(tensor_err)?;
            let pyr = FeaturePyramid {
                levels: [v[0], v[1], v[2], v[3]],
            };
            let y = fpn.forward(&p, &pyr).map_err(tensor_err)?;
            project(g, y, seed)
        },
        &smooth_options(seed),
    )?)
}

/// Stage-4 stem → encoder → head → masked MSE on two rendered keypoints.
fn end_to_end_scope(seed: u64) -> Result<GradReport> {
    let cfg = PoseModelConfig {
        stem: small_stem(StemVariant::S4Ours, 16),
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        num_keypoints: 2,
        head_channels: 4,
    };
    let model = PoseModel::new(cfg)?;
    let store = jittered(&model, seed)?;
    let kps = vec![vec![Keypoint::new(9.0, 14.0), Keypoint::new(22.5, 5.0)]];
    let stride = PoseModelConfig::HEATMAP_STRIDE as f64;
    let target = render_targets::<f64>(&kps, model.cfg.heatmap_extent(), stride, 2.0)?;
    let mask = visibility::<f64>(&kps);
    let inputs = inputs_with(&store, vec![("image".into(), random(&[1, 3, 32, 32], seed, 1.0))]);
    Ok(check_gradients(
        &inputs,
        |g, v| {
            let p = store.bind_vars(g, &v[1..]).map_err(tensor_err)?;
            let pred = model.forward(&p, v[0]).map_err(tensor_err)?;
            mse_loss(&p, pred, &target, &mask).map_err(tensor_err)
        },
        &options(seed),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scope() {
        assert!(matches!(find("nope"), Err(Error::UnknownScope(_))));
        assert_eq!(find("conv2d").unwrap().kind, ScopeKind::Op);
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = scope_names().collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
