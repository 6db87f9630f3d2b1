//! Parameterized building blocks shared by every architecture module.
//!
//! A layer is a small value describing geometry plus the name prefix of its
//! parameters. [`Module::init`] registers the parameters in a
//! [`ParamStore`]; `forward` methods look them up on a [`Bound`] graph.

use kanfpn_autodiff::{Element, Tensor, Var};

use crate::error::{invalid, Result};
use crate::params::{join, Bound, Init, Param, ParamStore};

pub const NORM_EPS: f64 = 1e-5;
pub const LAYER_NORM_EPS: f64 = 1e-6;

pub trait Module {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()>;

    /// Trainable scalar count, from geometry alone.
    fn param_count(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel: (k, k),
            stride,
            padding,
            groups: 1,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.name, "w")
    }

    pub fn bias_name(&self) -> String {
        join(&self.name, "b")
    }

    fn fan_in(&self) -> usize {
        self.in_ch / self.groups * self.kernel.0 * self.kernel.1
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = if self.bias { Some(p.get(&self.bias_name())?) } else { None };
        Ok(p.graph().conv2d(x, w, b, self.stride, self.padding, self.groups)?)
    }
}

impl Module for Conv2d {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        if self.groups == 0 || self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(invalid(format!("{}: channels not divisible by groups", self.name)));
        }
        let shape = [self.out_ch, self.in_ch / self.groups, self.kernel.0, self.kernel.1];
        store.insert(self.weight_name(), init.kaiming_uniform(&shape, self.fan_in()))?;
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.out_ch]))?;
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.out_ch * self.fan_in() + if self.bias { self.out_ch } else { 0 }
    }
}

/// Per-(batch, channel) spatial normalization with affine `gamma`/`beta`.
#[derive(Debug, Clone)]
pub struct Norm2d {
    pub name: String,
    pub channels: usize,
}

impl Norm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let gamma = p.get(&join(&self.name, "gamma"))?;
        let beta = p.get(&join(&self.name, "beta"))?;
        Ok(p.graph().norm2d(x, gamma, beta, NORM_EPS)?)
    }
}

impl Module for Norm2d {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, _init: &mut Init) -> Result<()> {
        store.insert(join(&self.name, "gamma"), Tensor::ones([self.channels]))?;
        store.insert(join(&self.name, "beta"), Tensor::zeros([self.channels]))
    }

    fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// conv2d → norm2d → relu. With `norm = false` the block is conv → relu.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<Norm2d>,
}

impl ConvBlock {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(join(name, "conv"), in_ch, out_ch, k, stride, k / 2),
            norm: Some(Norm2d::new(join(name, "norm"), out_ch)),
        }
    }

    /// Bias-free, norm-free variant (a positively homogeneous map).
    pub fn linear(name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(join(name, "conv"), in_ch, out_ch, k, stride, k / 2).without_bias(),
            norm: None,
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(p, x)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(p, y)?;
        }
        Ok(p.graph().relu(y)?)
    }
}

impl Module for ConvBlock {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.conv.init(store, init)?;
        if let Some(norm) = &self.norm {
            norm.init(store, init)?;
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.as_ref().map_or(0, Module::param_count)
    }
}

/// Affine map over the last axis: `x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(x);
        let rows = shape.iter().product::<usize>() / self.in_dim;
        let flat = g.reshape(x, &[rows, self.in_dim])?;
        let y = g.matmul(flat, p.get(&join(&self.name, "w"))?)?;
        let y = g.add(y, p.get(&join(&self.name, "b"))?)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        Ok(g.reshape(y, &out_shape)?)
    }
}

impl Module for Linear {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        store.insert(
            join(&self.name, "w"),
            init.kaiming_uniform(&[self.in_dim, self.out_dim], self.in_dim),
        )?;
        store.insert(join(&self.name, "b"), Tensor::zeros([self.out_dim]))
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let gamma = p.get(&join(&self.name, "gamma"))?;
        let beta = p.get(&join(&self.name, "beta"))?;
        Ok(p.graph().layer_norm(x, gamma, beta, LAYER_NORM_EPS)?)
    }
}

impl Module for LayerNorm {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, _init: &mut Init) -> Result<()> {
        store.insert(join(&self.name, "gamma"), Tensor::ones([self.dim]))?;
        store.insert(join(&self.name, "beta"), Tensor::zeros([self.dim]))
    }

    fn param_count(&self) -> usize {
        2 * self.dim
    }
}

/// Multi-head scaled dot-product self-attention over `[B,T,D]`.
#[derive(Debug, Clone)]
pub struct Mhsa {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Mhsa {
    pub fn new(name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(invalid(format!("{name}: embed dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            name: name.to_string(),
            dim,
            heads,
            q: Linear::new(join(name, "q"), dim, dim),
            k: Linear::new(join(name, "k"), dim, dim),
            v: Linear::new(join(name, "v"), dim, dim),
            out: Linear::new(join(name, "proj"), dim, dim),
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(p, x)?.0)
    }

    /// Output together with the attention weights `[B·heads, T, T]`.
    pub fn forward_with_attention<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<(Var, Var)> {
        let g = p.graph();
        let shape = g.shape(x);
        let &[b, t, d] = shape.as_slice() else {
            return Err(invalid(format!("{}: expected [B,T,D], got {shape:?}", self.name)));
        };
        if d != self.dim {
            return Err(invalid(format!("{}: expected D = {}, got {d}", self.name, self.dim)));
        }
        let (h, dh) = (self.heads, d / self.heads);
        let split = |v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, t, h, dh])?;
            let v = g.permute(v, &[0, 2, 1, 3])?;
            Ok(g.reshape(v, &[b * h, t, dh])?)
        };
        let q = split(self.q.forward(p, x)?)?;
        let k = split(self.k.forward(p, x)?)?;
        let v = split(self.v.forward(p, x)?)?;
        let scores = g.batch_matmul(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax(scores)?;
        let ctx = g.batch_matmul(attn, v, false, false)?;
        let ctx = g.reshape(ctx, &[b, h, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, d])?;
        Ok((self.out.forward(p, ctx)?, attn))
    }
}

impl Module for Mhsa {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.init(store, init)?;
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        4 * self.q.param_count()
    }
}

/// Pre-norm transformer block with a SiLU MLP:
/// `x + attn(ln1(x))`, then `+ fc2(silu(fc1(ln2(·))))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub name: String,
    ln1: LayerNorm,
    attn: Mhsa,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub fn new(name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        if mlp_ratio == 0 {
            return Err(invalid(format!("{name}: mlp ratio must be positive")));
        }
        Ok(Self {
            name: name.to_string(),
            ln1: LayerNorm::new(join(name, "ln1"), dim),
            attn: Mhsa::new(&join(name, "attn"), dim, heads)?,
            ln2: LayerNorm::new(join(name, "ln2"), dim),
            fc1: Linear::new(join(name, "mlp.fc1"), dim, dim * mlp_ratio),
            fc2: Linear::new(join(name, "mlp.fc2"), dim * mlp_ratio, dim),
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let h = self.ln1.forward(p, x)?;
        let h = self.attn.forward(p, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(p, x)?;
        let h = self.fc1.forward(p, h)?;
        let h = g.silu(h)?;
        let h = self.fc2.forward(p, h)?;
        Ok(g.add(x, h)?)
    }

    /// Parameters whose zeroing turns the block into the identity map.
    pub fn residual_branch_outputs(&self) -> Vec<String> {
        vec![
            join(&self.attn.out.name, "w"),
            join(&self.attn.out.name, "b"),
            join(&self.fc2.name, "w"),
            join(&self.fc2.name, "b"),
        ]
    }
}

impl Module for TransformerBlock {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.ln1.init(store, init)?;
        self.attn.init(store, init)?;
        self.ln2.init(store, init)?;
        self.fc1.init(store, init)?;
        self.fc2.init(store, init)
    }

    fn param_count(&self) -> usize {
        self.ln1.param_count()
            + self.attn.param_count()
            + self.ln2.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }
}

/// Transposed conv (k=4, s=2, p=1, bias-free) → norm2d → relu; doubles the
/// spatial extent.
#[derive(Debug, Clone)]
pub struct DeconvBlock {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    norm: Norm2d,
}

impl DeconvBlock {
    pub const KERNEL: usize = 4;

    pub fn new(name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self {
            name: name.to_string(),
            in_ch,
            out_ch,
            norm: Norm2d::new(join(name, "norm"), out_ch),
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let y = g.conv_transpose2d(x, p.get(&join(&self.name, "w"))?, None, 2, 1)?;
        let y = self.norm.forward(p, y)?;
        Ok(g.relu(y)?)
    }
}

impl Module for DeconvBlock {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        let k = Self::KERNEL;
        // Each output pixel of a stride-2 deconv sees in_ch·(k/2)² inputs.
        let fan_in = self.in_ch * (k / 2) * (k / 2);
        store.insert(
            join(&self.name, "w"),
            init.kaiming_uniform(&[self.in_ch, self.out_ch, k, k], fan_in),
        )?;
        self.norm.init(store, init)
    }

    fn param_count(&self) -> usize {
        self.in_ch * self.out_ch * Self::KERNEL * Self::KERNEL + self.norm.param_count()
    }
}

/// Geometry of one standalone layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    ConvBlock { in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    Linear { in_dim: usize, out_dim: usize },
    Mhsa { dim: usize, heads: usize },
    TransformerBlock { dim: usize, heads: usize, mlp_ratio: usize },
    DeconvBlock { in_ch: usize, out_ch: usize },
}

/// A constructed layer for a [`LayerSpec`], named after its kind.
#[derive(Debug, Clone)]
pub enum Layer {
    ConvBlock(ConvBlock),
    Linear(Linear),
    Mhsa(Mhsa),
    TransformerBlock(TransformerBlock),
    DeconvBlock(DeconvBlock),
}

impl LayerSpec {
    pub fn build(&self) -> Result<Layer> {
        let positive = |vals: &[usize]| vals.iter().all(|&v| v > 0);
        Ok(match *self {
            LayerSpec::ConvBlock { in_ch, out_ch, kernel, stride } => {
                if !positive(&[in_ch, out_ch, kernel, stride]) {
                    return Err(invalid(format!("{self:?}: extents must be positive")));
                }
                Layer::ConvBlock(ConvBlock::new("conv_block", in_ch, out_ch, kernel, stride))
            }
            LayerSpec::Linear { in_dim, out_dim } => {
                if !positive(&[in_dim, out_dim]) {
                    return Err(invalid(format!("{self:?}: extents must be positive")));
                }
                Layer::Linear(Linear::new("linear", in_dim, out_dim))
            }
            LayerSpec::Mhsa { dim, heads } => Layer::Mhsa(Mhsa::new("mhsa", dim, heads)?),
            LayerSpec::TransformerBlock { dim, heads, mlp_ratio } => {
                Layer::TransformerBlock(TransformerBlock::new("block", dim, heads, mlp_ratio)?)
            }
            LayerSpec::DeconvBlock { in_ch, out_ch } => {
                if !positive(&[in_ch, out_ch]) {
                    return Err(invalid(format!("{self:?}: extents must be positive")));
                }
                Layer::DeconvBlock(DeconvBlock::new("deconv", in_ch, out_ch))
            }
        })
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.build()?.param_count())
    }
}

impl Module for Layer {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        match self {
            Layer::ConvBlock(l) => l.init(store, init),
            Layer::Linear(l) => l.init(store, init),
            Layer::Mhsa(l) => l.init(store, init),
            Layer::TransformerBlock(l) => l.init(store, init),
            Layer::DeconvBlock(l) => l.init(store, init),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::ConvBlock(l) => l.param_count(),
            Layer::Linear(l) => l.param_count(),
            Layer::Mhsa(l) => l.param_count(),
            Layer::TransformerBlock(l) => l.param_count(),
            Layer::DeconvBlock(l) => l.param_count(),
        }
    }
}

/// Fresh parameters for one layer: Kaiming-uniform weights, zero biases and
/// norm shifts, unit norm scales.
pub fn init_params<E: Element>(spec: &LayerSpec, seed: u64) -> Result<Vec<Param<E>>> {
    let layer = spec.build()?;
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut Init::new(seed))?;
    Ok(store.into_vec())
}

/// Registers `module` into a fresh store.
pub fn build_params<E: Element, M: Module>(module: &M, seed: u64) -> Result<ParamStore<E>> {
    let mut store = ParamStore::new();
    module.init(&mut store, &mut Init::new(seed))?;
    Ok(store)
}
