//! Polynomial-basis (KAGN) convolutions.
//!
//! A KAGN conv squashes its input with `tanh`, expands every channel into
//! Legendre-type basis images `G_0..G_D` and convolves them alongside a
//! SiLU base path:
//!
//! `y = norm2d(conv(silu(x), W_base) + conv(basis(tanh(x)), W_poly))`

use kanfpn_autodiff::{Element, Tensor, Var};

use crate::error::{invalid, Error, Result};
use crate::nn::{Module, Norm2d};
use crate::params::{join, Bound, Init, ParamStore};

/// Slack allowed on `|s| <= 1` before the basis refuses its input.
pub const DOMAIN_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KagnConvConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub degree: usize,
    pub groups: usize,
    /// Channel reduction of the bottleneck variant; 1 means none.
    pub bottleneck_ratio: usize,
}

impl KagnConvConfig {
    pub const DEFAULT_DEGREE: usize = 3;
    pub const DEFAULT_RATIO: usize = 4;

    /// Square kernel `k` with "same" padding, stride 1, default degree and
    /// no bottleneck.
    pub fn new(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: (k, k),
            stride: 1,
            padding: k / 2,
            degree: Self::DEFAULT_DEGREE,
            groups: 1,
            bottleneck_ratio: 1,
        }
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_bottleneck(mut self, ratio: usize) -> Self {
        self.bottleneck_ratio = ratio;
        self
    }

    pub fn reduced_ch(&self) -> usize {
        self.in_ch / self.bottleneck_ratio.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.in_ch == 0 || self.out_ch == 0 || kh == 0 || kw == 0 || self.stride == 0 {
            return Err(invalid(format!("{self:?}: extents must be positive")));
        }
        if self.groups == 0 || self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(invalid(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        if self.bottleneck_ratio == 0 {
            return Err(invalid("bottleneck ratio must be at least 1"));
        }
        if self.bottleneck_ratio > 1 {
            let reduced = self.reduced_ch();
            if reduced == 0 {
                return Err(invalid(format!(
                    "bottleneck reduces {} channels by {} to zero",
                    self.in_ch, self.bottleneck_ratio
                )));
            }
            if reduced % self.groups != 0 {
                return Err(invalid(format!("reduced width {reduced} not divisible by groups {}", self.groups)));
            }
        }
        Ok(())
    }

    /// The inner conv of the bottleneck: reduced width in and out.
    fn inner(&self) -> Self {
        let c = self.reduced_ch();
        Self {
            in_ch: c,
            out_ch: c,
            bottleneck_ratio: 1,
            ..self.clone()
        }
    }
}

/// Channel-stacked basis images `[G_0(s) blocks, G_1(s) blocks, ...]` of
/// shape `[B, C·(D+1), H, W]`.
pub fn gram_basis<E: Element>(p: &Bound<'_, E>, s: Var, degree: usize) -> Result<Var> {
    let g = p.graph();
    let value = g.value(s);
    let max = value.max_abs().as_f64();
    if !(max <= 1.0 + DOMAIN_SLACK) {
        return Err(Error::DomainViolation(max));
    }
    let ones = g.constant(Tensor::ones(value.shape().to_vec()));
    let mut blocks = vec![ones];
    if degree >= 1 {
        blocks.push(s);
    }
    for d in 1..degree {
        let df = d as f64;
        let a = g.mul(s, blocks[d])?;
        let a = g.scale(a, (2.0 * df + 1.0) / (df + 1.0))?;
        let b = g.scale(blocks[d - 1], df / (df + 1.0))?;
        blocks.push(g.sub(a, b)?);
    }
    if blocks.len() == 1 {
        return Ok(ones);
    }
    Ok(g.concat(&blocks, 1)?)
}

/// Plain KAGN conv with parameters `{name}.base_w`, `{name}.poly_w` and
/// `{name}.norm.{gamma,beta}`.
#[derive(Debug, Clone)]
pub struct KagnConv2d {
    pub name: String,
    pub cfg: KagnConvConfig,
    norm: Norm2d,
}

impl KagnConv2d {
    pub fn new(name: &str, cfg: KagnConvConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.bottleneck_ratio != 1 {
            return Err(invalid("plain KAGN conv takes no bottleneck; use BottleneckKagnConv2d"));
        }
        Ok(Self {
            name: name.to_string(),
            norm: Norm2d::new(join(name, "norm"), cfg.out_ch),
            cfg,
        })
    }

    fn base_shape(&self) -> [usize; 4] {
        let c = &self.cfg;
        [c.out_ch, c.in_ch / c.groups, c.kernel.0, c.kernel.1]
    }

    fn poly_shape(&self) -> [usize; 4] {
        let c = &self.cfg;
        [c.out_ch, c.in_ch * (c.degree + 1) / c.groups, c.kernel.0, c.kernel.1]
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let c = &self.cfg;
        let base = g.conv2d(g.silu(x)?, p.get(&join(&self.name, "base_w"))?, None, c.stride, c.padding, c.groups)?;
        let basis = gram_basis(p, g.tanh(x)?, c.degree)?;
        // Grouped convs need each group's basis channels contiguous, so
        // regroup from degree-major to group-major before convolving.
        let basis = if c.groups > 1 { self.group_major(p, basis)? } else { basis };
        let poly = g.conv2d(basis, p.get(&join(&self.name, "poly_w"))?, None, c.stride, c.padding, c.groups)?;
        let y = g.add(base, poly)?;
        self.norm.forward(p, y)
    }

    fn group_major<E: Element>(&self, p: &Bound<'_, E>, basis: Var) -> Result<Var> {
        let g = p.graph();
        let c = &self.cfg;
        let shape = g.shape(basis);
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let per = c.in_ch / c.groups;
        let v = g.reshape(basis, &[b, c.degree + 1, c.groups, per * h * w])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        Ok(g.reshape(v, &[b, c.in_ch * (c.degree + 1), h, w])?)
    }
}

impl Module for KagnConv2d {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        let fan = |s: &[usize; 4]| s[1] * s[2] * s[3];
        let (bs, ps) = (self.base_shape(), self.poly_shape());
        store.insert(join(&self.name, "base_w"), init.kaiming_uniform(&bs, fan(&bs)))?;
        store.insert(join(&self.name, "poly_w"), init.kaiming_uniform(&ps, fan(&ps)))?;
        self.norm.init(store, init)
    }

    fn param_count(&self) -> usize {
        kagn_param_count(&self.cfg)
    }
}

/// 1×1 reduce → KAGN conv at the reduced width → 1×1 expand. The reduce and
/// expand convs are bias-free and named `{name}.reduce_w`, `{name}.expand_w`.
#[derive(Debug, Clone)]
pub struct BottleneckKagnConv2d {
    pub name: String,
    pub cfg: KagnConvConfig,
    inner: KagnConv2d,
}

impl BottleneckKagnConv2d {
    pub fn new(name: &str, cfg: KagnConvConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.reduced_ch() == 0 {
            return Err(invalid("bottleneck reduces to zero channels"));
        }
        Ok(Self {
            name: name.to_string(),
            inner: KagnConv2d::new(name, cfg.inner())?,
            cfg,
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let h = g.conv2d(x, p.get(&join(&self.name, "reduce_w"))?, None, 1, 0, 1)?;
        let h = self.inner.forward(p, h)?;
        Ok(g.conv2d(h, p.get(&join(&self.name, "expand_w"))?, None, 1, 0, 1)?)
    }
}

impl Module for BottleneckKagnConv2d {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        let (cin, cr, cout) = (self.cfg.in_ch, self.cfg.reduced_ch(), self.cfg.out_ch);
        store.insert(join(&self.name, "reduce_w"), init.kaiming_uniform(&[cr, cin, 1, 1], cin))?;
        self.inner.init(store, init)?;
        store.insert(join(&self.name, "expand_w"), init.kaiming_uniform(&[cout, cr, 1, 1], cr))
    }

    fn param_count(&self) -> usize {
        let (cin, cr, cout) = (self.cfg.in_ch, self.cfg.reduced_ch(), self.cfg.out_ch);
        cin * cr + self.inner.param_count() + cr * cout
    }
}

/// Trainable scalars of a KAGN conv (bottleneck convs included when the
/// ratio exceeds 1).
pub fn kagn_param_count(cfg: &KagnConvConfig) -> usize {
    let core = |c: &KagnConvConfig| {
        let k = c.kernel.0 * c.kernel.1;
        let per_group = c.in_ch / c.groups.max(1);
        c.out_ch * per_group * k * (c.degree + 2) + 2 * c.out_ch
    };
    if cfg.bottleneck_ratio > 1 {
        let cr = cfg.reduced_ch();
        cfg.in_ch * cr + core(&cfg.inner()) + cr * cfg.out_ch
    } else {
        core(cfg)
    }
}
