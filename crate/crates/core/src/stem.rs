//! Front ends turning an image into ViT tokens, one per ablation stage.
//!
//! | stage | front end                                                    |
//! |-------|--------------------------------------------------------------|
//! | s0    | 16×16 patch embedding                                        |
//! | s1    | four stride-2 conv blocks + 1×1 projection                   |
//! | s2    | residual backbone + FPN, plain 3×3 smoothing                 |
//! | s3    | s2 with CBAM on every backbone block's residual branch       |
//! | s4    | s2 with CBAM before each lateral and a bottleneck KAGN smooth |
//! | s5    | s2 with CBAM before each lateral                             |
//! | s6    | KAGN laterals and KAGN smoothing at every pyramid level      |
//!
//! Pyramid front ends (s2–s6) project the stride-4 `p2_out` map with a 4×4
//! stride-4 conv, so every stage yields the same stride-16 token grid.

use std::fmt;
use std::str::FromStr;

use kanfpn_autodiff::{Element, Pool, Tensor, Var};

use crate::cbam::{Cbam, CbamConfig};
use crate::error::{geometry, invalid, shape_mismatch, Result};
use crate::kagn::{BottleneckKagnConv2d, KagnConv2d, KagnConvConfig};
use crate::nn::{Conv2d, ConvBlock, Module, Norm2d};
use crate::params::{join, Bound, Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StemVariant {
    S0Baseline,
    S1CnnStem,
    S2FpnStem,
    S3BackboneCbam,
    S4Ours,
    S5LateralCbam,
    S6KagnFuse,
}

impl StemVariant {
    pub const ALL: [StemVariant; 7] = [
        StemVariant::S0Baseline,
        StemVariant::S1CnnStem,
        StemVariant::S2FpnStem,
        StemVariant::S3BackboneCbam,
        StemVariant::S4Ours,
        StemVariant::S5LateralCbam,
        StemVariant::S6KagnFuse,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StemVariant::S0Baseline => "s0",
            StemVariant::S1CnnStem => "s1",
            StemVariant::S2FpnStem => "s2",
            StemVariant::S3BackboneCbam => "s3",
            StemVariant::S4Ours => "s4",
            StemVariant::S5LateralCbam => "s5",
            StemVariant::S6KagnFuse => "s6",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            StemVariant::S0Baseline => "Baseline (ViTPose-S, Stage 0)",
            StemVariant::S1CnnStem => "+ CNN Stem (Stage 1)",
            StemVariant::S2FpnStem => "+ FPN-Stem (Stage 2)",
            StemVariant::S3BackboneCbam => "+ FPN-Stem + CBAM (Backbone, Stage 3)",
            StemVariant::S4Ours => "Ours (Stage 4: Lat. CBAM + KAGN Smooth)",
            StemVariant::S5LateralCbam => "+ FPN-Stem + Lateral CBAM (Stage 5)",
            StemVariant::S6KagnFuse => "+ KAGN-Fuse (Stage 6)",
        }
    }

    /// COCO AP reported for this configuration at full scale. Reference
    /// metadata only; nothing here recomputes it.
    pub fn paper_ap(self) -> f64 {
        match self {
            StemVariant::S0Baseline => 72.5,
            StemVariant::S1CnnStem => 73.3,
            StemVariant::S2FpnStem => 74.0,
            StemVariant::S3BackboneCbam => 74.1,
            StemVariant::S4Ours => 74.5,
            StemVariant::S5LateralCbam => 73.8,
            StemVariant::S6KagnFuse => 74.3,
        }
    }

    pub fn uses_pyramid(self) -> bool {
        !matches!(self, StemVariant::S0Baseline | StemVariant::S1CnnStem)
    }

    fn lateral_cbam(self) -> bool {
        matches!(self, StemVariant::S4Ours | StemVariant::S5LateralCbam)
    }
}

impl fmt::Display for StemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for StemVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        StemVariant::ALL
            .into_iter()
            .find(|v| v.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown stem variant `{s}` (expected s0..s6)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Channel widths of C2..C5.
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    pub cbam_in_blocks: bool,
    pub cbam_reduction: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64, 128],
            blocks: [2, 2, 2, 2],
            cbam_in_blocks: false,
            cbam_reduction: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemConfig {
    pub variant: StemVariant,
    /// Input extent `(H, W)`; both must be multiples of 16.
    pub input: (usize, usize),
    pub embed_dim: usize,
    pub cnn_widths: [usize; 4],
    pub backbone: BackboneConfig,
    /// Shared channel width of P2..P5.
    pub pyramid_width: usize,
    pub kagn_degree: usize,
    pub kagn_ratio: usize,
    pub cbam_reduction: usize,
    /// Bias-free FPN convs, making plain-conv fusion a linear map.
    pub linear: bool,
}

impl StemConfig {
    pub const PATCH: usize = 16;

    pub fn new(variant: StemVariant, input: (usize, usize), embed_dim: usize) -> Self {
        Self {
            variant,
            input,
            embed_dim,
            cnn_widths: [16, 32, 64, 128],
            backbone: BackboneConfig::default(),
            pyramid_width: 64,
            kagn_degree: KagnConvConfig::DEFAULT_DEGREE,
            kagn_ratio: KagnConvConfig::DEFAULT_RATIO,
            cbam_reduction: 8,
            linear: false,
        }
    }

    /// Every width (CNN stem, backbone, pyramid) divided by `factor`.
    pub fn narrowed(mut self, factor: usize) -> Self {
        let f = factor.max(1);
        self.cnn_widths = self.cnn_widths.map(|w| (w / f).max(1));
        self.backbone.widths = self.backbone.widths.map(|w| (w / f).max(1));
        self.pyramid_width = (self.pyramid_width / f).max(1);
        self
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.input.0 / Self::PATCH, self.input.1 / Self::PATCH)
    }

    pub fn num_tokens(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % Self::PATCH != 0 || w % Self::PATCH != 0 {
            return Err(geometry("stem", format!("input {h}×{w} is not a multiple of 16")));
        }
        if self.embed_dim == 0 || self.pyramid_width == 0 {
            return Err(invalid("stem widths must be positive"));
        }
        Ok(())
    }
}

/// C2..C5 (bottom-up) or P2..P5 (fused) feature maps, finest first.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    pub levels: [Var; 4],
}

impl FeaturePyramid {
    /// Extents must halve exactly from each level to the next.
    pub fn check<E: Element>(&self, p: &Bound<'_, E>) -> Result<()> {
        let g = p.graph();
        let shapes: Vec<Vec<usize>> = self.levels.iter().map(|&v| g.shape(v)).collect();
        for pair in shapes.windows(2) {
            let (fine, coarse) = (&pair[0], &pair[1]);
            if fine.len() != 4
                || coarse.len() != 4
                || fine[0] != coarse[0]
                || fine[2] != 2 * coarse[2]
                || fine[3] != 2 * coarse[3]
            {
                return Err(shape_mismatch("feature pyramid", fine, coarse));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBlock,
    conv2: ConvBlock,
    cbam: Option<Cbam>,
    shortcut: Option<(Conv2d, Norm2d)>,
}

impl BasicBlock {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize, cbam: Option<usize>) -> Result<Self> {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(join(name, "down"), in_ch, out_ch, 1, stride, 0),
                Norm2d::new(join(name, "down_norm"), out_ch),
            )
        });
        let cbam = match cbam {
            Some(r) => Some(Cbam::new(join(name, "cbam"), CbamConfig::new(out_ch).with_reduction(r))?),
            None => None,
        };
        Ok(Self {
            conv1: ConvBlock::new(&join(name, "conv1"), in_ch, out_ch, 3, stride),
            conv2: ConvBlock::new(&join(name, "conv2"), out_ch, out_ch, 3, 1),
            cbam,
            shortcut,
        })
    }

    fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let mut h = self.conv2.forward(p, self.conv1.forward(p, x)?)?;
        if let Some(cbam) = &self.cbam {
            h = cbam.forward(p, h)?;
        }
        let skip = match &self.shortcut {
            Some((conv, norm)) => norm.forward(p, conv.forward(p, x)?)?,
            None => x,
        };
        Ok(g.add(skip, h)?)
    }
}

impl Module for BasicBlock {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.conv1.init(store, init)?;
        self.conv2.init(store, init)?;
        if let Some(c) = &self.cbam {
            c.init(store, init)?;
        }
        if let Some((conv, norm)) = &self.shortcut {
            conv.init(store, init)?;
            norm.init(store, init)?;
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.cbam.as_ref().map_or(0, Module::param_count)
            + self.shortcut.as_ref().map_or(0, |(c, n)| c.param_count() + n.param_count())
    }
}

/// Residual bottom-up pathway: 3×3 stride-2 stem conv, 2×2 max pool, then
/// four stages of basic blocks emitting C2..C5 at strides 4..32.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: ConvBlock,
    stages: Vec<Vec<BasicBlock>>,
}

impl Backbone {
    pub fn new(name: &str, cfg: BackboneConfig) -> Result<Self> {
        if cfg.widths.contains(&0) || cfg.blocks.contains(&0) {
            return Err(invalid("backbone widths and block counts must be positive"));
        }
        let cbam = cfg.cbam_in_blocks.then_some(cfg.cbam_reduction);
        let mut stages = Vec::new();
        let mut in_ch = cfg.widths[0];
        for (i, (&w, &n)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
            let mut blocks = Vec::new();
            for j in 0..n {
                let stride = if i > 0 && j == 0 { 2 } else { 1 };
                let block_name = join(name, &format!("layer{}.block{j}", i + 1));
                blocks.push(BasicBlock::new(&block_name, in_ch, w, stride, cbam)?);
                in_ch = w;
            }
            stages.push(blocks);
        }
        Ok(Self {
            stem: ConvBlock::new(&join(name, "stem"), 3, cfg.widths[0], 3, 2),
            stages,
            cfg,
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<FeaturePyramid> {
        let g = p.graph();
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != 3 || shape[2] % 32 != 0 || shape[3] % 32 != 0 || shape[2] == 0 {
            return Err(geometry("backbone", format!("expected [B,3,H,W] with H, W multiples of 32, got {shape:?}")));
        }
        let mut h = self.stem.forward(p, x)?;
        h = g.pool2d(Pool::Max, h, 2, 2)?;
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                h = block.forward(p, h)?;
            }
            levels.push(h);
        }
        Ok(FeaturePyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        })
    }
}

impl Module for Backbone {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        self.stem.init(store, init)?;
        for block in self.stages.iter().flatten() {
            block.init(store, init)?;
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.stem.param_count() + self.stages.iter().flatten().map(Module::param_count).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
enum Lateral {
    Conv(Conv2d),
    CbamConv(Cbam, Conv2d),
    Kagn(KagnConv2d),
}

impl Lateral {
    fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        match self {
            Lateral::Conv(c) => c.forward(p, x),
            Lateral::CbamConv(a, c) => c.forward(p, a.forward(p, x)?),
            Lateral::Kagn(k) => k.forward(p, x),
        }
    }

    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        match self {
            Lateral::Conv(c) => c.init(store, init),
            Lateral::CbamConv(a, c) => {
                a.init(store, init)?;
                c.init(store, init)
            }
            Lateral::Kagn(k) => k.init(store, init),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Lateral::Conv(c) => c.param_count(),
            Lateral::CbamConv(a, c) => a.param_count() + c.param_count(),
            Lateral::Kagn(k) => k.param_count(),
        }
    }
}

#[derive(Debug, Clone)]
enum Smooth {
    Conv(Conv2d),
    Bottleneck(BottleneckKagnConv2d),
    /// One KAGN conv per level, applied inside the top-down pass.
    PerLevel(Vec<KagnConv2d>),
}

/// Top-down fusion `P_i = L_i + up(P_{i+1})` followed by smoothing; returns
/// the stride-4 `p2_out` map.
#[derive(Debug, Clone)]
pub struct Fpn {
    pub variant: StemVariant,
    pub width: usize,
    laterals: Vec<Lateral>,
    smooth: Smooth,
}

impl Fpn {
    pub fn new(name: &str, cfg: &StemConfig, in_widths: [usize; 4]) -> Result<Self> {
        let v = cfg.variant;
        if !v.uses_pyramid() {
            return Err(invalid(format!("stage {v} has no feature pyramid")));
        }
        let wp = cfg.pyramid_width;
        let mut laterals = Vec::with_capacity(4);
        for (i, &c) in in_widths.iter().enumerate() {
            let lname = join(name, &format!("lateral{}", i + 2));
            let conv = || Conv2d::new(lname.clone(), c, wp, 1, 1, 0).with_bias(!cfg.linear);
            laterals.push(match v {
                StemVariant::S6KagnFuse => Lateral::Kagn(KagnConv2d::new(
                    &lname,
                    KagnConvConfig::new(c, wp, 1).with_degree(cfg.kagn_degree),
                )?),
                _ if v.lateral_cbam() => {
                    let cbam_cfg = CbamConfig::new(c).with_reduction(cfg.cbam_reduction);
                    Lateral::CbamConv(Cbam::new(join(&lname, "cbam"), cbam_cfg)?, conv())
                }
                _ => Lateral::Conv(conv()),
            });
        }
        let sname = join(name, "smooth");
        let smooth = match v {
            StemVariant::S4Ours => Smooth::Bottleneck(BottleneckKagnConv2d::new(
                &sname,
                KagnConvConfig::new(wp, wp, 3)
                    .with_degree(cfg.kagn_degree)
                    .with_bottleneck(cfg.kagn_ratio),
            )?),
            StemVariant::S6KagnFuse => Smooth::PerLevel(
                (2..=5)
                    .map(|l| {
                        KagnConv2d::new(
                            &join(&sname, &format!("p{l}")),
                            KagnConvConfig::new(wp, wp, 3).with_degree(cfg.kagn_degree),
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => Smooth::Conv(Conv2d::new(sname, wp, wp, 3, 1, 1).with_bias(!cfg.linear)),
        };
        Ok(Self {
            variant: v,
            width: wp,
            laterals,
            smooth,
        })
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, pyr: &FeaturePyramid) -> Result<Var> {
        pyr.check(p)?;
        let g = p.graph();
        let lat: Vec<Var> = self
            .laterals
            .iter()
            .zip(&pyr.levels)
            .map(|(l, &c)| l.forward(p, c))
            .collect::<Result<_>>()?;
        match &self.smooth {
            Smooth::PerLevel(convs) => {
                let mut top = convs[3].forward(p, lat[3])?;
                for i in (0..3).rev() {
                    let fused = g.add(lat[i], g.upsample_nearest2x(top)?)?;
                    top = convs[i].forward(p, fused)?;
                }
                Ok(top)
            }
            smooth => {
                let mut top = lat[3];
                for i in (0..3).rev() {
                    top = g.add(lat[i], g.upsample_nearest2x(top)?)?;
                }
                match smooth {
                    Smooth::Conv(c) => c.forward(p, top),
                    Smooth::Bottleneck(b) => b.forward(p, top),
                    Smooth::PerLevel(_) => unreachable!(),
                }
            }
        }
    }

    /// Names of the parameters owned by the smoothing layer(s).
    pub fn smoothing_params<E: Element>(&self, store: &ParamStore<E>) -> Vec<String> {
        store
            .names()
            .filter(|n| n.split('.').nth(1) == Some("smooth"))
            .map(str::to_string)
            .collect()
    }
}

impl Module for Fpn {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        for l in &self.laterals {
            l.init(store, init)?;
        }
        match &self.smooth {
            Smooth::Conv(c) => c.init(store, init),
            Smooth::Bottleneck(b) => b.init(store, init),
            Smooth::PerLevel(convs) => convs.iter().try_for_each(|c| c.init(store, init)),
        }
    }

    fn param_count(&self) -> usize {
        let lat: usize = self.laterals.iter().map(Lateral::param_count).sum();
        lat + match &self.smooth {
            Smooth::Conv(c) => c.param_count(),
            Smooth::Bottleneck(b) => b.param_count(),
            Smooth::PerLevel(convs) => convs.iter().map(Module::param_count).sum(),
        }
    }
}

#[derive(Debug, Clone)]
enum Front {
    Patch(Conv2d),
    Cnn { blocks: Vec<ConvBlock>, proj: Conv2d },
    Pyramid { backbone: Backbone, fpn: Fpn, proj: Conv2d },
}

/// A stage's full front end, from `[B,3,H,W]` images to `[B,T,D]` tokens
/// with learned positional embeddings (`stem.pos_embed`, zero-initialized).
#[derive(Debug, Clone)]
pub struct Stem {
    pub cfg: StemConfig,
    front: Front,
}

impl Stem {
    pub fn new(cfg: StemConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let front = match cfg.variant {
            StemVariant::S0Baseline => {
                Front::Patch(Conv2d::new("stem.patch", 3, d, StemConfig::PATCH, StemConfig::PATCH, 0))
            }
            StemVariant::S1CnnStem => {
                let mut blocks = Vec::new();
                let mut in_ch = 3;
                for (i, &w) in cfg.cnn_widths.iter().enumerate() {
                    blocks.push(ConvBlock::new(&format!("stem.cnn{i}"), in_ch, w, 3, 2));
                    in_ch = w;
                }
                Front::Cnn {
                    blocks,
                    proj: Conv2d::new("stem.cnn_proj", in_ch, d, 1, 1, 0),
                }
            }
            v => {
                let bcfg = BackboneConfig {
                    cbam_in_blocks: v == StemVariant::S3BackboneCbam,
                    cbam_reduction: cfg.cbam_reduction,
                    ..cfg.backbone.clone()
                };
                let backbone = Backbone::new("backbone", bcfg)?;
                let fpn = Fpn::new("fpn", &cfg, backbone.cfg.widths)?;
                Front::Pyramid {
                    backbone,
                    fpn,
                    proj: Conv2d::new("stem.proj", cfg.pyramid_width, d, 4, 4, 0),
                }
            }
        };
        Ok(Self { cfg, front })
    }

    pub fn variant(&self) -> StemVariant {
        self.cfg.variant
    }

    pub fn backbone(&self) -> Option<&Backbone> {
        match &self.front {
            Front::Pyramid { backbone, .. } => Some(backbone),
            _ => None,
        }
    }

    pub fn fpn(&self) -> Option<&Fpn> {
        match &self.front {
            Front::Pyramid { fpn, .. } => Some(fpn),
            _ => None,
        }
    }

    fn check_input<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<()> {
        let shape = p.graph().shape(x);
        let (h, w) = self.cfg.input;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(geometry("stem", format!("expected [B,3,{h},{w}], got {shape:?}")));
        }
        Ok(())
    }

    /// Bottom-up pyramid of the zero-padded image (extents rounded up to
    /// multiples of 32).
    pub fn pyramid<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<FeaturePyramid> {
        self.check_input(p, x)?;
        let Front::Pyramid { backbone, .. } = &self.front else {
            return Err(invalid(format!("stage {} has no feature pyramid", self.variant())));
        };
        let (h, w) = self.cfg.input;
        backbone.forward(p, pad_to(p, x, h.next_multiple_of(32), w.next_multiple_of(32))?)
    }

    /// `p2_out` cropped back to `input / 4`.
    pub fn p2_out<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let pyr = self.pyramid(p, x)?;
        let Front::Pyramid { fpn, .. } = &self.front else { unreachable!() };
        let p2 = fpn.forward(p, &pyr)?;
        let g = p.graph();
        let (h, w) = (self.cfg.input.0 / 4, self.cfg.input.1 / 4);
        let shape = g.shape(p2);
        let p2 = if shape[2] != h { g.narrow(p2, 2, 0, h)? } else { p2 };
        Ok(if shape[3] != w { g.narrow(p2, 3, 0, w)? } else { p2 })
    }

    /// Stride-16 feature map `[B, D, H/16, W/16]` before flattening.
    pub fn features<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        self.check_input(p, x)?;
        match &self.front {
            Front::Patch(conv) => conv.forward(p, x),
            Front::Cnn { blocks, proj } => {
                let mut h = x;
                for b in blocks {
                    h = b.forward(p, h)?;
                }
                proj.forward(p, h)
            }
            Front::Pyramid { proj, .. } => proj.forward(p, self.p2_out(p, x)?),
        }
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let f = self.features(p, x)?;
        let shape = g.shape(f);
        let (b, d, t) = (shape[0], shape[1], shape[2] * shape[3]);
        let tokens = g.reshape(f, &[b, d, t])?;
        let tokens = g.permute(tokens, &[0, 2, 1])?;
        Ok(g.add(tokens, p.get("stem.pos_embed")?)?)
    }
}

impl Module for Stem {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        match &self.front {
            Front::Patch(c) => c.init(store, init)?,
            Front::Cnn { blocks, proj } => {
                for b in blocks {
                    b.init(store, init)?;
                }
                proj.init(store, init)?;
            }
            Front::Pyramid { backbone, fpn, proj } => {
                backbone.init(store, init)?;
                fpn.init(store, init)?;
                proj.init(store, init)?;
            }
        }
        store.insert("stem.pos_embed", Tensor::zeros([1, self.cfg.num_tokens(), self.cfg.embed_dim]))
    }

    fn param_count(&self) -> usize {
        let front = match &self.front {
            Front::Patch(c) => c.param_count(),
            Front::Cnn { blocks, proj } => {
                blocks.iter().map(Module::param_count).sum::<usize>() + proj.param_count()
            }
            Front::Pyramid { backbone, fpn, proj } => {
                backbone.param_count() + fpn.param_count() + proj.param_count()
            }
        };
        front + self.cfg.num_tokens() * self.cfg.embed_dim
    }
}

/// Zero-pads `[B,C,H,W]` at the bottom and right to `h × w`.
fn pad_to<E: Element>(p: &Bound<'_, E>, x: Var, h: usize, w: usize) -> Result<Var> {
    let g = p.graph();
    let s = g.shape(x);
    let mut x = x;
    if s[3] < w {
        let z = g.constant(Tensor::zeros([s[0], s[1], s[2], w - s[3]]));
        x = g.concat(&[x, z], 3)?;
    }
    if s[2] < h {
        let z = g.constant(Tensor::zeros([s[0], s[1], h - s[2], w]));
        x = g.concat(&[x, z], 2)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_params;
    use kanfpn_autodiff::Graph;

    #[test]
    fn variant_keys_round_trip() {
        for v in StemVariant::ALL {
            assert_eq!(v.key().parse::<StemVariant>().unwrap(), v);
        }
        assert!("s7".parse::<StemVariant>().is_err());
    }

    #[test]
    fn param_counts_match_registration() {
        for v in StemVariant::ALL {
            let stem = Stem::new(StemConfig::new(v, (64, 64), 32)).unwrap();
            let store: ParamStore<f32> = build_params(&stem, 0).unwrap();
            assert_eq!(store.count(), stem.param_count(), "{v}");
        }
    }

    #[test]
    fn rejects_bad_input_extent() {
        assert!(Stem::new(StemConfig::new(StemVariant::S0Baseline, (40, 32), 16)).is_err());
        let stem = Stem::new(StemConfig::new(StemVariant::S0Baseline, (32, 32), 16)).unwrap();
        let store: ParamStore<f64> = build_params(&stem, 0).unwrap();
        let g = Graph::no_grad();
        let p = store.bind(&g);
        let x = g.constant(Tensor::zeros([1, 3, 48, 32]));
        assert!(stem.forward(&p, x).is_err());
    }
}
