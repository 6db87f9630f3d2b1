//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys, repeated keys
//! and unparsable values are errors carrying the offending line number.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::pose::{PoseModelConfig, DEFAULT_SIGMA};
use crate::stem::StemVariant;

/// Optimizer and learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_iters: usize,
    /// Epochs at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Optimizer steps per epoch; 0 means one pass over the training split.
    pub steps_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            warmup_iters: 500,
            milestones: vec![34, 40],
            epochs: 42,
            batch_size: 8,
            gamma: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            steps_per_epoch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.base_lr >= 0.0) || !(self.gamma > 0.0) {
            return bad(format!("learning rate {} / gamma {} out of range", self.base_lr, self.gamma));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return bad(format!("milestones {:?} must precede epoch {}", self.milestones, self.epochs));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// Settings of the fixed-sample convergence protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct OverfitConfig {
    pub samples: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub milestones: Vec<usize>,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            steps: 2000,
            steps_per_epoch: 100,
            base_lr: 1e-3,
            warmup_iters: 100,
            milestones: vec![14, 18],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PoseModelConfig,
    pub scene: SceneSpec,
    pub train_size: usize,
    pub eval_size: usize,
    pub sigma: f64,
    pub train: TrainConfig,
    pub overfit: OverfitConfig,
    pub eval_batch: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let input = (64, 64);
        Self {
            model: PoseModelConfig::new(StemVariant::S0Baseline, input),
            scene: SceneSpec::new(input, 0),
            train_size: 256,
            eval_size: 64,
            sigma: DEFAULT_SIGMA,
            train: TrainConfig::default(),
            overfit: OverfitConfig::default(),
            eval_batch: 32,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        msg: format!("cannot parse `{value}` for `{key}`"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(line, key, v.trim())).collect()
}

fn parse_four(line: usize, key: &str, value: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = parse_list(line, key, value)?;
    v.try_into().map_err(|_| Error::Config {
        line,
        msg: format!("`{key}` needs exactly four values"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut input = cfg.model.input();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    msg: format!("`{key}` set twice"),
                });
            }
            let m = &mut cfg.model;
            let s = &mut m.stem;
            let t = &mut cfg.train;
            let o = &mut cfg.overfit;
            match key {
                "stem.variant" => s.variant = value.parse().map_err(|e: Error| Error::Config { line, msg: e.to_string() })?,
                "stem.embed_dim" => s.embed_dim = parse(line, key, value)?,
                "stem.pyramid_width" => s.pyramid_width = parse(line, key, value)?,
                "stem.cnn_widths" => s.cnn_widths = parse_four(line, key, value)?,
                "stem.backbone_widths" => s.backbone.widths = parse_four(line, key, value)?,
                "stem.backbone_blocks" => s.backbone.blocks = parse_four(line, key, value)?,
                "stem.kagn_degree" => s.kagn_degree = parse(line, key, value)?,
                "stem.kagn_ratio" => s.kagn_ratio = parse(line, key, value)?,
                "stem.cbam_reduction" => s.cbam_reduction = parse(line, key, value)?,
                "model.depth" => m.depth = parse(line, key, value)?,
                "model.heads" => m.heads = parse(line, key, value)?,
                "model.mlp_ratio" => m.mlp_ratio = parse(line, key, value)?,
                "model.head_channels" => m.head_channels = parse(line, key, value)?,
                "data.height" => input.0 = parse(line, key, value)?,
                "data.width" => input.1 = parse(line, key, value)?,
                "data.train_size" => cfg.train_size = parse(line, key, value)?,
                "data.eval_size" => cfg.eval_size = parse(line, key, value)?,
                "data.seed" => cfg.scene.seed = parse(line, key, value)?,
                "data.scale_min" => cfg.scene.scale_range.0 = parse(line, key, value)?,
                "data.scale_max" => cfg.scene.scale_range.1 = parse(line, key, value)?,
                "data.max_rotation" => cfg.scene.max_rotation_deg = parse(line, key, value)?,
                "data.noise" => cfg.scene.noise_sigma = parse(line, key, value)?,
                "data.sigma" => cfg.sigma = parse(line, key, value)?,
                "train.base_lr" => t.base_lr = parse(line, key, value)?,
                "train.warmup_iters" => t.warmup_iters = parse(line, key, value)?,
                "train.milestones" => t.milestones = parse_list(line, key, value)?,
                "train.epochs" => t.epochs = parse(line, key, value)?,
                "train.batch_size" => t.batch_size = parse(line, key, value)?,
                "train.steps_per_epoch" => t.steps_per_epoch = parse(line, key, value)?,
                "train.gamma" => t.gamma = parse(line, key, value)?,
                "train.beta1" => t.beta1 = parse(line, key, value)?,
                "train.beta2" => t.beta2 = parse(line, key, value)?,
                "train.eps" => t.eps = parse(line, key, value)?,
                "train.seed" => t.seed = parse(line, key, value)?,
                "train.eval_batch" => cfg.eval_batch = parse(line, key, value)?,
                "overfit.samples" => o.samples = parse(line, key, value)?,
                "overfit.steps" => o.steps = parse(line, key, value)?,
                "overfit.steps_per_epoch" => o.steps_per_epoch = parse(line, key, value)?,
                "overfit.base_lr" => o.base_lr = parse(line, key, value)?,
                "overfit.warmup_iters" => o.warmup_iters = parse(line, key, value)?,
                "overfit.milestones" => o.milestones = parse_list(line, key, value)?,
                "output.dir" => cfg.out_dir = PathBuf::from(value),
                _ => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        cfg.model.stem.input = input;
        cfg.scene.extent = input;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scene.validate()?;
        self.train.validate()?;
        if self.train_size == 0 || self.eval_size == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidSpec("dataset and eval batch sizes must be positive".into()));
        }
        let o = &self.overfit;
        if o.samples == 0 || o.steps == 0 || o.steps_per_epoch == 0 {
            return Err(Error::InvalidSpec("overfit sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: StemVariant) -> Self {
        self.model.stem.variant = variant;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_lists() {
        let cfg = RunConfig::parse(
            "# desk run\n\nstem.variant = s4\ntrain.milestones = 3, 5 # decay\ntrain.epochs = 6\ndata.width = 48\n",
        )
        .unwrap();
        assert_eq!(cfg.model.stem.variant, StemVariant::S4Ours);
        assert_eq!(cfg.train.milestones, vec![3, 5]);
        assert_eq!(cfg.model.input(), (64, 48));
        assert_eq!(cfg.scene.extent, (64, 48));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("train.epochs = 4\ntrain.lr = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(matches!(RunConfig::parse("train.epochs 4"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("train.epochs = four"), Err(Error::Config { .. })));
        assert!(matches!(RunConfig::parse("train.seed = 1\ntrain.seed = 2"), Err(Error::Config { line: 2, .. })));
        assert!(RunConfig::parse("train.milestones = 40, 34").is_err());
    }
}
