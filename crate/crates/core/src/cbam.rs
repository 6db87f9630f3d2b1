//! Convolutional block attention: a channel gate followed by a spatial gate.

use kanfpn_autodiff::{Element, Pool, Reduce, Var};

use crate::error::{invalid, Result};
use crate::nn::Module;
use crate::params::{join, Bound, Init, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct CbamConfig {
    pub channels: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
}

impl CbamConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            reduction: 8,
            spatial_kernel: 7,
        }
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || self.hidden() == 0 {
            return Err(invalid(format!(
                "CBAM reduction {} leaves no hidden units for {} channels",
                self.reduction, self.channels
            )));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(invalid(format!("CBAM spatial kernel {} must be odd", self.spatial_kernel)));
        }
        Ok(())
    }
}

/// Parameters `{name}.mlp1_w [C, C/ρ]`, `{name}.mlp2_w [C/ρ, C]` and
/// `{name}.spatial_w [1, 2, k, k]`; all bias-free.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub name: String,
    pub cfg: CbamConfig,
}

impl Cbam {
    pub fn new(name: impl Into<String>, cfg: CbamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { name: name.into(), cfg })
    }

    /// `sigmoid(mlp(avg(x)) + mlp(max(x)))` with shape `[B, C, 1, 1]`.
    pub fn channel_attention<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(x);
        let (b, c) = (shape[0], shape[1]);
        if c != self.cfg.channels {
            return Err(invalid(format!("{}: expected {} channels, got {c}", self.name, self.cfg.channels)));
        }
        let w1 = p.get(&join(&self.name, "mlp1_w"))?;
        let w2 = p.get(&join(&self.name, "mlp2_w"))?;
        let mlp = |pooled: Var| -> Result<Var> {
            let h = g.reshape(pooled, &[b, c])?;
            let h = g.relu(g.matmul(h, w1)?)?;
            Ok(g.matmul(h, w2)?)
        };
        let avg = mlp(g.pool2d(Pool::GlobalAvg, x, 0, 0)?)?;
        let max = mlp(g.pool2d(Pool::GlobalMax, x, 0, 0)?)?;
        let gate = g.sigmoid(g.add(avg, max)?)?;
        Ok(g.reshape(gate, &[b, c, 1, 1])?)
    }

    /// `sigmoid(conv([mean_c(x), max_c(x)]))` with shape `[B, 1, H, W]`.
    pub fn spatial_attention<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let mean = g.reduce(x, 1, Reduce::Mean)?;
        let max = g.reduce(x, 1, Reduce::Max)?;
        let stacked = g.concat(&[mean, max], 1)?;
        let k = self.cfg.spatial_kernel;
        let logits = g.conv2d(stacked, p.get(&join(&self.name, "spatial_w"))?, None, 1, (k - 1) / 2, 1)?;
        Ok(g.sigmoid(logits)?)
    }

    pub fn forward<E: Element>(&self, p: &Bound<'_, E>, x: Var) -> Result<Var> {
        let g = p.graph();
        let x = g.mul(x, self.channel_attention(p, x)?)?;
        Ok(g.mul(x, self.spatial_attention(p, x)?)?)
    }
}

impl Module for Cbam {
    fn init<E: Element>(&self, store: &mut ParamStore<E>, init: &mut Init) -> Result<()> {
        let (c, h, k) = (self.cfg.channels, self.cfg.hidden(), self.cfg.spatial_kernel);
        store.insert(join(&self.name, "mlp1_w"), init.kaiming_uniform(&[c, h], c))?;
        store.insert(join(&self.name, "mlp2_w"), init.kaiming_uniform(&[h, c], h))?;
        store.insert(join(&self.name, "spatial_w"), init.kaiming_uniform(&[1, 2, k, k], 2 * k * k))
    }

    fn param_count(&self) -> usize {
        let (c, h, k) = (self.cfg.channels, self.cfg.hidden(), self.cfg.spatial_kernel);
        2 * c * h + 2 * k * k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kanfpn_autodiff::{Graph, Tensor};

    #[test]
    fn config_validation() {
        assert!(CbamConfig::new(4).validate().is_err());
        assert!(CbamConfig::new(16).validate().is_ok());
        assert!(CbamConfig { spatial_kernel: 4, ..CbamConfig::new(16) }.validate().is_err());
    }

    #[test]
    fn param_count_matches_registration() {
        let m = Cbam::new("cbam", CbamConfig::new(16).with_reduction(4)).unwrap();
        let store: ParamStore<f32> = crate::nn::build_params(&m, 0).unwrap();
        assert_eq!(store.count(), m.param_count());
        assert_eq!(m.param_count(), 2 * 16 * 4 + 98);
    }

    #[test]
    fn attention_shapes() {
        let m = Cbam::new("cbam", CbamConfig::new(4).with_reduction(2)).unwrap();
        let store: ParamStore<f64> = crate::nn::build_params(&m, 3).unwrap();
        let g = Graph::no_grad();
        let p = store.bind(&g);
        let x = g.constant(Tensor::ones([2, 4, 5, 3]));
        assert_eq!(g.shape(m.channel_attention(&p, x).unwrap()), [2, 4, 1, 1]);
        assert_eq!(g.shape(m.spatial_attention(&p, x).unwrap()), [2, 1, 5, 3]);
        assert_eq!(g.shape(m.forward(&p, x).unwrap()), [2, 4, 5, 3]);
    }
}
