//! Training loop, evaluation, per-stage runs and the ablation runner.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kanfpn_autodiff::{Element, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TrainConfig};
use crate::data::{Batch, Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::params::ParamStore;
use crate::pose::{decode_keypoints, mse_loss, pck, render_targets, visibility, PoseModel, Prediction, PoseModelConfig};
use crate::stem::StemVariant;

pub const METRICS_HEADER: [&str; 7] = ["stage", "epoch", "loss", "pck05", "pck10", "params", "seconds"];

/// Linear warmup from 0 over `warmup_iters` steps, times `gamma` per
/// milestone epoch already reached.
pub fn lr_at(step: usize, epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    let decayed = cfg.base_lr * cfg.gamma.powi(passed as i32);
    if step < cfg.warmup_iters {
        decayed * step as f64 / cfg.warmup_iters as f64
    } else {
        decayed
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(store: &ParamStore<E>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor<E>> = store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update with gradients in store order; `None` means no gradient.
    pub fn update(&mut self, store: &mut ParamStore<E>, grads: &[Option<Tensor<E>>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != store.len() {
            return Err(Error::InvalidSpec("optimizer state does not match the parameter store".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, param) in store.iter_mut().enumerate() {
            let Some(grad) = &grads[i] else { continue };
            if !param.trainable {
                continue;
            }
            let g = grad.data();
            let mut m = self.m[i].to_vec();
            let mut v = self.v[i].to_vec();
            let mut w = param.value.to_vec();
            for j in 0..w.len() {
                let gj = g[j].as_f64();
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
                m[j] = E::from_f64(mj);
                v[j] = E::from_f64(vj);
                if lr != 0.0 {
                    let step = lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                    w[j] = E::from_f64(w[j].as_f64() - step);
                }
            }
            let shape = param.value.shape().to_vec();
            self.m[i] = Tensor::new(shape.clone(), m)?;
            self.v[i] = Tensor::new(shape.clone(), v)?;
            param.value = Tensor::new(shape, w)?;
        }
        Ok(())
    }
}

/// Forward, masked MSE, backward and one Adam update at learning rate `lr`.
pub fn train_step<E: Element>(
    model: &PoseModel,
    store: &mut ParamStore<E>,
    opt: &mut Adam<E>,
    batch: &Batch<E>,
    sigma: f64,
    lr: f64,
) -> Result<f64> {
    let step = opt.steps() as usize;
    let targets = render_targets::<E>(
        &batch.keypoints,
        model.cfg.heatmap_extent(),
        PoseModelConfig::HEATMAP_STRIDE as f64,
        sigma,
    )?;
    let mask = visibility::<E>(&batch.keypoints);
    let graph = Graph::new();
    let grads = {
        let p = store.bind(&graph);
        let images = graph.constant(batch.images.clone());
        let pred = model.forward(&p, images)?;
        let loss = mse_loss(&p, pred, &targets, &mask)?;
        let value = graph.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss = {value}"),
            });
        }
        let g = graph.backward(loss)?;
        let grads = p.gradients(&g);
        if let Some((name, _)) = store
            .iter()
            .zip(&grads)
            .find(|(_, g)| g.as_ref().is_some_and(|t| !t.all_finite()))
        {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("non-finite gradient for `{}`", name.name),
            });
        }
        (value, grads)
    };
    opt.update(store, &grads.1, lr)?;
    Ok(grads.0)
}

/// Heatmaps for `images` without recording a tape.
pub fn predict<E: Element>(model: &PoseModel, store: &ParamStore<E>, images: &Tensor<E>) -> Result<Tensor<E>> {
    let graph = Graph::no_grad();
    let p = store.bind(&graph);
    let x = graph.constant(images.clone());
    let y = model.forward(&p, x)?;
    Ok(graph.value(y))
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub pck05: f64,
    pub pck10: f64,
    pub predictions: Vec<Vec<Prediction>>,
}

pub fn evaluate<E: Element>(
    model: &PoseModel,
    store: &ParamStore<E>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<EvalResult> {
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Batch::<E>::from_samples(chunk);
        let heat = predict(model, store, &batch.images)?;
        predictions.extend(decode_keypoints(&heat, PoseModelConfig::HEATMAP_STRIDE as f64)?);
    }
    let gt: Vec<_> = samples.iter().map(|s| s.keypoints.clone()).collect();
    let image = model.cfg.input();
    Ok(EvalResult {
        pck05: pck(&predictions, &gt, 0.05, image),
        pck10: pck(&predictions, &gt, 0.1, image),
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full schedule over the configured train and eval splits.
    Full,
    /// One epoch over 8 samples.
    Smoke,
    /// Fixed sample set used for both training and evaluation.
    Overfit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub stage: StemVariant,
    pub epoch: usize,
    pub loss: f64,
    pub pck05: f64,
    pub pck10: f64,
    pub params: usize,
    pub seconds: f64,
}

impl RunRecord {
    fn row(&self) -> [String; 7] {
        [
            self.stage.to_string(),
            self.epoch.to_string(),
            format!("{:.9}", self.loss),
            format!("{:.6}", self.pck05),
            format!("{:.6}", self.pck10),
            self.params.to_string(),
            format!("{:.3}", self.seconds),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub records: Vec<RunRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub params: usize,
    /// First optimizer step after which PCK@0.1 reached 0.95, if it did.
    pub reached_095_at: Option<usize>,
}

impl StageOutcome {
    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("at least one epoch")
    }
}

struct Plan {
    train: Vec<Sample>,
    eval: Vec<Sample>,
    sched: TrainConfig,
    steps_per_epoch: usize,
    batch_size: usize,
}

fn plan(cfg: &RunConfig, mode: Mode) -> Result<Plan> {
    let generate = |range: std::ops::Range<usize>, n: usize| -> Result<Vec<Sample>> {
        let ds = Dataset::new(cfg.scene.clone(), n)?;
        range.map(|i| ds.get(i)).collect()
    };
    Ok(match mode {
        Mode::Full => {
            let n = cfg.train_size + cfg.eval_size;
            let ds = Dataset::new(cfg.scene.clone(), n)?;
            let (tr, ev) = ds.split(cfg.eval_size)?;
            let batch_size = cfg.train.batch_size.min(cfg.train_size);
            let steps = if cfg.train.steps_per_epoch > 0 {
                cfg.train.steps_per_epoch
            } else {
                cfg.train_size.div_ceil(batch_size)
            };
            Plan {
                train: generate(tr, n)?,
                eval: generate(ev, n)?,
                sched: cfg.train.clone(),
                steps_per_epoch: steps,
                batch_size,
            }
        }
        Mode::Smoke => {
            let batch_size = cfg.train.batch_size.min(8);
            Plan {
                train: generate(0..8, 16)?,
                eval: generate(8..16, 16)?,
                sched: TrainConfig {
                    epochs: 1,
                    milestones: Vec::new(),
                    ..cfg.train.clone()
                },
                steps_per_epoch: 8usize.div_ceil(batch_size),
                batch_size,
            }
        }
        Mode::Overfit => {
            let o = &cfg.overfit;
            let samples = generate(0..o.samples, o.samples)?;
            let epochs = o.steps.div_ceil(o.steps_per_epoch);
            let sched = TrainConfig {
                base_lr: o.base_lr,
                warmup_iters: o.warmup_iters,
                milestones: o.milestones.iter().copied().filter(|&m| m < epochs).collect(),
                epochs,
                batch_size: o.samples,
                ..cfg.train.clone()
            };
            sched.validate()?;
            Plan {
                eval: samples.clone(),
                train: samples,
                sched,
                steps_per_epoch: o.steps_per_epoch,
                batch_size: o.samples,
            }
        }
    })
}

/// Trains one stage and writes `<out>/<stage>/metrics.csv` (flushed after
/// every epoch, so an aborted run keeps its finished rows) and
/// `<out>/<stage>/final.ckpt`.
pub fn run_stage(variant: StemVariant, cfg: &RunConfig, mode: Mode, out: &Path) -> Result<StageOutcome> {
    let cfg = cfg.clone().with_variant(variant);
    cfg.validate()?;
    let model = PoseModel::new(cfg.model.clone())?;
    let mut store = model.init_params::<f32>(cfg.train.seed)?;
    let params = model.param_count();
    let plan = plan(&cfg, mode)?;
    let total_steps = match mode {
        Mode::Overfit => cfg.overfit.steps,
        _ => plan.sched.epochs * plan.steps_per_epoch,
    };

    let dir = out.join(variant.key());
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join("metrics.csv");
    let mut csv_out = csv::Writer::from_writer(File::create(&metrics_path)?);
    csv_out.write_record(METRICS_HEADER)?;
    csv_out.flush()?;

    let mut opt = Adam::new(&store, &plan.sched);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x7A11_5EED);
    let mut order: Vec<usize> = (0..plan.train.len()).collect();
    let mut cursor = order.len();
    let start = Instant::now();
    let mut records = Vec::new();
    let mut step = 0usize;
    let mut reached = None;

    for epoch in 0..plan.sched.epochs {
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for _ in 0..plan.steps_per_epoch {
            if step >= total_steps {
                break;
            }
            let mut idx = Vec::with_capacity(plan.batch_size);
            while idx.len() < plan.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            idx.sort_unstable();
            let chosen: Vec<Sample> = idx.iter().map(|&i| plan.train[i].clone()).collect();
            let batch = Batch::<f32>::from_samples(&chosen);
            let lr = lr_at(step, epoch, &plan.sched);
            loss_sum += train_step(&model, &mut store, &mut opt, &batch, cfg.sigma, lr)?;
            n += 1;
            step += 1;
        }
        let eval = evaluate(&model, &store, &plan.eval, cfg.eval_batch)?;
        if reached.is_none() && eval.pck10 >= 0.95 {
            reached = Some(step);
        }
        let rec = RunRecord {
            stage: variant,
            epoch,
            loss: loss_sum / n.max(1) as f64,
            pck05: eval.pck05,
            pck10: eval.pck10,
            params,
            seconds: start.elapsed().as_secs_f64(),
        };
        csv_out.write_record(rec.row())?;
        csv_out.flush()?;
        eprintln!(
            "[{variant}] epoch {epoch:>3} step {step:>5} loss {:.6} pck@0.05 {:.3} pck@0.1 {:.3} ({:.1}s)",
            rec.loss, rec.pck05, rec.pck10, rec.seconds
        );
        records.push(rec);
    }

    let checkpoint = dir.join("final.ckpt");
    store.save(&checkpoint)?;
    Ok(StageOutcome {
        records,
        checkpoint,
        metrics: metrics_path,
        params,
        reached_095_at: reached,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRecord {
    pub stage: StemVariant,
    pub paper_ap: f64,
    pub outcome: std::result::Result<StageOutcome, String>,
}

/// Runs each stage on its own thread, one after another, so a failure or
/// panic in one stage leaves the others untouched. Writes
/// `<out>/ablation.csv` once all stages have finished.
pub fn run_ablation(stages: &[StemVariant], cfg: &RunConfig, mode: Mode, out: &Path) -> Result<Vec<AblationRecord>> {
    if stages.is_empty() {
        return Err(Error::InvalidSpec("ablation needs at least one stage".into()));
    }
    let mut table = Vec::with_capacity(stages.len());
    for &stage in stages {
        let outcome = std::thread::scope(|s| {
            s.spawn(|| run_stage(stage, cfg, mode, out).map_err(|e| e.to_string()))
                .join()
                .unwrap_or_else(|_| Err("stage panicked".to_string()))
        });
        if let Err(e) = &outcome {
            eprintln!("[{stage}] failed: {e}");
        }
        table.push(AblationRecord {
            stage,
            paper_ap: stage.paper_ap(),
            outcome,
        });
    }
    write_ablation_csv(&table, &out.join("ablation.csv"))?;
    Ok(table)
}

pub fn write_ablation_csv(table: &[AblationRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "method", "paper_ap", "pck05", "pck10", "params", "status"])?;
    for r in table {
        let (pck05, pck10, params, status) = match &r.outcome {
            Ok(o) => (
                format!("{:.6}", o.last().pck05),
                format!("{:.6}", o.last().pck10),
                o.params.to_string(),
                "ok".to_string(),
            ),
            Err(e) => (String::new(), String::new(), String::new(), format!("failed: {e}")),
        };
        w.write_record([
            r.stage.key().to_string(),
            r.stage.description().to_string(),
            format!("{:.1}", r.paper_ap),
            pck05,
            pck10,
            params,
            status,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint for `variant` and evaluates it on the eval split.
pub fn eval_checkpoint(
    ckpt: &Path,
    variant: StemVariant,
    cfg: &RunConfig,
    predictions: Option<&mut dyn Write>,
) -> Result<EvalResult> {
    let cfg = cfg.clone().with_variant(variant);
    let model = PoseModel::new(cfg.model.clone())?;
    let mut store = model.init_params::<f32>(0)?;
    store.load(ckpt)?;
    let n = cfg.train_size + cfg.eval_size;
    let ds = Dataset::new(cfg.scene.clone(), n)?;
    let (_, ev) = ds.split(cfg.eval_size)?;
    let ids: Vec<usize> = ev.clone().collect();
    let samples = ev.map(|i| ds.get(i)).collect::<Result<Vec<_>>>()?;
    let result = evaluate(&model, &store, &samples, cfg.eval_batch)?;
    if let Some(w) = predictions {
        crate::pose::write_predictions(w, &ids, &result.predictions)?;
    }
    Ok(result)
}
