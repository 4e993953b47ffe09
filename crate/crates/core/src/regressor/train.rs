use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, DropoutMask, Regressor, Sample};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam with the conventional moment decay rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Two-phase schedule: the evidential scale factors switch from
/// `s_evd_phase1` to `s_evd_phase2` after `epochs_phase1` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs_total: usize,
    pub epochs_phase1: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub s_evd_phase1: f64,
    pub s_evd_phase2: f64,
    pub seed: u64,
}

/// Desk-scale settings: 60 epochs switching at 30, lr 1e-3, same scales.
impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs_total: 60,
            epochs_phase1: 30,
            lr: 1e-3,
            batch_size: 24,
            s_evd_phase1: 0.1,
            s_evd_phase2: 5e-3,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// Full-scale settings: 400 epochs, switch at 150, lr 1e-4, batch 24,
    /// evidential scale 0.1 then 5e-3.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            epochs_total: 400,
            epochs_phase1: 150,
            lr: 1e-4,
            batch_size: 24,
            s_evd_phase1: 0.1,
            s_evd_phase2: 5e-3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_phase1 > self.epochs_total {
            return Err(Error::Config(format!(
                "epochs_phase1 ({}) exceeds epochs_total ({})",
                self.epochs_phase1, self.epochs_total
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        if !(self.s_evd_phase1 >= 0.0 && self.s_evd_phase2 >= 0.0) {
            return Err(Error::Config("evidential scales must be >= 0".into()));
        }
        Ok(())
    }

    pub fn phase_of(&self, epoch: usize) -> u8 {
        if epoch < self.epochs_phase1 {
            1
        } else {
            2
        }
    }

    pub fn s_evd_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs_phase1 {
            self.s_evd_phase1
        } else {
            self.s_evd_phase2
        }
    }
}

/// Mean loss and median errors of a model on a sample set (no dropout).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: LossBreakdown,
    pub translation_median_m: f64,
    pub rotation_median_deg: f64,
}

impl EvalSummary {
    pub fn compute(model: &Regressor, samples: &[Sample], cfg: &LossConfig) -> Result<Self> {
        if samples.is_empty() {
            return Ok(Self::default());
        }
        let w = 1.0 / samples.len() as f64;
        let mut loss = LossBreakdown::default();
        let mut tr = Vec::with_capacity(samples.len());
        let mut rot = Vec::with_capacity(samples.len());
        for s in samples {
            loss.accumulate(&model.sample_loss(s, cfg, None)?, w);
            let pred = model.forward(&s.features, None)?.mean_pose();
            let (et, er) = pred.errors_to(&s.target);
            tr.push(et);
            rot.push(er.to_degrees());
        }
        Ok(Self {
            loss,
            translation_median_m: crate::stats::median(&mut tr),
            rotation_median_deg: crate::stats::median(&mut rot),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub s_evd: f64,
    pub train: LossBreakdown,
    pub val: EvalSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Optimizer state around a model. Dropout masks for training are drawn from
/// the trainer's own RNG, so a seeded trainer is fully deterministic.
pub struct Trainer {
    pub model: Regressor,
    pub lr: f64,
    pub epoch: usize,
    adam: Adam,
    rng: ChaCha8Rng,
    grad: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Regressor, lr: f64, seed: u64) -> Self {
        let n = model.params.len();
        Self {
            model,
            lr,
            epoch: 0,
            adam: Adam::new(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
            grad: vec![0.0; n],
        }
    }

    /// One Adam update on the batch mean loss. Returns the pre-update breakdown.
    pub fn train_step(&mut self, batch: &[Sample], cfg: &LossConfig) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::domain("train_step on an empty batch"));
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let w = 1.0 / batch.len() as f64;
        let mut parts = LossBreakdown::default();
        let p = self.model.arch.dropout_p;
        let width = self.model.arch.hidden[1];
        for s in batch {
            let mask = (p > 0.0).then(|| DropoutMask::sample(width, p, &mut self.rng));
            let sp = self
                .model
                .loss_and_grad(s, cfg, mask.as_ref(), Some((&mut self.grad, w)))
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::Divergence {
                        epoch: self.epoch,
                        detail: format!("non-finite {what}"),
                    },
                    other => other,
                })?;
            parts.accumulate(&sp, w);
        }
        if !parts.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch: self.epoch,
                detail: format!("non-finite loss or gradient: {parts:?}"),
            });
        }
        self.adam
            .update(&mut self.model.params, &self.grad, self.lr);
        Ok(parts)
    }

    /// One shuffled pass over `data`.
    pub fn run_epoch(
        &mut self,
        data: &[Sample],
        batch_size: usize,
        cfg: &LossConfig,
    ) -> Result<LossBreakdown> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = LossBreakdown::default();
        let mut batch = Vec::with_capacity(batch_size);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let parts = self.train_step(&batch, cfg)?;
            total.accumulate(&parts, chunk.len() as f64 / data.len() as f64);
        }
        Ok(total)
    }
}

/// Trains a freshly initialized model under the two-phase schedule.
///
/// The same parameters and optimizer state carry over the phase switch.
/// Validation loss is computed with the loss config of the current phase.
pub fn fit(
    arch: Architecture,
    schedule: &TrainSchedule,
    train: &[Sample],
    val: &[Sample],
    cfg: &LossConfig,
) -> Result<(Regressor, TrainingLog)> {
    schedule.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::domain("empty training set"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model = Regressor::init(arch, &mut init_rng)?;
    model.fit_standardization(train);
    let mut trainer = Trainer::new(model, schedule.lr, init_rng.gen());
    let mut log = TrainingLog::default();
    for epoch in 0..schedule.epochs_total {
        trainer.epoch = epoch;
        let s_evd = schedule.s_evd_at(epoch);
        let phase_cfg = cfg.with_s_evd(s_evd);
        let train_parts = trainer.run_epoch(train, schedule.batch_size, &phase_cfg)?;
        let val_summary = EvalSummary::compute(&trainer.model, val, &phase_cfg)?;
        if !val_summary.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite validation loss: {:?}", val_summary.loss),
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            phase: schedule.phase_of(epoch),
            s_evd,
            train: train_parts,
            val: val_summary,
        });
    }
    Ok((trainer.model, log))
}

/// Largest relative difference between `analytic` and central differences of
/// `loss` at the given parameter indices. Differences are taken relative to
/// `max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_diff_max_rel_error<F>(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = work[i];
        work[i] = orig + h;
        let up = loss(&work);
        work[i] = orig - h;
        let down = loss(&work);
        work[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Checks the backpropagated gradient of one sample's loss against central
/// differences (`h = 1e-5`) on `n_params` randomly chosen parameters.
pub fn finite_diff_check(
    model: &Regressor,
    sample: &Sample,
    cfg: &LossConfig,
    mask: Option<&DropoutMask>,
    n_params: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    model.validate()?;
    let (_, grad) = model.gradient(sample, cfg, mask)?;
    let n = model.params.len();
    let indices = rand::seq::index::sample(rng, n, n_params.min(n)).into_vec();
    let mut probe = model.clone();
    let mut failure = None;
    let worst = finite_diff_max_rel_error(&model.params, &grad, &indices, 1e-5, |p| {
        probe.params.copy_from_slice(p);
        match probe.sample_loss(sample, cfg, mask) {
            Ok(l) => l.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

/// Everything needed to restore a trained model and its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub regressor: Regressor,
    pub schedule: TrainSchedule,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(regressor: Regressor, schedule: TrainSchedule) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            regressor,
            schedule,
            seed: schedule.seed,
        }
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)
        .map_err(|e| Error::Config(format!("checkpoint serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        index: 0,
        detail: format!("checkpoint {}: {e}", path.display()),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    ckpt.regressor.validate()?;
    Ok(ckpt)
}
