//! A small fully connected pose regressor with hand-written backpropagation.
//!
//! The trunk is `input -> tanh(h1) -> tanh(h2)`; two linear heads read the
//! last hidden layer, one for translation and one for rotation. A plain head
//! emits a translation and a unit quaternion; an evidential head emits four
//! unconstrained values per pose component that [`apply_head_constraints`]
//! maps onto valid NIG parameters. Dropout, when enabled, masks the hidden
//! units that feed the heads.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::NigParams;
use crate::losses::{
    loss_final_with_grad, plain_loss_with_grad, EvidentialPrediction, LossBreakdown, LossConfig,
    NigGrad,
};
use crate::pose::{Pose6, UnitQuaternion};

pub use train::{
    finite_diff_check, finite_diff_max_rel_error, fit, read_checkpoint, write_checkpoint, Adam,
    Checkpoint, EpochRecord, EvalSummary, TrainSchedule, Trainer, TrainingLog, CHECKPOINT_VERSION,
};

/// Offset keeping evidential parameters strictly inside their domain.
pub const HEAD_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Plain,
    Evidential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub head: HeadKind,
    pub dropout_p: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, head: HeadKind, dropout_p: f64) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden: [64, 64],
            head,
            dropout_p,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    fn tr_out(&self) -> usize {
        match self.head {
            HeadKind::Plain => 3,
            HeadKind::Evidential => 12,
        }
    }

    fn rot_out(&self) -> usize {
        match self.head {
            HeadKind::Plain => 4,
            HeadKind::Evidential => 12,
        }
    }

    fn layout(&self) -> Layout {
        let [h1, h2] = self.hidden;
        let sizes = [
            h1 * self.input_dim,
            h1,
            h2 * h1,
            h2,
            self.tr_out() * h2,
            self.tr_out(),
            self.rot_out() * h2,
            self.rot_out(),
        ];
        let mut offsets = [0usize; 9];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Layout { offsets }
    }

    pub fn param_count(&self) -> usize {
        self.layout().offsets[8]
    }
}

/// Parameter offsets: w1, b1, w2, b2, w_tr, b_tr, w_rot, b_rot.
struct Layout {
    offsets: [usize; 9],
}

impl Layout {
    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Unconstrained evidential head output: `[gamma, nu, alpha, beta]` pre-activations
/// for x, y, z, roll, pitch, yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawEvidentialOutput(pub [[f64; 4]; 6]);

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `gamma = g`, `nu = softplus + eps`, `alpha = softplus + 1 + eps`, `beta = softplus + eps`.
pub fn apply_head_constraints(raw: &RawEvidentialOutput) -> Result<EvidentialPrediction> {
    let mut comps = [NigParams::new(0.0, 1.0, 2.0, 1.0)?; 6];
    for (c, r) in comps.iter_mut().zip(raw.0.iter()) {
        *c = NigParams::new(
            r[0],
            softplus(r[1]) + HEAD_EPSILON,
            softplus(r[2]) + 1.0 + HEAD_EPSILON,
            softplus(r[3]) + HEAD_EPSILON,
        )?;
    }
    Ok(EvidentialPrediction::from_components(comps))
}

/// Inverted-dropout mask over the last hidden layer: entries are `0` or `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn sample(width: usize, p: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 / (1.0 - p);
        Self(
            (0..width)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        )
    }

    /// All-ones mask (no unit dropped).
    pub fn identity(width: usize) -> Self {
        Self(vec![1.0; width])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegressorOutput {
    /// Translation plus unit quaternion.
    Plain(Pose6),
    Evidential(EvidentialPrediction),
}

impl RegressorOutput {
    pub fn mean_pose(&self) -> Pose6 {
        match self {
            RegressorOutput::Plain(p) => *p,
            RegressorOutput::Evidential(e) => e.mean_pose(),
        }
    }
}

/// One training or validation example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Ground-truth misalignment, rotation in Euler form.
    pub target: Pose6,
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    head_in: Vec<f64>,
    mask: Option<Vec<f64>>,
    out_tr: Vec<f64>,
    out_rot: Vec<f64>,
}

/// Network weights plus the input standardization fitted on the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regressor {
    pub arch: Architecture,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    for ((o, row), bias) in out.iter_mut().zip(w.chunks_exact(x.len())).zip(b) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates weight/bias gradients and, if requested, the input gradient.
fn dense_backward(
    w: &[f64],
    x: &[f64],
    d_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    for ((row_g, gb), &d) in grad_w
        .chunks_exact_mut(x.len())
        .zip(grad_b.iter_mut())
        .zip(d_out)
    {
        *gb += d;
        for (g, xi) in row_g.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    if let Some(d_x) = d_x {
        for (row, &d) in w.chunks_exact(x.len()).zip(d_out) {
            for (dx, wi) in d_x.iter_mut().zip(row) {
                *dx += d * wi;
            }
        }
    }
}

impl Regressor {
    /// Fan-in scaled uniform initialization (`U(-sqrt(3/fan_in), sqrt(3/fan_in))`,
    /// unit-variance pre-activations), zero biases, identity standardization.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![0.0; arch.param_count()];
        let fan_ins = [
            arch.input_dim,
            arch.hidden[0],
            arch.hidden[1],
            arch.hidden[1],
        ];
        for (layer, fan_in) in [0usize, 2, 4, 6].into_iter().zip(fan_ins) {
            let bound = (3.0 / fan_in as f64).sqrt();
            for p in &mut params[layout.range(layer)] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            input_shift: vec![0.0; arch.input_dim],
            input_scale: vec![1.0; arch.input_dim],
            params,
        })
    }

    /// Sets the standardization to the per-feature mean and inverse standard deviation.
    pub fn fit_standardization(&mut self, samples: &[Sample]) {
        let d = self.arch.input_dim;
        if samples.is_empty() {
            return;
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        self.input_shift = mean;
        self.input_scale = var
            .iter()
            .map(|v| if v.sqrt() > 1e-9 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.params.len() != self.arch.param_count() {
            return Err(Error::Dimension {
                expected: self.arch.param_count(),
                got: self.params.len(),
            });
        }
        if self.input_shift.len() != self.arch.input_dim
            || self.input_scale.len() != self.arch.input_dim
        {
            return Err(Error::Dimension {
                expected: self.arch.input_dim,
                got: self.input_shift.len().min(self.input_scale.len()),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("regressor parameters"));
        }
        Ok(())
    }

    fn forward_cached(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<Cache> {
        if input.len() != self.arch.input_dim {
            return Err(Error::Dimension {
                expected: self.arch.input_dim,
                got: input.len(),
            });
        }
        if let Some(m) = mask {
            if self.arch.dropout_p == 0.0 {
                return Err(Error::Config(
                    "dropout mask supplied to a model without dropout".into(),
                ));
            }
            if m.0.len() != self.arch.hidden[1] {
                return Err(Error::Dimension {
                    expected: self.arch.hidden[1],
                    got: m.0.len(),
                });
            }
        }
        let l = self.arch.layout();
        let p = &self.params;
        let x: Vec<f64> = input
            .iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let mut h1 = vec![0.0; self.arch.hidden[0]];
        dense(&p[l.range(0)], &p[l.range(1)], &x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; self.arch.hidden[1]];
        dense(&p[l.range(2)], &p[l.range(3)], &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let head_in: Vec<f64> = match mask {
            Some(m) => h2.iter().zip(&m.0).map(|(h, k)| h * k).collect(),
            None => h2.clone(),
        };
        let mut out_tr = vec![0.0; self.arch.tr_out()];
        dense(&p[l.range(4)], &p[l.range(5)], &head_in, &mut out_tr);
        let mut out_rot = vec![0.0; self.arch.rot_out()];
        dense(&p[l.range(6)], &p[l.range(7)], &head_in, &mut out_rot);
        if self.arch.head == HeadKind::Plain {
            // identity offset so an all-zero pre-activation is a valid rotation
            out_rot[3] += 1.0;
        }
        Ok(Cache {
            x,
            h1,
            h2,
            head_in,
            mask: mask.map(|m| m.0.clone()),
            out_tr,
            out_rot,
        })
    }

    fn raw_evidential(cache: &Cache) -> RawEvidentialOutput {
        let mut raw = [[0.0; 4]; 6];
        for c in 0..3 {
            raw[c].copy_from_slice(&cache.out_tr[4 * c..4 * c + 4]);
            raw[c + 3].copy_from_slice(&cache.out_rot[4 * c..4 * c + 4]);
        }
        RawEvidentialOutput(raw)
    }

    /// Normalized quaternion and the norm of its pre-activation; falls back to
    /// the identity when the pre-activation vanishes.
    fn plain_quaternion(cache: &Cache) -> ([f64; 4], f64) {
        let q = &cache.out_rot;
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-12 {
            return ([0.0, 0.0, 0.0, 1.0], 0.0);
        }
        ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
    }

    fn output_from_cache(&self, cache: &Cache) -> Result<RegressorOutput> {
        match self.arch.head {
            HeadKind::Plain => {
                let (q, _) = Self::plain_quaternion(cache);
                let t = [cache.out_tr[0], cache.out_tr[1], cache.out_tr[2]];
                let q = UnitQuaternion::new(q[0], q[1], q[2], q[3])?;
                Ok(RegressorOutput::Plain(Pose6::from_quaternion(t, q)))
            }
            HeadKind::Evidential => Ok(RegressorOutput::Evidential(apply_head_constraints(
                &Self::raw_evidential(cache),
            )?)),
        }
    }

    /// Deterministic given `(self, input, mask)`.
    pub fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<RegressorOutput> {
        let cache = self.forward_cached(input, mask)?;
        self.output_from_cache(&cache)
    }

    /// Loss of a single sample under the model's current parameters.
    pub fn sample_loss(
        &self,
        sample: &Sample,
        cfg: &LossConfig,
        mask: Option<&DropoutMask>,
    ) -> Result<LossBreakdown> {
        self.loss_and_grad(sample, cfg, mask, None)
    }

    /// Computes the sample loss and, when `grad` is given, accumulates
    /// `weight * dLoss/dparams` into it.
    pub(crate) fn loss_and_grad(
        &self,
        sample: &Sample,
        cfg: &LossConfig,
        mask: Option<&DropoutMask>,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<LossBreakdown> {
        let cache = self.forward_cached(&sample.features, mask)?;
        let mut d_tr = vec![0.0; self.arch.tr_out()];
        let mut d_rot = vec![0.0; self.arch.rot_out()];
        let parts = match self.arch.head {
            HeadKind::Plain => {
                let (q, n) = Self::plain_quaternion(&cache);
                let t = [cache.out_tr[0], cache.out_tr[1], cache.out_tr[2]];
                let (parts, gt, gq) = plain_loss_with_grad(&t, &q, &sample.target, cfg);
                d_tr.copy_from_slice(&gt);
                if n > 0.0 {
                    // d q_hat / d q = (I - q_hat q_hat^T) / |q|
                    let proj: f64 = q.iter().zip(&gq).map(|(a, b)| a * b).sum();
                    for i in 0..4 {
                        d_rot[i] = (gq[i] - q[i] * proj) / n;
                    }
                }
                parts
            }
            HeadKind::Evidential => {
                let raw = Self::raw_evidential(&cache);
                let pred = apply_head_constraints(&raw)?;
                let (parts, g): (LossBreakdown, [NigGrad; 6]) =
                    loss_final_with_grad(&pred, &sample.target, cfg);
                for c in 0..6 {
                    let r = raw.0[c];
                    let d = [
                        g[c][0],
                        g[c][1] * sigmoid(r[1]),
                        g[c][2] * sigmoid(r[2]),
                        g[c][3] * sigmoid(r[3]),
                    ];
                    let dst = if c < 3 {
                        &mut d_tr[4 * c..4 * c + 4]
                    } else {
                        &mut d_rot[4 * (c - 3)..4 * (c - 3) + 4]
                    };
                    dst.copy_from_slice(&d);
                }
                parts
            }
        };
        if let Some((grad, weight)) = grad {
            d_tr.iter_mut().for_each(|v| *v *= weight);
            d_rot.iter_mut().for_each(|v| *v *= weight);
            self.backward(&cache, &d_tr, &d_rot, grad);
        }
        Ok(parts)
    }

    fn backward(&self, cache: &Cache, d_tr: &[f64], d_rot: &[f64], grad: &mut [f64]) {
        let l = self.arch.layout();
        let p = &self.params;
        let [h1w, h2w] = self.arch.hidden;
        let mut d_head_in = vec![0.0; h2w];
        {
            let (gw, gb) = split_pair(grad, l.range(4), l.range(5));
            dense_backward(
                &p[l.range(4)],
                &cache.head_in,
                d_tr,
                gw,
                gb,
                Some(&mut d_head_in),
            );
        }
        {
            let (gw, gb) = split_pair(grad, l.range(6), l.range(7));
            dense_backward(
                &p[l.range(6)],
                &cache.head_in,
                d_rot,
                gw,
                gb,
                Some(&mut d_head_in),
            );
        }
        let mut d_a2 = d_head_in;
        for (i, d) in d_a2.iter_mut().enumerate() {
            if let Some(m) = &cache.mask {
                *d *= m[i];
            }
            *d *= 1.0 - cache.h2[i] * cache.h2[i];
        }
        let mut d_h1 = vec![0.0; h1w];
        {
            let (gw, gb) = split_pair(grad, l.range(2), l.range(3));
            dense_backward(&p[l.range(2)], &cache.h1, &d_a2, gw, gb, Some(&mut d_h1));
        }
        for (d, h) in d_h1.iter_mut().zip(&cache.h1) {
            *d *= 1.0 - h * h;
        }
        let (gw, gb) = split_pair(grad, l.range(0), l.range(1));
        dense_backward(&p[l.range(0)], &cache.x, &d_h1, gw, gb, None);
    }

    /// Full analytic gradient of one sample's loss.
    pub fn gradient(
        &self,
        sample: &Sample,
        cfg: &LossConfig,
        mask: Option<&DropoutMask>,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let parts = self.loss_and_grad(sample, cfg, mask, Some((&mut grad, 1.0)))?;
        Ok((parts, grad))
    }
}

/// Two disjoint, adjacent mutable sub-slices.
fn split_pair(
    buf: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let (left, right) = buf[a.start..b.end].split_at_mut(a.end - a.start);
    (left, right)
}
