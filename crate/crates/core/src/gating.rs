//! Covariance-trace rejection of unreliable predictions.
//!
//! A prediction is discarded when both its translation and its rotation
//! variance traces exceed thresholds taken from the upper tail of the trace
//! population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::PredictionLog;
use crate::sampling::UncertainPose;
use crate::stats;

pub const DEFAULT_PERCENTILE: f64 = 0.15;

/// Summed per-component variances: `(Var x + Var y + Var z, Var roll + Var pitch + Var yaw)`.
pub fn uncertainty_traces(u: &UncertainPose) -> (f64, f64) {
    trace_pair(&u.var)
}

fn trace_pair(var: &[f64; 6]) -> (f64, f64) {
    (var[0] + var[1] + var[2], var[3] + var[4] + var[5])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub tr_trace_threshold: f64,
    pub rot_trace_threshold: f64,
    pub percentile: f64,
}

impl GateThresholds {
    /// Thresholds that never discard.
    pub fn open(percentile: f64) -> Self {
        Self {
            tr_trace_threshold: f64::INFINITY,
            rot_trace_threshold: f64::INFINITY,
            percentile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_percentile(self.percentile)?;
        if !(self.tr_trace_threshold >= 0.0 && self.rot_trace_threshold >= 0.0) {
            return Err(Error::domain("gate thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// Which traces must exceed their threshold for a record to be discarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRule {
    #[default]
    Both,
    TranslationOnly,
    RotationOnly,
}

impl GateRule {
    pub fn discards(self, traces: (f64, f64), thr: &GateThresholds) -> bool {
        let tr = traces.0 > thr.tr_trace_threshold;
        let rot = traces.1 > thr.rot_trace_threshold;
        match self {
            GateRule::Both => tr && rot,
            GateRule::TranslationOnly => tr,
            GateRule::RotationOnly => rot,
        }
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "percentile must be in (0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Nearest-rank value with at most `floor(p * n)` entries strictly above it.
fn upper_tail_value(mut values: Vec<f64>, p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((p * n as f64) + 1e-9).floor() as usize;
    values[n - 1 - k.min(n - 1)]
}

pub fn percentile_thresholds(log: &PredictionLog, percentile: f64) -> Result<GateThresholds> {
    check_percentile(percentile)?;
    let n = log.len();
    if (n as f64) * percentile + 1e-9 < 1.0 {
        return Err(Error::domain(format!(
            "{n} records are too few for percentile {percentile}"
        )));
    }
    let (tr, rot): (Vec<f64>, Vec<f64>) = log.records.iter().map(|r| trace_pair(&r.var)).unzip();
    Ok(GateThresholds {
        tr_trace_threshold: upper_tail_value(tr, percentile),
        rot_trace_threshold: upper_tail_value(rot, percentile),
        percentile,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    /// `None` for an empty set.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            median: stats::median(&mut values.to_vec()),
            mean: stats::mean(values),
            std: stats::std_dev(values),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub thresholds: GateThresholds,
    pub rule: GateRule,
    pub total: usize,
    pub retained: usize,
    pub discarded: usize,
    pub discarded_fraction: f64,
    /// Translation error of the retained set, meters.
    pub translation: Option<ErrorStats>,
    /// Rotation error of the retained set, degrees.
    pub rotation: Option<ErrorStats>,
    /// Set when every record was discarded.
    pub empty: bool,
    /// `true` for discarded records, in log order.
    pub decisions: Vec<bool>,
}

pub fn apply_gate_with(log: &PredictionLog, thr: &GateThresholds, rule: GateRule) -> GateReport {
    let mut tr_err = Vec::new();
    let mut rot_err = Vec::new();
    let decisions: Vec<bool> = log
        .records
        .iter()
        .map(|r| {
            let drop = rule.discards(trace_pair(&r.var), thr);
            if !drop {
                let (t, deg) = r.errors();
                tr_err.push(t);
                rot_err.push(deg);
            }
            drop
        })
        .collect();
    let total = log.len();
    let discarded = decisions.iter().filter(|d| **d).count();
    GateReport {
        thresholds: *thr,
        rule,
        total,
        retained: total - discarded,
        discarded,
        discarded_fraction: if total == 0 {
            0.0
        } else {
            discarded as f64 / total as f64
        },
        translation: ErrorStats::of(&tr_err),
        rotation: ErrorStats::of(&rot_err),
        empty: tr_err.is_empty(),
        decisions,
    }
}

/// Dual-trace rule: discard iff both traces exceed their thresholds.
pub fn apply_gate(log: &PredictionLog, thr: &GateThresholds) -> GateReport {
    apply_gate_with(log, thr, GateRule::Both)
}

/// Thresholds fitted on `fit` and applied to `target`.
pub fn split_gate(
    fit: &PredictionLog,
    target: &PredictionLog,
    percentile: f64,
) -> Result<GateReport> {
    let thr = percentile_thresholds(fit, percentile)?;
    Ok(apply_gate(target, &thr))
}

/// One report per percentile, thresholds recomputed each time.
pub fn confidence_sweep(log: &PredictionLog, percentiles: &[f64]) -> Result<Vec<GateReport>> {
    if percentiles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(
            "sweep percentiles must be strictly increasing",
        ));
    }
    percentiles
        .iter()
        .map(|&p| Ok(apply_gate(log, &percentile_thresholds(log, p)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{LogHeader, LogRecord};
    use crate::sampling::Method;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_from(vars: &[[f64; 6]]) -> PredictionLog {
        let mut log = PredictionLog::new(LogHeader::new(Method::De, vec![0], String::new()));
        for (i, v) in vars.iter().enumerate() {
            log.records.push(LogRecord {
                id: i as u64,
                mean: [0.0; 6],
                var: *v,
                truth: [0.1 * i as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
                nig: None,
            });
        }
        log
    }

    pub(crate) fn random_log(n: usize, seed: u64) -> PredictionLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars: Vec<[f64; 6]> = (0..n)
            .map(|_| [0.0; 6].map(|_| rng.gen_range(0.0..1.0)))
            .collect();
        let mut log = log_from(&vars);
        for r in &mut log.records {
            r.truth = [0.0; 6].map(|_| rng.gen_range(-0.5..0.5));
        }
        log
    }

    #[test]
    fn traces_sum_components() {
        let u = UncertainPose {
            mean: [0.0; 6],
            var: [1.0, 2.0, 3.0, 0.1, 0.1, 0.1],
            method: Method::Der,
        };
        let (t, r) = uncertainty_traces(&u);
        assert_eq!(t, 6.0);
        assert!((r - 0.3).abs() < 1e-15);
        let zero = UncertainPose { var: [0.0; 6], ..u };
        assert_eq!(uncertainty_traces(&zero), (0.0, 0.0));
    }

    #[test]
    fn nearest_rank_on_grid() {
        let vars: Vec<[f64; 6]> = (1..=100)
            .map(|i| [i as f64, 0.0, 0.0, i as f64, 0.0, 0.0])
            .collect();
        let thr = percentile_thresholds(&log_from(&vars), 0.15).unwrap();
        assert_eq!(thr.tr_trace_threshold, 85.0);
        assert_eq!(thr.rot_trace_threshold, 85.0);

        let flat = log_from(&vec![[0.5; 6]; 20]);
        let thr = percentile_thresholds(&flat, 0.15).unwrap();
        assert_eq!(thr.tr_trace_threshold, 1.5);
        assert_eq!(apply_gate(&flat, &thr).discarded, 0);
    }

    #[test]
    fn too_small_log_rejected() {
        let log = random_log(6, 1);
        assert!(percentile_thresholds(&log, 0.15).is_err());
        assert!(percentile_thresholds(&random_log(7, 1), 0.15).is_ok());
        assert!(percentile_thresholds(&log, 0.0).is_err());
        assert!(percentile_thresholds(&log, 1.0).is_err());
    }

    #[test]
    fn open_and_closed_gates() {
        let log = random_log(200, 2);
        let all = apply_gate(&log, &GateThresholds::open(0.15));
        assert_eq!(all.discarded, 0);
        let errs: Vec<f64> = log.records.iter().map(|r| r.errors().0).collect();
        assert_eq!(all.translation, ErrorStats::of(&errs));

        let closed = GateThresholds {
            tr_trace_threshold: 0.0,
            rot_trace_threshold: 0.0,
            percentile: 0.15,
        };
        let none = apply_gate(&log, &closed);
        assert_eq!(none.retained, 0);
        assert!(none.empty && none.translation.is_none() && none.rotation.is_none());
    }

    #[test]
    fn error_equals_trace_gives_decreasing_sweep() {
        // translation error grows with both traces, so the most uncertain go first
        let n = 400;
        let vars: Vec<[f64; 6]> = (0..n)
            .map(|i| {
                let t = (i + 1) as f64 / n as f64;
                [t, 0.0, 0.0, t, 0.0, 0.0]
            })
            .collect();
        let mut log = log_from(&vars);
        for r in &mut log.records {
            r.truth = [r.var[0], 0.0, 0.0, 0.0, 0.0, 0.0];
        }
        let sweep = confidence_sweep(&log, &[0.05, 0.1, 0.15, 0.25, 0.4]).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].translation.unwrap().mean < w[0].translation.unwrap().mean);
        }
    }

    #[test]
    fn sweep_composes_and_checks_order() {
        let log = random_log(100, 3);
        let sweep = confidence_sweep(&log, &[0.15]).unwrap();
        let direct = apply_gate(&log, &percentile_thresholds(&log, 0.15).unwrap());
        assert_eq!(sweep[0], direct);
        assert!(confidence_sweep(&log, &[0.2, 0.1]).is_err());
        assert!(confidence_sweep(&log, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn split_mode_uses_fit_thresholds() {
        let fit = random_log(100, 4);
        let target = random_log(50, 5);
        let rep = split_gate(&fit, &target, 0.15).unwrap();
        assert_eq!(rep.total, 50);
        assert_eq!(rep.thresholds, percentile_thresholds(&fit, 0.15).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn discarded_fraction_bounded(seed in 0u64..10_000, n in 20usize..300, p in 0.05f64..0.5) {
                let log = random_log(n, seed);
                let thr = percentile_thresholds(&log, p).unwrap();
                let rep = apply_gate(&log, &thr);
                prop_assert!(rep.discarded_fraction <= p + 1e-12);
                prop_assert_eq!(rep.retained + rep.discarded, rep.total);
                for rule in [GateRule::TranslationOnly, GateRule::RotationOnly] {
                    let single = apply_gate_with(&log, &thr, rule);
                    prop_assert!(single.discarded_fraction <= p + 1e-12);
                    for (a, b) in rep.decisions.iter().zip(&single.decisions) {
                        prop_assert!(!a || *b);
                    }
                }
            }

            #[test]
            fn raising_thresholds_never_discards_more(
                seed in 0u64..10_000, dt in 0.0f64..1.0, dr in 0.0f64..1.0,
            ) {
                let log = random_log(100, seed);
                let thr = percentile_thresholds(&log, 0.15).unwrap();
                let raised = GateThresholds {
                    tr_trace_threshold: thr.tr_trace_threshold + dt,
                    rot_trace_threshold: thr.rot_trace_threshold + dr,
                    ..thr
                };
                let a = apply_gate(&log, &thr);
                let b = apply_gate(&log, &raised);
                for (x, y) in a.decisions.iter().zip(&b.decisions) {
                    prop_assert!(*x || !*y);
                }
            }
        }
    }
}
