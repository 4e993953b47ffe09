//! Regression calibration curves.
//!
//! For a confidence level `p` the observed confidence is the fraction of
//! records whose ground truth falls inside the central `p` credible interval
//! of the predictive distribution. A calibrated estimator tracks the diagonal.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::log::{LogRecord, PredictionLog};
use crate::sampling::Component;

pub const DEFAULT_LEVELS: usize = 19;

/// Distribution used to build credible intervals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictive {
    /// `N(mean, var)` from the logged epistemic moments.
    #[default]
    Gaussian,
    /// Student-t predictive of the logged NIG parameters (evidential logs only).
    StudentT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub component: Component,
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
    /// Mean of `|observed - level|`.
    pub mce: f64,
    /// Population standard deviation of `|observed - level|` across levels.
    pub mce_std: f64,
}

/// `k / (n + 1)` for `k = 1..=n`.
pub fn confidence_levels(n_levels: usize) -> Vec<f64> {
    (1..=n_levels)
        .map(|k| k as f64 / (n_levels + 1) as f64)
        .collect()
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Half-width of the central interval, in units of the predictive scale.
fn half_width(
    record: &LogRecord,
    c: usize,
    level: f64,
    predictive: Predictive,
) -> Result<(f64, f64)> {
    let q = 0.5 * (1.0 + level);
    match predictive {
        Predictive::Gaussian => {
            let z = Normal::new(0.0, 1.0)
                .expect("standard normal")
                .inverse_cdf(q);
            Ok((z, record.var[c].sqrt()))
        }
        Predictive::StudentT => {
            let nig = record.nig.ok_or_else(|| {
                Error::Config(format!(
                    "record {} has no NIG parameters for a Student-t interval",
                    record.id
                ))
            })?;
            let p = crate::evidential::NigParams::try_from(nig[c])?.predictive();
            let t = StudentsT::new(0.0, 1.0, p.dof)
                .map_err(|e| Error::domain(e.to_string()))?
                .inverse_cdf(q);
            Ok((t, p.scale_sq.sqrt()))
        }
    }
}

fn residual_for(record: &LogRecord, c: usize, predictive: Predictive) -> Result<f64> {
    Ok(match predictive {
        Predictive::Gaussian => record.residual(c).abs(),
        Predictive::StudentT => {
            // interval is centered on the NIG location, which equals the logged mean
            record.residual(c).abs()
        }
    })
}

pub fn coverage_at_level_with(
    log: &PredictionLog,
    component: Component,
    level: f64,
    predictive: Predictive,
) -> Result<f64> {
    check_level(level)?;
    if log.is_empty() {
        return Err(Error::domain("calibration of an empty log"));
    }
    let c = component.index();
    let mut covered = 0usize;
    for r in &log.records {
        let (z, scale) = half_width(r, c, level, predictive)?;
        if residual_for(r, c, predictive)? <= z * scale {
            covered += 1;
        }
    }
    Ok(covered as f64 / log.len() as f64)
}

/// Fraction of records with `|y - mean| <= z(level) * sqrt(var)`; angular
/// residuals wrapped first. A zero-variance record is covered only by an exact hit.
pub fn coverage_at_level(log: &PredictionLog, component: Component, level: f64) -> Result<f64> {
    coverage_at_level_with(log, component, level, Predictive::Gaussian)
}

pub fn mean_calibration_error(curve: &CalibrationCurve) -> f64 {
    let n = curve.levels.len() as f64;
    curve
        .levels
        .iter()
        .zip(&curve.observed)
        .map(|(l, o)| (o - l).abs())
        .sum::<f64>()
        / n
}

pub fn calibration_curve_with(
    log: &PredictionLog,
    component: Component,
    n_levels: usize,
    predictive: Predictive,
) -> Result<CalibrationCurve> {
    if n_levels < 2 {
        return Err(Error::domain("a calibration curve needs at least 2 levels"));
    }
    let levels = confidence_levels(n_levels);
    let observed = levels
        .iter()
        .map(|&l| coverage_at_level_with(log, component, l, predictive))
        .collect::<Result<Vec<_>>>()?;
    let mut curve = CalibrationCurve {
        component,
        levels,
        observed,
        mce: 0.0,
        mce_std: 0.0,
    };
    curve.mce = mean_calibration_error(&curve);
    let gaps: Vec<f64> = curve
        .levels
        .iter()
        .zip(&curve.observed)
        .map(|(l, o)| (o - l).abs())
        .collect();
    curve.mce_std = crate::stats::std_dev(&gaps);
    Ok(curve)
}

pub fn calibration_curve(
    log: &PredictionLog,
    component: Component,
    n_levels: usize,
) -> Result<CalibrationCurve> {
    calibration_curve_with(log, component, n_levels, Predictive::Gaussian)
}

/// Curves for all six components.
pub fn calibration_curves(
    log: &PredictionLog,
    n_levels: usize,
    predictive: Predictive,
) -> Result<Vec<CalibrationCurve>> {
    Component::ALL
        .iter()
        .map(|&c| calibration_curve_with(log, c, n_levels, predictive))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{LogHeader, LogRecord};
    use crate::sampling::Method;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Truth drawn from each record's own N(mean, var).
    fn calibrated_log(n: usize, seed: u64) -> PredictionLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = PredictionLog::new(LogHeader::new(Method::Der, vec![seed], String::new()));
        for id in 0..n as u64 {
            let mean: [f64; 6] = [0.0; 6].map(|_| rng.gen_range(-0.1..0.1));
            let var: [f64; 6] = [0.0; 6].map(|_| rng.gen_range(1e-4..0.01));
            let mut truth = [0.0; 6];
            for c in 0..6 {
                let z: f64 = rng.sample(StandardNormal);
                truth[c] = mean[c] + var[c].sqrt() * z;
            }
            log.records.push(LogRecord {
                id,
                mean,
                var,
                truth,
                nig: None,
            });
        }
        log
    }

    #[test]
    fn exact_predictions_are_always_covered() {
        let mut log = calibrated_log(100, 1);
        for r in &mut log.records {
            r.truth = r.mean;
        }
        assert_eq!(coverage_at_level(&log, Component::X, 0.5).unwrap(), 1.0);
        for r in &mut log.records {
            r.var = [0.0; 6];
        }
        assert_eq!(coverage_at_level(&log, Component::Yaw, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn zero_variance_miss_is_uncovered() {
        let mut log = calibrated_log(10, 2);
        for r in &mut log.records {
            r.var = [0.0; 6];
            r.truth[1] = r.mean[1] + 1e-9;
        }
        assert_eq!(coverage_at_level(&log, Component::Y, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_coverage_matches_level() {
        let log = calibrated_log(10_000, 3);
        let obs = coverage_at_level(&log, Component::Pitch, 0.6).unwrap();
        assert!((obs - 0.6).abs() < 0.02, "{obs}");
    }

    #[test]
    fn inflated_variance_covers_everything() {
        let mut log = calibrated_log(1000, 4);
        for r in &mut log.records {
            r.var = r.var.map(|v| v * 1e6);
        }
        let curve = calibration_curve(&log, Component::Z, DEFAULT_LEVELS).unwrap();
        assert!(curve.observed.iter().all(|o| *o > 0.99));
    }

    #[test]
    fn overconfident_log_has_mce_half() {
        let mut log = calibrated_log(1000, 5);
        for r in &mut log.records {
            r.var = [1e-30; 6];
        }
        let curve = calibration_curve(&log, Component::X, DEFAULT_LEVELS).unwrap();
        assert!(curve.observed.iter().all(|o| *o == 0.0));
        assert!((curve.mce - 0.5).abs() < 1e-12);
    }

    #[test]
    fn calibrated_generator_has_small_mce() {
        let log = calibrated_log(10_000, 6);
        for c in Component::ALL {
            let curve = calibration_curve(&log, c, DEFAULT_LEVELS).unwrap();
            assert!(curve.mce < 0.02, "{c:?}: {}", curve.mce);
        }
    }

    #[test]
    fn levels_and_mce_definition() {
        let levels = confidence_levels(19);
        assert_eq!(levels.len(), 19);
        assert!((levels[0] - 0.05).abs() < 1e-15 && (levels[18] - 0.95).abs() < 1e-15);
        let ideal = CalibrationCurve {
            component: Component::X,
            levels: levels.clone(),
            observed: levels.clone(),
            mce: 0.0,
            mce_std: 0.0,
        };
        assert_eq!(mean_calibration_error(&ideal), 0.0);
        let interior: Vec<f64> = levels[..17].to_vec();
        let shifted = CalibrationCurve {
            observed: interior.iter().map(|l| (l + 0.1f64).min(1.0)).collect(),
            levels: interior,
            ..ideal
        };
        assert!((mean_calibration_error(&shifted) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn stored_mce_matches_recomputation() {
        let log = calibrated_log(500, 7);
        let curve = calibration_curve(&log, Component::Roll, 9).unwrap();
        let recomputed: f64 = curve
            .levels
            .iter()
            .zip(&curve.observed)
            .map(|(l, o)| (o - l).abs())
            .sum::<f64>()
            / 9.0;
        assert!((curve.mce - recomputed).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let log = calibrated_log(10, 8);
        assert!(coverage_at_level(&log, Component::X, 0.0).is_err());
        assert!(coverage_at_level(&log, Component::X, 1.0).is_err());
        assert!(calibration_curve(&log, Component::X, 1).is_err());
        let empty = PredictionLog::new(log.header.clone());
        assert!(coverage_at_level(&empty, Component::X, 0.5).is_err());
        // no NIG parameters logged
        assert!(coverage_at_level_with(&log, Component::X, 0.5, Predictive::StudentT).is_err());
    }

    #[test]
    fn student_t_intervals_use_nig() {
        let mut log = calibrated_log(200, 9);
        for r in &mut log.records {
            r.nig = Some([[0.0, 1.0, 3.0, 1.0]; 6]);
            r.mean = [0.0; 6];
            r.truth = [0.0; 6];
        }
        assert_eq!(
            coverage_at_level_with(&log, Component::X, 0.5, Predictive::StudentT).unwrap(),
            1.0
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn coverage_is_monotone(seed in 0u64..1000, scale in 1.0f64..10.0) {
                let log = calibrated_log(200, seed);
                let curve = calibration_curve(&log, Component::Yaw, DEFAULT_LEVELS).unwrap();
                for w in curve.observed.windows(2) {
                    prop_assert!(w[1] >= w[0]);
                }
                let mut wide = log.clone();
                for r in &mut wide.records {
                    r.var = r.var.map(|v| v * scale);
                }
                let wider = calibration_curve(&wide, Component::Yaw, DEFAULT_LEVELS).unwrap();
                for (a, b) in curve.observed.iter().zip(&wider.observed) {
                    prop_assert!(b >= a);
                }
            }
        }
    }
}
