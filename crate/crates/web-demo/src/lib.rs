//! Browser demo: three interactive views onto the pose-uq toolkit.
//!
//! Each exported function returns a JSON string holding an `svg` field plus
//! the numbers shown next to it. The plain-Rust versions are public too so the
//! views can be tested natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use wasm_bindgen::prelude::*;

use pose_uq::bench::svg::{LinePlot, Series};
use pose_uq::calibration::{calibration_curve, DEFAULT_LEVELS};
use pose_uq::evidential::DEFAULT_CLIP_FLOOR;
use pose_uq::gating::confidence_sweep;
use pose_uq::losses::{d_element, nll_element, r_element};
use pose_uq::{Component, LogHeader, LogRecord, Method, NigParams, PredictionLog};

/// Predictive density of one NIG output with the per-element losses at `y`.
pub fn density_view(gamma: f64, nu: f64, alpha: f64, beta: f64, y: f64) -> Result<String, String> {
    let p = NigParams::new(gamma, nu, alpha, beta).map_err(|e| e.to_string())?;
    let st = p.predictive();
    let half = 4.0 * st.scale_sq.sqrt() + (y - gamma).abs();
    let points: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let x = gamma - half + 2.0 * half * i as f64 / 200.0;
            (x, st.pdf(x))
        })
        .collect();
    let floor: Vec<(f64, f64)> = vec![
        (gamma - half, DEFAULT_CLIP_FLOOR),
        (gamma + half, DEFAULT_CLIP_FLOOR),
    ];
    let marker = vec![(y, 0.0), (y, st.pdf(y))];
    let series = vec![
        Series {
            name: "predictive density".into(),
            points,
        },
        Series {
            name: "clip floor".into(),
            points: floor,
        },
        Series {
            name: "target".into(),
            points: marker,
        },
    ];
    let (x_range, y_range) = LinePlot::auto_range(&series);
    let plot = LinePlot {
        title: format!("Student-t, dof {:.2}", st.dof),
        x_label: "value".into(),
        y_label: "density".into(),
        x_range,
        y_range,
        diagonal: false,
        series,
    };
    Ok(json!({
        "svg": plot.render(),
        "density": st.pdf(y),
        "epistemic_var": p.epistemic_variance(),
        "aleatoric_var": p.aleatoric_variance(),
        "evidence": p.evidence(),
        "loss_nll": nll_element(&p, y).0,
        "loss_d": d_element(&p, y, DEFAULT_CLIP_FLOOR).0,
        "loss_r": r_element(&p, y, false).0,
    })
    .to_string())
}

/// Log whose truth is drawn from N(mean, var) but whose stored variance is
/// `var * var_scale`; `var_scale = 1` is perfectly calibrated.
fn synthetic_log(n: usize, var_scale: f64, error_trace_link: f64, seed: u64) -> PredictionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = PredictionLog::new(LogHeader::new(Method::Der, vec![seed], String::new()));
    for id in 0..n as u64 {
        let base: f64 = rng.gen_range(0.001..0.05);
        let var: [f64; 6] = std::array::from_fn(|_| base * rng.gen_range(0.5..1.5));
        let truth: [f64; 6] = std::array::from_fn(|c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            // blend between variance-driven and variance-independent error
            let sd = error_trace_link * var[c].sqrt() + (1.0 - error_trace_link) * 0.12;
            sd * z
        });
        log.records.push(LogRecord {
            id,
            mean: [0.0; 6],
            var: var.map(|v| v * var_scale),
            truth,
            nig: None,
        });
    }
    log
}

/// Calibration curve of the x component for a mis-scaled variance.
pub fn calibration_view(var_scale: f64, n: usize, seed: u64) -> Result<String, String> {
    if !(var_scale > 0.0 && var_scale.is_finite()) {
        return Err("variance scale must be positive".into());
    }
    let log = synthetic_log(n.max(1), var_scale, 1.0, seed);
    let curve = calibration_curve(&log, Component::X, DEFAULT_LEVELS).map_err(|e| e.to_string())?;
    let plot = LinePlot {
        title: format!("variance x {var_scale:.2}"),
        x_label: "expected confidence".into(),
        y_label: "observed confidence".into(),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        diagonal: true,
        series: vec![Series {
            name: format!("mce {:.3}", curve.mce),
            points: curve
                .levels
                .iter()
                .copied()
                .zip(curve.observed.iter().copied())
                .collect(),
        }],
    };
    Ok(json!({ "svg": plot.render(), "mce": curve.mce, "mce_std": curve.mce_std }).to_string())
}

/// Confidence sweep on a log where `link` sets how strongly error follows variance.
pub fn gate_view(link: f64, n: usize, seed: u64) -> Result<String, String> {
    if !(0.0..=1.0).contains(&link) {
        return Err("link must be in [0, 1]".into());
    }
    let log = synthetic_log(n.max(20), 1.0, link, seed);
    let percentiles = [0.05, 0.10, 0.15, 0.25, 0.40];
    let sweep = confidence_sweep(&log, &percentiles).map_err(|e| e.to_string())?;
    let rows: Vec<_> = sweep
        .iter()
        .map(|r| {
            json!({
                "percentile": r.thresholds.percentile,
                "discarded_fraction": r.discarded_fraction,
                "tr_mean_m": r.translation.map(|s| s.mean),
            })
        })
        .collect();
    let plot = pose_uq::bench::report::sweep_plot(&sweep, Method::Der, false);
    Ok(json!({ "svg": plot.render(), "rows": rows }).to_string())
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn density(gamma: f64, nu: f64, alpha: f64, beta: f64, y: f64) -> Result<String, JsValue> {
    to_js(density_view(gamma, nu, alpha, beta, y))
}

#[wasm_bindgen]
pub fn calibration(var_scale: f64, n: u32, seed: u32) -> Result<String, JsValue> {
    to_js(calibration_view(var_scale, n as usize, seed as u64))
}

#[wasm_bindgen]
pub fn gate(link: f64, n: u32, seed: u32) -> Result<String, JsValue> {
    to_js(gate_view(link, n as usize, seed as u64))
}
