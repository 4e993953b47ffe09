//! Tables and plots derived from prediction logs.
//!
//! Every number here is recomputed from a `PredictionLog`, which is the single
//! source of truth for an experiment. Column orders are fixed by the
//! `*_COLUMNS` constants and documented in the README.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{LinePlot, Series};
use crate::calibration::{calibration_curves, CalibrationCurve};
use crate::error::{Error, Result};
use crate::gating::{apply_gate, confidence_sweep, percentile_thresholds, ErrorStats, GateReport};
use crate::log::{read_log, PredictionLog};
use crate::pose::Pose6;
use crate::regressor::TrainingLog;
use crate::sampling::Method;
use crate::stats;

use super::config::ExperimentConfig;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

pub const CALIBRATION_COLUMNS: [&str; 3] = ["component", "level", "observed"];
pub const CALIBRATION_SUMMARY_COLUMNS: [&str; 3] = ["component", "mce", "mce_std"];
pub const GATE_COLUMNS: [&str; 14] = [
    "percentile",
    "tr_trace_threshold",
    "rot_trace_threshold",
    "total",
    "retained",
    "discarded",
    "discarded_fraction",
    "tr_median_m",
    "tr_mean_m",
    "tr_std_m",
    "rot_median_deg",
    "rot_mean_deg",
    "rot_std_deg",
    "empty",
];
pub const TRAINING_COLUMNS: [&str; 13] = [
    "epoch",
    "phase",
    "s_evd",
    "train_total",
    "train_geometric_tr",
    "train_geometric_rot",
    "train_evd_tr",
    "train_evd_rot",
    "val_total",
    "val_evd_tr",
    "val_evd_rot",
    "val_tr_median_m",
    "val_rot_median_deg",
];
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "method",
    "records",
    "rough_tr_median_m",
    "rough_rot_median_deg",
    "tr_median_m",
    "rot_median_deg",
    "tr_mean_m",
    "rot_mean_deg",
    "gate_percentile",
    "discarded_fraction",
    "retained_tr_mean_m",
    "retained_rot_mean_deg",
    "mce_translation",
    "mce_rotation",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn to_csv<const N: usize>(columns: [&str; N], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        debug_assert_eq!(r.len(), N);
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn calibration_csv(curves: &[CalibrationCurve]) -> String {
    let rows: Vec<Vec<String>> = curves
        .iter()
        .flat_map(|c| {
            c.levels
                .iter()
                .zip(&c.observed)
                .map(|(l, o)| vec![c.component.name().to_string(), num(*l), num(*o)])
        })
        .collect();
    to_csv(CALIBRATION_COLUMNS, &rows)
}

pub fn calibration_summary_csv(curves: &[CalibrationCurve]) -> String {
    let rows: Vec<Vec<String>> = curves
        .iter()
        .map(|c| vec![c.component.name().to_string(), num(c.mce), num(c.mce_std)])
        .collect();
    to_csv(CALIBRATION_SUMMARY_COLUMNS, &rows)
}

fn gate_row(r: &GateReport) -> Vec<String> {
    let t = r.translation;
    let q = r.rotation;
    vec![
        num(r.thresholds.percentile),
        num(r.thresholds.tr_trace_threshold),
        num(r.thresholds.rot_trace_threshold),
        r.total.to_string(),
        r.retained.to_string(),
        r.discarded.to_string(),
        num(r.discarded_fraction),
        opt(t.map(|s| s.median)),
        opt(t.map(|s| s.mean)),
        opt(t.map(|s| s.std)),
        opt(q.map(|s| s.median)),
        opt(q.map(|s| s.mean)),
        opt(q.map(|s| s.std)),
        r.empty.to_string(),
    ]
}

/// One row per report; used for both single gates and sweeps.
pub fn gate_csv(reports: &[GateReport]) -> String {
    let rows: Vec<Vec<String>> = reports.iter().map(gate_row).collect();
    to_csv(GATE_COLUMNS, &rows)
}

pub fn training_csv(log: &TrainingLog) -> String {
    let rows: Vec<Vec<String>> = log
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.phase.to_string(),
                num(e.s_evd),
                num(e.train.total),
                num(e.train.geometric_tr),
                num(e.train.geometric_rot),
                num(e.train.evd_tr),
                num(e.train.evd_rot),
                num(e.val.loss.total),
                num(e.val.loss.evd_tr),
                num(e.val.loss.evd_rot),
                num(e.val.translation_median_m),
                num(e.val.rotation_median_deg),
            ]
        })
        .collect();
    to_csv(TRAINING_COLUMNS, &rows)
}

pub fn calibration_plot(curve: &CalibrationCurve, method: Method) -> LinePlot {
    let points: Vec<(f64, f64)> = curve
        .levels
        .iter()
        .copied()
        .zip(curve.observed.iter().copied())
        .collect();
    LinePlot {
        title: format!("{} calibration, {}", method.name(), curve.component.name()),
        x_label: "expected confidence".into(),
        y_label: "observed confidence".into(),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        diagonal: true,
        series: vec![Series {
            name: format!("mce {:.3}", curve.mce),
            points,
        }],
    }
}

/// Retained-set mean error against the discarded percentile.
pub fn sweep_plot(reports: &[GateReport], method: Method, rotation: bool) -> LinePlot {
    let points: Vec<(f64, f64)> = reports
        .iter()
        .filter_map(|r| {
            let stats = if rotation { r.rotation } else { r.translation };
            stats.map(|s| (r.thresholds.percentile, s.mean))
        })
        .collect();
    let series = if points.is_empty() {
        Vec::new()
    } else {
        vec![Series {
            name: method.name().to_string(),
            points,
        }]
    };
    let (x_range, y_range) = LinePlot::auto_range(&series);
    LinePlot {
        title: format!("{} error vs confidence", method.name()),
        x_label: "discarded percentile".into(),
        y_label: if rotation {
            "retained mean rotation error (deg)".into()
        } else {
            "retained mean translation error (m)".into()
        },
        x_range,
        y_range,
        diagonal: false,
        series,
    }
}

/// Rough-pose, full-set and gated error statistics recomputed from a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub records: usize,
    pub rough_tr_median_m: f64,
    pub rough_rot_median_deg: f64,
    pub full_translation: ErrorStats,
    pub full_rotation: ErrorStats,
    pub gate: GateReport,
    pub mce_translation: f64,
    pub mce_rotation: f64,
}

pub fn summarize(
    log: &PredictionLog,
    curves: &[CalibrationCurve],
    gate: GateReport,
) -> Result<MethodSummary> {
    if log.is_empty() {
        return Err(Error::domain("cannot summarize an empty log"));
    }
    let ident = Pose6::identity();
    let mut rough_tr = Vec::with_capacity(log.len());
    let mut rough_rot = Vec::with_capacity(log.len());
    let mut tr = Vec::with_capacity(log.len());
    let mut rot = Vec::with_capacity(log.len());
    for r in &log.records {
        let (t, q) = r.truth_pose()?.errors_to(&ident);
        rough_tr.push(t);
        rough_rot.push(q.to_degrees());
        let (t, q) = r.errors();
        tr.push(t);
        rot.push(q);
    }
    let mce_of = |angular: bool| {
        let v: Vec<f64> = curves
            .iter()
            .filter(|c| c.component.is_angular() == angular)
            .map(|c| c.mce)
            .collect();
        stats::mean(&v)
    };
    Ok(MethodSummary {
        method: log.method(),
        records: log.len(),
        rough_tr_median_m: stats::median(&mut rough_tr),
        rough_rot_median_deg: stats::median(&mut rough_rot),
        full_translation: ErrorStats::of(&tr).expect("non-empty"),
        full_rotation: ErrorStats::of(&rot).expect("non-empty"),
        gate,
        mce_translation: mce_of(false),
        mce_rotation: mce_of(true),
    })
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.method.name().to_string(),
                s.records.to_string(),
                num(s.rough_tr_median_m),
                num(s.rough_rot_median_deg),
                num(s.full_translation.median),
                num(s.full_rotation.median),
                num(s.full_translation.mean),
                num(s.full_rotation.mean),
                num(s.gate.thresholds.percentile),
                num(s.gate.discarded_fraction),
                opt(s.gate.translation.map(|t| t.mean)),
                opt(s.gate.rotation.map(|t| t.mean)),
                num(s.mce_translation),
                num(s.mce_rotation),
            ]
        })
        .collect();
    to_csv(SUMMARY_COLUMNS, &rows)
}

/// Everything computed for one method's log.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub curves: Vec<CalibrationCurve>,
    pub gate: GateReport,
    pub sweep: Vec<GateReport>,
    pub summary: MethodSummary,
}

pub fn evaluate_log(log: &PredictionLog, cfg: &ExperimentConfig) -> Result<MethodReport> {
    let curves = calibration_curves(log, cfg.calibration.levels, cfg.calibration.predictive)?;
    let gate = apply_gate(log, &percentile_thresholds(log, cfg.gate.percentile)?);
    let sweep = confidence_sweep(log, &cfg.gate.sweep)?;
    let summary = summarize(log, &curves, gate.clone())?;
    Ok(MethodReport {
        curves,
        gate,
        sweep,
        summary,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn method_dir(root: &Path, method: Method) -> PathBuf {
    root.join(method.dir_name())
}

/// Writes calibration, gate and sweep artifacts next to a method's log.
pub fn write_method_report(dir: &Path, method: Method, report: &MethodReport) -> Result<()> {
    write_file(
        &dir.join("calibration.csv"),
        &calibration_csv(&report.curves),
    )?;
    write_file(
        &dir.join("calibration_summary.csv"),
        &calibration_summary_csv(&report.curves),
    )?;
    for c in &report.curves {
        write_file(
            &dir.join(format!("calibration_{}.svg", c.component.name())),
            &calibration_plot(c, method).render(),
        )?;
    }
    write_file(
        &dir.join("gate.csv"),
        &gate_csv(std::slice::from_ref(&report.gate)),
    )?;
    write_file(
        &dir.join("gate.json"),
        &serde_json::to_string_pretty(&report.gate).expect("report serializes"),
    )?;
    write_file(&dir.join("sweep.csv"), &gate_csv(&report.sweep))?;
    write_file(
        &dir.join("sweep_translation.svg"),
        &sweep_plot(&report.sweep, method, false).render(),
    )?;
    write_file(
        &dir.join("sweep_rotation.svg"),
        &sweep_plot(&report.sweep, method, true).render(),
    )?;
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

/// Rebuilds every report under `root` from the stored logs.
pub fn emit_report(root: &Path, cfg: &ExperimentConfig) -> Result<Vec<MethodSummary>> {
    let mut summaries = Vec::new();
    for &method in &cfg.methods {
        let dir = method_dir(root, method);
        let log = read_log(&require(dir.join(PREDICTIONS_FILE))?)?;
        log.verify_digest(&cfg.digest())?;
        let report = evaluate_log(&log, cfg)?;
        write_method_report(&dir, method, &report)?;
        summaries.push(report.summary);
    }
    write_file(&root.join("summary.csv"), &summary_csv(&summaries))?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibration_curve;
    use crate::sampling::Component;

    #[test]
    fn csv_headers_are_stable() {
        assert_eq!(calibration_csv(&[]), "component,level,observed\n");
        assert_eq!(
            gate_csv(&[]),
            "percentile,tr_trace_threshold,rot_trace_threshold,total,retained,discarded,\
discarded_fraction,tr_median_m,tr_mean_m,tr_std_m,rot_median_deg,rot_mean_deg,rot_std_deg,empty\n"
        );
        assert_eq!(
            summary_csv(&[]),
            "method,records,rough_tr_median_m,rough_rot_median_deg,tr_median_m,rot_median_deg,\
tr_mean_m,rot_mean_deg,gate_percentile,discarded_fraction,retained_tr_mean_m,\
retained_rot_mean_deg,mce_translation,mce_rotation\n"
        );
    }

    #[test]
    fn empty_sweep_plots_axes_only() {
        let svg = sweep_plot(&[], Method::De, false).render();
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn missing_log_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            methods: vec![Method::Der],
            ..Default::default()
        };
        match emit_report(dir.path(), &cfg) {
            Err(Error::MissingArtifact(p)) => assert!(p.ends_with("der/predictions.jsonl")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibration_rows_cover_all_levels() {
        let log = crate::log::PredictionLog {
            header: crate::log::LogHeader::new(Method::De, vec![], String::new()),
            records: vec![crate::log::LogRecord {
                id: 0,
                mean: [0.0; 6],
                var: [1.0; 6],
                truth: [0.5; 6],
                nig: None,
            }],
        };
        let curve = calibration_curve(&log, Component::X, 9).unwrap();
        let text = calibration_csv(&[curve]);
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().nth(1).unwrap().starts_with("x,0.1,"));
    }
}
