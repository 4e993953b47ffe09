//! Train, predict, calibrate and gate, per method.

use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::dataset::{gen_dataset, Dataset};
use super::report::{
    emit_report, method_dir, training_csv, write_file, MethodSummary, PREDICTIONS_FILE,
};
use crate::error::{Error, Result};
use crate::log::{write_log, LogHeader, LogRecord, PredictionLog};
use crate::regressor::{
    fit, read_checkpoint, write_checkpoint, Architecture, Checkpoint, HeadKind, Regressor,
    RegressorOutput, Sample, TrainSchedule, TrainingLog,
};
use crate::sampling::{de_predict, mcd_predict, Method};

pub const DATASET_FILE: &str = "dataset.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Trained networks of one method. DER and MCD have one member.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedMethod {
    pub method: Method,
    pub members: Vec<Regressor>,
    pub schedules: Vec<TrainSchedule>,
    pub logs: Vec<TrainingLog>,
}

fn architecture(cfg: &ExperimentConfig, method: Method) -> Result<Architecture> {
    let head = match method {
        Method::Der => HeadKind::Evidential,
        Method::Mcd | Method::De => HeadKind::Plain,
    };
    Architecture::new(cfg.dataset.feature_dim(), head, cfg.train_dropout(method))
}

fn member_schedules(cfg: &ExperimentConfig, method: Method) -> Vec<TrainSchedule> {
    match method {
        Method::De => cfg
            .sampler
            .member_seeds(cfg.schedule.seed)
            .into_iter()
            .map(|seed| TrainSchedule {
                seed,
                ..cfg.schedule
            })
            .collect(),
        Method::Mcd | Method::Der => vec![cfg.schedule],
    }
}

/// Trains every member of `method`. Ensemble members train concurrently;
/// each is seeded independently, so the result does not depend on scheduling.
pub fn train_method(
    cfg: &ExperimentConfig,
    method: Method,
    data: &Dataset,
) -> Result<TrainedMethod> {
    cfg.validate()?;
    let arch = architecture(cfg, method)?;
    let schedules = member_schedules(cfg, method);
    let results: Vec<Result<(Regressor, TrainingLog)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = schedules
            .iter()
            .map(|s| scope.spawn(move || fit(arch, s, &data.train, &data.val, &cfg.loss)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut members = Vec::new();
    let mut logs = Vec::new();
    for r in results {
        let (m, l) = r?;
        members.push(m);
        logs.push(l);
    }
    Ok(TrainedMethod {
        method,
        members,
        schedules,
        logs,
    })
}

/// Per-record seed for dropout sampling.
fn mcd_seed(base: u64, id: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id)
}

/// Runs inference on every validation sample and records the moments.
pub fn predict_method(
    cfg: &ExperimentConfig,
    trained: &TrainedMethod,
    val: &[Sample],
) -> Result<PredictionLog> {
    let seeds = trained.schedules.iter().map(|s| s.seed).collect();
    let mut log = PredictionLog::new(LogHeader::new(trained.method, seeds, cfg.digest()));
    for (id, sample) in val.iter().enumerate() {
        let id = id as u64;
        let record = match trained.method {
            Method::Der => {
                let RegressorOutput::Evidential(pred) =
                    trained.members[0].forward(&sample.features, None)?
                else {
                    return Err(Error::Config("DER needs an evidential head".into()));
                };
                let mut r = LogRecord::new(id, &pred.uncertain_pose(), &sample.target);
                r.nig = Some(pred.components().map(|p| p.to_array()));
                r
            }
            Method::De => {
                let out = de_predict(&trained.members, &sample.features)?;
                LogRecord::new(id, &out.pose, &sample.target)
            }
            Method::Mcd => {
                let out = mcd_predict(
                    &trained.members[0],
                    &sample.features,
                    &cfg.sampler,
                    mcd_seed(cfg.schedule.seed, id),
                )?;
                LogRecord::new(id, &out.pose, &sample.target)
            }
        };
        log.records.push(record);
    }
    Ok(log)
}

fn checkpoint_name(method: Method, member: usize) -> String {
    match method {
        Method::De => format!("member_{member}.json"),
        Method::Mcd | Method::Der => "model.json".into(),
    }
}

pub fn write_dataset(root: &Path, data: &Dataset) -> Result<()> {
    write_file(
        &root.join(DATASET_FILE),
        &serde_json::to_string(data).expect("dataset serializes"),
    )
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(DATASET_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Parse {
        index: 0,
        detail: format!("{}: {e}", path.display()),
    })
}

pub fn write_trained(root: &Path, trained: &TrainedMethod) -> Result<()> {
    let dir = method_dir(root, trained.method);
    fs::create_dir_all(&dir)?;
    for (i, (model, schedule)) in trained.members.iter().zip(&trained.schedules).enumerate() {
        write_checkpoint(
            &dir.join(checkpoint_name(trained.method, i)),
            &Checkpoint::new(model.clone(), *schedule),
        )?;
    }
    for (i, log) in trained.logs.iter().enumerate() {
        let name = match trained.method {
            Method::De => format!("training_member_{i}.csv"),
            Method::Mcd | Method::Der => "training.csv".into(),
        };
        write_file(&dir.join(name), &training_csv(log))?;
    }
    Ok(())
}

/// Restores the checkpoints written by [`write_trained`]; training logs are not reloaded.
pub fn read_trained(root: &Path, cfg: &ExperimentConfig, method: Method) -> Result<TrainedMethod> {
    let dir = method_dir(root, method);
    let n = match method {
        Method::De => cfg.sampler.n_models,
        Method::Mcd | Method::Der => 1,
    };
    let mut members = Vec::new();
    let mut schedules = Vec::new();
    for i in 0..n {
        let path = dir.join(checkpoint_name(method, i));
        if !path.is_file() {
            return Err(Error::MissingArtifact(path));
        }
        let ckpt = read_checkpoint(&path)?;
        members.push(ckpt.regressor);
        schedules.push(ckpt.schedule);
    }
    Ok(TrainedMethod {
        method,
        members,
        schedules,
        logs: Vec::new(),
    })
}

pub fn write_config(root: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_file(&root.join(CONFIG_FILE), &cfg.to_toml())
}

/// Full pipeline into `cfg.resolved_output()`: dataset, models, logs, reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MethodSummary>> {
    cfg.validate()?;
    let root = cfg.resolved_output();
    fs::create_dir_all(&root)?;
    write_config(&root, cfg)?;
    let data = gen_dataset(&cfg.dataset)?;
    write_dataset(&root, &data)?;
    for &method in &cfg.methods {
        let trained = train_method(cfg, method, &data)?;
        write_trained(&root, &trained)?;
        let log = predict_method(cfg, &trained, &data.val)?;
        write_log(&method_dir(&root, method).join(PREDICTIONS_FILE), &log)?;
    }
    emit_report(&root, cfg)
}
