//! Prediction logs: the interchange format between inference, calibration
//! and gating.
//!
//! On disk a log is line-delimited JSON. The first line is the header, each
//! following line one record:
//!
//! ```text
//! {"format":"pose-uq/prediction-log","version":1,"method":"DER","seeds":[7],"config_digest":"…"}
//! {"id":0,"mean":[x,y,z,roll,pitch,yaw],"var":[…],"truth":[…],"nig":[[g,n,a,b],…]}
//! ```
//!
//! `nig` is only present for evidential predictions. Unknown fields are
//! rejected; a reader only accepts its own `version`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pose::{wrap, Pose6};
use crate::sampling::{Method, UncertainPose};

pub const LOG_FORMAT: &str = "pose-uq/prediction-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub config_digest: String,
}

impl LogHeader {
    pub fn new(method: Method, seeds: Vec<u64>, config_digest: String) -> Self {
        Self {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            method,
            seeds,
            config_digest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub id: u64,
    pub mean: [f64; 6],
    pub var: [f64; 6],
    /// Ground-truth `[x, y, z, roll, pitch, yaw]`.
    pub truth: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nig: Option<[[f64; 4]; 6]>,
}

impl LogRecord {
    pub fn new(id: u64, pred: &UncertainPose, truth: &Pose6) -> Self {
        Self {
            id,
            mean: pred.mean,
            var: pred.var,
            truth: truth.components(),
            nig: None,
        }
    }

    pub fn uncertain_pose(&self, method: Method) -> UncertainPose {
        UncertainPose {
            mean: self.mean,
            var: self.var,
            method,
        }
    }

    pub fn truth_pose(&self) -> Result<Pose6> {
        Pose6::from_components(self.truth)
    }

    /// Signed residual `truth - mean` for component `c`, wrapped for angles.
    pub fn residual(&self, c: usize) -> f64 {
        let r = self.truth[c] - self.mean[c];
        if c >= 3 {
            wrap(r)
        } else {
            r
        }
    }

    /// Euclidean translation error (m) and geodesic rotation error (deg).
    pub fn errors(&self) -> (f64, f64) {
        let (Ok(pred), Ok(truth)) = (
            Pose6::from_components(self.mean),
            Pose6::from_components(self.truth),
        ) else {
            return (f64::NAN, f64::NAN);
        };
        let (t, r) = pred.errors_to(&truth);
        (t, r.to_degrees())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let finite = self
            .mean
            .iter()
            .chain(&self.var)
            .chain(&self.truth)
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        if self.var.iter().any(|v| *v < 0.0) {
            return Err("negative variance".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl PredictionLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn method(&self) -> Method {
        self.header.method
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks that the header was produced by a config with this digest.
    pub fn verify_digest(&self, digest: &str) -> Result<()> {
        if self.header.config_digest != digest {
            return Err(Error::Config(format!(
                "log digest {} does not match config digest {digest}",
                self.header.config_digest
            )));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .filter(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Header("empty file".into()))?;
        let raw: serde_json::Value =
            serde_json::from_str(head).map_err(|e| Error::Header(e.to_string()))?;
        if raw.get("format").and_then(|f| f.as_str()) != Some(LOG_FORMAT) {
            return Err(Error::Header(format!("not a {LOG_FORMAT} file")));
        }
        let version = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Header("missing version".into()))?;
        if version != LOG_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: LOG_VERSION,
            });
        }
        let header: LogHeader =
            serde_json::from_value(raw).map_err(|e| Error::Header(e.to_string()))?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (index, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                index,
                detail: e.to_string(),
            })?;
            rec.validate()
                .map_err(|detail| Error::Parse { index, detail })?;
            if !seen.insert(rec.id) {
                return Err(Error::DuplicateId(rec.id));
            }
            records.push(rec);
        }
        Ok(Self { header, records })
    }
}

pub fn write_log(path: &Path, log: &PredictionLog) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(log.to_jsonl().as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<PredictionLog> {
    PredictionLog::from_jsonl(&fs::read_to_string(path)?)
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_log(n: usize, seed: u64) -> PredictionLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = PredictionLog::new(LogHeader::new(Method::Der, vec![seed], "abc".into()));
        for id in 0..n as u64 {
            let mut r = LogRecord {
                id,
                mean: [0.0; 6].map(|_| rng.gen_range(-1.0..1.0)),
                var: [0.0; 6].map(|_| rng.gen_range(0.0..0.5)),
                truth: [0.0; 6].map(|_| rng.gen_range(-1.0..1.0)),
                nig: None,
            };
            if id % 2 == 0 {
                r.nig = Some([[0.1, 1.0 / 3.0, 2.5, 1e-17]; 6]);
            }
            log.records.push(r);
        }
        log
    }

    #[test]
    fn round_trip_is_lossless() {
        let log = random_log(50, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_log(&path, &log).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
    }

    #[test]
    fn truncated_file_names_record() {
        let text = random_log(5, 2).to_jsonl();
        let cut = &text[..text.len() - 20];
        match PredictionLog::from_jsonl(cut) {
            Err(Error::Parse { index, .. }) => assert_eq!(index, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            PredictionLog::from_jsonl(""),
            Err(Error::Header(_))
        ));
    }

    #[test]
    fn version_and_duplicates_are_distinct_errors() {
        let text = random_log(3, 3).to_jsonl();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            PredictionLog::from_jsonl(&bumped),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
        let mut log = random_log(3, 3);
        log.records[2].id = 0;
        assert!(matches!(
            PredictionLog::from_jsonl(&log.to_jsonl()),
            Err(Error::DuplicateId(0))
        ));
        let extra = text.replacen("{\"id\":1,", "{\"id\":1,\"future\":3,", 1);
        assert!(matches!(
            PredictionLog::from_jsonl(&extra),
            Err(Error::Parse { index: 1, .. })
        ));
    }

    #[test]
    fn digest_check() {
        let log = random_log(1, 4);
        assert!(log.verify_digest("abc").is_ok());
        assert!(log.verify_digest("abd").is_err());
        assert_eq!(digest_of(&[1, 2]), digest_of(&[1, 2]));
        assert_ne!(digest_of(&[1, 2]), digest_of(&[2, 1]));
    }

    #[test]
    fn residuals_wrap_angles() {
        let r = LogRecord {
            id: 0,
            mean: [0.0, 0.0, 0.0, 0.0, 0.0, 3.1],
            var: [0.0; 6],
            truth: [1.0, 0.0, 0.0, 0.0, 0.0, -3.1],
            nig: None,
        };
        assert_eq!(r.residual(0), 1.0);
        assert!((r.residual(5) - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12);
    }
}
