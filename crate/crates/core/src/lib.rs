//! Epistemic uncertainty for multi-output pose regression.
//!
//! Three estimators share one small regressor: Monte Carlo dropout, deep
//! ensembles and deep evidential regression with bounded density losses.
//! Their outputs are written as prediction logs and scored by calibration
//! curves and a covariance-trace rejection gate.

pub mod bench;
pub mod calibration;
pub mod error;
pub mod evidential;
pub mod gating;
pub mod log;
pub mod losses;
pub mod pose;
pub mod regressor;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
pub use evidential::{NigParams, StudentT};
pub use log::{read_log, write_log, LogHeader, LogRecord, PredictionLog};
pub use losses::{EvidentialPrediction, EvidentialVariant, LossBreakdown, LossConfig};
pub use pose::{EulerTriple, Pose6, Rotation, UnitQuaternion};
pub use regressor::{Architecture, HeadKind, Regressor, RegressorOutput, Sample};
pub use sampling::{Component, Method, SamplerConfig, UncertainPose};
