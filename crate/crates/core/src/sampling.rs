//! Sampling-based epistemic uncertainty: Monte Carlo dropout and deep ensembles.
//!
//! Both reduce a set of pose samples to per-component mean and population
//! variance (divisor `n`). Rotations are compared in Euler form. Angular
//! samples are first unwrapped around their circular mean, so a cluster that
//! straddles `+-pi` gets the same moments as one away from the seam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{wrap, Pose6};
use crate::regressor::{DropoutMask, HeadKind, Regressor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Mcd,
    De,
    Der,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mcd, Method::De, Method::Der];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mcd => "MCD",
            Method::De => "DE",
            Method::Der => "DER",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Method::Mcd => "mcd",
            Method::De => "de",
            Method::Der => "der",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcd" => Ok(Method::Mcd),
            "de" => Ok(Method::De),
            "der" => Ok(Method::Der),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Pose component index into `[x, y, z, roll, pitch, yaw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::X,
        Component::Y,
        Component::Z,
        Component::Roll,
        Component::Pitch,
        Component::Yaw,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_angular(self) -> bool {
        self.index() >= 3
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z", "roll", "pitch", "yaw"][self.index()]
    }
}

/// Per-component mean and epistemic variance, whichever method produced them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainPose {
    /// `[x, y, z, roll, pitch, yaw]`; angles wrapped to `(-pi, pi]`.
    pub mean: [f64; 6],
    pub var: [f64; 6],
    pub method: Method,
}

impl UncertainPose {
    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(&self.var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("uncertain pose"));
        }
        if self.var.iter().any(|v| *v < 0.0) {
            return Err(Error::domain("negative variance"));
        }
        if self.mean[3..].iter().any(|a| wrap(*a) != *a) {
            return Err(Error::domain("angular mean not wrapped to (-pi, pi]"));
        }
        Ok(())
    }

    pub fn mean_pose(&self) -> Pose6 {
        Pose6::from_components(self.mean).expect("validated means are finite")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Stochastic passes per input for dropout sampling.
    pub n_samples: usize,
    pub dropout_p: f64,
    /// Ensemble size.
    pub n_models: usize,
    /// One initialization seed per ensemble member; extended deterministically if short.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 30,
            dropout_p: 0.3,
            n_models: 5,
            seeds: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "n_samples must be >= 2, got {}",
                self.n_samples
            )));
        }
        if self.n_models < 2 {
            return Err(Error::Config(format!(
                "n_models must be >= 2, got {}",
                self.n_models
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Member seeds: the configured list, padded with `base + i`.
    pub fn member_seeds(&self, base: u64) -> Vec<u64> {
        (0..self.n_models)
            .map(|i| {
                self.seeds
                    .get(i)
                    .copied()
                    .unwrap_or(base.wrapping_add(1000 + i as u64))
            })
            .collect()
    }
}

/// Moments of a sample set plus the samples themselves (Euler form).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPrediction {
    pub pose: UncertainPose,
    pub samples: Vec<Pose6>,
}

/// Per-component mean and population variance of pose samples.
pub fn sample_moments(samples: &[Pose6], method: Method) -> Result<UncertainPose> {
    if samples.len() < 2 {
        return Err(Error::domain(format!(
            "moments need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let comps: Vec<[f64; 6]> = samples.iter().map(|s| s.components()).collect();
    if comps.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pose samples"));
    }
    let n = comps.len() as f64;
    let mut mean = [0.0; 6];
    let mut var = [0.0; 6];
    let mut column = Vec::with_capacity(comps.len());
    for c in 0..6 {
        column.clear();
        column.extend(comps.iter().map(|s| s[c]));
        if c >= 3 {
            let (sin, cos) = column
                .iter()
                .fold((0.0, 0.0), |(s, k), a| (s + a.sin(), k + a.cos()));
            let reference = sin.atan2(cos);
            for a in column.iter_mut() {
                *a = reference + wrap(*a - reference);
            }
        }
        let m = column.iter().sum::<f64>() / n;
        var[c] = column.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean[c] = if c >= 3 { wrap(m) } else { m };
    }
    Ok(UncertainPose { mean, var, method })
}

/// Monte Carlo dropout: `n_samples` passes with independent masks. Pass `i`
/// draws its mask from stream `i` of a generator seeded with `rng_seed`, so the
/// result does not depend on evaluation order.
pub fn mcd_predict(
    model: &Regressor,
    input: &[f64],
    cfg: &SamplerConfig,
    rng_seed: u64,
) -> Result<SampledPrediction> {
    cfg.validate()?;
    if model.arch.head != HeadKind::Plain {
        return Err(Error::Config("dropout sampling needs a plain head".into()));
    }
    if cfg.dropout_p <= 0.0 || model.arch.dropout_p <= 0.0 {
        return Err(Error::Config(
            "dropout sampling with p = 0 always yields zero variance".into(),
        ));
    }
    let width = model.arch.hidden[1];
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let mask = DropoutMask::sample(width, cfg.dropout_p, &mut rng);
            Ok(model
                .forward(input, Some(&mask))?
                .mean_pose()
                .to_euler_form())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledPrediction {
        pose: sample_moments(&samples, Method::Mcd)?,
        samples,
    })
}

/// Deep ensemble: one deterministic pass per member.
pub fn de_predict(ensemble: &[Regressor], input: &[f64]) -> Result<SampledPrediction> {
    if ensemble.len() < 2 {
        return Err(Error::Config(format!(
            "an ensemble needs at least 2 models, got {}",
            ensemble.len()
        )));
    }
    if ensemble.iter().any(|m| m.arch.head != HeadKind::Plain) {
        return Err(Error::Config(
            "ensemble members must all have plain heads".into(),
        ));
    }
    let samples = ensemble
        .iter()
        .map(|m| Ok(m.forward(input, None)?.mean_pose().to_euler_form()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledPrediction {
        pose: sample_moments(&samples, Method::De)?,
        samples,
    })
}
