//! Synthetic misalignment-regression benchmark.
//!
//! A fixed cloud of map landmarks is observed from a true camera pose. The
//! rough initial pose is the true pose composed with a uniformly drawn noise
//! transform, and the regression target is that noise transform. Each
//! feature vector holds the landmarks expressed in the rough-pose frame next
//! to the jittered landmarks observed from the true camera, so the only
//! learnable signal is the misalignment between the two frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{mat_t_vec, mat_vec, EulerTriple, Pose6, Vec3};
use crate::regressor::Sample;

const LANDMARK_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_landmarks: usize,
    /// Standard deviation of the observation jitter, meters.
    pub jitter_sigma: f64,
    /// Per-sample jitter is `jitter_sigma * U(1, jitter_spread)`; 1 keeps it constant.
    pub jitter_spread: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Half-width of the per-axis translation noise, meters.
    pub translation_noise_m: f64,
    /// Half-width of the per-axis Euler noise, degrees.
    pub rotation_noise_deg: f64,
    /// Half-width of the true camera position spread, meters.
    pub camera_spread_m: f64,
    /// Half-width of the true camera yaw spread, degrees.
    pub camera_yaw_deg: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 8,
            jitter_sigma: 0.05,
            jitter_spread: 1.0,
            n_train: 4000,
            n_val: 4541,
            seed: 0,
            translation_noise_m: 2.0,
            rotation_noise_deg: 10.0,
            camera_spread_m: 1.0,
            camera_yaw_deg: 20.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks < 4 {
            return Err(Error::Config(format!(
                "at least 4 landmarks are needed, got {}",
                self.n_landmarks
            )));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config(
                "train and validation sizes must be >= 1".into(),
            ));
        }
        let non_negative = [
            self.jitter_sigma,
            self.translation_noise_m,
            self.rotation_noise_deg,
            self.camera_spread_m,
            self.camera_yaw_deg,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "dataset ranges must be finite and >= 0".into(),
            ));
        }
        if !(self.jitter_spread.is_finite() && self.jitter_spread >= 1.0) {
            return Err(Error::Config("jitter_spread must be >= 1".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        6 * self.n_landmarks
    }
}

/// One synthetic observation with everything needed to audit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    /// Camera-to-world transform of the true camera.
    pub true_pose: Pose6,
    /// True pose composed with the inverse noise.
    pub initial_pose: Pose6,
    /// The noise transform, which is the regression target.
    pub misalignment: Pose6,
    pub features: Vec<f64>,
}

impl SyntheticScene {
    pub fn sample(&self) -> Sample {
        Sample {
            features: self.features.clone(),
            target: self.misalignment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub landmarks: Vec<Vec3>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn sym(rng: &mut impl Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.gen_range(-half..=half)
    }
}

/// `T_a * T_b` for camera-to-world style transforms.
fn compose(a: &Pose6, b: &Pose6) -> Pose6 {
    let qa = a.quaternion();
    let rb = qa.rotate(b.translation);
    let t = [
        a.translation[0] + rb[0],
        a.translation[1] + rb[1],
        a.translation[2] + rb[2],
    ];
    Pose6::from_quaternion(t, qa.mul(&b.quaternion())).to_euler_form()
}

fn inverse(a: &Pose6) -> Pose6 {
    let q = a.quaternion().conjugate();
    let t = q.rotate(a.translation);
    Pose6::from_quaternion([-t[0], -t[1], -t[2]], q).to_euler_form()
}

pub fn gen_landmarks(cfg: &DatasetConfig) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(LANDMARK_STREAM);
    (0..cfg.n_landmarks)
        .map(|_| {
            [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(3.0..12.0),
            ]
        })
        .collect()
}

fn gen_scene(cfg: &DatasetConfig, landmarks: &[Vec3], rng: &mut impl Rng) -> SyntheticScene {
    let small = 3f64.to_radians();
    let true_pose = Pose6::from_euler(
        [0.0; 3].map(|_| sym(rng, cfg.camera_spread_m)),
        EulerTriple::new(
            sym(rng, small),
            sym(rng, small),
            sym(rng, cfg.camera_yaw_deg.to_radians()),
        )
        .expect("bounded angles"),
    );
    let rot = cfg.rotation_noise_deg.to_radians();
    let noise = Pose6::from_euler(
        [0.0; 3].map(|_| sym(rng, cfg.translation_noise_m)),
        EulerTriple::new(sym(rng, rot), sym(rng, rot), sym(rng, rot)).expect("bounded angles"),
    );
    let sigma = cfg.jitter_sigma * rng.gen_range(1.0..=cfg.jitter_spread);
    let jitter = Normal::new(0.0, sigma).expect("finite sigma");

    let r_true = true_pose.quaternion().to_matrix();
    let r_noise = noise.quaternion().to_matrix();
    let mut in_initial = Vec::with_capacity(3 * landmarks.len());
    let mut observed = Vec::with_capacity(3 * landmarks.len());
    for p in landmarks {
        let rel = [
            p[0] - true_pose.translation[0],
            p[1] - true_pose.translation[1],
            p[2] - true_pose.translation[2],
        ];
        let q = mat_t_vec(&r_true, rel);
        let nq = mat_vec(&r_noise, q);
        for k in 0..3 {
            in_initial.push(nq[k] + noise.translation[k]);
            observed.push(q[k] + jitter.sample(rng));
        }
    }
    in_initial.extend(observed);
    SyntheticScene {
        initial_pose: compose(&true_pose, &inverse(&noise)),
        true_pose,
        misalignment: noise,
        features: in_initial,
    }
}

/// `n` scenes drawn from `stream` of the dataset seed.
pub fn gen_scenes(
    cfg: &DatasetConfig,
    landmarks: &[Vec3],
    stream: u64,
    n: usize,
) -> Vec<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    (0..n)
        .map(|_| gen_scene(cfg, landmarks, &mut rng))
        .collect()
}

/// Deterministic train and validation sets drawn from disjoint streams.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let landmarks = gen_landmarks(cfg);
    let to_samples = |stream, n| -> Vec<Sample> {
        gen_scenes(cfg, &landmarks, stream, n)
            .iter()
            .map(SyntheticScene::sample)
            .collect()
    };
    Ok(Dataset {
        train: to_samples(TRAIN_STREAM, cfg.n_train),
        val: to_samples(VAL_STREAM, cfg.n_val),
        landmarks,
    })
}
