//! Rotation and translation representations for 6-DoF misalignment estimates.
//!
//! Euler angles follow the intrinsic Z-Y-X (yaw, pitch, roll) convention
//! everywhere in the crate: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Quaternions
//! are stored `(x, y, z, w)` and canonicalized so that `w >= 0`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sine of pitch beyond which the Z-Y-X decomposition is treated as gimbal locked.
const GIMBAL_SIN_PITCH: f64 = 1.0 - 1e-12;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("wrap_angle"));
    }
    Ok(wrap(theta))
}

/// Unchecked [`wrap_angle`] for hot paths whose inputs are already validated.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Huber-style smooth L1 distance: `0.5 x^2` inside `|x| < 1`, `|x| - 0.5` outside.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`].
#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Smooth L1 on the shortest signed angular difference `pred - target`.
#[inline]
pub fn angular_smooth_l1(pred: f64, target: f64) -> f64 {
    smooth_l1(wrap(pred - target))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerTriple {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerTriple {
    /// Builds a triple with every angle wrapped into `(-pi, pi]`.
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        Ok(Self {
            roll: wrap_angle(roll)?,
            pitch: wrap_angle(pitch)?,
            yaw: wrap_angle(yaw)?,
        })
    }

    pub fn from_array(a: [f64; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn to_quaternion(self) -> UnitQuaternion {
        euler_to_quat(self)
    }
}

/// Unit quaternion `(x, y, z, w)` with `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(q: [f64; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    /// Normalizes `(x, y, z, w)` and flips it into the `w >= 0` hemisphere.
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && w.is_finite()) {
            return Err(Error::NonFinite("quaternion"));
        }
        let n = (x * x + y * y + z * z + w * w).sqrt();
        if n < 1e-12 {
            return Err(Error::domain("zero quaternion has no rotation"));
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Self {
            x: x * s,
            y: y * s,
            z: z * s,
            w: w * s,
        })
    }

    /// Builds a quaternion without normalizing or flipping its sign.
    ///
    /// Only used to exercise the double cover in tests and sampling code.
    pub fn from_raw_unchecked(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w
    }

    pub fn conjugate(&self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: self.w,
        }
    }

    /// Hamilton product `self * rhs`. The result is not re-canonicalized.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.to_matrix(), v)
    }

    pub fn to_euler(self) -> EulerTriple {
        quat_to_euler(self)
    }
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `m^T v`
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Intrinsic Z-Y-X decomposition. At gimbal lock roll is fixed to zero and the
/// residual rotation is assigned to yaw.
pub fn quat_to_euler(q: UnitQuaternion) -> EulerTriple {
    let n = q.norm();
    let (x, y, z, w) = (q.x / n, q.y / n, q.z / n, q.w / n);
    let sin_pitch = 2.0 * (w * y - z * x);
    if sin_pitch.abs() >= GIMBAL_SIN_PITCH {
        let pitch = PI / 2.0 * sin_pitch.signum();
        let yaw = (2.0 * (w * z - x * y)).atan2(1.0 - 2.0 * (x * x + z * z));
        return EulerTriple {
            roll: 0.0,
            pitch,
            yaw: wrap(yaw),
        };
    }
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = sin_pitch.asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    EulerTriple {
        roll: wrap(roll),
        pitch: wrap(pitch),
        yaw: wrap(yaw),
    }
}

pub fn euler_to_quat(e: EulerTriple) -> UnitQuaternion {
    let (sr, cr) = (0.5 * e.roll).sin_cos();
    let (sp, cp) = (0.5 * e.pitch).sin_cos();
    let (sy, cy) = (0.5 * e.yaw).sin_cos();
    let w = cr * cp * cy + sr * sp * sy;
    let x = sr * cp * cy - cr * sp * sy;
    let y = cr * sp * cy + sr * cp * sy;
    let z = cr * cp * sy - sr * sp * cy;
    let n = (x * x + y * y + z * z + w * w).sqrt();
    let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
    UnitQuaternion {
        x: x * s,
        y: y * s,
        z: z * s,
        w: w * s,
    }
}

/// Geodesic angle between two rotations in `[0, pi]`, invariant to `q ~ -q`.
pub fn quat_angular_distance(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let rel = q1.conjugate().mul(q2);
    let v = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
    2.0 * v.atan2(rel.w.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Euler(EulerTriple),
    Quaternion(UnitQuaternion),
}

impl Rotation {
    pub fn to_euler(&self) -> EulerTriple {
        match self {
            Rotation::Euler(e) => *e,
            Rotation::Quaternion(q) => quat_to_euler(*q),
        }
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        match self {
            Rotation::Euler(e) => euler_to_quat(*e),
            Rotation::Quaternion(q) => *q,
        }
    }
}

/// A 6-DoF pose: translation in meters plus a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub translation: Vec3,
    pub rotation: Rotation,
}

impl Pose6 {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: Rotation::Euler(EulerTriple {
                roll: 0.0,
                pitch: 0.0,
                yaw: 0.0,
            }),
        }
    }

    pub fn from_euler(translation: Vec3, euler: EulerTriple) -> Self {
        Self {
            translation,
            rotation: Rotation::Euler(euler),
        }
    }

    pub fn from_quaternion(translation: Vec3, q: UnitQuaternion) -> Self {
        Self {
            translation,
            rotation: Rotation::Quaternion(q),
        }
    }

    pub fn euler(&self) -> EulerTriple {
        self.rotation.to_euler()
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        self.rotation.to_quaternion()
    }

    /// Same pose with the rotation in Euler form.
    pub fn to_euler_form(&self) -> Self {
        Self::from_euler(self.translation, self.euler())
    }

    /// `[x, y, z, roll, pitch, yaw]`
    pub fn components(&self) -> [f64; 6] {
        let e = self.euler();
        let t = self.translation;
        [t[0], t[1], t[2], e.roll, e.pitch, e.yaw]
    }

    pub fn from_components(c: [f64; 6]) -> Result<Self> {
        Ok(Self::from_euler(
            [c[0], c[1], c[2]],
            EulerTriple::new(c[3], c[4], c[5])?,
        ))
    }

    /// Euclidean translation error and geodesic rotation error (radians).
    pub fn errors_to(&self, other: &Pose6) -> (f64, f64) {
        let d: f64 = (0..3)
            .map(|i| (self.translation[i] - other.translation[i]).powi(2))
            .sum();
        (
            d.sqrt(),
            quat_angular_distance(&self.quaternion(), &other.quaternion()),
        )
    }
}
