//! Normal-Inverse-Gamma evidential parameters and their Student-t predictive.
//!
//! A regressed scalar is described by `NIG(gamma, nu, alpha, beta)`: a prior
//! over the mean `mu ~ N(gamma, sigma^2 / nu)` with `sigma^2 ~ InvGamma(alpha, beta)`.
//! Marginalizing both gives a Student-t predictive
//! `St(gamma, beta (1 + nu) / (nu alpha), 2 alpha)` whose second parameter is
//! the *squared* scale.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default floor applied to predictive densities inside the inverse-density loss.
pub const DEFAULT_CLIP_FLOOR: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NigParams {
    gamma: f64,
    nu: f64,
    alpha: f64,
    beta: f64,
}

impl TryFrom<[f64; 4]> for NigParams {
    type Error = Error;

    fn try_from(p: [f64; 4]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3])
    }
}

impl From<NigParams> for [f64; 4] {
    fn from(p: NigParams) -> Self {
        p.to_array()
    }
}

impl NigParams {
    /// Requires `nu > 0`, `alpha > 1`, `beta > 0`, all finite.
    pub fn new(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(gamma.is_finite() && nu.is_finite() && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::NonFinite("NIG parameters"));
        }
        if nu <= 0.0 {
            return Err(Error::domain(format!("NIG nu must be > 0, got {nu}")));
        }
        if alpha <= 1.0 {
            return Err(Error::domain(format!("NIG alpha must be > 1, got {alpha}")));
        }
        if beta <= 0.0 {
            return Err(Error::domain(format!("NIG beta must be > 0, got {beta}")));
        }
        Ok(Self {
            gamma,
            nu,
            alpha,
            beta,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.gamma, self.nu, self.alpha, self.beta]
    }

    /// `(E[mu], Var[mu]) = (gamma, beta / (nu (alpha - 1)))`
    pub fn moments(&self) -> (f64, f64) {
        (self.gamma, self.beta / (self.nu * (self.alpha - 1.0)))
    }

    pub fn epistemic_variance(&self) -> f64 {
        self.moments().1
    }

    /// `E[sigma^2] = beta / (alpha - 1)`; not used by any estimator, kept for diagnostics.
    pub fn aleatoric_variance(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    /// Total evidence `2 nu + alpha`.
    pub fn evidence(&self) -> f64 {
        2.0 * self.nu + self.alpha
    }

    pub fn predictive(&self) -> StudentT {
        StudentT {
            loc: self.gamma,
            scale_sq: self.beta * (1.0 + self.nu) / (self.nu * self.alpha),
            dof: 2.0 * self.alpha,
        }
    }
}

/// Free-function form of [`NigParams::moments`] that also validates raw inputs.
pub fn nig_moments(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    Ok(NigParams::new(gamma, nu, alpha, beta)?.moments())
}

pub fn evidence_phi(p: &NigParams) -> f64 {
    p.evidence()
}

pub fn predictive_student(p: &NigParams) -> StudentT {
    p.predictive()
}

/// Location/scale Student-t; `scale_sq` is the squared scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub loc: f64,
    pub scale_sq: f64,
    pub dof: f64,
}

impl StudentT {
    pub fn new(loc: f64, scale_sq: f64, dof: f64) -> Result<Self> {
        if !(loc.is_finite() && scale_sq.is_finite() && dof.is_finite()) {
            return Err(Error::NonFinite("Student-t parameters"));
        }
        if scale_sq <= 0.0 || dof <= 0.0 {
            return Err(Error::domain(format!(
                "Student-t needs scale_sq > 0 and dof > 0, got {scale_sq}, {dof}"
            )));
        }
        Ok(Self { loc, scale_sq, dof })
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let v = self.dof;
        let z2 = (y - self.loc).powi(2) / (v * self.scale_sq);
        ln_gamma(0.5 * (v + 1.0))
            - ln_gamma(0.5 * v)
            - 0.5 * (v * std::f64::consts::PI * self.scale_sq).ln()
            - 0.5 * (v + 1.0) * z2.ln_1p()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }
}

pub fn student_t_pdf(y: f64, st: &StudentT) -> f64 {
    st.pdf(y)
}

/// `max(pdf(y), floor)`. The reciprocal is therefore bounded by `1 / floor`.
pub fn clipped_density(y: f64, st: &StudentT, floor: f64) -> f64 {
    st.pdf(y).max(floor)
}
