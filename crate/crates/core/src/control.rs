//! Universal-formula correction of the regressed velocity field.
//!
//! Given the energy function V and the field estimate fhat, the controller
//! uses a(x) = grad V . fhat and b(x) = grad V. Whenever a + rho > 0 it
//! applies u = -(a + rho) b / |b|^2, which makes the energy decrease at rate
//! rho along the corrected field; otherwise it leaves the field alone.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::clf::ClfParams;
use crate::error::{Error, Result};
use crate::gmm::{gmr_velocity, MixtureParams};

/// Guard on |b|^2 in the control division. With a valid energy function b
/// vanishes only at the origin, where the zero branch applies; tripping this
/// is a diagnostic for a degenerate candidate during learning.
pub const EPS_B: f64 = 1e-12;

/// Margin function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoVariant {
    /// rho = rho0 sqrt(a^2 + |b|^4); grows unboundedly, rejects bounded
    /// disturbances.
    Sontag,
    /// rho = rho0 (1 - exp(-kappa0 |x|)); bounded by rho0, kept for
    /// comparison and offering no disturbance rejection margin.
    ClassK,
}

/// Controller gains and the assumed disturbance energy bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub variant: RhoVariant,
    /// Control gain; 1 recovers the classical formula.
    pub rho0: f64,
    /// Saturation rate of the bounded margin (ClassK only).
    pub kappa0: f64,
    /// Bound on the squared disturbance norm used by residual-set checks.
    pub kappa: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            variant: RhoVariant::Sontag,
            rho0: 1.0,
            kappa0: 1.0,
            kappa: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(Error::Argument(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if self.variant == RhoVariant::ClassK && !(self.kappa0 > 0.0) {
            return Err(Error::Argument(format!(
                "kappa0 must be positive for the classk variant, got {}",
                self.kappa0
            )));
        }
        if self.kappa < 0.0 {
            return Err(Error::Argument(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// a(x) = grad V . fhat and b(x) = grad V, with fhat precomputed at x.
pub fn ab_terms(clf: &ClfParams, fhat: &DVector<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let b = clf.gradient(x);
    (b.dot(fhat), b)
}

/// Margin value; zero exactly at the origin for both variants.
pub fn rho(cfg: &ControllerConfig, a: f64, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    match cfg.variant {
        RhoVariant::Sontag => {
            cfg.rho0 * (a * a + b.norm_squared().powi(2)).sqrt()
        }
        RhoVariant::ClassK => cfg.rho0 * (1.0 - (-cfg.kappa0 * x.norm()).exp()),
    }
}

/// Stabilizing correction at x for the provided field value.
///
/// Returns the zero vector at the origin and on the a + rho <= 0 branch.
pub fn sontag_u(
    clf: &ClfParams,
    cfg: &ControllerConfig,
    fhat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(x.len()));
    }
    let (a, b) = ab_terms(clf, fhat, x);
    let r = rho(cfg, a, &b, x);
    let excess = a + r;
    if excess <= 0.0 {
        return Ok(DVector::zeros(x.len()));
    }
    let b2 = b.norm_squared();
    if b2 < EPS_B {
        // Cauchy-Schwarz bounds the excess by |b| (1 + rho0)(|fhat| + |b|),
        // so the quotient stays at the field's own scale even for tiny
        // gradients; a negligible margin snaps to the continuous limit zero
        // and a degenerate division is surfaced as a diagnostic.
        let benign = EPS_B.sqrt() * 4.0 * (1.0 + cfg.rho0) * (1.0 + fhat.norm());
        if excess <= benign {
            return Ok(DVector::zeros(x.len()));
        }
        let u = &b * (-excess / b2);
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "control singularity: |grad V|^2 = {b2:e} with a + rho = {excess:e} at x = {x:?}"
            )));
        }
        return Ok(u);
    }
    Ok(b * (-excess / b2))
}

/// Corrected closed-loop field fhat(x) + u(x); disturbances are injected by
/// the simulator, not here.
pub fn corrected_field(
    mix: &MixtureParams,
    clf: &ClfParams,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let fhat = gmr_velocity(mix, x)?;
    let u = sontag_u(clf, cfg, &fhat, x)?;
    Ok(fhat + u)
}
