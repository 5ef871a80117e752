//! Reproduction fidelity and control effort measures.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::clf::ClfParams;
use crate::control::{sontag_u, ControllerConfig};
use crate::dataset::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::{gmr_velocity, MixtureParams};
use crate::sim::RolloutResult;

/// Aggregated per-shape evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean swept error area between demonstrations and reproductions.
    pub sea: f64,
    /// Mean squared velocity error of the field on the demonstration points.
    pub velocity_mse: f64,
    pub mean_control_effort: f64,
    pub convergence_fraction: f64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sea", self.sea),
            ("velocity_mse", self.velocity_mse),
            ("mean_control_effort", self.mean_control_effort),
            ("convergence_fraction", self.convergence_fraction),
        ];
        for (name, v) in fields {
            if v < 0.0 {
                return Err(Error::Numerical(format!("{name} is negative: {v}")));
            }
        }
        if self.convergence_fraction > 1.0 {
            return Err(Error::Numerical(format!(
                "convergence fraction {} exceeds 1",
                self.convergence_fraction
            )));
        }
        Ok(())
    }
}

/// Resamples a polyline to `p` points equally spaced in arc length.
///
/// A degenerate zero-length trajectory collapses to `p` copies of its first
/// point.
pub fn resample_arc_length(traj: &[DVector<f64>], p: usize) -> Result<Vec<DVector<f64>>> {
    if traj.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 points to resample, got {}",
            traj.len()
        )));
    }
    if p < 2 {
        return Err(Error::Argument("need at least 2 output points".into()));
    }
    let mut cumulative = Vec::with_capacity(traj.len());
    cumulative.push(0.0);
    for w in traj.windows(2) {
        let step = (&w[1] - &w[0]).norm();
        cumulative.push(cumulative.last().unwrap() + step);
    }
    let total = *cumulative.last().unwrap();
    if total == 0.0 {
        return Ok(vec![traj[0].clone(); p]);
    }
    let mut out = Vec::with_capacity(p);
    let mut seg = 0;
    for j in 0..p {
        let target = total * j as f64 / (p - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let frac = if span > 0.0 {
            ((target - cumulative[seg]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(&traj[seg] * (1.0 - frac) + &traj[seg + 1] * frac);
    }
    Ok(out)
}

/// Triangle area in any embedding dimension.
///
/// Vertices are put in a canonical order first so the value does not depend
/// on how callers orient the triangle; this keeps the swept error area
/// exactly symmetric in its two arguments.
fn triangle_area(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let mut vs = [a, b, c];
    vs.sort_by(|p, q| {
        p.iter()
            .zip(q.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let u = vs[1] - vs[0];
    let v = vs[2] - vs[0];
    let gram = u.norm_squared() * v.norm_squared() - u.dot(&v).powi(2);
    0.5 * gram.max(0.0).sqrt()
}

/// Quadrilateral area averaged over both diagonal splits, so the measure is
/// symmetric in the two trajectories.
fn quad_area(a1: &DVector<f64>, a2: &DVector<f64>, b2: &DVector<f64>, b1: &DVector<f64>) -> f64 {
    let split1 = triangle_area(a1, a2, b2) + triangle_area(a1, b2, b1);
    let split2 = triangle_area(a2, b2, b1) + triangle_area(a2, b1, a1);
    0.5 * (split1 + split2)
}

/// Swept error area between two trajectories.
///
/// Both are first resampled by arc length to the shorter point count, then
/// the areas of the quadrilaterals spanned by corresponding segments are
/// accumulated.
pub fn swept_error_area(demo: &[DVector<f64>], repro: &[DVector<f64>]) -> Result<f64> {
    let p = demo.len().min(repro.len());
    if p < 2 {
        return Err(Error::Argument(
            "trajectories need at least 2 points each".into(),
        ));
    }
    let a = resample_arc_length(demo, p)?;
    let b = resample_arc_length(repro, p)?;
    let mut area = 0.0;
    for i in 0..p - 1 {
        area += quad_area(&a[i], &a[i + 1], &b[i + 1], &b[i]);
    }
    Ok(area)
}

/// Trapezoidal quadrature of |u(t)| over a rollout.
pub fn control_effort(result: &RolloutResult) -> f64 {
    let mut effort = 0.0;
    for i in 1..result.controls.len() {
        effort += 0.5
            * (result.controls[i - 1].norm() + result.controls[i].norm())
            * (result.times[i] - result.times[i - 1]);
    }
    effort
}

/// Mean squared error between demonstrated velocities and the field on the
/// demonstration points. With a controller config the corrected field is
/// used; without one this is the plain regression error.
pub fn velocity_mse(
    mix: &MixtureParams,
    clf: &ClfParams,
    cfg: Option<&ControllerConfig>,
    set: &DemonstrationSet,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in set.iter_samples() {
        let fhat = gmr_velocity(mix, &s.position)?;
        let field = match cfg {
            Some(cfg) => &fhat + sontag_u(clf, cfg, &fhat, &s.position)?,
            None => fhat,
        };
        total += (&s.velocity - field).norm_squared();
        count += 1;
    }
    Ok(total / count as f64)
}
