//! Joint optimization of mixture and energy-function parameters against the
//! demonstration set, with the controller inside the loop.
//!
//! The constrained feasible set (simplex priors, positive definite
//! covariances and shape matrices) is eliminated by reparameterization:
//! softmax logits for the priors, floored Cholesky factors with
//! exp-transformed diagonals for the positive definite blocks, and an
//! unconstrained skew addend for the asymmetric shape matrices. Any decoded
//! point is feasible, so a plain quasi-Newton descent applies.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clf::{AsymmetricTerm, ClfParams};
use crate::control::{ControllerConfig, RhoVariant, EPS_B};
use crate::dataset::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::{em_fit, eps_pd_for, kmeans_init, MixtureParams};

const LN_2PI: f64 = 1.8378770664093453;

/// How the objective gradient is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Central finite differences over the free vector.
    #[serde(rename = "fd")]
    FiniteDifference,
    /// Reverse-mode accumulation through the field, controller, and
    /// reparameterization. Exact wherever the objective is differentiable;
    /// branch switches are treated as locally constant.
    Analytic,
}

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub k: usize,
    pub l: usize,
    pub max_outer_iter: usize,
    pub j_threshold: f64,
    pub gradient_mode: GradientMode,
    /// Relative step for finite differences.
    pub fd_step: f64,
    /// Weight of the soft |field(0)|^2 penalty anchoring the target.
    pub origin_weight: f64,
    /// Eigenvalue floor for the symmetrized energy shape matrices. `None`
    /// picks a data-commensurate margin; see [`default_clf_floor`].
    pub clf_floor: Option<f64>,
    /// Ridge weight on the asymmetric terms inside the training loss.
    ///
    /// A quartic term that is inactive on every demonstration sample leaves
    /// the fit error exactly flat, so the optimizer can inflate it without
    /// penalty while its active side builds an energy cliff next to the
    /// target. The tiny ridge makes those flat directions strictly downhill
    /// back toward data-driven scales without disturbing the fit.
    pub term_ridge: f64,
    /// Ridge weight on |P_l mu_l|^2 inside the training loss.
    ///
    /// P_l mu_l is the linear coefficient of sigma_l at the origin; inflating
    /// it adds (P_l mu_l)(P_l mu_l)' to the energy's effective curvature at
    /// the target, which blows up the margin function where reproductions
    /// settle. Penalizing the product keeps the residual set a sensible
    /// neighborhood while leaving mid-field shaping free.
    pub coupling_ridge: f64,
    /// Number of optimization restarts with staggered clustering seeds; the
    /// run with the lowest final loss wins.
    pub restarts: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    /// Seed for the clustering initialization.
    pub seed: u64,
    pub lbfgs_memory: usize,
    pub max_line_search: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            l: 3,
            max_outer_iter: 150,
            j_threshold: 1e-4,
            gradient_mode: GradientMode::FiniteDifference,
            fd_step: 1e-6,
            origin_weight: 1.0,
            clf_floor: None,
            term_ridge: 1e-6,
            coupling_ridge: 3e-4,
            restarts: 3,
            em_max_iter: 200,
            em_tol: 1e-6,
            seed: 0,
            lbfgs_memory: 10,
            max_line_search: 40,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if !(self.j_threshold > 0.0) {
            return Err(Error::Argument(format!(
                "j_threshold must be positive, got {}",
                self.j_threshold
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Argument("fd_step must be positive".into()));
        }
        if self.origin_weight < 0.0 {
            return Err(Error::Argument("origin_weight must be non-negative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Argument("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

fn tri_size(n: usize) -> usize {
    n * (n + 1) / 2
}

fn skew_size(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Scale-aware eigenvalue floor for the mixture covariances on decode.
///
/// The bare positive definiteness floor is small enough that the optimizer
/// can sharpen a component into a numerically stiff sliver whose regression
/// gain is enormous; bounding the decode floor by a fraction of the data
/// variance caps that gain and keeps fixed-step reproductions stable.
pub fn default_cov_floor(set: &DemonstrationSet) -> f64 {
    1e-4 * set.variance_scale()
}

/// Scale-aware eigenvalue floor for the energy shape matrices.
///
/// The shape matrices carry units of speed over position, so the margin is
/// tied to the data's speed-to-extent ratio. Keeping it well above the bare
/// positive definiteness floor stops the optimizer from collapsing the whole
/// energy landscape toward zero, which would suppress intervention on the
/// demonstrations at the price of a vacuous margin function.
pub fn default_clf_floor(set: &DemonstrationSet) -> f64 {
    let pos = set.position_variance_scale().max(1e-300);
    let vel = set.velocity_variance_scale();
    0.05 * (vel / pos).sqrt()
}

/// Dimensions and block offsets of the free vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub d: usize,
    pub k: usize,
    pub l: usize,
    /// Covariance eigenvalue floor used on decode; at least the data's bare
    /// definiteness floor, by default stiffened per [`default_cov_floor`].
    pub eps_pd: f64,
    /// Eigenvalue floor applied to the symmetrized energy shape matrices on
    /// decode; never below `eps_pd`.
    pub clf_floor: f64,
}

impl ParamLayout {
    pub fn for_set(set: &DemonstrationSet, k: usize, l: usize) -> Self {
        let eps_pd = eps_pd_for(set);
        Self {
            d: set.dims(),
            k,
            l,
            eps_pd: default_cov_floor(set).max(eps_pd),
            clf_floor: default_clf_floor(set).max(eps_pd),
        }
    }

    pub fn with_clf_floor(mut self, floor: f64) -> Self {
        self.clf_floor = floor.max(self.eps_pd);
        self
    }

    pub fn total(&self) -> usize {
        let joint = 2 * self.d;
        self.k
            + self.k * joint
            + self.k * tri_size(joint)
            + (self.l + 1) * tri_size(self.d)
            + self.l * skew_size(self.d)
            + self.l * self.d
    }

    fn logits(&self) -> usize {
        0
    }

    fn means(&self) -> usize {
        self.k
    }

    fn covs(&self) -> usize {
        self.means() + self.k * 2 * self.d
    }

    fn p0(&self) -> usize {
        self.covs() + self.k * tri_size(2 * self.d)
    }

    fn p_term(&self, l: usize) -> usize {
        self.p0() + (l + 1) * tri_size(self.d)
    }

    fn skew_term(&self, l: usize) -> usize {
        self.p_term(self.l) + l * skew_size(self.d)
    }

    fn mu_term(&self, l: usize) -> usize {
        self.skew_term(self.l) + l * self.d
    }
}

/// Unconstrained encoding of the full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParams {
    pub layout: ParamLayout,
    pub values: DVector<f64>,
}

fn pack_chol(raw: &mut [f64], factor: &DMatrix<f64>) {
    let n = factor.nrows();
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            raw[idx] = if i == j {
                factor[(i, i)].ln()
            } else {
                factor[(i, j)]
            };
            idx += 1;
        }
    }
}

fn unpack_chol(raw: &[f64], n: usize) -> DMatrix<f64> {
    let mut factor = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            factor[(i, j)] = if i == j { raw[idx].exp() } else { raw[idx] };
            idx += 1;
        }
    }
    factor
}

/// Cholesky factor of `mat - floor * I`, repairing tiny indefiniteness by
/// eigenvalue clamping so matrices sitting exactly on the floor encode too.
fn shifted_cholesky(mat: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let n = mat.nrows();
    let shifted = (mat + mat.transpose()) * 0.5 - DMatrix::identity(n, n) * floor;
    if let Some(chol) = Cholesky::new(shifted.clone()) {
        return Ok(chol.unpack());
    }
    let tiny = shifted.trace().abs().max(1.0) * 1e-14;
    let repaired = crate::gmm::spd_floor(&shifted, tiny);
    Cholesky::new(repaired)
        .map(|c| c.unpack())
        .ok_or_else(|| {
            Error::Numerical(format!(
                "matrix is below the feasibility floor {floor:e} and cannot be encoded"
            ))
        })
}

impl FreeParams {
    /// Encodes feasible parameters into the unconstrained vector.
    pub fn encode(mix: &MixtureParams, clf: &ClfParams, layout: ParamLayout) -> Result<Self> {
        if mix.dims() != layout.d
            || mix.num_components() != layout.k
            || clf.dims() != layout.d
            || clf.num_terms() != layout.l
        {
            return Err(Error::Argument(
                "parameter dimensions do not match the layout".into(),
            ));
        }
        let mut v = DVector::zeros(layout.total());
        for (i, p) in mix.priors().iter().enumerate() {
            v[layout.logits() + i] = p.ln();
        }
        let joint = 2 * layout.d;
        for (ki, mean) in mix.means().iter().enumerate() {
            for i in 0..joint {
                v[layout.means() + ki * joint + i] = mean[i];
            }
        }
        for (ki, cov) in mix.covariances().iter().enumerate() {
            let factor = shifted_cholesky(cov, layout.eps_pd)?;
            let off = layout.covs() + ki * tri_size(joint);
            pack_chol(&mut v.as_mut_slice()[off..off + tri_size(joint)], &factor);
        }
        let half_floor = layout.clf_floor * 0.5;
        let factor = shifted_cholesky(clf.p0(), half_floor)?;
        let off = layout.p0();
        pack_chol(&mut v.as_mut_slice()[off..off + tri_size(layout.d)], &factor);
        for (li, term) in clf.terms().iter().enumerate() {
            let sym = (&term.p + term.p.transpose()) * 0.5;
            let factor = shifted_cholesky(&sym, half_floor)?;
            let off = layout.p_term(li);
            pack_chol(&mut v.as_mut_slice()[off..off + tri_size(layout.d)], &factor);
            let skew = (&term.p - term.p.transpose()) * 0.5;
            let off = layout.skew_term(li);
            let mut idx = 0;
            for i in 0..layout.d {
                for j in 0..i {
                    v[off + idx] = skew[(i, j)];
                    idx += 1;
                }
            }
            for i in 0..layout.d {
                v[layout.mu_term(li) + i] = term.mu[i];
            }
        }
        Ok(Self { layout, values: v })
    }

    /// Decodes into feasible parameters. Every output satisfies the mixture
    /// and energy-function invariants by construction.
    pub fn decode(&self) -> Result<(MixtureParams, ClfParams)> {
        let lay = &self.layout;
        let joint = 2 * lay.d;
        let v = self.values.as_slice();

        let max_logit = v[lay.logits()..lay.logits() + lay.k]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut priors: Vec<f64> = v[lay.logits()..lay.logits() + lay.k]
            .iter()
            .map(|z| (z - max_logit).exp())
            .collect();
        let total: f64 = priors.iter().sum();
        for p in &mut priors {
            *p /= total;
        }

        let means: Vec<DVector<f64>> = (0..lay.k)
            .map(|ki| {
                DVector::from_row_slice(&v[lay.means() + ki * joint..lay.means() + (ki + 1) * joint])
            })
            .collect();

        let eye_joint = DMatrix::<f64>::identity(joint, joint) * lay.eps_pd;
        let covariances: Vec<DMatrix<f64>> = (0..lay.k)
            .map(|ki| {
                let off = lay.covs() + ki * tri_size(joint);
                let factor = unpack_chol(&v[off..off + tri_size(joint)], joint);
                &factor * factor.transpose() + &eye_joint
            })
            .collect();
        let mix = MixtureParams::new(lay.d, lay.eps_pd, priors, means, covariances)?;

        let eye_half = DMatrix::<f64>::identity(lay.d, lay.d) * (lay.clf_floor * 0.5);
        let off = lay.p0();
        let factor = unpack_chol(&v[off..off + tri_size(lay.d)], lay.d);
        let p0 = &factor * factor.transpose() + &eye_half;
        let terms: Vec<AsymmetricTerm> = (0..lay.l)
            .map(|li| {
                let off = lay.p_term(li);
                let factor = unpack_chol(&v[off..off + tri_size(lay.d)], lay.d);
                let mut p = &factor * factor.transpose() + &eye_half;
                let off = lay.skew_term(li);
                let mut idx = 0;
                for i in 0..lay.d {
                    for j in 0..i {
                        let w = v[off + idx];
                        p[(i, j)] += w;
                        p[(j, i)] -= w;
                        idx += 1;
                    }
                }
                let mu = DVector::from_row_slice(
                    &v[lay.mu_term(li)..lay.mu_term(li) + lay.d],
                );
                AsymmetricTerm { p, mu }
            })
            .collect();
        let clf = ClfParams::new(p0, terms)?;
        Ok((mix, clf))
    }
}

/// Mean squared error between demonstrated velocities and the corrected
/// field, plus the soft origin anchor.
///
/// Passing `None` for the controller disables the correction and yields the
/// plain regression error, the ablation baseline.
pub fn objective_with(
    free: &FreeParams,
    set: &DemonstrationSet,
    cfg: Option<&ControllerConfig>,
    origin_weight: f64,
) -> Result<f64> {
    let (mix, clf) = free.decode()?;
    let count = (set.num_demos() * set.samples_per_demo()) as f64;
    let mut total = 0.0;
    for (m, demo) in set.demos().iter().enumerate() {
        for (n, s) in demo.samples.iter().enumerate() {
            let fhat = crate::gmm::gmr_velocity(&mix, &s.position)?;
            let field = match cfg {
                Some(cfg) => &fhat + crate::control::sontag_u(&clf, cfg, &fhat, &s.position)?,
                None => fhat,
            };
            let r2 = (&s.velocity - field).norm_squared();
            if !r2.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite residual at demonstration {m}, sample {n}"
                )));
            }
            total += r2;
        }
    }
    let mut j = total / (2.0 * count);
    if origin_weight > 0.0 {
        let origin = DVector::zeros(set.dims());
        let f0 = crate::gmm::gmr_velocity(&mix, &origin)?;
        j += origin_weight * f0.norm_squared();
    }
    if !j.is_finite() {
        return Err(Error::Numerical("non-finite objective".into()));
    }
    Ok(j)
}

/// Objective with the controller in the loop.
pub fn objective(
    free: &FreeParams,
    set: &DemonstrationSet,
    cfg: &ControllerConfig,
    origin_weight: f64,
) -> Result<f64> {
    objective_with(free, set, Some(cfg), origin_weight)
}

fn ridge_value(clf: &ClfParams, term_weight: f64, coupling_weight: f64) -> f64 {
    let mut r = 0.0;
    for term in clf.terms() {
        r += term_weight * (term.p.norm_squared() + term.mu.norm_squared());
        r += coupling_weight * (&term.p * &term.mu).norm_squared();
    }
    r
}

// ---------------------------------------------------------------------------
// Analytic gradient: reverse accumulation through field, controller, and
// reparameterization.

/// Cotangents with respect to the decoded parameters.
struct ThetaGrad {
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    p0: DMatrix<f64>,
    p: Vec<DMatrix<f64>>,
    mu: Vec<DVector<f64>>,
}

impl ThetaGrad {
    fn zeros(lay: &ParamLayout) -> Self {
        let joint = 2 * lay.d;
        Self {
            priors: vec![0.0; lay.k],
            means: vec![DVector::zeros(joint); lay.k],
            covs: vec![DMatrix::zeros(joint, joint); lay.k],
            p0: DMatrix::zeros(lay.d, lay.d),
            p: vec![DMatrix::zeros(lay.d, lay.d); lay.l],
            mu: vec![DVector::zeros(lay.d); lay.l],
        }
    }

    fn add(&mut self, other: &ThetaGrad) {
        for (a, b) in self.priors.iter_mut().zip(&other.priors) {
            *a += b;
        }
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += b;
        }
        for (a, b) in self.covs.iter_mut().zip(&other.covs) {
            *a += b;
        }
        self.p0 += &other.p0;
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += b;
        }
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += b;
        }
    }
}

/// Per-component quantities reused across samples.
struct MixPrep {
    mean_x: Vec<DVector<f64>>,
    mean_v: Vec<DVector<f64>>,
    cvp: Vec<DMatrix<f64>>,
    /// Inverse of the position covariance block.
    binv: Vec<DMatrix<f64>>,
    /// -(d ln 2 pi + ln det) / 2 of the position marginal.
    ln_norm: Vec<f64>,
}

impl MixPrep {
    fn new(mix: &MixtureParams) -> Result<Self> {
        let k = mix.num_components();
        let d = mix.dims();
        let mut prep = Self {
            mean_x: Vec::with_capacity(k),
            mean_v: Vec::with_capacity(k),
            cvp: Vec::with_capacity(k),
            binv: Vec::with_capacity(k),
            ln_norm: Vec::with_capacity(k),
        };
        for ki in 0..k {
            let cov_pos = mix.cov_pos(ki);
            let chol = Cholesky::new(cov_pos).ok_or_else(|| {
                Error::Numerical(format!("position covariance of component {ki} is singular"))
            })?;
            let ln_det: f64 =
                chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
            prep.ln_norm.push(-0.5 * (d as f64 * LN_2PI + ln_det));
            prep.binv.push(chol.inverse());
            prep.mean_x.push(mix.mean_pos(ki));
            prep.mean_v.push(mix.mean_vel(ki));
            prep.cvp.push(mix.cov_vel_pos(ki));
        }
        Ok(prep)
    }
}

/// Forward evaluation of field and controller at one point, mirroring the
/// objective, followed by reverse accumulation of `rbar' F(x)` into `grad`.
#[allow(clippy::too_many_arguments)]
fn pullback_sample(
    mix: &MixtureParams,
    prep: &MixPrep,
    clf: &ClfParams,
    cfg: Option<&ControllerConfig>,
    x: &DVector<f64>,
    rbar: &DVector<f64>,
    grad: &mut ThetaGrad,
) {
    let k = mix.num_components();
    let d = mix.dims();

    // Forward: weights, regression means, field.
    let mut deltas = Vec::with_capacity(k);
    let mut bdeltas = Vec::with_capacity(k);
    let mut lw = vec![0.0; k];
    for ki in 0..k {
        let delta = x - &prep.mean_x[ki];
        let bdelta = &prep.binv[ki] * &delta;
        lw[ki] = mix.priors()[ki].ln() + prep.ln_norm[ki] - 0.5 * delta.dot(&bdelta);
        deltas.push(delta);
        bdeltas.push(bdelta);
    }
    let max_lw = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut gamma = vec![0.0; k];
    let mut sum = 0.0;
    for ki in 0..k {
        gamma[ki] = (lw[ki] - max_lw).exp();
        sum += gamma[ki];
    }
    for g in &mut gamma {
        *g /= sum;
    }
    let mut ms = Vec::with_capacity(k);
    let mut fhat = DVector::zeros(d);
    for ki in 0..k {
        let m = &prep.mean_v[ki] + &prep.cvp[ki] * &bdeltas[ki];
        fhat += &m * gamma[ki];
        ms.push(m);
    }

    // Forward: controller.
    let at_origin = x.iter().all(|&v| v == 0.0);
    let mut active = false;
    let mut g_clf = DVector::zeros(d);
    let mut a = 0.0;
    let mut q = 0.0;
    let mut excess = 0.0;
    if let Some(cfg) = cfg {
        if !at_origin {
            g_clf = clf.gradient(x);
            a = g_clf.dot(&fhat);
            q = g_clf.norm_squared();
            let r = crate::control::rho(cfg, a, &g_clf, x);
            excess = a + r;
            active = excess > 0.0 && q >= EPS_B;
        }
    }

    // Reverse: cotangents on fhat and on the energy gradient.
    let mut fbar = rbar.clone();
    let mut gbar = DVector::zeros(d);
    if active {
        let cfg = cfg.unwrap();
        let c = excess / q;
        // u = -c g
        let cbar = -rbar.dot(&g_clf);
        gbar += rbar * (-c);
        // c = (a + rho) / q
        let mut abar = cbar / q;
        let rhobar = cbar / q;
        let mut qbar = -cbar * excess / (q * q);
        match cfg.variant {
            RhoVariant::Sontag => {
                let s = (a * a + q * q).sqrt();
                if s > 0.0 {
                    abar += rhobar * cfg.rho0 * a / s;
                    qbar += rhobar * cfg.rho0 * q / s;
                }
            }
            RhoVariant::ClassK => {
                // rho depends only on |x|, not on the parameters.
            }
        }
        // a = g . fhat
        gbar += &fhat * abar;
        fbar += &g_clf * abar;
        // q = g . g
        gbar += &g_clf * (2.0 * qbar);
    }

    // Reverse through the energy gradient g = (P0 + P0') x + sum 2 s_l grad(s_l).
    if gbar.iter().any(|&v| v != 0.0) {
        grad.p0 += &gbar * x.transpose() + x * gbar.transpose();
        for (li, term) in clf.terms().iter().enumerate() {
            let s = clf.sigma(li, x);
            if s <= 0.0 {
                continue;
            }
            let gs = (&term.p + term.p.transpose()) * x - &term.p * &term.mu;
            let sbar = 2.0 * gbar.dot(&gs);
            let w = &gbar * (2.0 * s);
            // sigma = x' P (x - mu)
            grad.p[li] += x * (x - &term.mu).transpose() * sbar;
            grad.mu[li] += term.p.transpose() * x * (-sbar);
            // grad sigma = (P + P') x - P mu
            grad.p[li] += &w * x.transpose() + x * w.transpose() - &w * term.mu.transpose();
            grad.mu[li] += term.p.transpose() * &w * (-1.0);
        }
    }

    // Reverse through the mixture field.
    let mut gammabar = vec![0.0; k];
    for ki in 0..k {
        gammabar[ki] = fbar.dot(&ms[ki]);
    }
    let dot: f64 = (0..k).map(|ki| gammabar[ki] * gamma[ki]).sum();
    for ki in 0..k {
        let mbar = &fbar * gamma[ki];
        let t = gamma[ki] * (gammabar[ki] - dot);

        // ln w = ln pi + ln_norm - delta' B delta / 2
        grad.priors[ki] += t / mix.priors()[ki];
        let b = &prep.binv[ki];
        let bdelta = &bdeltas[ki];
        // d(ln n)/d(mean_x) = B delta; d(ln n)/d(cov_x) = (B dd' B - B) / 2.
        let mut mean_bar_x = bdelta * t;
        let mut cov_bar_x = (bdelta * bdelta.transpose() - b) * (0.5 * t);

        // m = mean_v + C B delta
        let cb = prep.cvp[ki].transpose() * &mbar;
        mean_bar_x -= b * &cb;
        let cvp_bar = &mbar * bdelta.transpose();
        // B = inv(cov_x): cov_bar_x -= B (C' mbar delta') B
        cov_bar_x -= b * (&cb * deltas[ki].transpose()) * b;

        for i in 0..d {
            grad.means[ki][i] += mean_bar_x[i];
            grad.means[ki][d + i] += mbar[i];
            for j in 0..d {
                grad.covs[ki][(i, j)] += cov_bar_x[(i, j)];
                grad.covs[ki][(d + i, j)] += cvp_bar[(i, j)];
            }
        }
    }
}

/// Pulls a theta-space cotangent back through the decode map onto the free
/// vector.
fn pullback_decode(free: &FreeParams, tg: &ThetaGrad) -> DVector<f64> {
    let lay = &free.layout;
    let joint = 2 * lay.d;
    let v = free.values.as_slice();
    let mut out = DVector::zeros(lay.total());

    // Softmax priors.
    let (mix, _) = free
        .decode()
        .expect("decode succeeded earlier in the same evaluation");
    let priors = mix.priors();
    let dot: f64 = priors.iter().zip(&tg.priors).map(|(p, pb)| p * pb).sum();
    for ki in 0..lay.k {
        out[lay.logits() + ki] = priors[ki] * (tg.priors[ki] - dot);
    }

    // Means pass through unchanged.
    for ki in 0..lay.k {
        for i in 0..joint {
            out[lay.means() + ki * joint + i] = tg.means[ki][i];
        }
    }

    // Sigma = L L' + eps I: Lbar = (Sbar + Sbar') L, lower triangle only,
    // diagonal scaled by L_ii for the log parameterization.
    let chol_pullback = |raw: &[f64], n: usize, sbar: &DMatrix<f64>, out: &mut [f64]| {
        let factor = unpack_chol(raw, n);
        let lbar = (sbar + sbar.transpose()) * &factor;
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                out[idx] = if i == j {
                    lbar[(i, i)] * factor[(i, i)]
                } else {
                    lbar[(i, j)]
                };
                idx += 1;
            }
        }
    };

    for ki in 0..lay.k {
        let off = lay.covs() + ki * tri_size(joint);
        let mut slot = vec![0.0; tri_size(joint)];
        chol_pullback(&v[off..off + tri_size(joint)], joint, &tg.covs[ki], &mut slot);
        for (i, g) in slot.iter().enumerate() {
            out[off + i] = *g;
        }
    }

    let off = lay.p0();
    let mut slot = vec![0.0; tri_size(lay.d)];
    chol_pullback(&v[off..off + tri_size(lay.d)], lay.d, &tg.p0, &mut slot);
    for (i, g) in slot.iter().enumerate() {
        out[off + i] = *g;
    }

    for li in 0..lay.l {
        let off = lay.p_term(li);
        let mut slot = vec![0.0; tri_size(lay.d)];
        chol_pullback(&v[off..off + tri_size(lay.d)], lay.d, &tg.p[li], &mut slot);
        for (i, g) in slot.iter().enumerate() {
            out[off + i] = *g;
        }
        let off = lay.skew_term(li);
        let mut idx = 0;
        for i in 0..lay.d {
            for j in 0..i {
                out[off + idx] = tg.p[li][(i, j)] - tg.p[li][(j, i)];
                idx += 1;
            }
        }
        for i in 0..lay.d {
            out[lay.mu_term(li) + i] = tg.mu[li][i];
        }
    }
    out
}

fn analytic_gradient(
    free: &FreeParams,
    set: &DemonstrationSet,
    cfg: Option<&ControllerConfig>,
    origin_weight: f64,
) -> Result<DVector<f64>> {
    let (mix, clf) = free.decode()?;
    let prep = MixPrep::new(&mix)?;
    let count = (set.num_demos() * set.samples_per_demo()) as f64;
    let inv_count = 1.0 / count;

    let samples: Vec<_> = set.iter_samples().collect();
    // Fixed chunking keeps the reduction order independent of scheduling.
    let chunk = 64;
    let partials: Vec<Result<ThetaGrad>> = samples
        .par_chunks(chunk)
        .map(|block| {
            let mut local = ThetaGrad::zeros(&free.layout);
            for s in block {
                let fhat = crate::gmm::gmr_velocity(&mix, &s.position)?;
                let field = match cfg {
                    Some(cfg) => {
                        &fhat + crate::control::sontag_u(&clf, cfg, &fhat, &s.position)?
                    }
                    None => fhat,
                };
                let rbar = (&field - &s.velocity) * inv_count;
                pullback_sample(&mix, &prep, &clf, cfg, &s.position, &rbar, &mut local);
            }
            Ok(local)
        })
        .collect();

    let mut total = ThetaGrad::zeros(&free.layout);
    for part in partials {
        total.add(&part?);
    }

    if origin_weight > 0.0 {
        let origin = DVector::zeros(set.dims());
        let f0 = crate::gmm::gmr_velocity(&mix, &origin)?;
        let rbar = f0 * (2.0 * origin_weight);
        // The controller vanishes at the origin, so only the field term
        // carries gradient.
        pullback_sample(&mix, &prep, &clf, None, &origin, &rbar, &mut total);
    }

    Ok(pullback_decode(free, &total))
}

fn fd_gradient(
    free: &FreeParams,
    set: &DemonstrationSet,
    cfg: Option<&ControllerConfig>,
    origin_weight: f64,
    fd_step: f64,
) -> Result<DVector<f64>> {
    let n = free.values.len();
    let entries: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = fd_step * (1.0 + free.values[i].abs());
            let mut plus = free.clone();
            plus.values[i] += h;
            let mut minus = free.clone();
            minus.values[i] -= h;
            Ok((objective_with(&plus, set, cfg, origin_weight)?
                - objective_with(&minus, set, cfg, origin_weight)?)
                / (2.0 * h))
        })
        .collect();
    let mut g = DVector::zeros(n);
    for (i, e) in entries.into_iter().enumerate() {
        g[i] = e?;
    }
    Ok(g)
}

/// Gradient of [`objective_with`] in the requested mode.
pub fn objective_gradient(
    free: &FreeParams,
    set: &DemonstrationSet,
    cfg: Option<&ControllerConfig>,
    origin_weight: f64,
    mode: GradientMode,
    fd_step: f64,
) -> Result<DVector<f64>> {
    match mode {
        GradientMode::FiniteDifference => fd_gradient(free, set, cfg, origin_weight, fd_step),
        GradientMode::Analytic => analytic_gradient(free, set, cfg, origin_weight),
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub mixture: MixtureParams,
    pub clf: ClfParams,
    pub trace: Vec<TraceRow>,
    pub initial_j: f64,
    pub final_j: f64,
    pub iterations: usize,
}

/// Raises the mixture's covariance eigenvalues onto the training feasible
/// set, whose floor is stiffer than the fitting floor.
fn project_mixture(mix: &MixtureParams, layout: &ParamLayout) -> Result<MixtureParams> {
    let covs = mix
        .covariances()
        .iter()
        .map(|c| crate::gmm::spd_floor(c, layout.eps_pd))
        .collect();
    MixtureParams::new(
        mix.dims(),
        layout.eps_pd,
        mix.priors().to_vec(),
        mix.means().to_vec(),
        covs,
    )
}

fn lbfgs_direction(
    grad: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>)>,
) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let alpha = rho * s.dot(&q);
        q -= y * alpha;
        alphas.push((alpha, rho));
    }
    if let Some((s, y)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (alpha, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&q);
        q += s * (alpha - beta);
    }
    -q
}

/// Joint training: clustering and EM initialize the mixture, the energy
/// function starts from identity matrices and zero offsets, then a
/// quasi-Newton descent with backtracking line search minimizes the
/// corrected-field error over the free vector. The descent is restarted with
/// staggered clustering seeds and the lowest-loss run wins.
///
/// Returns the best iterate seen; the final objective never exceeds the
/// initial one. A zero iteration budget returns the initialization untouched.
pub fn train(
    set: &DemonstrationSet,
    lcfg: &LearnConfig,
    ccfg: &ControllerConfig,
) -> Result<TrainResult> {
    lcfg.validate()?;
    ccfg.validate()?;
    let mut best: Option<TrainResult> = None;
    for restart in 0..lcfg.restarts {
        let result = train_once(set, lcfg, ccfg, lcfg.seed + restart as u64)?;
        if best.as_ref().is_none_or(|b| result.final_j < b.final_j) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn train_once(
    set: &DemonstrationSet,
    lcfg: &LearnConfig,
    ccfg: &ControllerConfig,
    seed: u64,
) -> Result<TrainResult> {
    let mut layout = ParamLayout::for_set(set, lcfg.k, lcfg.l);
    if let Some(floor) = lcfg.clf_floor {
        layout = layout.with_clf_floor(floor);
    }
    let init_mix = project_mixture(
        &em_fit(
            &kmeans_init(set, lcfg.k, seed)?,
            set,
            lcfg.em_max_iter,
            lcfg.em_tol,
        )?,
        &layout,
    )?;
    let init_clf = ClfParams::identity(set.dims(), lcfg.l);

    let loss_fn = |free: &FreeParams| -> Result<f64> {
        let j = objective(free, set, ccfg, lcfg.origin_weight)?;
        let (_, clf) = free.decode()?;
        Ok(j + ridge_value(&clf, lcfg.term_ridge, lcfg.coupling_ridge))
    };
    let grad_fn = |free: &FreeParams| -> Result<DVector<f64>> {
        let mut g = objective_gradient(
            free,
            set,
            Some(ccfg),
            lcfg.origin_weight,
            lcfg.gradient_mode,
            lcfg.fd_step,
        )?;
        if lcfg.term_ridge > 0.0 || lcfg.coupling_ridge > 0.0 {
            let (_, clf) = free.decode()?;
            let mut tg = ThetaGrad::zeros(&free.layout);
            for (li, term) in clf.terms().iter().enumerate() {
                let pmu = &term.p * &term.mu;
                tg.p[li] = &term.p * (2.0 * lcfg.term_ridge)
                    + &pmu * term.mu.transpose() * (2.0 * lcfg.coupling_ridge);
                tg.mu[li] = &term.mu * (2.0 * lcfg.term_ridge)
                    + term.p.transpose() * &pmu * (2.0 * lcfg.coupling_ridge);
            }
            g += pullback_decode(free, &tg);
        }
        Ok(g)
    };

    let mut free = FreeParams::encode(&init_mix, &init_clf, layout)?;
    let mut j = loss_fn(&free)?;
    let initial_j = j;
    let mut best_j = j;
    let mut best_free: Option<FreeParams> = None;

    let mut trace = Vec::new();
    let mut history: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut iterations = 0;

    if lcfg.max_outer_iter > 0 && j >= lcfg.j_threshold {
        let mut grad = grad_fn(&free)?;
        trace.push(TraceRow {
            iter: 0,
            j,
            grad_norm: grad.norm(),
        });

        'outer: for iter in 1..=lcfg.max_outer_iter {
            if j < lcfg.j_threshold || grad.norm() < 1e-12 {
                break;
            }
            let mut dir = lbfgs_direction(&grad, &history);
            let mut dd = grad.dot(&dir);
            if !(dd < 0.0) {
                history.clear();
                dir = -&grad;
                dd = grad.dot(&dir);
                if !(dd < 0.0) {
                    break;
                }
            }

            // Backtracking with a sufficient-decrease guard; the objective is
            // only piecewise smooth, so failed probes simply shrink the step.
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..lcfg.max_line_search {
                let mut cand = free.clone();
                cand.values += &dir * step;
                match loss_fn(&cand) {
                    Ok(jc) if jc <= j + 1e-4 * step * dd => {
                        accepted = Some((cand, jc));
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            let Some((next, j_next)) = accepted else {
                if history.is_empty() {
                    break 'outer;
                }
                // Retry from a plain gradient direction before giving up.
                history.clear();
                continue;
            };

            let grad_next = grad_fn(&next)?;
            let s = &next.values - &free.values;
            let y = &grad_next - &grad;
            let sy = s.dot(&y);
            if sy > 1e-10 * s.norm() * y.norm() {
                history.push_back((s, y));
                if history.len() > lcfg.lbfgs_memory {
                    history.pop_front();
                }
            }

            free = next;
            j = j_next;
            grad = grad_next;
            iterations = iter;
            trace.push(TraceRow {
                iter,
                j,
                grad_norm: grad.norm(),
            });
            if j < best_j {
                best_j = j;
                best_free = Some(free.clone());
            }
            if j > 10.0 * initial_j {
                return Err(Error::Numerical(format!(
                    "optimizer diverged at iteration {iter}: J = {j:e} from {initial_j:e}"
                )));
            }
        }
    }

    let (mixture, clf) = match &best_free {
        Some(best) => best.decode()?,
        None => (init_mix, init_clf),
    };
    mixture.validate()?;
    clf.validate(layout.eps_pd)?;
    debug_assert!(layout.clf_floor >= layout.eps_pd);
    Ok(TrainResult {
        mixture,
        clf,
        trace,
        initial_j,
        final_j: best_j,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_shape, Demonstration, DemonstrationSet, Sample, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_set() -> DemonstrationSet {
        synth_shape(Shape::Sine, 2, 40, 0.03, 5).unwrap()
    }

    fn random_free(lay: ParamLayout, seed: u64) -> FreeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DVector::from_fn(lay.total(), |_, _| rng.gen_range(-0.8..0.8));
        FreeParams {
            layout: lay,
            values,
        }
    }

    #[test]
    fn layout_length_matches_block_sum() {
        let lay = ParamLayout {
            d: 2,
            k: 5,
            l: 3,
            eps_pd: 1e-6,
            clf_floor: 1e-6,
        };
        // 5 logits + 20 means + 50 covariance factors + 3 + 9 shape factors
        // + 3 skew + 6 offsets.
        assert_eq!(lay.total(), 96);
    }

    #[test]
    fn encode_decode_round_trip() {
        let set = small_set();
        let init = kmeans_init(&set, 3, 1).unwrap();
        let mix = em_fit(&init, &set, 20, 1e-8).unwrap();
        let mut clf = ClfParams::identity(2, 2);
        // Perturb the energy function away from the identity, with skew.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5));
        let p = &a * a.transpose() + DMatrix::identity(2, 2);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, -0.4, 0.0]);
        clf = ClfParams::new(
            p.clone(),
            vec![AsymmetricTerm {
                p: &p + w,
                mu: DVector::from_row_slice(&[0.3, -0.9]),
            }],
        )
        .unwrap();

        let lay = ParamLayout::for_set(&set, 3, 1);
        // Round-tripping is exact on the layout's feasible set.
        let mix = project_mixture(&mix, &lay).unwrap();
        let free = FreeParams::encode(&mix, &clf, lay).unwrap();
        let (mix2, clf2) = free.decode().unwrap();

        for (c1, c2) in mix.covariances().iter().zip(mix2.covariances()) {
            assert!((c1 - c2).norm() < 1e-10, "{}", (c1 - c2).norm());
        }
        for (m1, m2) in mix.means().iter().zip(mix2.means()) {
            assert!((m1 - m2).norm() < 1e-12);
        }
        for (p1, p2) in mix.priors().iter().zip(mix2.priors()) {
            assert!((p1 - p2).abs() < 1e-12);
        }
        assert!((clf.p0() - clf2.p0()).norm() < 1e-10);
        assert!((&clf.terms()[0].p - &clf2.terms()[0].p).norm() < 1e-10);
        assert!((&clf.terms()[0].mu - &clf2.terms()[0].mu).norm() < 1e-12);
    }

    #[test]
    fn decode_is_feasible_for_arbitrary_vectors() {
        let set = small_set();
        let lay = ParamLayout::for_set(&set, 3, 2);
        for seed in 0..20 {
            let free = random_free(lay, seed);
            let (mix, clf) = free.decode().unwrap();
            assert!(mix.validate().is_ok());
            assert!(clf.validate(lay.eps_pd).is_ok());
            let sum: f64 = mix.priors().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(mix.priors().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    /// Set whose velocities are exactly the corrected field of known
    /// parameters, ending at the origin so ingestion leaves it alone.
    fn self_consistent_set(
        mix: &MixtureParams,
        clf: &ClfParams,
        cfg: &ControllerConfig,
    ) -> DemonstrationSet {
        let xs = [-2.0, -1.5, -1.0, -0.5, -0.25, 0.0];
        let samples: Vec<Sample> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let pos = DVector::from_element(1, x);
                let fhat = crate::gmm::gmr_velocity(mix, &pos).unwrap();
                let u = crate::control::sontag_u(clf, cfg, &fhat, &pos).unwrap();
                Sample {
                    position: pos,
                    velocity: fhat + u,
                    time: i as f64,
                }
            })
            .collect();
        DemonstrationSet::new(vec![Demonstration { samples }], 1e-9).unwrap()
    }

    fn scalar_truth() -> (MixtureParams, ClfParams) {
        let mix = MixtureParams::new(
            1,
            1e-9,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0])],
        )
        .unwrap();
        let clf = ClfParams::new(DMatrix::from_element(1, 1, 1.0), vec![]).unwrap();
        (mix, clf)
    }

    #[test]
    fn objective_vanishes_at_the_generating_parameters() {
        let (mix, clf) = scalar_truth();
        let cfg = ControllerConfig::default();
        let set = self_consistent_set(&mix, &clf, &cfg);
        let lay = ParamLayout {
            d: 1,
            k: 1,
            l: 0,
            eps_pd: 1e-9,
            clf_floor: 1e-9,
        };
        let free = FreeParams::encode(&mix, &clf, lay).unwrap();
        let j = objective(&free, &set, &cfg, 0.0).unwrap();
        assert!(j < 1e-12, "J = {j:e}");
    }

    #[test]
    fn objective_zero_for_zero_velocity_zero_field() {
        // Constant-zero velocities with a zero-mean, zero-cross-covariance
        // mixture: field and data both vanish.
        let mix = MixtureParams::new(
            1,
            1e-9,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])],
        )
        .unwrap();
        let clf = ClfParams::identity(1, 0);
        let cfg = ControllerConfig::default();
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                position: DVector::zeros(1),
                velocity: DVector::zeros(1),
                time: i as f64,
            })
            .collect();
        let set = DemonstrationSet::new(vec![Demonstration { samples }], 1e-9).unwrap();
        let lay = ParamLayout {
            d: 1,
            k: 1,
            l: 0,
            eps_pd: 1e-9,
            clf_floor: 1e-9,
        };
        let free = FreeParams::encode(&mix, &clf, lay).unwrap();
        assert_eq!(objective(&free, &set, &cfg, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn objective_quadratic_sensitivity_to_one_sample() {
        let (mix, clf) = scalar_truth();
        let cfg = ControllerConfig::default();
        let set = self_consistent_set(&mix, &clf, &cfg);
        let lay = ParamLayout {
            d: 1,
            k: 1,
            l: 0,
            eps_pd: 1e-9,
            clf_floor: 1e-9,
        };
        let free = FreeParams::encode(&mix, &clf, lay).unwrap();

        let delta = 0.01;
        let mut demos: Vec<Demonstration> = set.demos().to_vec();
        demos[0].samples[2].velocity[0] += delta;
        let perturbed = DemonstrationSet::new(demos, 1e-9).unwrap();
        let j = objective(&free, &perturbed, &cfg, 0.0).unwrap();
        let m = set.num_demos() as f64;
        let n = set.samples_per_demo() as f64;
        let expected = delta * delta / (2.0 * m * n);
        assert!((j - expected).abs() < 1e-9 * expected.max(1e-12), "J = {j:e}");
    }

    #[test]
    fn ablation_objective_is_plain_regression_error() {
        let set = small_set();
        let init = kmeans_init(&set, 3, 1).unwrap();
        let mix = em_fit(&init, &set, 20, 1e-8).unwrap();
        let clf = ClfParams::identity(2, 2);
        let lay = ParamLayout::for_set(&set, 3, 2);
        let free = FreeParams::encode(&mix, &clf, lay).unwrap();
        let j = objective_with(&free, &set, None, 0.0).unwrap();
        let (mix2, clf2) = free.decode().unwrap();
        let mse = crate::metrics::velocity_mse(&mix2, &clf2, None, &set).unwrap();
        assert!((j - 0.5 * mse).abs() < 1e-12 * mse.max(1.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let set = small_set();
        let lay = ParamLayout::for_set(&set, 2, 1);
        let cfg = ControllerConfig::default();
        for seed in 0..5 {
            let free = random_free(lay, seed);
            let ga = objective_gradient(
                &free,
                &set,
                Some(&cfg),
                1.0,
                GradientMode::Analytic,
                1e-6,
            )
            .unwrap();
            let gf = objective_gradient(
                &free,
                &set,
                Some(&cfg),
                1.0,
                GradientMode::FiniteDifference,
                1e-6,
            )
            .unwrap();
            let rel = (&ga - &gf).norm() / gf.norm().max(1e-12);
            assert!(rel < 1e-6, "seed {seed}: relative mismatch {rel:e}");
        }
    }

    #[test]
    fn analytic_gradient_matches_fd_for_classk_and_ablation() {
        let set = small_set();
        let lay = ParamLayout::for_set(&set, 2, 1);
        let classk = ControllerConfig {
            variant: RhoVariant::ClassK,
            ..Default::default()
        };
        for (cfg, seed) in [(Some(&classk), 11u64), (None, 12u64)] {
            let free = random_free(lay, seed);
            let ga =
                objective_gradient(&free, &set, cfg, 0.5, GradientMode::Analytic, 1e-6).unwrap();
            let gf = objective_gradient(
                &free,
                &set,
                cfg,
                0.5,
                GradientMode::FiniteDifference,
                1e-6,
            )
            .unwrap();
            let rel = (&ga - &gf).norm() / gf.norm().max(1e-12);
            assert!(rel < 1e-6, "mismatch {rel:e}");
        }
    }

    #[test]
    fn training_reduces_the_objective() {
        let set = synth_shape(Shape::Sine, 2, 60, 0.02, 3).unwrap();
        let lcfg = LearnConfig {
            k: 3,
            l: 2,
            max_outer_iter: 40,
            gradient_mode: GradientMode::Analytic,
            ..Default::default()
        };
        let ccfg = ControllerConfig::default();
        let result = train(&set, &lcfg, &ccfg).unwrap();
        assert!(result.final_j <= result.initial_j);
        assert!(
            result.final_j < 0.5 * result.initial_j,
            "J {} -> {}",
            result.initial_j,
            result.final_j
        );
        // Monotone best-iterate across the trace.
        let mut best = f64::INFINITY;
        for row in &result.trace {
            best = best.min(row.j);
            assert!(row.j >= result.final_j - 1e-15);
        }
        assert_eq!(best, result.final_j);
        // Feasibility on output.
        assert!(result.mixture.validate().is_ok());
        let lay = ParamLayout::for_set(&set, 3, 2);
        assert!(result.clf.validate(lay.eps_pd).is_ok());
    }

    #[test]
    fn zero_iteration_budget_returns_initialization() {
        let set = small_set();
        let lcfg = LearnConfig {
            k: 2,
            l: 1,
            max_outer_iter: 0,
            restarts: 1,
            ..Default::default()
        };
        let ccfg = ControllerConfig::default();
        let result = train(&set, &lcfg, &ccfg).unwrap();
        let layout = ParamLayout::for_set(&set, 2, 1);
        let init = project_mixture(
            &em_fit(
                &kmeans_init(&set, 2, lcfg.seed).unwrap(),
                &set,
                lcfg.em_max_iter,
                lcfg.em_tol,
            )
            .unwrap(),
            &layout,
        )
        .unwrap();
        assert_eq!(result.mixture, init);
        assert_eq!(result.clf, ClfParams::identity(2, 1));
        assert_eq!(result.final_j, result.initial_j);
        assert!(result.trace.is_empty());
    }

    #[test]
    fn fd_mode_training_also_descends() {
        let set = synth_shape(Shape::C, 2, 40, 0.02, 9).unwrap();
        let lcfg = LearnConfig {
            k: 2,
            l: 1,
            max_outer_iter: 10,
            gradient_mode: GradientMode::FiniteDifference,
            ..Default::default()
        };
        let result = train(&set, &lcfg, &ControllerConfig::default()).unwrap();
        assert!(result.final_j < result.initial_j);
    }
}
