//! Closed-loop reproductions: fixed-step integration, bounded disturbances,
//! and empirical checks of the decrease and residual-set behavior.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clf::ClfParams;
use crate::control::{ab_terms, rho, sontag_u, ControllerConfig};
use crate::error::{Error, Result};
use crate::gmm::{gmr_velocity, MixtureParams};

/// Bounded additive disturbance injected into the integrated field.
///
/// `amplitude` bounds the euclidean norm of the disturbance vector at every
/// time. Uniform disturbances are a zero-order-hold random signal with one
/// value per integrator step; sinusoids get a seeded random phase per
/// dimension. Both are deterministic per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Disturbance {
    None,
    Uniform { amplitude: f64, seed: u64 },
    Sinusoid { amplitude: f64, frequency: f64, seed: u64 },
}

impl Disturbance {
    pub fn amplitude(&self) -> f64 {
        match self {
            Disturbance::None => 0.0,
            Disturbance::Uniform { amplitude, .. } => *amplitude,
            Disturbance::Sinusoid { amplitude, .. } => *amplitude,
        }
    }
}

enum Signal {
    Zero,
    Hold { values: Vec<DVector<f64>>, dt: f64 },
    Sinusoid { amps: DVector<f64>, omega: f64, phases: DVector<f64> },
}

impl Signal {
    fn new(spec: &Disturbance, d: usize, dt: f64, max_steps: usize) -> Self {
        match *spec {
            Disturbance::None => Signal::Zero,
            Disturbance::Uniform { amplitude, seed } => {
                let per_coord = amplitude / (d as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..max_steps + 2)
                    .map(|_| {
                        DVector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0) * per_coord)
                    })
                    .collect();
                Signal::Hold { values, dt }
            }
            Disturbance::Sinusoid {
                amplitude,
                frequency,
                seed,
            } => {
                let per_coord = amplitude / (d as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phases =
                    DVector::from_fn(d, |_, _| rng.gen_range(0.0..std::f64::consts::TAU));
                Signal::Sinusoid {
                    amps: DVector::from_element(d, per_coord),
                    omega: std::f64::consts::TAU * frequency,
                    phases,
                }
            }
        }
    }

    fn at(&self, t: f64, d: usize) -> DVector<f64> {
        match self {
            Signal::Zero => DVector::zeros(d),
            Signal::Hold { values, dt } => {
                let idx = ((t / dt) as usize).min(values.len() - 1);
                values[idx].clone()
            }
            Signal::Sinusoid { amps, omega, phases } => {
                DVector::from_fn(d, |i, _| amps[i] * (omega * t + phases[i]).sin())
            }
        }
    }
}

/// Integration settings for one reproduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub dt: f64,
    pub max_steps: usize,
    /// Convergence radius; `None` uses 1e-3 times the initial norm.
    pub conv_tol: Option<f64>,
    pub disturbance: Disturbance,
}

impl RolloutOptions {
    pub fn new(dt: f64, max_steps: usize) -> Self {
        Self {
            dt,
            max_steps,
            conv_tol: None,
            disturbance: Disturbance::None,
        }
    }

    pub fn with_disturbance(mut self, disturbance: Disturbance) -> Self {
        self.disturbance = disturbance;
        self
    }

    pub fn with_conv_tol(mut self, tol: f64) -> Self {
        self.conv_tol = Some(tol);
        self
    }
}

/// Time-stamped traces of one closed-loop reproduction.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
    pub converged: bool,
    pub final_norm: f64,
    /// Trapezoidal quadrature of |u(t)| over the rollout.
    pub control_effort: f64,
}

fn validate_options(cfg: &ControllerConfig, opts: &RolloutOptions) -> Result<()> {
    cfg.validate()?;
    if !(opts.dt > 0.0) {
        return Err(Error::Argument(format!("dt must be positive, got {}", opts.dt)));
    }
    if opts.max_steps == 0 {
        return Err(Error::Argument("max_steps must be at least 1".into()));
    }
    let amp = opts.disturbance.amplitude();
    if amp > 0.0 && !(amp * amp < cfg.kappa) {
        return Err(Error::Argument(format!(
            "disturbance amplitude^2 = {:e} must stay below kappa = {:e}",
            amp * amp,
            cfg.kappa
        )));
    }
    Ok(())
}

/// Integrates the corrected field fhat + u + eta with classical fixed-step
/// RK4, stopping at the convergence radius or after `max_steps`.
///
/// The disturbance is evaluated at the stage times inside every step. States
/// leaving a 1e6 guard ball or turning non-finite abort with an error naming
/// the step.
pub fn rollout(
    mix: &MixtureParams,
    clf: &ClfParams,
    cfg: &ControllerConfig,
    x0: &DVector<f64>,
    opts: &RolloutOptions,
) -> Result<RolloutResult> {
    validate_options(cfg, opts)?;
    let signal = Signal::new(&opts.disturbance, x0.len(), opts.dt, opts.max_steps);
    let derivative = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let fhat = gmr_velocity(mix, x)?;
        let u = sontag_u(clf, cfg, &fhat, x)?;
        Ok(fhat + u + signal.at(t, x.len()))
    };
    let control_at = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let fhat = gmr_velocity(mix, x)?;
        sontag_u(clf, cfg, &fhat, x)
    };
    integrate(derivative, control_at, clf, x0, opts)
}

/// Reproduction of the raw regressed field with the controller disabled.
///
/// The energy trace is still recorded so ablation runs can be compared on
/// the same axes.
pub fn rollout_open_loop(
    mix: &MixtureParams,
    clf: &ClfParams,
    x0: &DVector<f64>,
    opts: &RolloutOptions,
) -> Result<RolloutResult> {
    if !(opts.dt > 0.0) {
        return Err(Error::Argument(format!("dt must be positive, got {}", opts.dt)));
    }
    let signal = Signal::new(&opts.disturbance, x0.len(), opts.dt, opts.max_steps);
    let derivative = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(gmr_velocity(mix, x)? + signal.at(t, x.len()))
    };
    let control_at = |x: &DVector<f64>| -> Result<DVector<f64>> { Ok(DVector::zeros(x.len())) };
    integrate(derivative, control_at, clf, x0, opts)
}

fn integrate<D, C>(
    derivative: D,
    control_at: C,
    clf: &ClfParams,
    x0: &DVector<f64>,
    opts: &RolloutOptions,
) -> Result<RolloutResult>
where
    D: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    C: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let conv_tol = opts.conv_tol.unwrap_or(1e-3 * x0.norm());
    let guard = 1e6 * x0.norm().max(1.0);
    let h = opts.dt;

    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut controls = vec![control_at(x0)?];
    let mut lyapunov = vec![clf.lyapunov(x0)];
    let mut converged = x0.norm() < conv_tol;

    let mut x = x0.clone();
    let mut t = 0.0;
    for step in 0..opts.max_steps {
        if converged {
            break;
        }
        let k1 = derivative(t, &x)?;
        let k2 = derivative(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
        let k3 = derivative(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
        let k4 = derivative(t + h, &(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = (step + 1) as f64 * h;

        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "state became non-finite at step {}",
                step + 1
            )));
        }
        if x.norm() > guard {
            return Err(Error::Numerical(format!(
                "state norm {:e} exceeded the blow-up guard at step {}",
                x.norm(),
                step + 1
            )));
        }

        times.push(t);
        states.push(x.clone());
        controls.push(control_at(&x)?);
        lyapunov.push(clf.lyapunov(&x));
        if x.norm() < conv_tol {
            converged = true;
        }
    }

    let mut effort = 0.0;
    for i in 1..controls.len() {
        effort += 0.5 * (controls[i - 1].norm() + controls[i].norm()) * (times[i] - times[i - 1]);
    }

    Ok(RolloutResult {
        final_norm: states[states.len() - 1].norm(),
        converged,
        control_effort: effort,
        times,
        states,
        controls,
        lyapunov,
    })
}

/// Residual-set membership report for one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Margin threshold 2 kappa / rho0 defining the residual set.
    pub threshold: f64,
    /// Inflation factor applied to the threshold for the tail check.
    pub margin: f64,
    pub first_entry_step: Option<usize>,
    pub first_entry_time: Option<f64>,
    /// Whether the last 20% of steps stayed inside the inflated set.
    pub tail_inside: bool,
    pub tail_max_rho: f64,
}

/// Fraction of the trajectory treated as the settled tail.
pub const TAIL_FRACTION: f64 = 0.2;
/// Numerical inflation applied to the residual threshold.
pub const TAIL_MARGIN: f64 = 1.5;

/// Evaluates the margin function along the trajectory and reports when it
/// first drops under 2 kappa / rho0 and whether the tail stays inside the
/// inflated set.
pub fn residual_check(
    result: &RolloutResult,
    clf: &ClfParams,
    mix: &MixtureParams,
    cfg: &ControllerConfig,
) -> Result<ResidualReport> {
    let threshold = 2.0 * cfg.kappa / cfg.rho0;
    let mut rhos = Vec::with_capacity(result.states.len());
    for x in &result.states {
        let fhat = gmr_velocity(mix, x)?;
        let (a, b) = ab_terms(clf, &fhat, x);
        rhos.push(rho(cfg, a, &b, x));
    }
    let first_entry_step = rhos.iter().position(|&r| r <= threshold);
    let tail_len = ((rhos.len() as f64 * TAIL_FRACTION).ceil() as usize).max(1);
    let tail = &rhos[rhos.len() - tail_len..];
    let tail_max_rho = tail.iter().cloned().fold(0.0_f64, f64::max);
    Ok(ResidualReport {
        threshold,
        margin: TAIL_MARGIN,
        first_entry_step,
        first_entry_time: first_entry_step.map(|i| result.times[i]),
        tail_inside: tail_max_rho <= TAIL_MARGIN * threshold,
        tail_max_rho,
    })
}

/// Least-squares slope of log V over the pre-convergence window.
///
/// Requires at least ten strictly positive energy samples; when V hits
/// numerical zero early the fit runs on the valid prefix.
pub fn decay_rate(result: &RolloutResult) -> Result<f64> {
    let mut pts = Vec::new();
    for (t, v) in result.times.iter().zip(&result.lyapunov) {
        if *v > 0.0 {
            pts.push((*t, v.ln()));
        } else {
            break;
        }
    }
    if pts.len() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 positive-energy samples for a decay fit, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in &pts {
        num += (t - t_mean) * (y - y_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    if den == 0.0 {
        return Err(Error::Data("degenerate time axis in decay fit".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// K = 1 mixture with conditional mean fhat(x) = x in d = 1; open-loop
    /// unstable.
    fn identity_field_mixture() -> MixtureParams {
        MixtureParams::new(
            1,
            1e-9,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0])],
        )
        .unwrap()
    }

    fn quadratic_clf_1d() -> ClfParams {
        ClfParams::new(DMatrix::from_element(1, 1, 1.0), vec![]).unwrap()
    }

    #[test]
    fn stabilizes_open_loop_unstable_scalar_plant() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        for x0 in [1.0, -1.0, 10.0, -10.0] {
            let opts = RolloutOptions::new(1e-3, 10_000).with_conv_tol(1e-3);
            let res = rollout(&mix, &clf, &cfg, &DVector::from_element(1, x0), &opts).unwrap();
            assert!(res.converged, "x0 = {x0} did not converge");
            assert!(res.final_norm < 1e-3);
        }
        // Initial closed-loop slope at x0 = 1: fhat + u = 1 - (1 + sqrt 5).
        let x0 = DVector::from_element(1, 1.0);
        let opts = RolloutOptions::new(1e-3, 10);
        let res = rollout(&mix, &clf, &cfg, &x0, &opts).unwrap();
        let slope = 1.0 + res.controls[0][0];
        assert!((slope + 5.0_f64.sqrt()).abs() < 1e-6, "slope {slope}");
    }

    #[test]
    fn equilibrium_stays_put() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        let opts = RolloutOptions::new(1e-2, 50);
        let res = rollout(&mix, &clf, &cfg, &DVector::zeros(1), &opts).unwrap();
        assert_eq!(res.states.len(), 51);
        for x in &res.states {
            assert_eq!(x[0], 0.0);
        }
        assert_eq!(res.control_effort, 0.0);
    }

    #[test]
    fn energy_never_increases_without_disturbance() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        let opts = RolloutOptions::new(1e-3, 5_000);
        let res = rollout(&mix, &clf, &cfg, &DVector::from_element(1, 3.0), &opts).unwrap();
        for w in res.lyapunov.windows(2) {
            assert!(w[1] <= w[0] + 1e-8 * w[0].max(1e-300));
        }
    }

    #[test]
    fn rk4_observed_order_is_at_least_3_5() {
        // Closed loop xdot = -sqrt(5) x is linear and smooth; compare the
        // integrator against the exact exponential at T = 0.5.
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        let t_end = 0.5;
        let exact = (-5.0_f64.sqrt() * t_end).exp();
        let err_at = |dt: f64| {
            let steps = (t_end / dt).round() as usize;
            let opts = RolloutOptions {
                dt,
                max_steps: steps,
                conv_tol: Some(0.0),
                disturbance: Disturbance::None,
            };
            let res =
                rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.0), &opts).unwrap();
            (res.states[res.states.len() - 1][0] - exact).abs()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order} (errors {e1:e}, {e2:e})");
    }

    #[test]
    fn rollouts_are_deterministic_per_seed() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig {
            kappa: 0.02,
            ..Default::default()
        };
        let disturbance = Disturbance::Uniform {
            amplitude: 0.1,
            seed: 42,
        };
        let opts = RolloutOptions::new(1e-2, 2_000).with_disturbance(disturbance);
        let x0 = DVector::from_element(1, 2.0);
        let a = rollout(&mix, &clf, &cfg, &x0, &opts).unwrap();
        let b = rollout(&mix, &clf, &cfg, &x0, &opts).unwrap();
        assert_eq!(a, b);
        let other = RolloutOptions::new(1e-2, 2_000).with_disturbance(Disturbance::Uniform {
            amplitude: 0.1,
            seed: 43,
        });
        let c = rollout(&mix, &clf, &cfg, &x0, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn disturbance_amplitude_must_stay_below_kappa() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default(); // kappa = 0
        let opts = RolloutOptions::new(1e-2, 10).with_disturbance(Disturbance::Uniform {
            amplitude: 0.1,
            seed: 0,
        });
        assert!(matches!(
            rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.0), &opts).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn open_loop_unstable_field_trips_the_guard() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let opts = RolloutOptions::new(0.1, 100_000);
        let err = rollout_open_loop(&mix, &clf, &DVector::from_element(1, 1.0), &opts)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err:?}");
    }

    #[test]
    fn residual_check_disturbance_free_tail_is_trivial() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig {
            kappa: 0.05,
            ..Default::default()
        };
        let opts = RolloutOptions::new(1e-3, 10_000);
        let res = rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.0), &opts).unwrap();
        assert!(res.converged);
        let report = residual_check(&res, &clf, &mix, &cfg).unwrap();
        assert!(report.tail_inside);
        assert!(report.tail_max_rho < report.threshold);
        assert!(report.first_entry_step.is_some());
        assert!(report.tail_max_rho < 1e-4);
    }

    #[test]
    fn residual_tail_stays_inside_inflated_set_under_disturbance() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let amplitude = 0.2;
        let cfg = ControllerConfig {
            kappa: 2.0 * amplitude * amplitude,
            ..Default::default()
        };
        for seed in 0..20 {
            let opts = RolloutOptions::new(1e-3, 8_000)
                .with_disturbance(Disturbance::Uniform { amplitude, seed })
                .with_conv_tol(0.0);
            let res = rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.5), &opts).unwrap();
            let report = residual_check(&res, &clf, &mix, &cfg).unwrap();
            assert!(
                report.tail_inside,
                "seed {seed}: tail rho {:e} vs inflated threshold {:e}",
                report.tail_max_rho,
                report.margin * report.threshold
            );
            assert!(report.first_entry_step.is_some());
        }
    }

    #[test]
    fn doubling_gain_does_not_grow_normalized_residual() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let amplitude = 0.2;
        let tail_stat = |rho0: f64| -> f64 {
            let cfg = ControllerConfig {
                rho0,
                kappa: 2.0 * amplitude * amplitude,
                ..Default::default()
            };
            let mut stats: Vec<f64> = (0..11)
                .map(|seed| {
                    let opts = RolloutOptions::new(1e-3, 8_000)
                        .with_disturbance(Disturbance::Uniform { amplitude, seed })
                        .with_conv_tol(0.0);
                    let res =
                        rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.5), &opts).unwrap();
                    let report = residual_check(&res, &clf, &mix, &cfg).unwrap();
                    report.tail_max_rho / rho0
                })
                .collect();
            stats.sort_by(f64::total_cmp);
            stats[stats.len() / 2]
        };
        let base = tail_stat(1.0);
        let doubled = tail_stat(2.0);
        assert!(
            doubled <= base * 1.05,
            "normalized residual grew: {base:e} -> {doubled:e}"
        );
    }

    #[test]
    fn decay_rate_is_steeply_negative_for_the_scalar_plant() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        let opts = RolloutOptions::new(1e-3, 10_000);
        let res = rollout(&mix, &clf, &cfg, &DVector::from_element(1, 1.0), &opts).unwrap();
        let slope = decay_rate(&res).unwrap();
        assert!(slope <= -1.0, "slope {slope}");
    }

    #[test]
    fn decay_rate_rejects_degenerate_runs() {
        let mix = identity_field_mixture();
        let clf = quadratic_clf_1d();
        let cfg = ControllerConfig::default();
        let opts = RolloutOptions::new(1e-2, 50);
        let res = rollout(&mix, &clf, &cfg, &DVector::zeros(1), &opts).unwrap();
        assert!(matches!(decay_rate(&res).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn sinusoid_disturbance_is_bounded_and_deterministic() {
        let sig = Signal::new(
            &Disturbance::Sinusoid {
                amplitude: 0.3,
                frequency: 2.0,
                seed: 5,
            },
            2,
            1e-2,
            100,
        );
        for i in 0..200 {
            let t = i as f64 * 7e-3;
            assert!(sig.at(t, 2).norm() <= 0.3 + 1e-12);
        }
        let a = sig.at(0.123, 2);
        let sig2 = Signal::new(
            &Disturbance::Sinusoid {
                amplitude: 0.3,
                frequency: 2.0,
                seed: 5,
            },
            2,
            1e-2,
            100,
        );
        assert_eq!(a, sig2.at(0.123, 2));
    }
}
