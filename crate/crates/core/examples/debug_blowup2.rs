//! Manual RK4 stepping around the failure point.

use nalgebra::DVector;
use stableds::control::{sontag_u, ControllerConfig};
use stableds::dataset::{synth_shape, Shape};
use stableds::gmm::gmr_velocity;
use stableds::learn::{train, GradientMode, LearnConfig};
use stableds::sim::{rollout, RolloutOptions};

fn field(
    mix: &stableds::gmm::MixtureParams,
    clf: &stableds::clf::ClfParams,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
) -> DVector<f64> {
    let fhat = gmr_velocity(mix, x).unwrap();
    let u = sontag_u(clf, cfg, &fhat, x).unwrap();
    fhat + u
}

fn main() {
    let set = synth_shape(Shape::C, 3, 200, 0.02, 7).unwrap();
    let lcfg = LearnConfig {
        k: 5,
        l: 3,
        max_outer_iter: 300,
        gradient_mode: GradientMode::Analytic,
        ..Default::default()
    };
    let ccfg = ControllerConfig::default();
    let result = train(&set, &lcfg, &ccfg).unwrap();

    let dt = 5e-4;
    let x0 = set.demos()[0].start().clone();
    let opts = RolloutOptions::new(dt, 2000);
    let res = rollout(&result.mixture, &result.clf, &ccfg, &x0, &opts).unwrap();

    let mut x = res.states[2000].clone();
    for step in 2000..2010 {
        let k1 = field(&result.mixture, &result.clf, &ccfg, &x);
        let k2 = field(&result.mixture, &result.clf, &ccfg, &(&x + &k1 * (0.5 * dt)));
        let k3 = field(&result.mixture, &result.clf, &ccfg, &(&x + &k2 * (0.5 * dt)));
        let k4 = field(&result.mixture, &result.clf, &ccfg, &(&x + &k3 * dt));
        println!(
            "step {step}: x=({:+.6},{:+.6}) |k1| {:.3e} |k2| {:.3e} |k3| {:.3e} |k4| {:.3e}",
            x[0],
            x[1],
            k1.norm(),
            k2.norm(),
            k3.norm(),
            k4.norm()
        );
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            println!("  -> non-finite after update");
            break;
        }
    }
}
