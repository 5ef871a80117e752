//! Reproduce and inspect the diverging reproduction.

use nalgebra::DVector;
use stableds::control::{ab_terms, rho, ControllerConfig};
use stableds::dataset::{synth_shape, Shape};
use stableds::gmm::gmr_velocity;
use stableds::learn::{train, GradientMode, LearnConfig};
use stableds::sim::{rollout, RolloutOptions};

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
    println!("still alive at step 2000, |x| = {:.6}", res.final_norm);
    for i in (1980..=2000).step_by(2) {
        let x = &res.states[i];
        let fhat = gmr_velocity(&result.mixture, x).unwrap();
        let (a, b) = ab_terms(&result.clf, &fhat, x);
        let r = rho(&ccfg, a, &b, x);
        let u = &res.controls[i];
        println!(
            "step {i}: x = ({:+.5}, {:+.5}) |x| {:.5} V {:.3e} |fhat| {:.3} |b| {:.3e} a {:+.3e} rho {:.3e} |u| {:.3e}",
            x[0],
            x[1],
            x.norm(),
            res.lyapunov[i],
            fhat.norm(),
            b.norm(),
            a,
            r,
            u.norm()
        );
    }
    // Try stepping further manually.
    let opts = RolloutOptions::new(dt, 2010);
    match rollout(&result.mixture, &result.clf, &ccfg, &x0, &opts) {
        Ok(r) => println!("2010 ok |x| {:.6}", r.final_norm),
        Err(e) => println!("2010 err: {e}"),
    }
    // Check field magnitudes along the segment between the last states.
    let a = res.states[1999].clone();
    let b = res.states[2000].clone();
    for t in 0..=10 {
        let x = &a + (&b - &a) * (t as f64 / 10.0);
        let fhat = gmr_velocity(&result.mixture, &x).unwrap();
        let u = stableds::control::sontag_u(&result.clf, &ccfg, &fhat, &x).unwrap();
        println!(
            "  seg {t}: |x| {:.5} |fhat| {:.3e} |u| {:.3e}",
            x.norm(),
            fhat.norm(),
            u.norm()
        );
    }
    let _ = DVector::<f64>::zeros(2);
}
