//! Dissect the field at the exploding stage point.

use nalgebra::DVector;
use stableds::control::{ab_terms, rho, sontag_u, ControllerConfig};
use stableds::dataset::{synth_shape, Shape};
use stableds::gmm::{gmr_velocity, weights};
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
    let opts = RolloutOptions::new(dt, 2002);
    let res = rollout(&result.mixture, &result.clf, &ccfg, &x0, &opts).unwrap();
    let x = res.states[2002].clone();

    // Recompute stages for step 2002.
    let f = |x: &DVector<f64>| {
        let fhat = gmr_velocity(&result.mixture, x).unwrap();
        let u = sontag_u(&result.clf, &ccfg, &fhat, x).unwrap();
        (fhat.clone(), u.clone(), fhat + u)
    };
    let (_, _, k1) = f(&x);
    let (_, _, k2) = f(&(&x + &k1 * (0.5 * dt)));
    let (_, _, k3) = f(&(&x + &k2 * (0.5 * dt)));
    let stage4 = &x + &k3 * dt;
    let (fhat, u, _) = f(&stage4);
    println!("stage4 point: ({:+.8}, {:+.8})", stage4[0], stage4[1]);
    println!("|fhat| {:.6e}  |u| {:.6e}", fhat.norm(), u.norm());
    let (a, b) = ab_terms(&result.clf, &fhat, &stage4);
    let r = rho(&ccfg, a, &b, &stage4);
    println!("a {a:.6e} |b| {:.6e} rho {r:.6e} V {:.6e}", b.norm(), result.clf.lyapunov(&stage4));
    println!("gamma {:?}", weights(&result.mixture, &stage4));
    for k in 0..5 {
        let mp = result.mixture.mean_pos(k);
        let cp = result.mixture.cov_pos(k);
        let eigs = cp.clone().symmetric_eigen().eigenvalues;
        let m = result.mixture.mean_vel(k)
            + result.mixture.cov_vel_pos(k)
                * cp.try_inverse().unwrap()
                * (&stage4 - &mp);
        println!(
            "  comp {k}: |m_k(stage)| {:.4e} pos-cov eigs ({:.3e}, {:.3e}) |mean_x| {:.3}",
            m.norm(),
            eigs[0],
            eigs[1],
            mp.norm()
        );
    }
}
