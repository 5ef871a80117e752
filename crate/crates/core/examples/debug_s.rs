//! Why does the S shape fit poorly?

use stableds::control::ControllerConfig;
use stableds::dataset::{synth_shape, Shape};
use stableds::learn::{
    objective_with, train, FreeParams, GradientMode, LearnConfig, ParamLayout,
};
use stableds::gmm::{em_fit, gmr_velocity, kmeans_init};
use stableds::clf::ClfParams;

fn main() {
    let set = synth_shape(Shape::S, 3, 200, 0.02, 7).unwrap();
    for k in [5, 6] {
        for seed in [0u64, 1, 2] {
            let init = kmeans_init(&set, k, seed).unwrap();
            let mix = em_fit(&init, &set, 200, 1e-6).unwrap();
            // Plain regression error of the EM fit.
            let mut err = 0.0;
            let mut count = 0;
            for s in set.iter_samples() {
                let f = gmr_velocity(&mix, &s.position).unwrap();
                err += (&s.velocity - f).norm_squared();
                count += 1;
            }
            println!("k {k} seed {seed}: EM-only velocity mse {:.4e}", err / count as f64);
        }
    }
    for (ow, ridge) in [(1.0, 1e-6), (1.0, 1e-4)] {
        for seed in [0u64, 1, 2] {
            let lcfg = LearnConfig {
                k: 5,
                l: 3,
                max_outer_iter: 300,
                gradient_mode: GradientMode::Analytic,
                seed,
                origin_weight: ow,
                term_ridge: ridge,
                ..Default::default()
            };
            let result = train(&set, &lcfg, &ControllerConfig::default()).unwrap();
            // Where does the residual sit once trained?
            let lay = ParamLayout::for_set(&set, 5, 3);
            let free = FreeParams::encode(&result.mixture, &result.clf, lay).unwrap();
            let j_abl = objective_with(&free, &set, None, 0.0).unwrap();
            let mut pmu = 0.0f64;
            for t in result.clf.terms() {
                pmu = pmu.max((&t.p * &t.mu).norm());
            }
            println!(
                "seed {seed} ridge {ridge:.0e}: J {:.3e} -> {:.3e}, gmr-only half-mse {:.3e}, max|P mu| {:.2}",
                result.initial_j, result.final_j, j_abl, pmu
            );
        }
    }
}
