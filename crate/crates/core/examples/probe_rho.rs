//! rho0 sweep behavior on a fixed model with disturbances.

use nalgebra::DVector;
use stableds::control::ControllerConfig;
use stableds::dataset::{synth_shape, Shape};
use stableds::learn::{train, GradientMode, LearnConfig};
use stableds::sim::{rollout, Disturbance, RolloutOptions};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    for shape in [Shape::Sine, Shape::W, Shape::S] {
        let set = synth_shape(shape, 3, 200, 0.02, 7)
            .unwrap()
            .add_noise(0.02, 13)
            .unwrap();
        let lcfg = LearnConfig {
            k: 5,
            l: 3,
            max_outer_iter: 300,
            gradient_mode: GradientMode::Analytic,
            ..Default::default()
        };
        let result = train(&set, &lcfg, &ControllerConfig::default()).unwrap();
        println!("{shape}: J {:.3e} -> {:.3e}", result.initial_j, result.final_j);

        let range_norm: f64 = set
            .velocity_ranges()
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt();
        let amp = 0.05 * range_norm;
        let x0 = set.demos()[0].start().clone();
        for rho0 in [0.5, 1.0, 2.0, 4.0] {
            let cfg = ControllerConfig {
                rho0,
                kappa: 2.0 * amp * amp,
                ..Default::default()
            };
            let mut efforts = Vec::new();
            let mut radii = Vec::new();
            for seed in 0..20u64 {
                let opts = RolloutOptions::new(2e-4, 60_000)
                    .with_disturbance(Disturbance::Uniform { amplitude: amp, seed })
                    .with_conv_tol(0.0);
                match rollout(&result.mixture, &result.clf, &cfg, &x0, &opts) {
                    Ok(res) => {
                        efforts.push(res.control_effort);
                        let n = res.states.len();
                        let tail = &res.states[n - n / 5..];
                        radii.push(tail.iter().map(DVector::norm).fold(0.0_f64, f64::max));
                    }
                    Err(e) => {
                        println!("  rho0 {rho0} seed {seed}: {e}");
                        efforts.push(f64::INFINITY);
                        radii.push(f64::INFINITY);
                    }
                }
            }
            println!(
                "  rho0 {rho0}: median effort {:.4} median tail radius {:.5}",
                median(efforts),
                median(radii)
            );
        }
    }
}
