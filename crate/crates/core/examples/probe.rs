//! Scratch pipeline probe used while tuning defaults.

use nalgebra::DVector;
use stableds::control::{ControllerConfig, RhoVariant};
use stableds::dataset::{synth_shape, Shape};
use stableds::learn::{train, GradientMode, LearnConfig};
use stableds::metrics::swept_error_area;
use stableds::sim::{residual_check, rollout, rollout_open_loop, Disturbance, RolloutOptions};

fn main() {
    let t0 = std::time::Instant::now();
    let dt = 2e-4;
    for shape in Shape::ALL {
        let set = synth_shape(shape, 3, 200, 0.02, 7).unwrap();
        let lcfg = LearnConfig {
            k: 5,
            l: 3,
            max_outer_iter: 300,
            gradient_mode: GradientMode::Analytic,
            ..Default::default()
        };
        let ccfg = ControllerConfig::default();
        let t1 = std::time::Instant::now();
        let result = train(&set, &lcfg, &ccfg).unwrap();
        let train_time = t1.elapsed().as_secs_f64();

        let p0_min = result
            .clf
            .p0()
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .min();
        let max_gain = (0..5)
            .map(|k| {
                let a = result.mixture.cov_vel_pos(k)
                    * result.mixture.cov_pos(k).try_inverse().unwrap();
                a.norm()
            })
            .fold(0.0_f64, f64::max);

        println!(
            "{shape}: J {:.3e} -> {:.3e} ({} iters, {train_time:.1}s) p0_min {p0_min:.3} max|A| {max_gain:.1}",
            result.initial_j, result.final_j, result.iterations
        );

        let mut conv = 0;
        let mut sea_ctrl = 0.0;
        let mut sea_raw = 0.0;
        let mut raw_conv = 0;
        for demo in set.demos() {
            let x0 = demo.start().clone();
            let opts = RolloutOptions::new(dt, 120_000);
            let res = rollout(&result.mixture, &result.clf, &ccfg, &x0, &opts).unwrap();
            if res.converged {
                conv += 1;
            }
            let demo_pos = demo.positions();
            sea_ctrl += swept_error_area(&demo_pos, &res.states).unwrap();
            let steps = (set.duration() / dt).ceil() as usize;
            let raw_opts = RolloutOptions::new(dt, 3 * steps);
            match rollout_open_loop(&result.mixture, &result.clf, &x0, &raw_opts) {
                Ok(raw) => {
                    if raw.converged {
                        raw_conv += 1;
                    }
                    sea_raw += swept_error_area(&demo_pos, &raw.states).unwrap();
                }
                Err(e) => {
                    println!("  raw rollout error: {e}");
                    sea_raw += f64::INFINITY;
                }
            }
        }
        println!(
            "  conv {conv}/3 SEA ctrl {:.3} raw {:.3} raw_conv {raw_conv}/3",
            sea_ctrl / 3.0,
            sea_raw / 3.0
        );

        // Disturbance arms at 5%: amplitude = level * |velocity range|_2.
        let range_norm: f64 = set
            .velocity_ranges()
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt();
        for (label, level) in [("1%", 0.01), ("5%", 0.05)] {
            let amp = level * range_norm;
            let kappa = 2.0 * amp * amp;
            let sontag_cfg = ControllerConfig {
                kappa,
                ..Default::default()
            };
            for dlabel in ["uniform", "sin0.2"] {
                let mk = |seed: u64| -> Disturbance {
                    if dlabel == "uniform" {
                        Disturbance::Uniform { amplitude: amp, seed }
                    } else {
                        Disturbance::Sinusoid {
                            amplitude: amp,
                            frequency: 0.2,
                            seed,
                        }
                    }
                };
                let mut viol = [0usize; 3]; // sontag, classk1, classk03
                let mut radius = [0.0f64; 3];
                for seed in 0..10u64 {
                    let opts = RolloutOptions::new(dt, 60_000)
                        .with_disturbance(mk(seed))
                        .with_conv_tol(0.0);
                    let x0 = set.demos()[0].start().clone();
                    for (i, cfg) in [
                        sontag_cfg,
                        ControllerConfig {
                            variant: RhoVariant::ClassK,
                            kappa,
                            ..Default::default()
                        },
                        ControllerConfig {
                            variant: RhoVariant::ClassK,
                            kappa0: 0.3,
                            kappa,
                            ..Default::default()
                        },
                    ]
                    .iter()
                    .enumerate()
                    {
                        match rollout(&result.mixture, &result.clf, cfg, &x0, &opts) {
                            Ok(res) => {
                                let rep = residual_check(
                                    &res,
                                    &result.clf,
                                    &result.mixture,
                                    &sontag_cfg,
                                )
                                .unwrap();
                                if !rep.tail_inside {
                                    viol[i] += 1;
                                }
                                let tail =
                                    &res.states[res.states.len() - res.states.len() / 5..];
                                radius[i] = radius[i].max(
                                    tail.iter().map(DVector::norm).fold(0.0_f64, f64::max),
                                );
                            }
                            Err(_) => {
                                viol[i] += 1;
                                radius[i] = f64::INFINITY;
                            }
                        }
                    }
                }
                println!(
                    "  {label} {dlabel}: viol sontag {} classk(1.0) {} classk(0.3) {} | max tail radius {:.3} {:.3} {:.3}",
                    viol[0], viol[1], viol[2], radius[0], radius[1], radius[2]
                );
            }
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
