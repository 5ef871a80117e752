//! Subcommand implementations: synth, train, rollout, evaluate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use stableds::clf::ClfParams;
use stableds::control::{ControllerConfig, RhoVariant};
use stableds::dataset::{load_csv_with, synth_shape, DemonstrationSet, Shape};
use stableds::gmm::MixtureParams;
use stableds::learn::train;
use stableds::metrics::{swept_error_area, velocity_mse};
use stableds::model::{load_model, save_model};
use stableds::sim::{residual_check, rollout, rollout_open_loop, Disturbance, RolloutOptions};
use stableds::{Error, Result};

use crate::config::RunConfig;
use crate::svg;

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Builds the demonstration set described by the dataset.* keys.
pub fn resolve_dataset(cfg: &RunConfig) -> Result<DemonstrationSet> {
    let base = match cfg.str("dataset.source") {
        "synth" => {
            let shape: Shape = cfg.str("dataset.shape").parse()?;
            synth_shape(
                shape,
                cfg.usize("dataset.m")?,
                cfg.usize("dataset.n")?,
                cfg.f64("dataset.jitter")?,
                cfg.u64("dataset.seed")?,
            )?
        }
        "csv" => {
            let path = cfg.str("dataset.path");
            if path.is_empty() {
                return Err(Error::Argument(
                    "dataset.source = csv requires dataset.path".into(),
                ));
            }
            load_csv_with(path, cfg.f64("dataset.snap_tol")?)?
        }
        other => {
            return Err(Error::Argument(format!(
                "dataset.source must be synth or csv, got '{other}'"
            )))
        }
    };
    let level = cfg.f64("dataset.noise")?;
    if level > 0.0 {
        base.add_noise(level, cfg.u64("dataset.noise_seed")?)
    } else {
        Ok(base)
    }
}

/// Disturbance amplitude for a noise level: the level scaled by the euclidean
/// norm of the per-dimension velocity ranges, mirroring the range-scaled data
/// noise convention.
pub fn disturbance_amplitude(set: &DemonstrationSet, level: f64) -> f64 {
    let range_norm: f64 = set
        .velocity_ranges()
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    level * range_norm
}

fn make_disturbance(cfg: &RunConfig, amplitude: f64, seed: u64) -> Result<Disturbance> {
    if amplitude == 0.0 {
        return Ok(Disturbance::None);
    }
    match cfg.str("sim.noise_kind") {
        "uniform" => Ok(Disturbance::Uniform { amplitude, seed }),
        "sinusoid" => Ok(Disturbance::Sinusoid {
            amplitude,
            frequency: cfg.f64("sim.noise_freq")?,
            seed,
        }),
        other => Err(Error::Argument(format!(
            "sim.noise_kind must be uniform or sinusoid, got '{other}'"
        ))),
    }
}

/// Controller with kappa auto-derived from the disturbance amplitude when it
/// is not pinned explicitly: kappa = 2 amplitude^2, so the squared
/// disturbance norm stays strictly below it.
fn controller_for(cfg: &RunConfig, amplitude: f64) -> Result<ControllerConfig> {
    let mut ctrl = cfg.controller()?;
    if ctrl.kappa == 0.0 && amplitude > 0.0 {
        ctrl.kappa = 2.0 * amplitude * amplitude;
    }
    Ok(ctrl)
}

fn float(v: f64) -> String {
    format!("{v}")
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let set = resolve_dataset(cfg)?;
    set.save_csv(out.join("dataset.csv"))?;
    cfg.write_snapshot(&out.join("config.txt"))?;
    println!(
        "wrote {} ({} demos x {} samples, d = {})",
        out.join("dataset.csv").display(),
        set.num_demos(),
        set.samples_per_demo(),
        set.dims()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let set = resolve_dataset(cfg)?;
    let lcfg = cfg.learn()?;
    let ccfg = cfg.controller()?;

    let started = std::time::Instant::now();
    let result = train(&set, &lcfg, &ccfg)?;
    let wall = started.elapsed().as_secs_f64();

    let mut meta = BTreeMap::new();
    for (k, v) in cfg.iter() {
        if k.starts_with("dataset.") || k == "gmm.k" || k == "clf.l" || k == "learn.seed" {
            meta.insert(k.clone(), v.clone());
        }
    }
    save_model(out.join("model.json"), &result.mixture, &result.clf, meta)?;

    let mut trace = std::io::BufWriter::new(std::fs::File::create(out.join("trace.csv"))?);
    writeln!(trace, "iter,J,grad_norm")?;
    for row in &result.trace {
        writeln!(trace, "{},{},{}", row.iter, float(row.j), float(row.grad_norm))?;
    }
    drop(trace);

    let summary = serde_json::json!({
        "initial_j": result.initial_j,
        "final_j": result.final_j,
        "iterations": result.iterations,
        "wall_time_s": wall,
        "d": result.mixture.dims(),
        "k": result.mixture.num_components(),
        "l": result.clf.num_terms(),
        "m": set.num_demos(),
        "n": set.samples_per_demo(),
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap() + "\n",
    )?;
    cfg.write_snapshot(&out.join("config.txt"))?;
    println!(
        "trained: J {:.6e} -> {:.6e} in {} iterations ({wall:.1}s); model at {}",
        result.initial_j,
        result.final_j,
        result.iterations,
        out.join("model.json").display()
    );
    Ok(())
}

fn load_model_and_data(
    cfg: &RunConfig,
) -> Result<(MixtureParams, ClfParams, DemonstrationSet, String)> {
    let model_path = cfg.str("model.path");
    if model_path.is_empty() {
        return Err(Error::Argument("no model file given; pass --model".into()));
    }
    let (mix, clf, meta) = load_model(model_path)?;

    // The data comes from the model's recorded provenance unless the caller
    // pointed at a csv explicitly.
    let mut data_cfg = cfg.clone();
    if cfg.str("dataset.path").is_empty() || cfg.str("dataset.source") != "csv" {
        for (k, v) in &meta {
            if k.starts_with("dataset.") {
                data_cfg.set(k, v.clone());
            }
        }
    }
    let set = resolve_dataset(&data_cfg)?;
    if set.dims() != mix.dims() {
        return Err(Error::Data(format!(
            "model dimension {} does not match data dimension {}",
            mix.dims(),
            set.dims()
        )));
    }
    let shape = meta
        .get("dataset.shape")
        .cloned()
        .unwrap_or_else(|| "csv".to_string());
    Ok((mix, clf, set, shape))
}

fn parse_extra_starts(cfg: &RunConfig, d: usize) -> Result<Vec<DVector<f64>>> {
    let raw = cfg.str("sim.extra_x0");
    let mut starts = Vec::new();
    for chunk in raw.split(';').filter(|s| !s.trim().is_empty()) {
        let coords: Vec<f64> = chunk
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad --x0 coordinate '{s}'")))
            })
            .collect::<Result<_>>()?;
        if coords.len() != d {
            return Err(Error::Argument(format!(
                "--x0 needs {d} coordinates, got {}",
                coords.len()
            )));
        }
        starts.push(DVector::from_row_slice(&coords));
    }
    Ok(starts)
}

pub fn cmd_rollout(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let (mix, clf, set, _) = load_model_and_data(cfg)?;

    let dt = {
        let v = cfg.f64("sim.dt")?;
        if v > 0.0 {
            v
        } else {
            0.01 * set.duration() / set.samples_per_demo() as f64
        }
    };
    let max_steps = cfg.usize("sim.max_steps")?;
    let conv_tol = {
        let v = cfg.f64("sim.conv_tol")?;
        if v > 0.0 {
            Some(v)
        } else {
            None
        }
    };
    let level = cfg.f64("sim.noise")?;
    let amplitude = disturbance_amplitude(&set, level);
    let ctrl = controller_for(cfg, amplitude)?;
    let seeds = cfg.u64("sim.seeds")?.max(1);
    let seed0 = cfg.u64("sim.seed0")?;

    let mut starts = set.starts();
    starts.extend(parse_extra_starts(cfg, set.dims())?);

    let mut manifest = std::io::BufWriter::new(std::fs::File::create(out.join("manifest.csv"))?);
    writeln!(
        manifest,
        "file,start_index,seed,disturbance,amplitude,converged,steps,final_norm,control_effort,decay_slope"
    )?;

    let mut repros = Vec::new();
    for (i, x0) in starts.iter().enumerate() {
        for s in 0..seeds {
            let seed = seed0 + s;
            let disturbance = make_disturbance(cfg, amplitude, seed)?;
            let opts = RolloutOptions {
                dt,
                max_steps,
                conv_tol,
                disturbance,
            };
            let res = rollout(&mix, &clf, &ctrl, x0, &opts)?;

            let name = format!("traj_{i:03}_{s:02}.csv");
            let mut file = std::io::BufWriter::new(std::fs::File::create(out.join(&name))?);
            write!(file, "t")?;
            for k in 1..=set.dims() {
                write!(file, ",x{k}")?;
            }
            for k in 1..=set.dims() {
                write!(file, ",u{k}")?;
            }
            writeln!(file, ",V")?;
            for idx in 0..res.times.len() {
                write!(file, "{}", float(res.times[idx]))?;
                for v in res.states[idx].iter() {
                    write!(file, ",{}", float(*v))?;
                }
                for v in res.controls[idx].iter() {
                    write!(file, ",{}", float(*v))?;
                }
                writeln!(file, ",{}", float(res.lyapunov[idx]))?;
            }
            drop(file);

            let kind = match opts.disturbance {
                Disturbance::None => "none",
                Disturbance::Uniform { .. } => "uniform",
                Disturbance::Sinusoid { .. } => "sinusoid",
            };
            let slope = stableds::sim::decay_rate(&res)
                .map(float)
                .unwrap_or_default();
            writeln!(
                manifest,
                "{name},{i},{seed},{kind},{},{},{},{},{},{slope}",
                float(amplitude),
                res.converged,
                res.times.len() - 1,
                float(res.final_norm),
                float(res.control_effort),
            )?;
            repros.push(res.states);
        }
    }
    drop(manifest);

    if cfg.bool("rollout.svg")? {
        let demos: Vec<Vec<DVector<f64>>> =
            set.demos().iter().map(|demo| demo.positions()).collect();
        svg::write_overlay(&out.join("overlay.svg"), &demos, &repros, &clf)?;
    }
    cfg.write_snapshot(&out.join("config.txt"))?;
    println!("wrote {} trajectories to {}", repros.len(), out.display());
    Ok(())
}

struct EvalRow {
    shape: String,
    variant: String,
    noise: f64,
    rho0: Option<f64>,
    sea: f64,
    vel_mse: f64,
    effort_median: f64,
    conv_fraction: f64,
    omega_fraction: Option<f64>,
    tail_radius_median: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// A rollout counts as settled when it hits the convergence radius or its
/// tail stays within 2% of the initial distance.
fn settled(res: &stableds::sim::RolloutResult, x0_norm: f64) -> bool {
    if res.converged {
        return true;
    }
    let n = res.states.len();
    let tail = &res.states[n - (n / 5).max(1)..];
    let tail_max = tail.iter().map(DVector::norm).fold(0.0_f64, f64::max);
    tail_max <= 0.02 * x0_norm.max(1e-12)
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let (mix, clf, set, shape) = load_model_and_data(cfg)?;

    let dt = cfg.f64("eval.dt")?;
    let max_steps = cfg.usize("eval.max_steps")?;
    let noise_levels = cfg.f64_list("eval.noise_levels")?;
    let rho0s = cfg.f64_list("eval.rho0s")?;
    let variants = cfg.str_list("eval.variants");
    let seeds = cfg.u64("eval.seeds")?.max(1);
    let demos: Vec<Vec<DVector<f64>>> = set.demos().iter().map(|d| d.positions()).collect();
    let starts = set.starts();

    let mut rows = Vec::new();
    for variant in &variants {
        for &noise in &noise_levels {
            let amplitude = disturbance_amplitude(&set, noise);
            let cell_rho0s: Vec<Option<f64>> = if variant == "none" {
                vec![None]
            } else {
                rho0s.iter().map(|r| Some(*r)).collect()
            };
            for rho0 in cell_rho0s {
                let mut ctrl = controller_for(cfg, amplitude)?;
                ctrl.variant = match variant.as_str() {
                    "sontag" | "none" => RhoVariant::Sontag,
                    "classk" => RhoVariant::ClassK,
                    other => {
                        return Err(Error::Argument(format!(
                            "eval.variants entries must be sontag, classk or none, got '{other}'"
                        )))
                    }
                };
                if let Some(r) = rho0 {
                    ctrl.rho0 = r;
                }
                let cell_seeds: Vec<u64> = if noise == 0.0 {
                    vec![0]
                } else {
                    (0..seeds).collect()
                };

                // Each (start, seed) pair is independent; run them in
                // parallel and reduce in order.
                let runs: Vec<Result<(f64, f64, bool, Option<bool>, f64)>> = starts
                    .par_iter()
                    .enumerate()
                    .flat_map(|(di, x0)| {
                        let ctrl = ctrl;
                        let demos = &demos;
                        let mix = &mix;
                        let clf = &clf;
                        let cfgref = cfg;
                        cell_seeds.par_iter().map(move |&seed| {
                            let disturbance = if amplitude > 0.0 {
                                make_disturbance(cfgref, amplitude, seed)?
                            } else {
                                Disturbance::None
                            };
                            let opts = RolloutOptions {
                                dt,
                                max_steps,
                                conv_tol: None,
                                disturbance,
                            };
                            let res = if variant == "none" {
                                rollout_open_loop(mix, clf, x0, &opts)
                            } else {
                                rollout(mix, clf, &ctrl, x0, &opts)
                            };
                            match res {
                                Ok(res) => {
                                    let sea = swept_error_area(&demos[di], &res.states)?;
                                    let omega = if amplitude > 0.0 && variant != "none" {
                                        let rep = residual_check(&res, clf, mix, &ctrl)?;
                                        Some(rep.tail_inside)
                                    } else {
                                        None
                                    };
                                    let n = res.states.len();
                                    let tail = &res.states[n - (n / 5).max(1)..];
                                    let tail_radius = tail
                                        .iter()
                                        .map(DVector::norm)
                                        .fold(0.0_f64, f64::max);
                                    Ok((
                                        sea,
                                        res.control_effort,
                                        settled(&res, x0.norm()),
                                        omega,
                                        tail_radius,
                                    ))
                                }
                                // A reproduction that left the guard ball is
                                // an honest non-convergence data point.
                                Err(Error::Numerical(_)) => {
                                    Ok((f64::INFINITY, f64::INFINITY, false, Some(false), f64::INFINITY))
                                }
                                Err(e) => Err(e),
                            }
                        })
                    })
                    .collect();

                let mut seas = Vec::new();
                let mut efforts = Vec::new();
                let mut conv = 0usize;
                let mut omega_in = 0usize;
                let mut omega_total = 0usize;
                let mut radii = Vec::new();
                let mut total = 0usize;
                for run in runs {
                    let (sea, effort, ok, omega, radius) = run?;
                    seas.push(sea);
                    efforts.push(effort);
                    radii.push(radius);
                    if ok {
                        conv += 1;
                    }
                    if let Some(inside) = omega {
                        omega_total += 1;
                        if inside {
                            omega_in += 1;
                        }
                    }
                    total += 1;
                }

                let vel_cfg = if variant == "none" { None } else { Some(&ctrl) };
                rows.push(EvalRow {
                    shape: shape.clone(),
                    variant: variant.clone(),
                    noise,
                    rho0,
                    sea: seas.iter().sum::<f64>() / seas.len() as f64,
                    vel_mse: velocity_mse(&mix, &clf, vel_cfg, &set)?,
                    effort_median: median(efforts),
                    conv_fraction: conv as f64 / total as f64,
                    omega_fraction: (omega_total > 0)
                        .then(|| omega_in as f64 / omega_total as f64),
                    tail_radius_median: median(radii),
                });
            }
        }
    }

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out.join("eval.csv"))?);
    writeln!(
        csv,
        "shape,variant,noise,rho0,sea,velocity_mse,effort_median,converged_fraction,omega_fraction,tail_radius_median"
    )?;
    let mut table = String::from(
        "shape    variant  noise   rho0   sea        vel_mse    effort     conv   omega  tail_r\n",
    );
    for row in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            row.shape,
            row.variant,
            float(row.noise),
            row.rho0.map(float).unwrap_or_default(),
            float(row.sea),
            float(row.vel_mse),
            float(row.effort_median),
            float(row.conv_fraction),
            row.omega_fraction.map(float).unwrap_or_default(),
            float(row.tail_radius_median),
        )?;
        let _ = writeln!(
            table,
            "{:<8} {:<8} {:<7} {:<6} {:<10.4} {:<10.4} {:<10.4} {:<6.2} {:<6} {:<8.5}",
            row.shape,
            row.variant,
            row.noise,
            row.rho0.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            row.sea,
            row.vel_mse,
            row.effort_median,
            row.conv_fraction,
            row.omega_fraction
                .map(|o| format!("{o:.2}"))
                .unwrap_or_else(|| "-".into()),
            row.tail_radius_median,
        );
    }
    drop(csv);
    std::fs::write(out.join("eval.txt"), &table)?;
    cfg.write_snapshot(&out.join("config.txt"))?;
    print!("{table}");
    Ok(())
}

/// Maps error kinds onto the documented process exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) => 2,
        Error::Parse { .. } | Error::Schema(_) | Error::Data(_) | Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

/// Output path helper shared by main.
pub fn out_dir(raw: &str) -> PathBuf {
    PathBuf::from(raw)
}
