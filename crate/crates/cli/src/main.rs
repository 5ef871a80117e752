//! Command line front end: dataset synthesis, joint training, closed-loop
//! reproduction, and evaluation sweeps.

mod commands;
mod config;
mod svg;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use stableds::Result;

#[derive(Parser)]
#[command(
    name = "stableds",
    about = "Learn stable point-to-point motions from demonstrations and reproduce them under a Lyapunov-based controller",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; flags and the environment override it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: String,
    /// Generic override, repeatable: --set gmm.k=4
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration set and write it as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Shape template: C, G, W, Sine or S.
        #[arg(long)]
        shape: Option<String>,
        /// Number of demonstrations.
        #[arg(long)]
        m: Option<usize>,
        /// Samples per demonstration.
        #[arg(long)]
        n: Option<usize>,
        /// Smooth per-demo warp amplitude in [0, 1).
        #[arg(long)]
        jitter: Option<f64>,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Range-scaled measurement noise level in [0, 1].
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit the mixture and energy function jointly on a demonstration set.
    Train {
        #[command(flatten)]
        common: Common,
        /// Shape template when synthesizing the training data.
        #[arg(long)]
        shape: Option<String>,
        /// Train from a demo,t,x..,dx.. CSV instead of a synthetic set.
        #[arg(long)]
        data: Option<String>,
        /// Mixture components.
        #[arg(long)]
        k: Option<usize>,
        /// Asymmetric energy terms.
        #[arg(long)]
        l: Option<usize>,
        /// Gradient mode: fd or analytic.
        #[arg(long)]
        gradient: Option<String>,
        /// Outer iteration budget.
        #[arg(long)]
        max_iter: Option<usize>,
        /// Optimizer seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Range-scaled noise applied to the training data.
        #[arg(long)]
        noise: Option<f64>,
        /// Control gain used inside the training loop.
        #[arg(long)]
        rho0: Option<f64>,
    },
    /// Integrate closed-loop reproductions from a trained model.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long)]
        model: Option<String>,
        /// Override the demonstration CSV recorded in the model.
        #[arg(long)]
        data: Option<String>,
        /// Disturbance level relative to the data's velocity range.
        #[arg(long)]
        noise: Option<f64>,
        /// Disturbance family: uniform or sinusoid.
        #[arg(long)]
        noise_kind: Option<String>,
        /// Disturbance seeds per start.
        #[arg(long)]
        seeds: Option<u64>,
        /// Extra start point, comma separated coordinates; repeatable.
        #[arg(long = "x0")]
        x0: Vec<String>,
        /// Integrator step.
        #[arg(long)]
        dt: Option<f64>,
        /// Step budget per rollout.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Also write an SVG overlay of demos, reproductions and energy rings.
        #[arg(long)]
        svg: bool,
        /// Controller variant: sontag or classk.
        #[arg(long)]
        variant: Option<String>,
        /// Control gain.
        #[arg(long)]
        rho0: Option<f64>,
    },
    /// Sweep controller variants, noise levels and gains; tabulate metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long)]
        model: Option<String>,
        /// Override the demonstration CSV recorded in the model.
        #[arg(long)]
        data: Option<String>,
        /// Comma separated noise levels.
        #[arg(long)]
        noise_levels: Option<String>,
        /// Comma separated control gains.
        #[arg(long)]
        rho0s: Option<String>,
        /// Comma separated variants from sontag, classk, none.
        #[arg(long)]
        variants: Option<String>,
        /// Disturbance seeds per cell.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn apply<T: ToString>(cfg: &mut RunConfig, key: &str, value: Option<T>) {
    if let Some(v) = value {
        cfg.set(key, v.to_string());
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            common,
            shape,
            m,
            n,
            jitter,
            seed,
            noise,
        } => {
            let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
            apply(&mut cfg, "dataset.shape", shape);
            apply(&mut cfg, "dataset.m", m);
            apply(&mut cfg, "dataset.n", n);
            apply(&mut cfg, "dataset.jitter", jitter);
            apply(&mut cfg, "dataset.seed", seed);
            apply(&mut cfg, "dataset.noise", noise);
            commands::cmd_synth(&cfg, &commands::out_dir(&common.out))
        }
        Command::Train {
            common,
            shape,
            data,
            k,
            l,
            gradient,
            max_iter,
            seed,
            noise,
            rho0,
        } => {
            let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
            apply(&mut cfg, "dataset.shape", shape);
            if let Some(path) = data {
                cfg.set("dataset.source", "csv".into());
                cfg.set("dataset.path", path);
            }
            apply(&mut cfg, "gmm.k", k);
            apply(&mut cfg, "clf.l", l);
            apply(&mut cfg, "learn.gradient", gradient);
            apply(&mut cfg, "learn.max_iter", max_iter);
            apply(&mut cfg, "learn.seed", seed);
            apply(&mut cfg, "dataset.noise", noise);
            apply(&mut cfg, "control.rho0", rho0);
            commands::cmd_train(&cfg, &commands::out_dir(&common.out))
        }
        Command::Rollout {
            common,
            model,
            data,
            noise,
            noise_kind,
            seeds,
            x0,
            dt,
            max_steps,
            svg,
            variant,
            rho0,
        } => {
            let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
            apply(&mut cfg, "model.path", model);
            if let Some(path) = data {
                cfg.set("dataset.source", "csv".into());
                cfg.set("dataset.path", path);
            }
            apply(&mut cfg, "sim.noise", noise);
            apply(&mut cfg, "sim.noise_kind", noise_kind);
            apply(&mut cfg, "sim.seeds", seeds);
            if !x0.is_empty() {
                cfg.set("sim.extra_x0", x0.join(";"));
            }
            apply(&mut cfg, "sim.dt", dt);
            apply(&mut cfg, "sim.max_steps", max_steps);
            if svg {
                cfg.set("rollout.svg", "true".into());
            }
            apply(&mut cfg, "control.variant", variant);
            apply(&mut cfg, "control.rho0", rho0);
            commands::cmd_rollout(&cfg, &commands::out_dir(&common.out))
        }
        Command::Evaluate {
            common,
            model,
            data,
            noise_levels,
            rho0s,
            variants,
            seeds,
        } => {
            let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
            apply(&mut cfg, "model.path", model);
            if let Some(path) = data {
                cfg.set("dataset.source", "csv".into());
                cfg.set("dataset.path", path);
            }
            apply(&mut cfg, "eval.noise_levels", noise_levels);
            apply(&mut cfg, "eval.rho0s", rho0s);
            apply(&mut cfg, "eval.variants", variants);
            apply(&mut cfg, "eval.seeds", seeds);
            commands::cmd_evaluate(&cfg, &commands::out_dir(&common.out))
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(commands::exit_code(&err));
    }
}
