//! Flat key/value run configuration with a file < env < flags override chain.
//!
//! The resolved map is written verbatim into the output directory so every
//! run is reproducible from its artifacts alone.

use std::collections::BTreeMap;
use std::path::Path;

use stableds::control::{ControllerConfig, RhoVariant};
use stableds::learn::{GradientMode, LearnConfig};
use stableds::{Error, Result};

/// Known keys and their defaults. Every key is addressable from the
/// environment as STABLEDS_<KEY> with dots replaced by underscores and
/// uppercased.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("dataset.source", "synth"),
    ("dataset.shape", "Sine"),
    ("dataset.m", "3"),
    ("dataset.n", "200"),
    ("dataset.jitter", "0.02"),
    ("dataset.seed", "7"),
    ("dataset.path", ""),
    ("dataset.snap_tol", "1e-9"),
    ("dataset.noise", "0"),
    ("dataset.noise_seed", "1"),
    ("gmm.k", "5"),
    ("clf.l", "3"),
    ("control.variant", "sontag"),
    ("control.rho0", "1.0"),
    ("control.kappa0", "1.0"),
    ("control.kappa", "0"),
    ("learn.max_iter", "150"),
    ("learn.j_threshold", "1e-4"),
    ("learn.gradient", "fd"),
    ("learn.fd_step", "1e-6"),
    ("learn.origin_weight", "1.0"),
    ("learn.seed", "0"),
    ("learn.em_max_iter", "200"),
    ("learn.em_tol", "1e-6"),
    ("learn.restarts", "3"),
    ("learn.term_ridge", "1e-6"),
    ("learn.coupling_ridge", "3e-4"),
    ("model.path", ""),
    ("sim.dt", "0"),
    ("sim.max_steps", "200000"),
    ("sim.conv_tol", "0"),
    ("sim.noise", "0"),
    ("sim.noise_kind", "uniform"),
    ("sim.noise_freq", "0.2"),
    ("sim.seeds", "1"),
    ("sim.seed0", "0"),
    ("sim.extra_x0", ""),
    ("rollout.svg", "false"),
    ("eval.noise_levels", "0,0.01,0.05"),
    ("eval.rho0s", "1.0"),
    ("eval.variants", "sontag,classk,none"),
    ("eval.seeds", "5"),
    ("eval.dt", "5e-4"),
    ("eval.max_steps", "20000"),
];

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    map: BTreeMap<String, String>,
}

impl RunConfig {
    /// Builds the map from defaults, then the optional config file, then the
    /// environment, then explicit key=value overrides, in that order.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut map: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Data(format!("cannot read config file {}: {e}", path.display()))
            })?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    row: lineno + 1,
                    msg: format!("expected key = value, found '{line}'"),
                })?;
                let key = key.trim();
                if !map.contains_key(key) {
                    return Err(Error::Argument(format!(
                        "unknown config key '{key}' at line {}",
                        lineno + 1
                    )));
                }
                map.insert(key.to_string(), value.trim().to_string());
            }
        }

        let keys: Vec<String> = map.keys().cloned().collect();
        for key in &keys {
            let env_name = format!("STABLEDS_{}", key.replace('.', "_").to_uppercase());
            if let Ok(value) = std::env::var(&env_name) {
                map.insert(key.clone(), value);
            }
        }

        for set in sets {
            let (key, value) = set.split_once('=').ok_or_else(|| {
                Error::Argument(format!("--set expects key=value, found '{set}'"))
            })?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(Error::Argument(format!("unknown config key '{key}'")));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }

        Ok(Self { map })
    }

    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(self.map.contains_key(key), "unknown key {key}");
        self.map.insert(key.to_string(), value);
    }

    pub fn str(&self, key: &str) -> &str {
        self.map
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Argument(format!("{key} must be a number, got '{}'", self.str(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Argument(format!("{key} must be a count, got '{}'", self.str(key))))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Argument(format!("{key} must be a seed, got '{}'", self.str(key))))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Argument(format!(
                "{key} must be true or false, got '{other}'"
            ))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.str(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Argument(format!("{key} holds a bad number '{s}'")))
            })
            .collect()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        self.str(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn controller(&self) -> Result<ControllerConfig> {
        let variant = match self.str("control.variant").to_ascii_lowercase().as_str() {
            "sontag" => RhoVariant::Sontag,
            "classk" => RhoVariant::ClassK,
            other => {
                return Err(Error::Argument(format!(
                    "control.variant must be sontag or classk, got '{other}'"
                )))
            }
        };
        let cfg = ControllerConfig {
            variant,
            rho0: self.f64("control.rho0")?,
            kappa0: self.f64("control.kappa0")?,
            kappa: self.f64("control.kappa")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learn(&self) -> Result<LearnConfig> {
        let gradient_mode = match self.str("learn.gradient").to_ascii_lowercase().as_str() {
            "fd" | "finite-difference" => GradientMode::FiniteDifference,
            "analytic" => GradientMode::Analytic,
            other => {
                return Err(Error::Argument(format!(
                    "learn.gradient must be fd or analytic, got '{other}'"
                )))
            }
        };
        let cfg = LearnConfig {
            k: self.usize("gmm.k")?,
            l: self.usize("clf.l")?,
            max_outer_iter: self.usize("learn.max_iter")?,
            j_threshold: self.f64("learn.j_threshold")?,
            gradient_mode,
            fd_step: self.f64("learn.fd_step")?,
            origin_weight: self.f64("learn.origin_weight")?,
            clf_floor: None,
            term_ridge: self.f64("learn.term_ridge")?,
            coupling_ridge: self.f64("learn.coupling_ridge")?,
            restarts: self.usize("learn.restarts")?,
            em_max_iter: self.usize("learn.em_max_iter")?,
            em_tol: self.f64("learn.em_tol")?,
            seed: self.u64("learn.seed")?,
            lbfgs_memory: 10,
            max_line_search: 40,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.map.iter()
    }

    /// Writes the resolved configuration, sorted by key.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in &self.map {
            writeln!(out, "{k} = {v}")?;
        }
        Ok(())
    }
}
