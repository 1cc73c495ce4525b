//! Line-based `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse {value:?} ({reason})")]
    Value { key: String, value: String, reason: String },
    #[error("key `{key}` must be {requirement}, got {value}")]
    Range { key: String, value: String, requirement: &'static str },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

/// Every recognized key, with a short description for `--help` and the README.
pub const KEYS: &[(&str, &str)] = &[
    ("geometry", "sphere | torus | file"),
    ("dim", "manifold dimension for generated meshes (2 or 3)"),
    ("level", "sphere refinement level"),
    ("n_per_axis", "torus cells per axis"),
    ("side", "torus side length"),
    ("mesh", "mesh file path when geometry = file"),
    ("k", "eigenvalue index"),
    ("cap", "upper bound on the density"),
    ("seed", "seed for solver start vectors and perturbations"),
    ("max_iterations", "ascent iteration budget"),
    ("tol_cert", "bang-bang certificate threshold (mass fraction)"),
    ("tol_s", "relative exemption band below the maximum of the hull combination"),
    ("cluster_tol", "relative gap grouping eigenvalues inside the optimizer"),
    ("defect_threshold", "sup-norm defect above which a map is flagged non-spherical"),
    ("eigen_tol", "relative residual target of the eigensolver"),
    ("initial_step", "first relative ascent step"),
    ("init", "uniform | perturbed"),
    ("perturbation", "amplitude of the smooth initial perturbation"),
    ("density", "uniform | polar_bump | file"),
    ("density_file", "per-cell density CSV when density = file"),
    ("bump_height", "relative height of the polar bump"),
    ("bump_width", "angular width (radians) of the polar bump"),
    ("count", "highest eigenvalue index reported by `spectrum`"),
    ("m_min", "oracle: smallest sphere dimension"),
    ("m_max", "oracle and index-verify: largest sphere dimension"),
    ("k_min", "oracle: smallest singular-sphere dimension"),
    ("k_max", "oracle: largest singular-sphere dimension"),
    ("m_limit", "index-verify: largest accepted m_max"),
    ("nodes", "index-verify: interior nodes of the graded grid"),
    ("analytic_offset", "index-verify: added to analytic counts (harness self-test)"),
    ("export_matrices", "spectrum: also write stiffness.coo and mass.coo"),
    ("export_mesh", "spectrum: also write mesh.txt"),
    ("out_dir", "output directory (overridden by EIGENMEASURE_OUT_DIR)"),
    ("threads", "worker threads (at least 1); results do not depend on it"),
];

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "EIGENMEASURE_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            check_known(key)?;
            if cfg.entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: key.to_string() });
            }
        }
        Ok(cfg)
    }

    /// Sets or replaces a key, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        check_known(key)?;
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: pair.to_string() })?;
        self.set(k.trim(), v)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or(ConfigError::Missing(key))
    }

    /// Positive finite real with a default.
    pub fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.get_or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::Range { key: key.to_string(), value: v.to_string(), requirement: "positive and finite" });
        }
        Ok(v)
    }

    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        self.get_or(key, false)
    }

    pub fn out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.raw("out_dir").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Validates `threads`. The numerics run sequentially, so any count
    /// yields identical output.
    pub fn threads(&self) -> Result<usize, ConfigError> {
        let t: usize = self.get_or("threads", 1)?;
        if t == 0 {
            return Err(ConfigError::Range { key: "threads".into(), value: t.to_string(), requirement: "at least 1" });
        }
        Ok(t)
    }
}

fn check_known(key: &str) -> Result<(), ConfigError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey(key.to_string()))
    }
}
