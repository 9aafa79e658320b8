//! Run configuration: a flat TOML file with nested sections, overridable by
//! command-line flags, echoed verbatim into the experiment manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelSpec;
use crate::solver::SolverOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub n: u32,
    /// Integer direction; ignored when `omega_real` is set.
    pub omega: Vec<i64>,
    /// Real direction for rational-approximation runs.
    pub omega_real: Option<Vec<f64>>,
    /// Period multipliers along the transverse sublattice basis.
    pub m: Vec<u64>,
    /// Strip bounds [A, B] in `omega . x` units.
    pub strip_lo: f64,
    pub strip_hi: f64,
    /// Euclidean margin kept beyond the strip; defaults to the kernel cutoff.
    pub margin: Option<f64>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 16,
            omega: vec![1, 0],
            omega_real: None,
            m: vec![1],
            strip_lo: 0.0,
            strip_hi: 20.0,
            margin: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out: PathBuf,
    /// 0 = library default thread count.
    pub threads: usize,
    /// Direction list for sweep runs.
    pub directions: Vec<Vec<i64>>,
    /// Fractional exponents for scaling runs.
    pub s_values: Vec<f64>,
    /// Ball radii for scaling runs.
    pub radii: Vec<f64>,
    /// Kernel cutoff used when evaluating ball energies.
    pub scaling_truncation: f64,
    /// Levels checked by the translation-ordering report.
    pub levels: Vec<f64>,
    /// Strip enlargements tested by the unconstrained check.
    pub enlargements: Vec<f64>,
    /// Number of rational approximants for irrational runs.
    pub approximants: usize,
    /// Euclidean strip width per unit direction norm in irrational runs.
    pub irrational_width: f64,
    /// Half-size of the comparison window around the origin.
    pub window: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/out"),
            threads: 0,
            directions: vec![vec![1, 0], vec![1, 1], vec![2, 1], vec![3, 2]],
            s_values: vec![0.25, 0.5, 0.75],
            radii: (3..=12).map(|r| r as f64).collect(),
            scaling_truncation: 22.0,
            levels: vec![-0.9, -0.5, 0.0, 0.5, 0.9],
            enlargements: vec![1.0, 2.0],
            approximants: 4,
            irrational_width: 12.0,
            window: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub lattice: LatticeConfig,
    pub solver: SolverOptions,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }

    /// Effective Euclidean margin.
    pub fn margin(&self) -> f64 {
        self.lattice
            .margin
            .unwrap_or(self.model.kernel.truncation_radius)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(m.kernel.s > 0.0 && m.kernel.s < 1.0) {
            return Err(invalid("model.s", "must lie in (0, 1)"));
        }
        if !(m.kernel.lambda > 0.0 && m.kernel.lambda <= m.kernel.lambda_cap) {
            return Err(invalid("model.lambda", "need 0 < lambda <= lambda_cap"));
        }
        if !(m.kernel.truncation_radius >= 1.0) {
            return Err(invalid("model.truncation_radius", "must be >= 1"));
        }
        if !(m.potential.delta0 > 0.0 && m.potential.delta0 < 0.1) {
            return Err(invalid("model.delta0", "must lie in (0, 1/10)"));
        }
        if !(0.0..1.0).contains(&m.potential.eps_w) {
            return Err(invalid("model.eps_w", "must lie in [0, 1)"));
        }
        if !(m.meso.eta >= 0.0) {
            return Err(invalid("model.eta", "must be >= 0"));
        }
        let l = &self.lattice;
        if !(1..=3).contains(&l.dim) {
            return Err(invalid("lattice.dim", "supported dimensions are 1, 2, 3"));
        }
        if l.n < 1 {
            return Err(invalid("lattice.n", "need at least one node per unit length"));
        }
        if l.omega.len() != l.dim || l.omega.iter().all(|&x| x == 0) {
            return Err(invalid(
                "lattice.omega",
                format!("need a nonzero integer vector of length {}", l.dim),
            ));
        }
        if let Some(real) = &l.omega_real {
            if real.len() != l.dim || real.iter().all(|&x| x == 0.0) {
                return Err(invalid(
                    "lattice.omega_real",
                    format!("need a nonzero vector of length {}", l.dim),
                ));
            }
        }
        if l.m.len() != l.dim - 1 || l.m.iter().any(|&x| x < 1) {
            return Err(invalid(
                "lattice.m",
                format!("need {} positive multipliers", l.dim - 1),
            ));
        }
        if !(l.strip_lo < l.strip_hi) {
            return Err(invalid("lattice.strip_lo", "strip bounds must satisfy A < B"));
        }
        if let Some(margin) = l.margin {
            if margin < m.kernel.truncation_radius {
                return Err(invalid(
                    "lattice.margin",
                    "must be at least the kernel truncation radius",
                ));
            }
        }
        let s = &self.solver;
        if !(s.grad_tol > 0.0) {
            return Err(invalid("solver.grad_tol", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be positive"));
        }
        if !(s.armijo_c1 > 0.0 && s.armijo_c1 < 0.5) {
            return Err(invalid("solver.armijo_c1", "must lie in (0, 1/2)"));
        }
        let r = &self.run;
        for sv in &r.s_values {
            if !(*sv > 0.0 && *sv < 1.0) {
                return Err(invalid("run.s_values", "exponents must lie in (0, 1)"));
            }
        }
        if r.radii.len() < 2 {
            return Err(invalid("run.radii", "need at least two radii"));
        }
        if r.radii.iter().any(|&x| x < 3.0) {
            return Err(invalid("run.radii", "scaling radii must be >= 3"));
        }
        if r.scaling_truncation < 1.0 {
            return Err(invalid("run.scaling_truncation", "must be >= 1"));
        }
        if r.directions.is_empty()
            || r.directions
                .iter()
                .any(|d| d.len() != l.dim || d.iter().all(|&x| x == 0))
        {
            return Err(invalid(
                "run.directions",
                format!("each direction must be a nonzero vector of length {}", l.dim),
            ));
        }
        if r.approximants < 2 {
            return Err(invalid("run.approximants", "need at least two approximants"));
        }
        if !(r.window > 0.0) {
            return Err(invalid("run.window", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.lattice.n, cfg.lattice.n);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            [model]
            s = 0.25
            eta = 0.0

            [lattice]
            n = 8
            "#,
        );
        // `eta` lives under model.meso in the struct; the flat key must fail
        assert!(cfg.is_err());
        let cfg = RunConfig::from_toml(
            r#"
            [model.kernel]
            s = 0.25

            [model.meso]
            eta = 0.0

            [lattice]
            n = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.model.kernel.s, 0.25);
        assert_eq!(cfg.model.meso.eta, 0.0);
        assert_eq!(cfg.lattice.n, 8);
        assert_eq!(cfg.lattice.dim, 2);
    }

    #[test]
    fn validation_names_offending_key() {
        let mut cfg = RunConfig::default();
        cfg.model.kernel.s = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("model.s"), "{err}");
        let mut cfg = RunConfig::default();
        cfg.lattice.omega = vec![0, 0];
        assert!(cfg.validate().unwrap_err().to_string().contains("lattice.omega"));
        let mut cfg = RunConfig::default();
        cfg.lattice.margin = Some(1.0);
        assert!(cfg.validate().unwrap_err().to_string().contains("lattice.margin"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[lattice]\nnn = 3\n").unwrap_err();
        assert!(err.to_string().contains("nn"));
    }
}
