use std::path::Path;

use num_complex::Complex64;
use rg_tori::forcing::{ForcingModel, ForcingTerm};
use rg_tori::frequency::FrequencyVector;
use rg_tori::problem::Truncation;
use rg_tori::{models, Mode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Expand,
    Solve,
    Verify,
    Bryuno,
    Trees,
    Selfenergy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub frequency: FrequencySection,
    pub model: ModelSection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Fixed `beta0`; when absent `expand` and `selfenergy` use the locked point.
    pub beta0: Option<Vec<f64>>,
    /// Couplings for the residual-vs-eps table.
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    /// Scales and sample count for `selfenergy`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_mode() -> RunMode {
    RunMode::Verify
}
fn default_eps() -> f64 {
    1e-3
}
fn default_eps_grid() -> Vec<f64> {
    vec![1e-3, 2e-3, 5e-3, 1e-2]
}
fn default_workers() -> usize {
    1
}
fn default_samples() -> usize {
    24
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            eps: default_eps(),
            beta0: None,
            eps_grid: default_eps_grid(),
            workers: default_workers(),
            seed: 0,
            strict: false,
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    /// Explicit components; the golden-mean vector when absent.
    pub omega: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of the built-in models.
    pub preset: Option<String>,
    pub d: Option<usize>,
    pub r: Option<usize>,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

/// A Fourier term `c e^{i (nu.alpha + mu.beta)}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub nu: Vec<i32>,
    pub mu: Vec<i32>,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    #[serde(default = "default_order")]
    pub max_order: usize,
    #[serde(default = "default_p_max")]
    pub p_max: i32,
    #[serde(default = "default_m_max")]
    pub m_max: u32,
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    #[serde(default)]
    pub mode_radius: u32,
}

fn default_order() -> usize {
    4
}
fn default_p_max() -> i32 {
    2
}
fn default_m_max() -> u32 {
    10
}
fn default_max_count() -> usize {
    2_000_000
}

impl Default for TruncationSection {
    fn default() -> Self {
        Self {
            max_order: default_order(),
            p_max: default_p_max(),
            m_max: default_m_max(),
            max_count: default_max_count(),
            mode_radius: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default)]
    pub auxiliary: bool,
}

fn default_grid() -> usize {
    16
}
fn default_max_newton() -> usize {
    40
}

impl Default for SolveSection {
    fn default() -> Self {
        Self { grid: default_grid(), max_newton: default_max_newton(), auxiliary: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_galerkin_radius")]
    pub galerkin_radius: u32,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
    #[serde(default = "default_agreement")]
    pub agreement_tol: f64,
    #[serde(default = "default_ode_bound")]
    pub ode_bound: f64,
    /// Base point of the residual and Lindstedt slope fits; `0.7 + 0.6 j` per component when absent.
    pub slope_beta0: Option<Vec<f64>>,
}

fn default_galerkin_radius() -> u32 {
    8
}
fn default_newton_tol() -> f64 {
    1e-15
}
fn default_horizon() -> f64 {
    1e3
}
fn default_ode_tol() -> f64 {
    1e-12
}
fn default_agreement() -> f64 {
    1e-8
}
fn default_ode_bound() -> f64 {
    1e-6
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            galerkin_radius: default_galerkin_radius(),
            newton_tol: default_newton_tol(),
            horizon: default_horizon(),
            ode_tol: default_ode_tol(),
            agreement_tol: default_agreement(),
            ode_bound: default_ode_bound(),
            slope_beta0: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.run.eps.is_finite() && self.run.eps >= 0.0) {
            return bad(format!("eps must be finite and non-negative, got {}", self.run.eps));
        }
        if self.run.eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("eps_grid entries must be positive".into());
        }
        if self.truncation.max_order == 0 {
            return bad("max_order must be at least 1".into());
        }
        if self.truncation.p_max < 0 {
            return bad("p_max must be non-negative".into());
        }
        if self.solve.grid == 0 {
            return bad("solve.grid must be positive".into());
        }
        if self.run.workers == 0 {
            return bad("workers must be positive".into());
        }
        match (&self.model.preset, self.model.terms.is_empty()) {
            (Some(_), false) => return bad("model: give either a preset or explicit terms".into()),
            (None, true) => return bad("model: no preset and no terms".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn omega(&self) -> Result<FrequencyVector, rg_tori::Error> {
        match &self.frequency.omega {
            Some(v) => FrequencyVector::new(v.clone()),
            None => Ok(models::golden()),
        }
    }

    pub fn model(&self) -> Result<ForcingModel, ConfigError> {
        if let Some(name) = &self.model.preset {
            return preset(name).ok_or_else(|| ConfigError::Invalid(format!("unknown model preset {name:?}")));
        }
        let (Some(d), Some(r)) = (self.model.d, self.model.r) else {
            return Err(ConfigError::Invalid("model: explicit terms need d and r".into()));
        };
        let mut terms = Vec::with_capacity(self.model.terms.len());
        for t in &self.model.terms {
            if t.nu.len() != d || t.mu.len() != r {
                return Err(ConfigError::Invalid(format!("term {:?} {:?} does not match d = {d}, r = {r}", t.nu, t.mu)));
            }
            terms.push(ForcingTerm { nu: Mode::new(&t.nu), mu: Mode::new(&t.mu), coeff: Complex64::new(t.re, t.im) });
        }
        ForcingModel::validated(d, r, terms).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn truncation(&self) -> Truncation {
        let t = &self.truncation;
        Truncation {
            max_order: t.max_order,
            p_max: t.p_max,
            m_max: t.m_max,
            max_count: t.max_count,
            mode_radius: t.mode_radius,
        }
    }
}

pub fn preset(name: &str) -> Option<ForcingModel> {
    Some(match name {
        "cosine_rotator" => models::cosine_rotator(),
        "single_mode" => models::single_mode(),
        "two_mode_benchmark" => models::two_mode_benchmark(),
        "two_mode_generic" => models::two_mode_generic(),
        "multiscale" => models::multiscale(0.05),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset() {
        let cfg = Config::parse("[model]\npreset = \"single_mode\"\n").unwrap();
        assert_eq!(cfg.run.mode, RunMode::Verify);
        assert_eq!(cfg.truncation.max_order, 4);
        assert_eq!(cfg.model().unwrap().r(), 1);
    }

    #[test]
    fn explicit_terms() {
        let text = r#"
[run]
mode = "expand"
beta0 = [0.5]

[model]
d = 2
r = 1
terms = [
  { nu = [1, 0], mu = [1], re = 0.25 },
  { nu = [-1, 0], mu = [1], re = 0.25 },
  { nu = [1, 0], mu = [-1], re = 0.25 },
  { nu = [-1, 0], mu = [-1], re = 0.25 },
]
"#;
        let cfg = Config::parse(text).unwrap();
        let m = cfg.model().unwrap();
        assert_eq!(m.terms().len(), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("[model]\n").is_err());
        assert!(Config::parse("[model]\npreset = \"single_mode\"\n[run]\neps = -1.0\n").is_err());
        assert!(Config::parse("[model]\npreset = \"single_mode\"\n[run]\nbogus = 1\n").is_err());
        let odd = "[model]\nd = 2\nr = 1\nterms = [{ nu = [1, 0], mu = [1], re = 1.0 }]\n";
        assert!(Config::parse(odd).unwrap().model().is_err());
        let unknown = Config::parse("[model]\npreset = \"nope\"\n").unwrap();
        assert!(unknown.model().is_err());
    }
}
