//! Run configuration: a TOML document with every default materialized.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use torus_mfe::ansatz::{check_resolution, default_lambda};
use torus_mfe::geometry::{GridSpec, TorusLattice};
use torus_mfe::greens::{BlowupPair, HalfPeriod};
use torus_mfe::solver::SolverOptions;
use torus_mfe::{MfeError, Result};

/// `eps = 0.1` or `eps = [0.2, 0.1, 0.05]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    One(f64),
    Many(Vec<f64>),
}

impl EpsSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EpsSpec::One(e) => vec![*e],
            EpsSpec::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub asymptotics: bool,
    pub uniqueness: bool,
    pub halftorus: bool,
    /// Run the uniqueness experiment for all three half-period pairs.
    pub uniqueness_all_pairs: bool,
    pub perturbations: usize,
    pub perturbation_amplitude: f64,
    /// Mass-concentration tolerance (relative).
    pub concentration_tol: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            asymptotics: true,
            uniqueness: false,
            halftorus: false,
            uniqueness_all_pairs: false,
            perturbations: 5,
            perturbation_amplitude: 0.3,
            concentration_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Periods as `[re, im]`; rescaled to unit area.
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
    pub pair: String,
    pub n: usize,
    pub eps: EpsSpec,
    /// Ball radius as a fraction of `d(p1,p2)`.
    pub delta_fraction: f64,
    pub seed: u64,
    pub output: String,
    /// Worker threads; 0 means `MFE_JOBS` or all cores.
    pub jobs: usize,
    pub solver: SolverOptions,
    pub checks: Checks,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            omega1: [1.0, 0.0],
            omega2: [0.0, 1.0],
            pair: "diag".into(),
            n: 512,
            eps: EpsSpec::One(0.1),
            delta_fraction: 0.25,
            seed: 2024,
            output: "out".into(),
            jobs: 0,
            solver: SolverOptions::default(),
            checks: Checks::default(),
        }
    }
}

impl RunConfig {
    pub fn lattice(&self) -> Result<TorusLattice> {
        TorusLattice::new(Complex64::new(self.omega1[0], self.omega1[1]), Complex64::new(self.omega2[0], self.omega2[1]))
    }

    pub fn half_period(&self) -> Result<HalfPeriod> {
        HalfPeriod::parse(&self.pair)
            .ok_or_else(|| MfeError::Config(format!("pair = {:?}: expected one of w1half, w2half, diag", self.pair)))
    }

    pub fn blowup_pair(&self) -> Result<BlowupPair> {
        Ok(BlowupPair::new(self.lattice()?, self.half_period()?))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n).map_err(|e| MfeError::Config(format!("n = {}: {e}", self.n)))
    }

    /// `ε` values sorted decreasing, as the continuation needs them.
    pub fn eps_values(&self) -> Vec<f64> {
        let mut v = self.eps.values();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        v
    }

    /// Structural checks; resolution is reported separately by [`RunConfig::check_resolution`].
    pub fn validate(&self) -> Result<()> {
        self.lattice()?;
        self.half_period()?;
        if self.n % 2 != 0 {
            return Err(MfeError::Config(format!("n = {}: the grid size must be even", self.n)));
        }
        self.grid()?;
        let eps = self.eps.values();
        if eps.is_empty() {
            return Err(MfeError::Config("eps: at least one value required".into()));
        }
        for &e in &eps {
            default_lambda(e).map_err(|err| MfeError::Config(format!("eps = {e}: {err}")))?;
        }
        if !(self.delta_fraction > 0.0 && self.delta_fraction < 0.5) {
            return Err(MfeError::Config(format!("delta_fraction = {}: must lie in (0, 0.5)", self.delta_fraction)));
        }
        self.solver.validate().map_err(|e| MfeError::Config(format!("solver: {e}")))?;
        let c = &self.checks;
        if !(c.perturbation_amplitude > 0.0 && c.perturbation_amplitude <= 0.3) {
            return Err(MfeError::Config(format!("checks.perturbation_amplitude = {}: must lie in (0, 0.3]", c.perturbation_amplitude)));
        }
        if !(c.concentration_tol > 0.0) {
            return Err(MfeError::Config("checks.concentration_tol: must be positive".into()));
        }
        Ok(())
    }

    /// Every `ε` must have its bubble core resolved at `n`.
    pub fn check_resolution(&self) -> Result<()> {
        let lattice = self.lattice()?;
        for e in self.eps.values() {
            check_resolution(&lattice, self.n, default_lambda(e)?)?;
        }
        Ok(())
    }

    /// Canonical TOML echo with all defaults.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the echo, ignoring the output location and thread count
    /// (neither changes any result).
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: String::new(), jobs: 0, ..self.clone() };
        format!("{:x}", Sha256::digest(canonical.echo().as_bytes()))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| MfeError::Config(e.message().to_string() + &location(&e)))?;
    cfg.validate()?;
    Ok(cfg)
}

fn location(e: &toml::de::Error) -> String {
    e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default()
}
