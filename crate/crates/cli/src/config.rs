//! Run configuration: one TOML file, one section per module. Physical
//! constants have no defaults; declared certificates are checked before a run.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sscl_core::catalog::{self, FluxChoice, FluxKind, NoiseChoice, NoiseKind};
use sscl_core::experiments::{certificate_range, model_conditions};
use sscl_core::flux::{FluxError, FluxModel, GrowthCertificate};
use sscl_core::geometry::{build_manifold, GeometryError, Manifold, ManifoldKind, ManifoldSpec};
use sscl_core::kinetic::{KineticSpec, TestFunction};
use sscl_core::noise::{NoiseError, NoiseModel};
use sscl_core::solver::{FluxScheme, InitialData, Problem, SimConfig, SolverError, TimeStep};

/// Largest seed a TOML integer can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// ξ samples per certificate check.
pub const CERTIFICATE_SAMPLES: usize = 161;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("config: {0}")]
    Certificate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn invalid(key: &'static str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid { key, msg: msg.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub kind: ManifoldKind,
    /// Cells per axis: one entry for the circle, two for the tori.
    pub cells: Vec<usize>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    pub model: FluxKind,
    /// Linearization threshold of the profile.
    pub l: f64,
    pub amplitude: f64,
    /// Declared growth constants.
    pub c0: f64,
    pub r: f64,
    pub c1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub model: NoiseKind,
    pub modes: usize,
    pub amplitude: f64,
    pub clip: f64,
    /// Additive amplitude of the mixed family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additive: Option<f64>,
    pub d1: f64,
    pub d2: f64,
}

fn default_lp() -> Vec<f64> {
    vec![2.0]
}

fn default_scheme() -> FluxScheme {
    FluxScheme::Rusanov
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps: f64,
    pub t_final: f64,
    pub paths: usize,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_lp")]
    pub lp: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: FluxScheme,
    pub time_step: TimeStep,
    pub initial: InitialData,
}

/// Suite parameters; each suite names the keys it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinetic_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_initial: Option<InitialData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_initial: Option<InitialData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<TestFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of the noise, at most [`MAX_SEED`].
    pub seed: u64,
    pub output: PathBuf,
    pub manifold: ManifoldSection,
    pub flux: FluxSection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinetic: Option<KineticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// SHA-256 of the canonical serialization, without the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn experiment(&self) -> ExperimentSection {
        self.experiment.clone().unwrap_or_default()
    }

    pub fn manifold(&self) -> Result<Manifold, ConfigError> {
        let s = &self.manifold;
        if !s.beta.is_finite() || s.beta.abs() >= 1.0 {
            return Err(invalid("[manifold].beta", format!("|beta| must be < 1, got {}", s.beta)));
        }
        let want = s.kind.dim();
        if s.cells.len() != want {
            return Err(invalid("[manifold].cells", format!("expected {want} entries, got {}", s.cells.len())));
        }
        let mut cells = [1usize; 2];
        cells[..want].copy_from_slice(&s.cells);
        Ok(build_manifold(&ManifoldSpec { kind: s.kind, cells, beta: s.beta })?)
    }

    /// The named flux carrying the declared certificate.
    pub fn flux(&self, m: &Manifold) -> Result<FluxModel, ConfigError> {
        let f = &self.flux;
        for (key, v) in [("[flux].l", f.l), ("[flux].c0", f.c0), ("[flux].r", f.r), ("[flux].c1", f.c1)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be positive and finite, got {v}")));
            }
        }
        if !f.amplitude.is_finite() {
            return Err(invalid("[flux].amplitude", "must be finite"));
        }
        let mut fm = catalog::build_flux(m, &FluxChoice { model: f.model, l: f.l, amplitude: f.amplitude })?;
        fm.certificate = GrowthCertificate { c0: f.c0, r: f.r, l: f.l, c1: f.c1 };
        Ok(fm)
    }

    pub fn noise(&self, m: &Manifold) -> Result<NoiseModel, ConfigError> {
        let n = &self.noise;
        if n.model == NoiseKind::Mixed && n.additive.is_none() {
            return Err(invalid("[noise].additive", "required by the mixed family"));
        }
        for (key, v) in [("[noise].d1", n.d1), ("[noise].d2", n.d2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("must be non-negative and finite, got {v}")));
            }
        }
        let choice = NoiseChoice {
            model: n.model,
            modes: n.modes,
            amplitude: n.amplitude,
            clip: n.clip,
            additive: n.additive.unwrap_or(0.0),
        };
        let modes = catalog::noise_modes(m, &choice)?;
        Ok(NoiseModel::new(m, modes, n.d1, n.d2, self.seed)?)
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.solver;
        let mut c = SimConfig::new(s.eps, s.t_final, s.time_step, s.initial.clone());
        c.paths = s.paths;
        c.snapshot_every = s.snapshot_every;
        c.lp = s.lp.clone();
        c.scheme = s.scheme;
        c.kinetic = self.kinetic;
        c
    }

    /// Half-width of the ξ-window used by the certificate checks.
    pub fn certificate_range(&self) -> f64 {
        certificate_range(self.flux.l, if self.noise.clip > 0.0 { self.noise.clip } else { 0.0 })
    }

    /// Builds the problem. With `certify`, the declared flux and noise
    /// constants must pass their checks first.
    pub fn problem(&self, certify: bool) -> Result<Problem, ConfigError> {
        let m = self.manifold()?;
        let flux = self.flux(&m)?;
        let noise = self.noise(&m)?;
        if certify {
            let rep = model_conditions(&m, &flux, &noise, self.certificate_range(), CERTIFICATE_SAMPLES);
            let failed: Vec<String> = rep
                .checks
                .iter()
                .filter(|c| !c.passed && c.name != "flux/compatibility")
                .map(|c| c.name.clone())
                .chain(rep.notes.iter().cloned())
                .collect();
            if !failed.is_empty() {
                return Err(ConfigError::Certificate(format!(
                    "declared constants fail verification: {}",
                    failed.join("; ")
                )));
            }
        }
        Ok(Problem::new(m, flux, noise, self.sim_config())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 7
output = "out"

[manifold]
kind = "circle"
cells = [64]
beta = 0.0

[flux]
model = "burgers"
l = 4.0
amplitude = 1.0
c0 = 10.0
r = 2.0
c1 = 10.0

[noise]
model = "multiplicative"
modes = 1
amplitude = 0.3
clip = 4.0
d1 = 0.09
d2 = 0.09

[solver]
eps = 0.01
t_final = 0.05
paths = 2
time_step = { kind = "cfl", theta = 0.5 }
initial = { kind = "harmonic", offset = 0.0, amplitude = 1.0, k = [1, 0], phase = 0.0 }
"#;

    #[test]
    fn minimal_config_builds_a_certified_problem() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.solver.lp, vec![2.0]);
        assert_eq!(c.solver.scheme, FluxScheme::Rusanov);
        let p = c.problem(true).unwrap();
        assert_eq!(p.noise.seed, 7);
        assert_eq!(p.flux.certificate.c0, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let s = MINIMAL.replace("beta = 0.0", "beta = 0.0\ncolour = 1");
        let e = RunConfig::from_toml_str(&s).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn physical_constants_have_no_defaults() {
        let s = MINIMAL.replace("d1 = 0.09\n", "");
        let e = RunConfig::from_toml_str(&s).unwrap_err();
        assert!(e.to_string().contains("d1"), "{e}");
    }

    #[test]
    fn degenerate_warp_names_the_key() {
        let s = MINIMAL.replace("beta = 0.0", "beta = 1.2");
        let e = RunConfig::from_toml_str(&s).unwrap().problem(true).unwrap_err();
        assert!(e.to_string().contains("[manifold].beta"), "{e}");
    }

    #[test]
    fn under_declared_constants_fail_before_the_run() {
        let s = MINIMAL.replace("d1 = 0.09", "d1 = 0.01");
        let e = RunConfig::from_toml_str(&s).unwrap().problem(true).unwrap_err();
        assert!(matches!(e, ConfigError::Certificate(_)), "{e}");
        let s = MINIMAL.replace("c1 = 10.0", "c1 = 0.5");
        let e = RunConfig::from_toml_str(&s).unwrap().problem(true).unwrap_err();
        assert!(matches!(e, ConfigError::Certificate(_)), "{e}");
    }

    #[test]
    fn hash_tracks_semantic_content() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let b = RunConfig::from_toml_str(&MINIMAL.replace("cells = [64]", "cells   =   [ 64 ]")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn cell_count_must_match_dimension() {
        let s = MINIMAL.replace("cells = [64]", "cells = [64, 64]");
        let e = RunConfig::from_toml_str(&s).unwrap().problem(false).unwrap_err();
        assert!(e.to_string().contains("[manifold].cells"), "{e}");
    }
}
