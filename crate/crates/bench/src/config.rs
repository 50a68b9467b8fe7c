use std::path::{Path, PathBuf};

use decouple_hmm::estimators::PipelineOptions;
use decouple_hmm::mixture::MixtureConfig;
use decouple_hmm::model::builtin;
use decouple_hmm::{HmmSpec, OutputModel};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// Where the generating model comes from: `"toy"`, `"toy-discrete"`,
/// `"two-state"` or a path to a model file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpecSource(pub String);

impl Default for SpecSource {
    fn default() -> Self {
        SpecSource("toy".into())
    }
}

impl SpecSource {
    /// Resolves relative paths against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<HmmSpec> {
        match self.0.as_str() {
            "toy" => Ok(builtin::toy_gaussian()),
            "toy-discrete" => Ok(builtin::toy_discrete()),
            "two-state" => Ok(builtin::two_state_discrete()),
            path => {
                let p = Path::new(path);
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    BenchError::InvalidConfig(format!("cannot read model {}: {e}", full.display()))
                })?;
                HmmSpec::from_json(&text).map_err(|e| {
                    BenchError::InvalidConfig(format!("bad model {}: {e}", full.display()))
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Parameter-space perturbation sizes; include 0 for the unperturbed baseline.
    pub epsilons: Vec<f64>,
    #[serde(rename = "T")]
    pub t: u64,
    pub seeds: u64,
    pub seed_offset: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            t: 100_000,
            seeds: 20,
            seed_offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SpecSource,
    /// Method ids from 1 to 7.
    pub methods: Vec<u8>,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<u64>,
    /// Number of seeds; run seeds are `seed_offset .. seed_offset + seeds`.
    pub seeds: u64,
    pub seed_offset: u64,
    pub bw_iterations: usize,
    pub output_dir: PathBuf,
    pub estimator: PipelineOptions,
    pub mixture: MixtureConfig,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
    /// Also run method 2 on exact population moments.
    pub population: bool,
    pub stability: Option<StabilityConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SpecSource::default(),
            methods: (1..=7).collect(),
            t_grid: vec![1_000, 10_000, 100_000, 1_000_000],
            seeds: 20,
            seed_offset: 0,
            bw_iterations: 20,
            output_dir: PathBuf::from("results"),
            estimator: PipelineOptions::default(),
            mixture: MixtureConfig::default(),
            workers: None,
            population: false,
            stability: None,
        }
    }
}

/// Methods that fit the output mixture by EM first.
pub fn uses_em(method: u8) -> bool {
    matches!(method, 3 | 5 | 7)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config; relative `output_dir` and model paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<(Self, HmmSpec)> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BenchError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(b) = base {
            if cfg.output_dir.is_relative() {
                cfg.output_dir = b.join(&cfg.output_dir);
            }
        }
        let spec = cfg.spec.load(base)?;
        cfg.validate(&spec)?;
        Ok((cfg, spec))
    }

    pub fn validate(&self, spec: &HmmSpec) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if let Some(m) = self.methods.iter().find(|m| !(1..=7).contains(*m)) {
            return bad(format!("method id {m} is outside 1..=7"));
        }
        if self.t_grid.is_empty() {
            return bad("empty T grid".into());
        }
        if let Some(t) = self.t_grid.iter().find(|&&t| t < 100) {
            return bad(format!("T = {t} is below the minimum of 100"));
        }
        if self.seeds == 0 {
            return bad("at least one seed is required".into());
        }
        if self.bw_iterations == 0 && self.methods.iter().any(|m| [1, 4, 5, 6, 7].contains(m)) {
            return bad("Baum-Welch methods need bw_iterations >= 1".into());
        }
        if matches!(spec.outputs, OutputModel::Discrete(_)) {
            if let Some(m) = self.methods.iter().find(|m| uses_em(**m)) {
                return bad(format!(
                    "method {m} fits a Gaussian mixture and needs Gaussian outputs"
                ));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(s) = &self.stability {
            if !matches!(spec.outputs, OutputModel::Gaussian(_)) {
                return bad("the stability sweep needs Gaussian outputs".into());
            }
            if s.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return bad("stability epsilons must be finite and nonnegative".into());
            }
            if s.t < 100 || s.seeds == 0 {
                return bad("stability sweep needs T >= 100 and at least one seed".into());
            }
        }
        Ok(())
    }
}
