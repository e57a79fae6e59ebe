use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use greenbrown::presets::{builtin, MarketConfig, ScenarioPreset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const QUICK_SAMPLES: usize = 10_000;

fn sensitivity_names() -> Vec<String> {
    (1..=4).map(|i| format!("scenario{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSection {
    pub scenarios: Vec<String>,
    pub shapes: Vec<f64>,
    pub grid_points: usize,
}

impl Default for LimitSection {
    fn default() -> Self {
        Self {
            scenarios: sensitivity_names(),
            shapes: vec![-0.8, 0.0, 0.8],
            grid_points: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarSection {
    pub scenarios: Vec<String>,
    pub shapes: Vec<f64>,
    pub levels: Vec<f64>,
    pub pd_green_min: f64,
    pub pd_green_max: f64,
    pub pd_green_steps: usize,
    pub budget_scenarios: Vec<String>,
    pub budget_shapes: Vec<f64>,
    pub budget_level: f64,
    pub budget_steps: usize,
}

impl Default for VarSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["scenario1".into(), "scenario2".into()],
            shapes: vec![-0.8, 0.8],
            levels: vec![0.99, 0.995, 0.999],
            pd_green_min: 0.005,
            pd_green_max: 0.05,
            pd_green_steps: 46,
            budget_scenarios: sensitivity_names(),
            budget_shapes: vec![-0.8, 0.0, 0.8],
            budget_level: 0.999,
            budget_steps: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSection {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub steps: usize,
    /// Markets to sweep; the built-in list when empty.
    pub markets: Vec<MarketConfig>,
}

impl Default for AlphaSection {
    fn default() -> Self {
        Self {
            alpha_min: -3.0,
            alpha_max: 3.0,
            steps: 61,
            markets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub scenarios: Vec<String>,
    pub decays: Vec<f64>,
    pub sizes: Vec<usize>,
    pub levels: Vec<f64>,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["convergence1".into(), "convergence2".into()],
            decays: vec![0.0, 0.6],
            sizes: vec![500, 1000, 2000, 3000, 4000, 5000],
            levels: vec![0.99, 0.995, 0.999],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: String,
    pub obligors: usize,
    pub decay: f64,
    pub shift: f64,
    pub levels: Vec<f64>,
    pub raw: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            scenario: "convergence1".into(),
            obligors: 5000,
            decay: 0.0,
            shift: 0.0,
            levels: vec![0.99, 0.995, 0.999],
            raw: false,
        }
    }
}

/// Experiment configuration as read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub chunk_size: Option<usize>,
    pub out: Option<PathBuf>,
    pub limit: LimitSection,
    pub var: VarSection,
    pub alpha_sens: AlphaSection,
    pub converge: ConvergeSection,
    pub simulate: SimulateSection,
    /// Extra scenarios; these shadow presets of the same name.
    pub scenarios: BTreeMap<String, ScenarioPreset>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        for (name, s) in &cfg.scenarios {
            s.green
                .validate()
                .and(s.brown.validate())
                .map_err(|e| UsageError(format!("scenario {name}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn scenario(&self, name: &str) -> anyhow::Result<ScenarioPreset> {
        if let Some(s) = self.scenarios.get(name) {
            return Ok(s.clone());
        }
        builtin().scenarios.get(name).cloned().ok_or_else(|| {
            let mut names: Vec<&str> = builtin().scenario_names();
            names.extend(self.scenarios.keys().map(String::as_str));
            names.sort_unstable();
            names.dedup();
            UsageError(format!("unknown scenario '{name}'; available: {}", names.join(", "))).into()
        })
    }

    pub fn markets(&self) -> Vec<MarketConfig> {
        if self.alpha_sens.markets.is_empty() {
            builtin().markets.clone()
        } else {
            self.alpha_sens.markets.clone()
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub quick: bool,
}

/// Configuration after flags have been applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub chunk_size: usize,
    pub hash: String,
}

impl Resolved {
    pub fn new(mut config: ExperimentConfig, flags: Overrides) -> anyhow::Result<Self> {
        let seed = flags.seed.or(config.seed).unwrap_or(0);
        let samples = match (flags.samples, flags.quick) {
            (Some(n), _) => n,
            (None, true) => QUICK_SAMPLES,
            (None, false) => config.samples.unwrap_or(DEFAULT_SAMPLES),
        };
        if samples == 0 {
            return Err(UsageError("--samples must be positive".into()).into());
        }
        let chunk_size = config.chunk_size.unwrap_or(4096);
        if chunk_size == 0 {
            return Err(UsageError("chunk_size must be positive".into()).into());
        }
        let out = flags.out.or(config.out.take()).unwrap_or_else(|| PathBuf::from("out"));
        config.seed = Some(seed);
        config.samples = Some(samples);
        config.chunk_size = Some(chunk_size);
        let hash = config_hash(&config)?;
        Ok(Self {
            config,
            out,
            seed,
            samples,
            chunk_size,
            hash,
        })
    }

    pub fn mc(&self, levels: &[f64]) -> anyhow::Result<greenbrown::McConfig> {
        let mc = greenbrown::McConfig {
            n_samples: self.samples,
            seed: self.seed,
            quantile_levels: levels.to_vec(),
            chunk_size: self.chunk_size,
        };
        mc.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(mc)
    }
}

/// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
/// The output directory is not part of the hash.
fn config_hash(config: &ExperimentConfig) -> anyhow::Result<String> {
    let canonical = toml::to_string(&ExperimentConfig {
        out: None,
        ..config.clone()
    })?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}
