//! Built-in scenarios shipped as data.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dist::delta_from_shape;
use crate::error::{Error, Result};
use crate::exposure::ExposureLaw;
use crate::model::{LoanClassParams, PortfolioSpec};

const PRESETS: &str = include_str!("../data/presets.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPreset {
    pub description: String,
    /// Factor shape fixed by the scenario, if any.
    #[serde(default)]
    pub shape: Option<f64>,
    pub green: LoanClassParams,
    pub brown: LoanClassParams,
}

impl ScenarioPreset {
    /// Portfolio with factor shape `shape` applied to both classes.
    pub fn spec_with_shape(&self, shape: f64) -> Result<PortfolioSpec> {
        if !shape.is_finite() {
            return Err(Error::domain("shape", shape, "finite reals"));
        }
        let delta = delta_from_shape(shape);
        PortfolioSpec::new(
            LoanClassParams { delta, ..self.green },
            LoanClassParams { delta, ..self.brown },
            ExposureLaw::Uniform,
        )
    }

    /// Portfolio at the scenario's own shape.
    pub fn spec(&self) -> Result<PortfolioSpec> {
        let shape = self
            .shape
            .ok_or_else(|| Error::InvalidParams("scenario has no fixed factor shape".into()))?;
        self.spec_with_shape(shape)
    }
}

/// Unpartitioned single-class market configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub id: String,
    pub pd: f64,
    pub rho: f64,
}

impl MarketConfig {
    /// The market as a portfolio whose two classes coincide.
    pub fn spec_with_shape(&self, shape: f64) -> Result<PortfolioSpec> {
        let delta = delta_from_shape(shape);
        let class = LoanClassParams::new(self.pd, self.rho, delta, 0.5, 1)?;
        PortfolioSpec::new(class, class, ExposureLaw::Uniform)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presets {
    pub scenarios: BTreeMap<String, ScenarioPreset>,
    pub markets: Vec<MarketConfig>,
}

impl Presets {
    pub fn parse(text: &str) -> Result<Self> {
        let presets: Presets = toml::from_str(text).map_err(|e| Error::Preset(e.to_string()))?;
        for (name, s) in &presets.scenarios {
            s.green
                .validate()
                .and(s.brown.validate())
                .map_err(|e| Error::Preset(format!("{name}: {e}")))?;
        }
        Ok(presets)
    }

    pub fn scenario(&self, name: &str) -> Result<&ScenarioPreset> {
        self.scenarios.get(name).ok_or_else(|| {
            Error::Preset(format!(
                "unknown scenario '{name}', expected one of: {}",
                self.scenario_names().join(", ")
            ))
        })
    }

    pub fn scenario_names(&self) -> Vec<&str> {
        self.scenarios.keys().map(String::as_str).collect()
    }

    /// The four sensitivity scenarios, in order.
    pub fn sensitivity_scenarios(&self) -> Vec<(&str, &ScenarioPreset)> {
        self.scenarios
            .iter()
            .filter(|(k, _)| k.starts_with("scenario"))
            .map(|(k, v)| (k.as_str(), v))
            .collect()
    }
}

/// Presets compiled into the crate.
pub fn builtin() -> &'static Presets {
    static CELL: OnceLock<Presets> = OnceLock::new();
    CELL.get_or_init(|| Presets::parse(PRESETS).expect("bundled presets are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitivity_scenarios_expand() {
        let p = builtin();
        let names: Vec<_> = p.sensitivity_scenarios().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["scenario1", "scenario2", "scenario3", "scenario4"]);
        let s3 = p.scenario("scenario3").unwrap();
        assert_eq!((s3.green.pd, s3.brown.pd), (0.02, 0.028));
        assert_eq!((s3.green.rho, s3.brown.rho), (0.10, 0.10));
        assert_eq!((s3.green.omega, s3.brown.omega), (0.25, 0.75));
        let s1 = p.scenario("scenario1").unwrap();
        let s2 = p.scenario("scenario2").unwrap();
        assert_eq!((s1.green.rho, s1.brown.rho), (s2.brown.rho, s2.green.rho));
        assert_eq!(p.scenario("scenario4").unwrap().green.pd, 0.030);
    }

    #[test]
    fn convergence_scenarios_carry_shape() {
        let c = builtin().scenario("convergence1").unwrap().spec().unwrap();
        assert!((c.green.delta - 0.4472135954999579).abs() < 1e-15);
        assert_eq!(c.green.delta, c.brown.delta);
        assert_eq!((c.green.omega, c.brown.omega), (0.3, 0.7));
        let c2 = builtin().scenario("convergence2").unwrap();
        assert_eq!((c2.green.pd, c2.brown.pd, c2.green.rho), (0.2, 0.15, 0.15));
        assert!(builtin().scenario("scenario1").unwrap().spec().is_err());
    }

    #[test]
    fn markets() {
        let m: Vec<(f64, f64)> = builtin().markets.iter().map(|m| (m.pd, m.rho)).collect();
        assert_eq!(m, [(0.01, 0.15), (0.03, 0.20), (0.04, 0.20), (0.06, 0.25)]);
    }

    #[test]
    fn unknown_scenario_lists_presets() {
        let err = builtin().scenario("scenario9").unwrap_err().to_string();
        assert!(err.contains("scenario1") && err.contains("convergence2"), "{err}");
        assert!(Presets::parse("scenarios = 3").is_err());
    }
}
