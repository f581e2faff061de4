//! Optional JSON config for gun, fan, limits, cohort policies and extended
//! score weights. Any subset of keys may be given; nested objects are merged
//! over the defaults field by field.

use std::path::Path;

use anyhow::{bail, Context, Result};
use biopsim::cohort::AimPolicy;
use biopsim::probe::{BiopsyGun, ProbeLimits};
use biopsim::scoring::ExtendedWeights;
use biopsim::volume::FanGeometry;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub gun: BiopsyGun,
    pub fan: FanGeometry,
    pub limits: ProbeLimits,
    pub expert: AimPolicy,
    pub novice: AimPolicy,
    pub weights: ExtendedWeights,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gun: BiopsyGun::default(),
            fan: FanGeometry::default(),
            limits: ProbeLimits::default(),
            expert: AimPolicy::expert(),
            novice: AimPolicy::novice(),
            weights: ExtendedWeights::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => bail!("unknown config key '{path}'"),
                }
            }
        }
        (slot, v) => *slot = v,
    }
    Ok(())
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(text)?;
        let mut value = serde_json::to_value(Self::default())?;
        merge(&mut value, patch, "")?;
        let config: Self = serde_json::from_value(value)?;
        config.expert.validate()?;
        config.novice.validate()?;
        config.fan.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in config {}", path.display()))
    }
}
