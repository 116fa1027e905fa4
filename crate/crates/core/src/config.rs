//! Workbench configuration as one TOML document with a section per subsystem.
//! Every field has a default, so an empty file is a valid configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::policy::PolicyConfig;
use crate::sim::SimConfig;
use crate::store::StoreConfig;
use crate::teleop::TeleopConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    pub teleop: TeleopConfig,
    pub store: StoreConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
}

impl WorkbenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.controller.validate()?;
        self.teleop.validate()?;
        self.store.validate()?;
        self.policy.validate()?;
        self.eval.validate()
    }
}
