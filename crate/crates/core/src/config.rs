//! Flat key-value configuration shared by the environment, the dynamics and
//! the oracle. The file format is a flat TOML table (`key = value` lines);
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::heightmap::FovSpec;
use crate::mdp::RewardWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // observation
    pub cell_size: f64,
    pub fov_rows: usize,
    pub fov_cols: usize,
    pub fov_anchor_row: usize,
    pub fov_anchor_col: usize,
    pub downsample: u32,
    pub mask_sigma_factor: f64,
    pub mask_base_scale: f64,

    // reward and termination
    pub lambda_volume: f64,
    pub lambda_time: f64,
    pub lambda_height: f64,
    pub lambda_done: f64,
    pub lambda_fail: f64,
    pub gamma: f64,
    pub done_epsilon: f64,
    pub timeout_steps: usize,

    // dozer and blade
    pub alpha: f64,
    pub spill_ratio: f64,
    pub blade_width: f64,
    pub blade_capacity: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub omega: f64,
    pub deposit_rate: f64,

    // oracle
    pub fill_fraction: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            cell_size: 0.05,
            fov_rows: 600,
            fov_cols: 600,
            fov_anchor_row: 148,
            fov_anchor_col: 300,
            downsample: 3,
            mask_sigma_factor: 3.0,
            mask_base_scale: 0.5,

            lambda_volume: 1.0,
            lambda_time: 0.01,
            lambda_height: 10.0,
            lambda_done: 100.0,
            lambda_fail: 100.0,
            gamma: 0.99,
            done_epsilon: 0.02,
            timeout_steps: 200,

            alpha: 0.7,
            spill_ratio: 0.5,
            blade_width: 1.0,
            blade_capacity: 0.15,
            v_max: 1.0,
            v_min: 0.1,
            omega: 0.5,
            deposit_rate: 0.015,

            fill_fraction: 0.9,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::from_toml(&text)
    }

    /// Canonical text form; also what `config --dump` prints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Short SHA-256 digest of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be > 0");
        }
        self.fov().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.mask_sigma_factor > 0.0 && self.mask_base_scale > 0.0) {
            return bad("mask_sigma_factor and mask_base_scale must be > 0");
        }
        self.weights().validate()?;
        if !(self.done_epsilon > 0.0) {
            return bad("done_epsilon must be > 0");
        }
        if self.timeout_steps == 0 {
            return bad("timeout_steps must be >= 1");
        }
        self.dynamics().validate()?;
        if !(self.fill_fraction > 0.0 && self.fill_fraction <= 1.0) {
            return bad("fill_fraction must be in (0, 1]");
        }
        Ok(())
    }

    pub fn fov(&self) -> Result<FovSpec> {
        FovSpec::new(self.fov_rows, self.fov_cols, (self.fov_anchor_row, self.fov_anchor_col), self.downsample)
    }

    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            lambda_volume: self.lambda_volume,
            lambda_time: self.lambda_time,
            lambda_height: self.lambda_height,
            lambda_done: self.lambda_done,
            lambda_fail: self.lambda_fail,
            gamma: self.gamma,
        }
    }

    pub fn dynamics(&self) -> DynamicsParams {
        DynamicsParams {
            alpha: self.alpha,
            spill_ratio: self.spill_ratio,
            blade_width: self.blade_width,
            blade_capacity: self.blade_capacity,
            v_max: self.v_max,
            v_min: self.v_min,
            omega: self.omega,
            deposit_rate: self.deposit_rate,
        }
    }

    /// Sets one key from its textual value, as used by sweeps and CLI
    /// overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        let old = table
            .get(key)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown config key `{key}`")))?;
        let new = match old {
            toml::Value::Integer(_) => toml::Value::Integer(
                value.parse().map_err(|_| Error::InvalidParameter(format!("{key}: `{value}` is not an integer")))?,
            ),
            toml::Value::Float(_) => toml::Value::Float(
                value.parse().map_err(|_| Error::InvalidParameter(format!("{key}: `{value}` is not a number")))?,
            ),
            _ => return Err(Error::InvalidParameter(format!("{key} is not settable"))),
        };
        table.insert(key.to_string(), new);
        let updated = Config::from_toml(&toml::to_string(&table).expect("table serializes"))?;
        *self = updated;
        Ok(())
    }
}
