//! Batch evaluation, metric tables and ablation sweeps.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::config::Config;
use crate::episode::{self, metrics, record_episode, MetricsRow, RecordOptions};
use crate::error::{Error, Result};
use crate::policy::{self, Policy, ScriptedPolicy};
use crate::protocol::ExternalPolicy;
use crate::scenario::ScenarioSpec;

/// Where the actions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySource {
    /// `snp`, `random` or `still`.
    Named(String),
    /// A policy process listening at this address.
    External(String),
    /// Actions of recorded episodes under this directory (`episode_<seed>`).
    Replay(PathBuf),
}

impl PolicySource {
    pub fn name(&self) -> &str {
        match self {
            PolicySource::Named(n) => n,
            PolicySource::External(_) => "external",
            PolicySource::Replay(_) => "replay",
        }
    }

    /// Parses `snp`, `random`, `still`, `external:<addr>` or `replay:<dir>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("external:") {
            return Ok(PolicySource::External(addr.to_string()));
        }
        if let Some(dir) = s.strip_prefix("replay:") {
            return Ok(PolicySource::Replay(PathBuf::from(dir)));
        }
        policy::by_name(s)?;
        Ok(PolicySource::Named(s.to_string()))
    }

    pub fn instantiate(&self, seed: u64) -> Result<Box<dyn Policy>> {
        match self {
            PolicySource::Named(n) => policy::by_name(n),
            PolicySource::External(addr) => Ok(Box::new(ExternalPolicy::new(addr.clone()))),
            PolicySource::Replay(dir) => {
                let rec = episode::read_record(&dir.join(episode::episode_dir_name(seed)))?;
                Ok(Box::new(ScriptedPolicy::new("replay", rec.steps.iter().map(|s| s.action).collect())))
            }
        }
    }
}

pub const METRIC_NAMES: [&str; 7] =
    ["volume_left", "max_height_left", "mean_height_left", "total_time", "total_reward", "steps", "removed_fraction"];

fn metric_values(r: &MetricsRow) -> [f64; 7] {
    [
        r.volume_left,
        r.max_height_left,
        r.mean_height_left,
        r.total_time,
        r.total_reward,
        r.steps as f64,
        r.removed_fraction(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: [f64; 7],
    /// Sample standard deviation (0 for a single run).
    pub std: [f64; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub policy: String,
    pub family: String,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn aggregate(&self) -> Option<Aggregate> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mut mean = [0.0; 7];
        for r in &self.rows {
            for (m, v) in mean.iter_mut().zip(metric_values(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = [0.0; 7];
        if self.rows.len() > 1 {
            for r in &self.rows {
                for ((s, v), m) in std.iter_mut().zip(metric_values(r)).zip(mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in std.iter_mut() {
                *s = (*s / (n - 1.0)).sqrt();
            }
        }
        Some(Aggregate { mean, std })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("policy,family,seed,outcome,{}\n", METRIC_NAMES.join(","));
        for r in &self.rows {
            let vals: Vec<String> = metric_values(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{},{},{},{}", self.policy, self.family, r.seed, r.outcome.name(), vals.join(","))
                .expect("writing to a String");
        }
        if let Some(a) = self.aggregate() {
            for (label, vals) in [("mean", a.mean), ("std", a.std)] {
                let vals: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{},{},{label},,{}", self.policy, self.family, vals.join(","))
                    .expect("writing to a String");
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("policy {}  family {}  runs {}\n", self.policy, self.family, self.rows.len());
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>11} {:>6} {:>8}",
            "seed", "outcome", "vol_left", "max_h", "mean_h", "time_s", "reward", "steps", "removed"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6} {:>10} {:>10.4} {:>10.4} {:>10.6} {:>10.1} {:>11.3} {:>6} {:>8.3}",
                r.seed,
                r.outcome.name(),
                r.volume_left,
                r.max_height_left,
                r.mean_height_left,
                r.total_time,
                r.total_reward,
                r.steps,
                r.removed_fraction()
            );
        }
        if let Some(a) = self.aggregate() {
            for (label, v) in [("mean", a.mean), ("std", a.std)] {
                let _ = writeln!(
                    out,
                    "{:>6} {:>10} {:>10.4} {:>10.4} {:>10.6} {:>10.1} {:>11.3} {:>6.1} {:>8.3}",
                    label, "", v[0], v[1], v[2], v[3], v[4], v[5], v[6]
                );
            }
        }
        out
    }
}

/// Runs seeds `seed0..seed0 + n_runs` in parallel; rows come back in seed
/// order.
pub fn evaluate(
    config: &Config,
    spec: &ScenarioSpec,
    source: &PolicySource,
    n_runs: usize,
    seed0: u64,
) -> Result<MetricsTable> {
    config.validate()?;
    let rows = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let seed = seed0 + k;
            let mut policy = source.instantiate(seed)?;
            let rec = record_episode(config, spec, seed, policy.as_mut(), RecordOptions::default())?;
            metrics(&rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable { policy: source.name().to_string(), family: spec.family.name().to_string(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Downsample,
    MaskSigma,
    FillFraction,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "downsample" | "N" => Ok(SweepParam::Downsample),
            "mask_sigma_factor" | "sigma" => Ok(SweepParam::MaskSigma),
            "fill_fraction" | "fill" => Ok(SweepParam::FillFraction),
            other => Err(Error::InvalidParameter(format!("cannot sweep `{other}`"))),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            SweepParam::Downsample => "downsample",
            SweepParam::MaskSigma => "mask_sigma_factor",
            SweepParam::FillFraction => "fill_fraction",
        }
    }

    pub fn apply(&self, base: &Config, value: f64) -> Result<Config> {
        let mut cfg = base.clone();
        let text = match self {
            SweepParam::Downsample => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::InvalidParameter(format!("downsample must be a whole number, got {value}")));
                }
                format!("{}", value as u64)
            }
            _ => value.to_string(),
        };
        cfg.set(self.key(), &text)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepColumn {
    pub value: f64,
    pub state_space: (usize, usize),
    pub table: MetricsTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub param: SweepParam,
    pub columns: Vec<SweepColumn>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<18}", self.param.key());
        for c in &self.columns {
            let _ = write!(out, " {:>14}", c.value);
        }
        out.push('\n');
        let mut row = |label: &str, f: &dyn Fn(&SweepColumn) -> String| {
            let _ = write!(out, "{label:<18}");
            for c in &self.columns {
                let _ = write!(out, " {:>14}", f(c));
            }
            out.push('\n');
        };
        row("state space", &|c| format!("{}x{}", c.state_space.0, c.state_space.1));
        let mean = |c: &SweepColumn, i: usize| c.table.aggregate().map_or(f64::NAN, |a| a.mean[i]);
        row("volume left", &|c| format!("{:.4}", mean(c, 0)));
        row("total reward", &|c| format!("{:.3}", mean(c, 4)));
        row("mean height left", &|c| format!("{:.6}", mean(c, 2)));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},state_rows,state_cols,volume_left,total_reward,mean_height_left\n", self.param.key());
        for c in &self.columns {
            let a = c.table.aggregate();
            let m = |i: usize| a.as_ref().map_or(f64::NAN, |a| a.mean[i]);
            let _ = writeln!(out, "{},{},{},{},{},{}", c.value, c.state_space.0, c.state_space.1, m(0), m(4), m(2));
        }
        out
    }
}

/// One [`evaluate`] block per value, all on the same seeds.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    base: &Config,
    spec: &ScenarioSpec,
    source: &PolicySource,
    n_runs: usize,
    seed0: u64,
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let mut columns = Vec::new();
    for &value in values {
        let cfg = param.apply(base, value)?;
        let fov = cfg.fov()?;
        let table = evaluate(&cfg, spec, source, n_runs, seed0)?;
        columns.push(SweepColumn { value, state_space: (fov.obs_rows(), fov.obs_cols()), table });
    }
    Ok(AblationTable { param, columns })
}
