//! Episode records: capture, on-disk layout, replay and metrics.
//!
//! ```text
//! episode_<seed>/
//!   manifest.txt   TOML: policy, seed, config + hash, scenario, outcome,
//!                  summary numbers, CRC32 of every other file
//!   steps.txt      one line per step, fixed field order
//!   obs/<t>.hmap   pooled observation seen before step t (t = T is final)
//!   world/<t>.hmap full-resolution difference map (optional)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::heightmap::{excess_volume, max_excess_height, mean_excess_height, Grid};
use crate::hmap;
use crate::mdp::{Env, EpisodeStatus, RewardComponents, WaypointAction};
use crate::policy::{Policy, PolicyAction};
use crate::scenario::ScenarioSpec;

pub const EPISODE_FORMAT: &str = "episode/1";
pub const DATASET_FORMAT: &str = "dataset/1";
pub const DATASET_MANIFEST: &str = "dataset.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Failed,
    TimedOut,
    /// The policy stopped while the task was not complete.
    Stopped,
    /// The policy found no usable action.
    Stuck,
    Incomplete,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Done => "done",
            Outcome::Failed => "failed",
            Outcome::TimedOut => "timed_out",
            Outcome::Stopped => "stopped",
            Outcome::Stuck => "stuck",
            Outcome::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub action: WaypointAction,
    pub reward: f64,
    pub components: RewardComponents,
    pub done: bool,
    pub failed: bool,
    pub duration: f64,
    /// Excess volume added by dumps right after this step.
    pub dumped_excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub policy: String,
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub config: Config,
    pub config_hash: String,
    pub steps: Vec<StepRecord>,
    /// `steps.len() + 1` pooled observations, rounded to `f32`.
    pub observations: Vec<Grid>,
    /// Full-resolution difference maps, when requested.
    pub worlds: Option<Vec<Grid>>,
    pub outcome: Outcome,
    pub initial_excess: f64,
    pub final_excess: f64,
    pub final_max_height: f64,
    pub final_mean_height: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordOptions {
    pub store_world: bool,
}

fn snapshot(env: &Env) -> (f64, f64, f64) {
    let d = env.delta();
    (excess_volume(&d), max_excess_height(&d), mean_excess_height(&d))
}

/// Resets a fresh env for `(spec, seed)` and rolls `policy` out to the end.
pub fn record_episode(
    config: &Config,
    spec: &ScenarioSpec,
    seed: u64,
    policy: &mut dyn Policy,
    opts: RecordOptions,
) -> Result<EpisodeRecord> {
    let (mut env, obs) = Env::reset(config, spec, seed)?;
    let initial_excess = excess_volume(&env.delta());
    let mut observations = vec![hmap::quantize(&obs)];
    let mut worlds = opts.store_world.then(|| vec![hmap::quantize(&env.delta())]);
    let mut steps = Vec::new();
    policy.begin(&env)?;
    let mut stopped = None;
    while !env.is_terminal() {
        let action = match policy.act(&env)? {
            PolicyAction::Act(a) => a,
            PolicyAction::Stop => {
                stopped = Some(Outcome::Stopped);
                break;
            }
            PolicyAction::Stuck => {
                stopped = Some(Outcome::Stuck);
                break;
            }
        };
        let r = env.step(action)?;
        observations.push(hmap::quantize(&r.observation));
        if let Some(w) = worlds.as_mut() {
            w.push(hmap::quantize(&env.delta()));
        }
        steps.push(StepRecord {
            action,
            reward: r.reward,
            components: r.components,
            done: r.done,
            failed: r.failed,
            duration: r.info.duration,
            dumped_excess: r.info.dumped_excess,
        });
        if r.info.timed_out {
            stopped = Some(Outcome::TimedOut);
        }
    }
    policy.finish(&env)?;
    let outcome = match env.status() {
        EpisodeStatus::Done => Outcome::Done,
        EpisodeStatus::Failed => stopped.unwrap_or(Outcome::Failed),
        EpisodeStatus::Running => stopped.unwrap_or(Outcome::Incomplete),
    };
    let (final_excess, final_max_height, final_mean_height) = snapshot(&env);
    Ok(EpisodeRecord {
        policy: policy.name().to_string(),
        spec: spec.clone(),
        seed,
        config: config.clone(),
        config_hash: config.hash(),
        steps,
        observations,
        worlds,
        outcome,
        initial_excess,
        final_excess,
        final_max_height,
        final_mean_height,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub volume_left: f64,
    pub max_height_left: f64,
    pub mean_height_left: f64,
    pub total_time: f64,
    pub total_reward: f64,
    pub initial_volume: f64,
}

impl MetricsRow {
    pub fn removed_fraction(&self) -> f64 {
        if self.initial_volume > 0.0 {
            1.0 - self.volume_left / self.initial_volume
        } else {
            1.0
        }
    }
}

pub fn metrics(record: &EpisodeRecord) -> Result<MetricsRow> {
    if record.outcome == Outcome::Incomplete {
        return Err(Error::NonTerminalRecord);
    }
    Ok(MetricsRow {
        seed: record.seed,
        outcome: record.outcome,
        steps: record.steps.len(),
        volume_left: record.final_excess,
        max_height_left: record.final_max_height,
        mean_height_left: record.final_mean_height,
        total_time: record.steps.iter().map(|s| s.duration).sum(),
        total_reward: record.steps.iter().map(|s| s.reward).sum(),
        initial_volume: record.initial_excess,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps: usize,
}

fn obs_bytes_equal(a: &Grid, b: &Grid) -> bool {
    hmap::encode(a) == hmap::encode(b)
}

/// Re-runs the recorded actions and checks every observation, reward and
/// flag bit for bit.
pub fn replay(record: &EpisodeRecord, current: &Config) -> Result<ReplayReport> {
    let hash = current.hash();
    if record.config_hash != hash {
        return Err(Error::ConfigMismatch { recorded: record.config_hash.clone(), current: hash });
    }
    if record.observations.len() != record.steps.len() + 1 {
        return Err(Error::Format("observation count does not match step count".into()));
    }
    let (mut env, obs) = Env::reset(current, &record.spec, record.seed)?;
    if !obs_bytes_equal(&obs, &record.observations[0]) {
        return Err(Error::Divergence { step: 0, what: "initial observation".into() });
    }
    for (t, s) in record.steps.iter().enumerate() {
        let diverged = |what: &str| Error::Divergence { step: t, what: what.to_string() };
        let r = env.step(s.action).map_err(|e| diverged(&e.to_string()))?;
        let c = (&r.components, &s.components);
        if r.reward.to_bits() != s.reward.to_bits() {
            return Err(diverged(&format!("reward {} != recorded {}", r.reward, s.reward)));
        }
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        if !(same(c.0.f_v, c.1.f_v)
            && same(c.0.f_t, c.1.f_t)
            && same(c.0.f_h, c.1.f_h)
            && same(c.0.done_bonus, c.1.done_bonus)
            && same(c.0.fail_penalty, c.1.fail_penalty)
            && same(r.info.duration, s.duration)
            && same(r.info.dumped_excess, s.dumped_excess))
        {
            return Err(diverged("reward components"));
        }
        if r.done != s.done || r.failed != s.failed {
            return Err(diverged("terminal flags"));
        }
        if !obs_bytes_equal(&r.observation, &record.observations[t + 1]) {
            return Err(diverged("observation"));
        }
    }
    let status_ok = match record.outcome {
        Outcome::Done => env.status() == EpisodeStatus::Done,
        Outcome::Failed | Outcome::TimedOut => env.status() == EpisodeStatus::Failed,
        Outcome::Stopped | Outcome::Stuck | Outcome::Incomplete => !env.is_terminal() || record.steps.is_empty(),
    };
    if !status_ok {
        return Err(Error::Divergence { step: record.steps.len(), what: "final status".into() });
    }
    Ok(ReplayReport { steps: record.steps.len() })
}

// ---------------------------------------------------------------- on disk

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeManifest {
    format: String,
    policy: String,
    seed: u64,
    config_hash: String,
    outcome: Outcome,
    steps: usize,
    store_world: bool,
    initial_excess: f64,
    final_excess: f64,
    final_max_height: f64,
    final_mean_height: f64,
    total_time: f64,
    total_reward: f64,
    files: BTreeMap<String, String>,
    config: Config,
    scenario: ScenarioSpec,
}

pub fn episode_dir_name(seed: u64) -> String {
    format!("episode_{seed}")
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

const STEPS_HEADER: &str =
    "# t p_row p_col s_row s_col reward f_v f_t f_h done_bonus fail_penalty done failed duration dumped_excess obs";

fn format_steps(steps: &[StepRecord]) -> String {
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for (t, s) in steps.iter().enumerate() {
        let c = &s.components;
        writeln!(
            out,
            "{t} {} {} {} {} {} {} {} {} {} {} {} {} {} {} obs/{t}.hmap",
            s.action.p.0,
            s.action.p.1,
            s.action.s.0,
            s.action.s.1,
            s.reward,
            c.f_v,
            c.f_t,
            c.f_h,
            c.done_bonus,
            c.fail_penalty,
            u8::from(s.done),
            u8::from(s.failed),
            s.duration,
            s.dumped_excess,
        )
        .expect("writing to a String");
    }
    out
}

fn parse_steps(text: &str) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("steps.txt line {}: {what}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 16 {
            return Err(bad(&format!("expected 16 fields, found {}", f.len())));
        }
        let int = |i: usize| f[i].parse::<i64>().map_err(|_| bad(&format!("field {i} `{}`", f[i])));
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(&format!("field {i} `{}`", f[i])));
        let flag = |i: usize| match f[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(&format!("flag `{other}`"))),
        };
        if int(0)? != out.len() as i64 {
            return Err(bad("step index out of order"));
        }
        if f[15] != format!("obs/{}.hmap", out.len()) {
            return Err(bad("observation reference"));
        }
        out.push(StepRecord {
            action: WaypointAction::new((int(1)?, int(2)?), (int(3)?, int(4)?)),
            reward: num(5)?,
            components: RewardComponents {
                f_v: num(6)?,
                f_t: num(7)?,
                f_h: num(8)?,
                done_bonus: num(9)?,
                fail_penalty: num(10)?,
            },
            done: flag(11)?,
            failed: flag(12)?,
            duration: num(13)?,
            dumped_excess: num(14)?,
        });
    }
    Ok(out)
}

fn write_bytes(root: &Path, rel: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    let path = root.join(rel);
    std::fs::write(&path, bytes).map_err(Error::io_at(&path))?;
    files.insert(rel.to_string(), crc_hex(bytes));
    Ok(())
}

/// Writes `record` under `parent/episode_<seed>/` and returns that path.
pub fn write_record(record: &EpisodeRecord, parent: &Path) -> Result<PathBuf> {
    let root = parent.join(episode_dir_name(record.seed));
    if root.exists() {
        std::fs::remove_dir_all(&root).map_err(Error::io_at(&root))?;
    }
    for sub in ["obs", "world"] {
        if sub == "world" && record.worlds.is_none() {
            continue;
        }
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(Error::io_at(&d))?;
    }
    let mut files = BTreeMap::new();
    write_bytes(&root, "steps.txt", format_steps(&record.steps).as_bytes(), &mut files)?;
    for (t, g) in record.observations.iter().enumerate() {
        write_bytes(&root, &format!("obs/{t}.hmap"), &hmap::encode(g), &mut files)?;
    }
    if let Some(worlds) = &record.worlds {
        for (t, g) in worlds.iter().enumerate() {
            write_bytes(&root, &format!("world/{t}.hmap"), &hmap::encode(g), &mut files)?;
        }
    }
    let m = metrics(record).ok();
    let manifest = EpisodeManifest {
        format: EPISODE_FORMAT.to_string(),
        policy: record.policy.clone(),
        seed: record.seed,
        config_hash: record.config_hash.clone(),
        outcome: record.outcome,
        steps: record.steps.len(),
        store_world: record.worlds.is_some(),
        initial_excess: record.initial_excess,
        final_excess: record.final_excess,
        final_max_height: record.final_max_height,
        final_mean_height: record.final_mean_height,
        total_time: m.as_ref().map_or(0.0, |m| m.total_time),
        total_reward: m.as_ref().map_or(0.0, |m| m.total_reward),
        files,
        config: record.config.clone(),
        scenario: record.spec.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = root.join("manifest.txt");
    std::fs::write(&path, text).map_err(Error::io_at(&path))?;
    Ok(root)
}

fn read_checked(root: &Path, rel: &str, files: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let path = root.join(rel);
    let bytes = std::fs::read(&path).map_err(Error::io_at(&path))?;
    match files.get(rel) {
        Some(crc) if *crc == crc_hex(&bytes) => Ok(bytes),
        _ => Err(Error::Checksum(path)),
    }
}

/// Loads an episode directory, verifying every file's checksum.
pub fn read_record(root: &Path) -> Result<EpisodeRecord> {
    let mpath = root.join("manifest.txt");
    let text = std::fs::read_to_string(&mpath).map_err(Error::io_at(&mpath))?;
    let m: EpisodeManifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    if m.format != EPISODE_FORMAT {
        return Err(Error::Format(format!("unsupported episode format `{}`", m.format)));
    }
    let steps_bytes = read_checked(root, "steps.txt", &m.files)?;
    let steps = parse_steps(&String::from_utf8(steps_bytes).map_err(|e| Error::Format(e.to_string()))?)?;
    if steps.len() != m.steps {
        return Err(Error::Format(format!("manifest lists {} steps, steps.txt has {}", m.steps, steps.len())));
    }
    let load = |dir: &str| -> Result<Vec<Grid>> {
        (0..=steps.len()).map(|t| hmap::decode(&read_checked(root, &format!("{dir}/{t}.hmap"), &m.files)?)).collect()
    };
    let observations = load("obs")?;
    let worlds = if m.store_world { Some(load("world")?) } else { None };
    Ok(EpisodeRecord {
        policy: m.policy,
        spec: m.scenario,
        seed: m.seed,
        config: m.config,
        config_hash: m.config_hash,
        steps,
        observations,
        worlds,
        outcome: m.outcome,
        initial_excess: m.initial_excess,
        final_excess: m.final_excess,
        final_max_height: m.final_max_height,
        final_mean_height: m.final_mean_height,
    })
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub path: String,
    pub seed: u64,
    /// CRC32 of the episode's manifest.txt.
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub policy: String,
    pub count: usize,
    pub seed_start: u64,
    /// Exclusive.
    pub seed_end: u64,
    pub episodes: Vec<DatasetEntry>,
}

pub type PolicyFactory<'a> = dyn Fn() -> Result<Box<dyn Policy>> + Sync + 'a;

/// Records `n` episodes for seeds `seed0..seed0 + n` in parallel and writes
/// the dataset manifest last.
pub fn build_dataset(
    config: &Config,
    spec: &ScenarioSpec,
    policy_name: &str,
    factory: &PolicyFactory,
    n: usize,
    seed0: u64,
    out: &Path,
    opts: RecordOptions,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out).map_err(Error::io_at(out))?;
    let entries: Vec<DatasetEntry> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let seed = seed0 + k;
            let mut policy = factory()?;
            let rec = record_episode(config, spec, seed, policy.as_mut(), opts)?;
            let root = write_record(&rec, out)?;
            let mpath = root.join("manifest.txt");
            let bytes = std::fs::read(&mpath).map_err(Error::io_at(&mpath))?;
            Ok(DatasetEntry { path: episode_dir_name(seed), seed, crc32: crc_hex(&bytes) })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        policy: policy_name.to_string(),
        count: entries.len(),
        seed_start: seed0,
        seed_end: seed0 + n as u64,
        episodes: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = out.join(DATASET_MANIFEST);
    std::fs::write(&path, text).map_err(Error::io_at(&path))?;
    Ok(manifest)
}

/// Reads a dataset manifest and checks every referenced episode.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<EpisodeRecord>)> {
    let path = dir.join(DATASET_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(Error::io_at(&path))?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unsupported dataset format `{}`", m.format)));
    }
    if m.count != m.episodes.len() {
        return Err(Error::Format(format!("count {} but {} entries", m.count, m.episodes.len())));
    }
    let records = m
        .episodes
        .par_iter()
        .map(|e| {
            let root = dir.join(&e.path);
            let mpath = root.join("manifest.txt");
            let bytes = std::fs::read(&mpath).map_err(Error::io_at(&mpath))?;
            if crc_hex(&bytes) != e.crc32 {
                return Err(Error::Checksum(mpath));
            }
            read_record(&root)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_text_roundtrip_is_exact() {
        let steps = vec![
            StepRecord {
                action: WaypointAction::new((18, 37), (-1, 40)),
                reward: -0.1 + 1e-17 + std::f64::consts::PI,
                components: RewardComponents {
                    f_v: 1.0 / 3.0,
                    f_t: 12.345678901234567,
                    f_h: -2.5e-12,
                    done_bonus: 100.0,
                    fail_penalty: 0.0,
                },
                done: true,
                failed: false,
                duration: f64::MIN_POSITIVE,
                dumped_excess: 0.0,
            },
            StepRecord {
                action: WaypointAction::new((0, 0), (1, 1)),
                reward: -100.0,
                components: RewardComponents { fail_penalty: 100.0, ..Default::default() },
                done: false,
                failed: true,
                duration: 0.0,
                dumped_excess: 1e300,
            },
        ];
        let text = format_steps(&steps);
        assert_eq!(parse_steps(&text).unwrap(), steps);
        assert!(text.lines().nth(1).unwrap().ends_with("obs/0.hmap"));
    }

    #[test]
    fn malformed_steps_are_rejected() {
        assert!(parse_steps("0 1 2\n").is_err());
        let good = format_steps(&[StepRecord {
            action: WaypointAction::new((1, 1), (1, 1)),
            reward: 0.0,
            components: RewardComponents::default(),
            done: false,
            failed: false,
            duration: 0.0,
            dumped_excess: 0.0,
        }]);
        assert_eq!(good.lines().nth(1).unwrap(), "0 1 1 1 1 0 0 0 0 0 0 0 0 0 0 obs/0.hmap");
        assert!(parse_steps("0 1 1 1 1 0 0 0 0 0 0 2 0 0 0 obs/0.hmap\n").is_err());
        assert!(parse_steps("0 1 1 1 1 0 0 0 0 0 0 0 0 0 0 obs/1.hmap\n").is_err());
        assert!(parse_steps(&good.replace("\n0 ", "\n1 ")).is_err());
    }
}
