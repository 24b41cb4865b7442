//! `grading`: command-line front end.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 invalid arguments, 3 replay
//! divergence or verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grading_core::config::Config;
use grading_core::episode::{self, RecordOptions};
use grading_core::error::Error;
use grading_core::harness::{self, PolicySource, SweepParam};
use grading_core::hmap;
use grading_core::policy::SnpPolicy;
use grading_core::protocol::Server;
use grading_core::render;
use grading_core::scenario::{self, Family, ScenarioSpec};

#[derive(Parser)]
#[command(name = "grading", version, about = "Dozer grading simulator and evaluation harness")]
struct Cli {
    /// Config file (flat TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set downsample=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario family preset.
    #[arg(long, default_value = "init")]
    family: String,
    /// Scenario spec file; takes precedence over `--family`.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioSpec, Error> {
        match &self.scenario {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::IoAt { path: p.clone(), source: e })?;
                ScenarioSpec::from_toml(&text)
            }
            None => Ok(ScenarioSpec::preset(Family::parse(&self.family)?)),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the resolved configuration.
    Config {
        #[arg(long)]
        dump: bool,
    },
    /// Scenario generation.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Roll out the SnP oracle.
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Behaviour-cloning datasets.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Run a policy over seeded episodes and print the metric table.
    Evaluate {
        /// snp | random | still | external:<addr> | replay:<dir>
        #[arg(long, default_value = "snp")]
        policy: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed0: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate once per parameter value on shared seeds.
    Sweep {
        /// downsample | mask_sigma_factor | fill_fraction
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "snp")]
        policy: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed0: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve environments over the wire protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
    },
    /// Re-run recorded episodes and verify them bit for bit.
    Replay {
        /// An `episode_<seed>` directory, or a dataset directory.
        path: PathBuf,
    },
    /// Write PGM frames and the leg polyline of a recorded episode.
    Render {
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Write initial.hmap, desired.hmap and scenario.txt.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory to record the episode into.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Store full-resolution difference maps too.
        #[arg(long)]
        store_world: bool,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build {
        #[arg(long, default_value = "snp")]
        policy: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed0: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        store_world: bool,
    },
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::IoAt { path: path.to_path_buf(), source: e })
}

fn replay_one(dir: &Path, cfg: &Config) -> Result<usize, Error> {
    let rec = episode::read_record(dir)?;
    Ok(episode::replay(&rec, cfg)?.steps)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Config { dump } => {
            if dump {
                print!("{}", cfg.to_toml());
            }
            println!("# hash {}", cfg.hash());
        }
        Cmd::Scenario { cmd: ScenarioCmd::Generate { scenario, seed, out } } => {
            let spec = scenario.load()?;
            let sc = scenario::generate(&spec, seed, cfg.cell_size, cfg.dynamics())?;
            std::fs::create_dir_all(&out).map_err(|e| Error::IoAt { path: out.clone(), source: e })?;
            hmap::write_file(&out.join("initial.hmap"), &sc.initial)?;
            hmap::write_file(&out.join("desired.hmap"), &sc.desired)?;
            write_text(&out.join("scenario.txt"), &spec.to_toml())?;
            let p = sc.dozer.pose;
            println!(
                "{} seed {seed}: {} piles, {} dumps, dozer ({:.3}, {:.3}, {:.3}) -> {}",
                spec.family,
                sc.piles.len(),
                sc.dumps.len(),
                p.x,
                p.y,
                p.heading,
                out.display()
            );
        }
        Cmd::Oracle { cmd: OracleCmd::Run { scenario, seed, record, store_world } } => {
            let spec = scenario.load()?;
            let rec = episode::record_episode(&cfg, &spec, seed, &mut SnpPolicy::new(), RecordOptions { store_world })?;
            let m = episode::metrics(&rec)?;
            println!(
                "seed {seed}: {} after {} steps, volume left {:.4} of {:.4}, time {:.1} s, reward {:.3}",
                m.outcome.name(),
                m.steps,
                m.volume_left,
                m.initial_volume,
                m.total_time,
                m.total_reward
            );
            if let Some(dir) = record {
                let path = episode::write_record(&rec, &dir)?;
                println!("recorded {}", path.display());
            }
        }
        Cmd::Dataset { cmd: DatasetCmd::Build { policy, scenario, n, seed0, out, store_world } } => {
            let spec = scenario.load()?;
            let source = PolicySource::parse(&policy)?;
            let factory = || source.instantiate(0);
            let m = episode::build_dataset(
                &cfg,
                &spec,
                source.name(),
                &factory,
                n,
                seed0,
                &out,
                RecordOptions { store_world },
            )?;
            println!("{} episodes -> {}", m.count, out.display());
        }
        Cmd::Evaluate { policy, scenario, runs, seed0, csv } => {
            let spec = scenario.load()?;
            let source = PolicySource::parse(&policy)?;
            let table = harness::evaluate(&cfg, &spec, &source, runs, seed0)?;
            print!("{}", table.to_text());
            if let Some(p) = csv {
                write_text(&p, &table.to_csv())?;
            }
        }
        Cmd::Sweep { param, values, policy, scenario, runs, seed0, csv } => {
            let spec = scenario.load()?;
            let source = PolicySource::parse(&policy)?;
            let table = harness::sweep(SweepParam::parse(&param)?, &values, &cfg, &spec, &source, runs, seed0)?;
            print!("{}", table.to_text());
            if let Some(p) = csv {
                write_text(&p, &table.to_csv())?;
            }
        }
        Cmd::Serve { addr } => {
            let server = Server::bind(&addr, cfg)?;
            eprintln!("serving on {}", server.local_addr()?);
            server.serve()?;
        }
        Cmd::Replay { path } => {
            if path.join(episode::DATASET_MANIFEST).exists() {
                let (m, records) = episode::load_dataset(&path)?;
                let mut steps = 0;
                for rec in &records {
                    steps += episode::replay(rec, &cfg)?.steps;
                }
                println!("replay ok: {} episodes, {steps} steps", m.count);
            } else {
                let steps = replay_one(&path, &cfg)?;
                println!("replay ok: {steps} steps");
            }
        }
        Cmd::Render { episode: dir, out } => {
            let rec = episode::read_record(&dir)?;
            let frames = render::render_episode(&rec, &out)?;
            println!("{frames} frames -> {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::ConfigMismatch { .. } | Error::Checksum(_) => 3,
        Error::InvalidParameter(_)
        | Error::UnknownPolicy(_)
        | Error::Config(_)
        | Error::InvalidScenario(_)
        | Error::InvalidDimension(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
