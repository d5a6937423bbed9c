//! Run directories: manifest, metric CSVs and checkpoints.
//!
//! ```text
//! <root>/<run id>/
//!     manifest.cfg
//!     metrics.csv          deterministic per-epoch metrics
//!     timing.csv           epoch, wall_seconds
//!     checkpoint/          policy.bin, critic.bin, manifest.cfg [, replay.bin]
//!     checkpoint-diagnostic/   only after a numerical failure
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{parse_config, parse_pairs, serialize_config};
use crate::agent::{train, Agent, CheckpointKind, EpochMetrics, TrainConfig, TrainSink};
use crate::critic::{read_critic, write_critic, DoubleQ};
use crate::error::{Error, Result};
use crate::policy::{read_policy, write_policy, GaussianPolicy};
use crate::replay::ReplayBuffer;

pub const OUT_ENV_VAR: &str = "GACLAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "runs";

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "env_steps",
    "mean_exploration_return",
    "mean_eval_return",
    "critic_loss",
    "policy_loss",
    "beta_t",
    "pi_e_entropy",
    "pi_e_kl_to_policy",
];

pub const TIMING_HEADER: [&str; 2] = ["epoch", "wall_seconds"];

/// Output root: an explicit path wins, then `GACLAB_OUT`, then `runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    /// Hex SHA-256 over the crate version and the canonical config text.
    pub content_hash: String,
}

pub fn content_hash(config: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"), "\n"));
    h.update(serialize_config(config));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(config: TrainConfig) -> Self {
        let content_hash = content_hash(&config);
        let run_id = format!(
            "{}-{}-seed{}-{}",
            config.env,
            config.mode,
            config.seed,
            &content_hash[..10]
        );
        Self {
            run_id,
            seeds: vec![config.seed],
            config,
            content_hash,
        }
    }

    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "# gaclab run manifest\nrun.id = {}\nrun.version = {}\nrun.content_hash = {}\nrun.seeds = {}\nrun.layout = manifest.cfg metrics.csv timing.csv checkpoint/\n{}",
            self.run_id,
            env!("CARGO_PKG_VERSION"),
            self.content_hash,
            seeds.join(","),
            serialize_config(&self.config)
        )
    }

    /// Rebuilds a manifest; the hash is recomputed and must match when present.
    pub fn from_text(text: &str) -> Result<Self> {
        let config = parse_config(text)?;
        let manifest = Self::new(config);
        let recorded = parse_pairs(text)?
            .into_iter()
            .find(|(k, _)| k == "run.content_hash")
            .map(|(_, v)| v);
        if let Some(h) = recorded {
            if h != manifest.content_hash {
                log::warn!("manifest hash {h} differs from this build's {}", manifest.content_hash);
            }
        }
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

pub(crate) fn write_row<W: Write, I, T>(w: &mut csv::Writer<W>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(csv_error)
}

pub(crate) fn flush<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.flush().map_err(Error::Io)
}

fn metric_row(m: &EpochMetrics) -> Vec<String> {
    let mut row = vec![m.epoch.to_string(), m.env_steps.to_string()];
    row.extend(m.deterministic_fields()[2..].iter().map(|v| format!("{v:?}")));
    row
}

/// Reads `metrics.csv`; `wall_seconds` is left at zero.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad metrics value `{}`", &rec[i])))
        };
        out.push(EpochMetrics {
            epoch: f(0)? as u64,
            env_steps: f(1)? as u64,
            mean_exploration_return: f(2)?,
            mean_eval_return: f(3)?,
            critic_loss: f(4)?,
            policy_loss: f(5)?,
            beta_t: f(6)?,
            pi_e_entropy: f(7)?,
            pi_e_kl_to_policy: f(8)?,
            wall_seconds: 0.0,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: GaussianPolicy,
    pub critic: DoubleQ,
    pub config: TrainConfig,
}

pub fn write_checkpoint(dir: &Path, agent: &Agent, manifest: &RunManifest, with_replay: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("policy.bin"))?);
    write_policy(&mut w, agent.policy())?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("critic.bin"))?);
    write_critic(&mut w, agent.critic())?;
    w.flush()?;
    fs::write(dir.join("manifest.cfg"), manifest.to_text())?;
    if with_replay {
        let mut w = BufWriter::new(File::create(dir.join("replay.bin"))?);
        agent.buffer().write_to(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Accepts a checkpoint directory or a run directory containing `checkpoint/`.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let dir = if path.join("checkpoint").is_dir() {
        path.join("checkpoint")
    } else {
        path.to_path_buf()
    };
    let policy = read_policy(&mut BufReader::new(File::open(dir.join("policy.bin"))?))?;
    let critic = read_critic(&mut BufReader::new(File::open(dir.join("critic.bin"))?))?;
    let config = RunManifest::read(&dir.join("manifest.cfg"))?.config;
    Ok(Checkpoint { policy, critic, config })
}

pub fn read_replay(dir: &Path) -> Result<ReplayBuffer> {
    ReplayBuffer::read_from(&mut BufReader::new(File::open(dir.join("replay.bin"))?))
}

struct RunDirSink {
    dir: PathBuf,
    manifest: RunManifest,
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    save_replay: bool,
    rows: Vec<EpochMetrics>,
}

impl TrainSink for RunDirSink {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        write_row(&mut self.metrics, metric_row(m))?;
        flush(&mut self.metrics)?;
        write_row(&mut self.timing, [m.epoch.to_string(), format!("{:?}", m.wall_seconds)])?;
        flush(&mut self.timing)?;
        self.rows.push(m.clone());
        Ok(())
    }

    fn checkpoint(&mut self, agent: &Agent, kind: CheckpointKind) -> Result<()> {
        let name = match kind {
            CheckpointKind::Final => "checkpoint",
            CheckpointKind::Diagnostic => "checkpoint-diagnostic",
        };
        write_checkpoint(&self.dir.join(name), agent, &self.manifest, self.save_replay)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<EpochMetrics>,
}

impl RunOutcome {
    pub fn final_eval_return(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.mean_eval_return)
    }

    pub fn wall_seconds(&self) -> f64 {
        self.metrics.iter().map(|m| m.wall_seconds).sum()
    }
}

/// Trains `config` into `<root>/<run id>/`, replacing earlier outputs there.
pub fn run_training(config: TrainConfig, root: &Path, save_replay: bool) -> Result<RunOutcome> {
    config.validate()?;
    let manifest = RunManifest::new(config.clone());
    let dir = root.join(&manifest.run_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("manifest.cfg"), manifest.to_text())?;
    let mut metrics = csv_writer(&dir.join("metrics.csv"))?;
    write_row(&mut metrics, METRICS_HEADER)?;
    let mut timing = csv_writer(&dir.join("timing.csv"))?;
    write_row(&mut timing, TIMING_HEADER)?;
    let mut sink = RunDirSink {
        dir: dir.clone(),
        manifest: manifest.clone(),
        metrics,
        timing,
        save_replay,
        rows: Vec::new(),
    };
    flush(&mut sink.metrics)?;
    flush(&mut sink.timing)?;
    train(config, &mut sink)?;
    Ok(RunOutcome {
        dir,
        manifest,
        metrics: sink.rows,
    })
}
