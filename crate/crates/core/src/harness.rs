//! Experiment driver: configuration files, seeded runs with incremental CSV
//! logs, min/max/avg summaries and smoothed learning curves.
//!
//! # Config format
//!
//! A config file is a list of `key = value` lines. Keys are dotted paths
//! (`shaping.eta = 0.4`); values are numbers, `true`/`false`, double-quoted
//! strings or bracketed lists (`seeds = [0, 1, 2]`). `#` starts a comment.
//! This is a subset of TOML and is parsed as such; unknown keys are errors.
//! Every key and its default is listed in `configs/reference.conf`.
//!
//! # Run CSV
//!
//! One file per (algorithm, shaping, seed) named `<algo>_<on|off>_<seed>.csv`
//! with header `episode,reward,steps,terminal,seed,algo,shaping`. The
//! `reward` column is always the undiscounted sum of raw environment rewards,
//! so shaped and unshaped runs are directly comparable. Rows are flushed as
//! episodes finish. A sibling `.meta` file holds run metadata as `key = value`
//! lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ddpg::{train_ddpg, DdpgConfig};
use crate::envsim::{Circle, RewardConfig, RobotPose, Terminal, World};
use crate::episode::EpisodeRecord;
use crate::error::TrainError;
use crate::neural::AdamConfig;
use crate::ppo::{train_ppo, PpoConfig};
use crate::shaping::ShapingConfig;

pub const CSV_HEADER: [&str; 7] = ["episode", "reward", "steps", "terminal", "seed", "algo", "shaping"];
pub const SUMMARY_HEADER: [&str; 5] = ["label", "min", "max", "avg", "episodes"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("no runs for {0}")]
    EmptyGroup(String),
    #[error("empty log")]
    EmptyLog,
    #[error("window must be at least 1")]
    BadWindow,
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Ppo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Ppo => "ppo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddpg" => Some(Algorithm::Ddpg),
            "ppo" => Some(Algorithm::Ppo),
            _ => None,
        }
    }
}

fn shaping_tag(enabled: bool) -> &'static str {
    if enabled {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub arena_half_extent: f64,
    /// `[x, y, radius]` per obstacle.
    pub obstacles: Vec<[f64; 3]>,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub robot_radius: f64,
    pub collision_distance: f64,
    pub max_steps_per_episode: usize,
    pub dt: f64,
    /// `[x, y, heading]`.
    pub spawn: [f64; 3],
    pub heading_jitter: f64,
    pub lidar_max_range: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub progress_scale: f64,
    pub step_penalty: f64,
    pub goal_bonus: f64,
    pub collision_penalty: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self::from_world(&World::default())
    }
}

impl EnvSection {
    pub fn from_world(w: &World<f64>) -> Self {
        Self {
            arena_half_extent: w.arena_half_extent,
            obstacles: w.obstacles.iter().map(|c| [c.center[0], c.center[1], c.radius]).collect(),
            goal: w.goal,
            goal_radius: w.goal_radius,
            robot_radius: w.robot_radius,
            collision_distance: w.collision_distance,
            max_steps_per_episode: w.max_steps_per_episode,
            dt: w.dt,
            spawn: [w.spawn.x, w.spawn.y, w.spawn.heading],
            heading_jitter: w.heading_jitter,
            lidar_max_range: w.lidar_max_range,
            v_max: w.v_max,
            omega_max: w.omega_max,
            progress_scale: w.reward.progress_scale,
            step_penalty: w.reward.step_penalty,
            goal_bonus: w.reward.goal_bonus,
            collision_penalty: w.reward.collision_penalty,
        }
    }

    pub fn to_world(&self) -> World<f64> {
        World {
            arena_half_extent: self.arena_half_extent,
            obstacles: self.obstacles.iter().map(|o| Circle { center: [o[0], o[1]], radius: o[2] }).collect(),
            goal: self.goal,
            goal_radius: self.goal_radius,
            robot_radius: self.robot_radius,
            collision_distance: self.collision_distance,
            max_steps_per_episode: self.max_steps_per_episode,
            dt: self.dt,
            spawn: RobotPose { x: self.spawn[0], y: self.spawn[1], heading: self.spawn[2] },
            heading_jitter: self.heading_jitter,
            lidar_max_range: self.lidar_max_range,
            v_max: self.v_max,
            omega_max: self.omega_max,
            reward: RewardConfig {
                progress_scale: self.progress_scale,
                step_penalty: self.step_penalty,
                goal_bonus: self.goal_bonus,
                collision_penalty: self.collision_penalty,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgSection {
    pub hidden_sizes: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub tau: f64,
    pub gamma: f64,
    pub noise_std: f64,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub batch_size: usize,
}

impl Default for DdpgSection {
    fn default() -> Self {
        let d = DdpgConfig::<f64>::default();
        Self {
            hidden_sizes: d.hidden_sizes,
            actor_learning_rate: d.actor_adam.learning_rate,
            critic_learning_rate: d.critic_adam.learning_rate,
            beta1: d.actor_adam.beta1,
            beta2: d.actor_adam.beta2,
            adam_epsilon: d.actor_adam.epsilon,
            tau: d.tau,
            gamma: d.gamma,
            noise_std: d.noise_std,
            buffer_capacity: d.buffer_capacity,
            warmup: d.warmup,
            batch_size: d.batch_size,
        }
    }
}

impl DdpgSection {
    pub fn to_config(&self) -> DdpgConfig<f64> {
        let adam =
            |lr| AdamConfig { learning_rate: lr, beta1: self.beta1, beta2: self.beta2, epsilon: self.adam_epsilon };
        DdpgConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            actor_adam: adam(self.actor_learning_rate),
            critic_adam: adam(self.critic_learning_rate),
            tau: self.tau,
            gamma: self.gamma,
            noise_std: self.noise_std,
            buffer_capacity: self.buffer_capacity,
            warmup: self.warmup,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub horizon: usize,
    pub segments: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for PpoSection {
    fn default() -> Self {
        let d = PpoConfig::<f64>::default();
        Self {
            horizon: d.horizon,
            segments: d.segments,
            epochs: d.epochs,
            minibatch_size: d.minibatch_size,
            clip_epsilon: d.clip_epsilon,
            gamma: d.gamma,
            value_coeff: d.value_coeff,
            entropy_coeff: d.entropy_coeff,
            hidden_sizes: d.hidden_sizes,
            init_log_std: d.init_log_std,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            adam_epsilon: d.adam.epsilon,
        }
    }
}

impl PpoSection {
    pub fn to_config(&self) -> PpoConfig<f64> {
        PpoConfig {
            horizon: self.horizon,
            segments: self.segments,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            clip_epsilon: self.clip_epsilon,
            gamma: self.gamma,
            value_coeff: self.value_coeff,
            entropy_coeff: self.entropy_coeff,
            hidden_sizes: self.hidden_sizes.clone(),
            init_log_std: self.init_log_std,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
        }
    }
}

fn default_episodes() -> usize {
    300
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything needed to reproduce a set of training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub shaping: ShapingConfig<f64>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub ddpg: DdpgSection,
    #[serde(default)]
    pub ppo: PpoSection,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            episodes: default_episodes(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            shaping: ShapingConfig::default(),
            env: EnvSection::default(),
            ddpg: DdpgSection::default(),
            ppo: PpoSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter range; the error names the dotted key at fault.
    pub fn validate(&self) -> Result<()> {
        self.shaping.validate().map_err(|e| match e {
            crate::shaping::ShapingError::OutOfRange { field, .. } => {
                invalid(&format!("shaping.{field}"), e.to_string())
            }
            other => invalid("shaping", other.to_string()),
        })?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if let Some(s) = self.seeds.iter().find(|&&s| s > i64::MAX as u64) {
            return Err(invalid("seeds", format!("{s} exceeds the largest config integer {}", i64::MAX)));
        }
        self.to_world().validate().map_err(|e| {
            let msg = e.to_string();
            let detail = msg.split_once(": ").map_or(msg.as_str(), |(_, d)| d);
            invalid(&format!("env.{}", first_word(detail)), detail)
        })?;
        let prefixed = |section: &str, e: TrainError| match e {
            TrainError::Config(m) if m.starts_with(section) => invalid(first_word(&m), m.clone()),
            other => invalid(section, other.to_string()),
        };
        self.ddpg.to_config().validate().map_err(|e| prefixed("ddpg", e))?;
        self.ppo.to_config().validate().map_err(|e| prefixed("ppo", e))?;
        Ok(())
    }

    pub fn to_world(&self) -> World<f64> {
        self.env.to_world()
    }

    /// Flat `key = value` rendering; parsing it back yields an identical config.
    /// Panics on seeds above `i64::MAX`, which [`validate`](Self::validate) rejects.
    pub fn to_config_string(&self) -> String {
        let table = toml::Table::try_from(self).expect("config always serializes");
        let mut out = String::new();
        flatten_into(&mut out, "", &table);
        out
    }

    /// Short content hash of the flat rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn first_word(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or(s).trim_end_matches(',')
}

fn flatten_into(out: &mut String, prefix: &str, table: &toml::Table) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten_into(out, &key, t),
            other => {
                let _ = writeln!(out, "{key} = {other}");
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ExperimentConfig::parse(&text)
}

/// All episodes of one training run plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub algorithm: Algorithm,
    pub shaping: bool,
    pub seed: u64,
    pub config_hash: String,
    pub wall_clock_secs: f64,
    pub records: Vec<EpisodeRecord<f64>>,
}

impl EpisodeLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }
}

/// Writes episode rows as they arrive, flushing each one.
pub struct CsvLogWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    seed: u64,
    algo: Algorithm,
    shaping: bool,
}

impl CsvLogWriter {
    pub fn create(path: &Path, algo: Algorithm, shaping: bool, seed: u64) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut writer =
            csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
        let csv_err = |e: csv::Error| HarnessError::Csv { path: path.to_path_buf(), message: e.to_string() };
        writer.write_record(CSV_HEADER).map_err(csv_err)?;
        writer.flush().map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), writer, seed, algo, shaping })
    }

    pub fn append(&mut self, rec: &EpisodeRecord<f64>) -> Result<()> {
        let row = [
            rec.episode.to_string(),
            rec.reward.to_string(),
            rec.steps.to_string(),
            rec.terminal.as_str().to_string(),
            self.seed.to_string(),
            self.algo.as_str().to_string(),
            shaping_tag(self.shaping).to_string(),
        ];
        self.writer
            .write_record(&row)
            .map_err(|e| HarnessError::Csv { path: self.path.clone(), message: e.to_string() })?;
        self.writer.flush().map_err(io_err(&self.path))
    }
}

/// Reads a run CSV back into an [`EpisodeLog`]; metadata comes from the rows
/// and, when present, the sibling `.meta` file.
pub fn read_log_csv(path: &Path) -> Result<EpisodeLog> {
    let csv_err = |m: String| HarnessError::Csv { path: path.to_path_buf(), message: m };
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(csv_err(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    let mut ident: Option<(u64, Algorithm, bool)> = None;
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(e.to_string()))?;
        let bad = |what: &str| csv_err(format!("row {}: bad {what}", line + 1));
        let episode = row[0].parse().map_err(|_| bad("episode"))?;
        let reward: f64 = row[1].parse().map_err(|_| bad("reward"))?;
        let steps = row[2].parse().map_err(|_| bad("steps"))?;
        let terminal = Terminal::parse(&row[3]).ok_or_else(|| bad("terminal"))?;
        let seed = row[4].parse().map_err(|_| bad("seed"))?;
        let algo = Algorithm::parse(&row[5]).ok_or_else(|| bad("algo"))?;
        let shaping = match &row[6] {
            "on" => true,
            "off" => false,
            _ => return Err(bad("shaping")),
        };
        match ident {
            None => ident = Some((seed, algo, shaping)),
            Some(id) if id != (seed, algo, shaping) => return Err(bad("run identity (mixed runs)")),
            _ => {}
        }
        records.push(EpisodeRecord { episode, reward, steps, terminal });
    }
    let (seed, algorithm, shaping) = ident.ok_or(HarnessError::EmptyLog)?;
    let meta = read_meta(&path.with_extension("meta")).unwrap_or_default();
    Ok(EpisodeLog {
        algorithm,
        shaping,
        seed,
        config_hash: meta.get("config_hash").cloned().unwrap_or_default(),
        wall_clock_secs: meta.get("wall_clock_secs").and_then(|s| s.parse().ok()).unwrap_or(0.0),
        records,
    })
}

fn read_meta(path: &Path) -> Option<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect(),
    )
}

/// Reads every run CSV in `dir` (files with another header are skipped).
pub fn read_log_dir(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut logs = Vec::new();
    for p in paths {
        match read_log_csv(&p) {
            Ok(log) => logs.push(log),
            Err(HarnessError::Csv { message, .. }) if message.starts_with("unexpected header") => {}
            Err(HarnessError::EmptyLog) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(logs)
}

/// Result of one seed's run within [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub csv_path: PathBuf,
    pub result: Result<EpisodeLog>,
}

fn run_stem(algo: Algorithm, shaping: bool, seed: u64, repeat: usize) -> String {
    let base = format!("{}_{}_{}", algo.as_str(), shaping_tag(shaping), seed);
    if repeat == 0 {
        base
    } else {
        format!("{base}-{repeat}")
    }
}

/// Trains one run and streams its CSV; `observer` sees every record after it is on disk.
pub fn run_single(
    cfg: &ExperimentConfig,
    seed: u64,
    csv_path: &Path,
    observer: &mut dyn FnMut(&EpisodeRecord<f64>) -> std::result::Result<(), crate::episode::ObserverError>,
) -> Result<EpisodeLog> {
    let world = cfg.to_world();
    let mut writer = CsvLogWriter::create(csv_path, cfg.algorithm, cfg.shaping.enabled, seed)?;
    let started = Instant::now();
    let mut on_episode = |rec: &EpisodeRecord<f64>| -> std::result::Result<(), crate::episode::ObserverError> {
        writer.append(rec).map_err(|e| Box::new(e) as crate::episode::ObserverError)?;
        observer(rec)
    };
    let records = match cfg.algorithm {
        Algorithm::Ddpg => train_ddpg(&world, &cfg.ddpg.to_config(), &cfg.shaping, cfg.episodes, seed, &mut on_episode),
        Algorithm::Ppo => train_ppo(&world, &cfg.ppo.to_config(), &cfg.shaping, cfg.episodes, seed, &mut on_episode),
    };
    let records = match records {
        Ok(r) => r,
        Err(TrainError::Aborted(e)) => match e.downcast::<HarnessError>() {
            Ok(h) => return Err(*h),
            Err(other) => return Err(TrainError::Aborted(other).into()),
        },
        Err(e) => return Err(e.into()),
    };
    let log = EpisodeLog {
        algorithm: cfg.algorithm,
        shaping: cfg.shaping.enabled,
        seed,
        config_hash: cfg.hash(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        records,
    };
    write_meta(&csv_path.with_extension("meta"), cfg, &log)?;
    Ok(log)
}

fn write_meta(path: &Path, cfg: &ExperimentConfig, log: &EpisodeLog) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "algo = {}", log.algorithm.as_str());
    let _ = writeln!(s, "shaping = {}", shaping_tag(log.shaping));
    let _ = writeln!(s, "eta = {}", cfg.shaping.eta);
    let _ = writeln!(s, "seed = {}", log.seed);
    let _ = writeln!(s, "episodes = {}", log.records.len());
    let _ = writeln!(s, "reward_column = raw_episode_sum");
    let _ = writeln!(s, "config_hash = {}", log.config_hash);
    let _ = writeln!(s, "wall_clock_secs = {}", log.wall_clock_secs);
    fs::write(path, s).map_err(io_err(path))
}

/// One run per configured seed. A failing run is reported in its outcome and
/// does not stop the remaining seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let repeat = seen.entry(seed).or_insert(0);
        let stem = run_stem(cfg.algorithm, cfg.shaping.enabled, seed, *repeat);
        *repeat += 1;
        let csv_path = cfg.output_dir.join(format!("{stem}.csv"));
        let result = run_single(cfg, seed, &csv_path, &mut |_| Ok(()));
        outcomes.push(RunOutcome { seed, csv_path, result });
    }
    Ok(outcomes)
}

/// One line of the min/max/avg table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub min_reward: f64,
    pub max_reward: f64,
    pub avg_reward: f64,
    pub episodes: usize,
}

pub fn variant_label(algo: Algorithm, shaping: bool) -> String {
    let a = match algo {
        Algorithm::Ddpg => "DDPG",
        Algorithm::Ppo => "PPO",
    };
    if shaping {
        format!("{a} with reward shaping")
    } else {
        format!("{a} w/o reward shaping")
    }
}

/// Table order: DDPG w/o, PPO w/o, DDPG with, PPO with.
pub const VARIANT_ORDER: [(Algorithm, bool); 4] =
    [(Algorithm::Ddpg, false), (Algorithm::Ppo, false), (Algorithm::Ddpg, true), (Algorithm::Ppo, true)];

/// Pools the episode rewards of all runs in a group and reports min/max/avg.
pub fn summarize_group(label: &str, runs: &[&EpisodeLog]) -> Result<SummaryRow> {
    let pooled: Vec<f64> = runs.iter().flat_map(|l| l.records.iter().map(|r| r.reward)).collect();
    if pooled.is_empty() {
        return Err(HarnessError::EmptyGroup(label.to_string()));
    }
    let min = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let max = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg = (pooled.iter().sum::<f64>() / pooled.len() as f64).clamp(min, max);
    Ok(SummaryRow {
        label: label.to_string(),
        min_reward: min,
        max_reward: max,
        avg_reward: avg,
        episodes: pooled.len(),
    })
}

fn sorted_group(logs: &[EpisodeLog], algo: Algorithm, shaping: bool) -> Vec<&EpisodeLog> {
    let mut g: Vec<&EpisodeLog> = logs.iter().filter(|l| l.algorithm == algo && l.shaping == shaping).collect();
    g.sort_by_key(|l| l.seed);
    g
}

/// Pooled rows for every variant present in `logs`, in table order.
pub fn summarize(logs: &[EpisodeLog]) -> Result<Vec<SummaryRow>> {
    if logs.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    VARIANT_ORDER
        .iter()
        .filter_map(|&(a, s)| {
            let group = sorted_group(logs, a, s);
            (!group.is_empty()).then(|| summarize_group(&variant_label(a, s), &group))
        })
        .collect()
}

/// One row per run, labelled with its seed.
pub fn summarize_per_seed(logs: &[EpisodeLog]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for &(a, s) in &VARIANT_ORDER {
        for log in sorted_group(logs, a, s) {
            rows.push(summarize_group(&format!("{} (seed {})", variant_label(a, s), log.seed), &[log])?);
        }
    }
    Ok(rows)
}

pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} | {:>10} | {:>10} | {:>10}", "variant", "min", "max", "avg");
    let _ = writeln!(s, "{}", "-".repeat(width + 39));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$} | {:>10.2} | {:>10.2} | {:>10.2}",
            r.label, r.min_reward, r.max_reward, r.avg_reward
        );
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = SUMMARY_HEADER.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.label, r.min_reward, r.max_reward, r.avg_reward, r.episodes);
    }
    s
}

/// Trailing moving average; the first `window - 1` points average whatever history exists.
pub fn learning_curve(rewards: &[f64], window: usize) -> Result<Vec<(usize, f64)>> {
    if window == 0 {
        return Err(HarnessError::BadWindow);
    }
    if rewards.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    Ok((0..rewards.len())
        .map(|i| {
            let w = &rewards[(i + 1).saturating_sub(window)..=i];
            // offset by the first element so constant windows average exactly
            let base = w[0];
            let mean = base + w.iter().map(|&x| x - base).sum::<f64>() / w.len() as f64;
            (i, mean)
        })
        .collect())
}

pub fn emit_learning_curve(log: &EpisodeLog, window: usize) -> Result<String> {
    let points = learning_curve(&log.rewards(), window)?;
    let mut s = String::from("episode,smoothed_reward\n");
    for (i, (_, v)) in points.iter().enumerate() {
        let _ = writeln!(s, "{},{}", log.records[i].episode, v);
    }
    Ok(s)
}
