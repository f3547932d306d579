//! Command-line front end: `gen`, `build-memory`, `run`, `eval` and `inspect-memory`.
//!
//! Output layout under the output directory:
//!
//! ```text
//! worlds/<scene_id>.json       episodes/<scene_id>.jsonl     memory/<key>/...
//! runs/<name>/config.json      runs/<name>/results/<episode>.json
//! runs/<name>/traces/<episode>.jsonl                          reports/<label>-<group>.{csv,md}
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{make_policy, AgentError, OracleConfig, PolicyKind, PolicySettings, RateLimiter};
use crate::eval::{aggregate, emit_report, to_markdown, EvalError, GroupBy, IsrMode, ReportFormat};
use crate::runner::{write_trace_file, EpisodeResult, RunError, Runner, RunnerConfig};
use crate::simulator::{generate_world, Episode, GenConfig, SceneClass, SimError, World, WorldFile};
use crate::sum::{sha256_hex, Backend, KeyMode, MemoryBank, MemoryMeta, MemorySelection, SumError};

pub const ENV_RECON_ENDPOINT: &str = "VLNMEM_RECON_ENDPOINT";
pub const ENV_POLICY_ENDPOINT: &str = "VLNMEM_POLICY_ENDPOINT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadArgs(String),
    #[error("unknown memory key `{0}`")]
    UnknownKey(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sum(#[from] SumError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{0} episode(s) failed; rerun with --keep-going to accept partial results")]
    EpisodeFailures(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadArgs(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub reconstruction: Option<String>,
    pub policy: Option<String>,
}

/// One self-describing experiment document; command-line flags override its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene_classes: Vec<SceneClass>,
    pub episodes_per_class: usize,
    pub policy: PolicyKind,
    pub memory_selection: MemorySelection,
    pub runner: RunnerConfig,
    pub oracle: OracleConfig,
    pub endpoints: Endpoints,
    pub output_dir: PathBuf,
    pub parallel: usize,
    pub rate_limit_per_sec: Option<f64>,
    pub policy_timeout_secs: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_classes: SceneClass::ALL.to_vec(),
            episodes_per_class: 10,
            policy: PolicyKind::ScriptedOracle,
            memory_selection: MemorySelection::None,
            runner: RunnerConfig::default(),
            oracle: OracleConfig::default(),
            endpoints: Endpoints::default(),
            output_dir: PathBuf::from("out"),
            parallel: 1,
            rate_limit_per_sec: None,
            policy_timeout_secs: 120,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::BadArgs(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::BadArgs(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "vlnmem", version, about = "Spatial-memory VLN harness: generate worlds, build memory, run agents, score runs")]
pub struct Cli {
    /// Experiment config (JSON); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate worlds and episodes.
    Gen(GenArgs),
    /// Pre-explore every episode and store its spatial memory.
    BuildMemory(BuildMemoryArgs),
    /// Run a policy over the generated episodes.
    Run(RunArgs),
    /// Aggregate run results into CSV and Markdown reports.
    Eval(EvalArgs),
    /// Export the memory images of one bank record.
    InspectMemory(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated scene classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<SceneClass>>,
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildMemoryArgs {
    /// `posed-depth` or `external`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Reconstruction service base URL.
    #[arg(long, env = ENV_RECON_ENDPOINT)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub q: Option<usize>,
    /// `scene-instruction` or `scene`.
    #[arg(long)]
    pub key_mode: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<SceneClass>>,
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub memory: Option<MemorySelection>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run name; defaults to `<policy>-<memory>`.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Exit 0 even when some episodes fail.
    #[arg(long)]
    pub keep_going: bool,
    /// Decision service base URL for `--policy remote`.
    #[arg(long, env = ENV_POLICY_ENDPOINT)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub success_radius: Option<f64>,
    /// Disable the label-deviation stop (deployment mode).
    #[arg(long)]
    pub no_deviation: bool,
    /// Maximum remote calls per second, shared by all workers.
    #[arg(long)]
    pub rate_limit: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<SceneClass>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run names to include (repeatable); defaults to every run.
    #[arg(long = "run")]
    pub runs: Vec<String>,
    /// `scene`, `complexity`, `coarse-complexity` or `none`.
    #[arg(long, default_value = "scene")]
    pub group: GroupBy,
    #[arg(long)]
    pub radius: Option<f64>,
    /// `pair` or `normalized`.
    #[arg(long, default_value = "pair")]
    pub isr_mode: String,
    /// Report file stem; defaults to the run names joined by `+`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub key: String,
    #[arg(long, default_value = "hybrid")]
    pub selection: MemorySelection,
    /// Destination directory; defaults to `<out>/inspect/<key>`.
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    main_from(std::env::args_os())
}

pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, a),
        Command::BuildMemory(a) => cmd_build_memory(cfg, a),
        Command::Run(a) => cmd_run(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::InspectMemory(a) => cmd_inspect_memory(cfg, a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

fn worlds_dir(out: &Path) -> PathBuf {
    out.join("worlds")
}

fn episodes_dir(out: &Path) -> PathBuf {
    out.join("episodes")
}

fn memory_dir(out: &Path) -> PathBuf {
    out.join("memory")
}

fn run_dir(out: &Path, name: &str) -> PathBuf {
    out.join("runs").join(name)
}

fn check_name(name: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'));
    if ok {
        Ok(())
    } else {
        Err(CliError::BadArgs(format!("invalid name `{name}`")))
    }
}

pub fn cmd_gen(mut cfg: ExperimentConfig, a: GenArgs) -> Result<(), CliError> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.classes {
        cfg.scene_classes = c;
    }
    if let Some(n) = a.per_class {
        cfg.episodes_per_class = n;
    }
    if cfg.scene_classes.is_empty() {
        return Err(CliError::BadArgs("no scene classes given".into()));
    }
    let out = cfg.output_dir.clone();
    let gen = GenConfig { episodes: cfg.episodes_per_class, dynamics: cfg.runner.dynamics, oracle: cfg.oracle, ..Default::default() };
    let mut classes = cfg.scene_classes.clone();
    classes.dedup();
    let mut total = 0;
    for class in classes {
        let (world, episodes) = generate_world(cfg.seed, class, &gen)?;
        let id = world.scene_id();
        write_file(&worlds_dir(&out).join(format!("{id}.json")), &to_json_pretty(&world.to_file()))?;
        let mut lines = String::new();
        for ep in &episodes {
            lines.push_str(&ep.to_json_line());
            lines.push('\n');
        }
        write_file(&episodes_dir(&out).join(format!("{id}.jsonl")), lines.as_bytes())?;
        total += episodes.len();
        log::info!("{id}: {} episodes", episodes.len());
    }
    write_file(&out.join("gen_config.json"), &to_json_pretty(&cfg))?;
    println!("generated {total} episodes in {}", out.display());
    Ok(())
}

pub struct Scene {
    pub world: World,
    pub episodes: Vec<Episode>,
}

/// Loads every `episodes/<scene_id>.jsonl` with its world file, sorted by scene id.
pub fn load_scenes(out: &Path, classes: Option<&[SceneClass]>) -> Result<Vec<Scene>, CliError> {
    let dir = episodes_dir(out);
    let entries = fs::read_dir(&dir).map_err(|e| CliError::Io {
        path: dir.clone(),
        source: std::io::Error::new(e.kind(), format!("{e}; run `gen` first")),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut scenes = Vec::new();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let world_path = worlds_dir(out).join(format!("{stem}.json"));
        let text = fs::read_to_string(&world_path).map_err(io_err(&world_path))?;
        let wf: WorldFile = serde_json::from_str(&text)
            .map_err(|e| CliError::BadFile { path: world_path.clone(), reason: e.to_string() })?;
        if classes.is_some_and(|c| !c.contains(&wf.scene_class)) {
            continue;
        }
        let world = wf.into_world()?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut episodes = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let ep = Episode::from_json_line(line)?;
            if ep.scene_class != world.scene_class {
                return Err(CliError::BadFile { path: path.clone(), reason: format!("episode {} has the wrong scene class", ep.id) });
            }
            episodes.push(ep);
        }
        scenes.push(Scene { world, episodes });
    }
    if scenes.is_empty() {
        return Err(CliError::BadArgs(format!("no episodes found under {}", dir.display())));
    }
    Ok(scenes)
}

fn thread_pool(n: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| CliError::BadArgs(format!("thread pool: {e}")))
}

pub fn cmd_build_memory(mut cfg: ExperimentConfig, a: BuildMemoryArgs) -> Result<(), CliError> {
    if let Some(b) = a.backend {
        cfg.runner.reconstructor.backend = match b.to_ascii_lowercase().replace('_', "-").as_str() {
            "posed-depth" => Backend::PosedDepth,
            "external" => Backend::External,
            other => return Err(CliError::BadArgs(format!("unknown backend `{other}`"))),
        };
    }
    if let Some(e) = a.endpoint {
        cfg.endpoints.reconstruction = Some(e);
    }
    if let Some(q) = a.q {
        cfg.runner.q = q;
    }
    if let Some(k) = a.key_mode {
        cfg.runner.key_mode = parse_key_mode(&k)?;
    }
    if let Some(p) = a.parallel {
        cfg.parallel = p;
    }
    match (cfg.runner.reconstructor.backend, &cfg.endpoints.reconstruction) {
        (Backend::External, None) => {
            return Err(CliError::BadArgs(format!("--backend external needs --endpoint or {ENV_RECON_ENDPOINT}")))
        }
        (Backend::External, Some(e)) => cfg.runner.reconstructor.external_endpoint = Some(e.clone()),
        (Backend::PosedDepth, Some(_)) => log::info!("reconstruction endpoint ignored by the posed-depth backend"),
        _ => {}
    }
    let out = cfg.output_dir.clone();
    let scenes = load_scenes(&out, a.classes.as_deref())?;
    let bank = MemoryBank::new(memory_dir(&out));
    let runner = Runner::new(cfg.runner.clone(), Some(bank.clone())).map_err(|e| CliError::BadArgs(e.to_string()))?;

    // one builder per key, so shared keys never see concurrent writers
    let mut seen = std::collections::HashSet::new();
    let mut jobs = Vec::new();
    for s in &scenes {
        for ep in &s.episodes {
            if seen.insert(runner.memory_key(&s.world, ep)) {
                jobs.push((&s.world, ep));
            }
        }
    }
    let pool = thread_pool(cfg.parallel)?;
    pool.install(|| {
        jobs.par_iter().try_for_each(|(world, ep)| -> Result<(), CliError> {
            let m = runner.pre_explore(world, ep)?;
            log::info!("{}: {} points, digest {}", m.scene_key, m.point_count, &m.reconstruction_digest[..12]);
            Ok(())
        })
    })?;
    println!("stored {} memory records in {}", jobs.len(), bank.root().display());
    Ok(())
}

fn parse_key_mode(s: &str) -> Result<KeyMode, CliError> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "scene-instruction" => Ok(KeyMode::SceneInstruction),
        "scene" => Ok(KeyMode::Scene),
        other => Err(CliError::BadArgs(format!("unknown key mode `{other}`"))),
    }
}

/// Per-episode policy seed from the experiment seed and the episode id.
pub fn episode_seed(seed: u64, episode_id: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}/{episode_id}").as_bytes());
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}

pub fn cmd_run(mut cfg: ExperimentConfig, a: RunArgs) -> Result<(), CliError> {
    if let Some(p) = a.policy {
        cfg.policy = p;
    }
    if let Some(m) = a.memory {
        cfg.memory_selection = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.parallel {
        cfg.parallel = p;
    }
    if let Some(e) = a.endpoint {
        cfg.endpoints.policy = Some(e);
    }
    if let Some(n) = a.max_steps {
        cfg.runner.max_steps = n;
    }
    if let Some(t) = a.tau {
        cfg.runner.tau = t;
    }
    if let Some(r) = a.success_radius {
        cfg.runner.success_radius = r;
    }
    if a.no_deviation {
        cfg.runner.deviation_enabled = false;
    }
    if let Some(r) = a.rate_limit {
        cfg.rate_limit_per_sec = Some(r);
    }
    cfg.runner.memory_selection = cfg.memory_selection;
    if cfg.policy == PolicyKind::Remote && cfg.endpoints.policy.is_none() {
        return Err(CliError::BadArgs(format!("--policy remote needs --endpoint or {ENV_POLICY_ENDPOINT}")));
    }
    if cfg.policy != PolicyKind::Remote && cfg.endpoints.policy.is_some() {
        log::info!("policy endpoint ignored by the {} policy", cfg.policy);
    }
    let name = a.name.unwrap_or_else(|| format!("{}-{}", cfg.policy, cfg.memory_selection));
    check_name(&name)?;

    let out = cfg.output_dir.clone();
    let scenes = load_scenes(&out, a.classes.as_deref())?;
    let bank = MemoryBank::new(memory_dir(&out));
    let runner = Runner::new(cfg.runner.clone(), Some(bank)).map_err(|e| CliError::BadArgs(e.to_string()))?;
    let dir = run_dir(&out, &name);
    if dir.join("results").exists() {
        fs::remove_dir_all(dir.join("results")).map_err(io_err(&dir))?;
    }
    if dir.join("traces").exists() {
        fs::remove_dir_all(dir.join("traces")).map_err(io_err(&dir))?;
    }
    write_file(&dir.join("config.json"), &to_json_pretty(&cfg))?;

    let limiter = cfg.rate_limit_per_sec.map(|r| Arc::new(RateLimiter::per_second(r)));
    let jobs: Vec<(&World, &Episode)> = scenes.iter().flat_map(|s| s.episodes.iter().map(move |e| (&s.world, e))).collect();
    let failures = AtomicUsize::new(0);
    let successes = AtomicUsize::new(0);
    let keep_going = a.keep_going;
    let pool = thread_pool(cfg.parallel)?;
    let outcome = pool.install(|| {
        jobs.par_iter().try_for_each(|(world, ep)| -> Result<(), CliError> {
            let settings = PolicySettings {
                seed: episode_seed(cfg.seed, &ep.id),
                endpoint: cfg.endpoints.policy.clone(),
                oracle: cfg.oracle,
                rate_limiter: limiter.clone(),
                timeout_secs: Some(cfg.policy_timeout_secs),
            };
            let result = make_policy(cfg.policy, &settings)
                .map_err(CliError::from)
                .and_then(|mut p| runner.run_episode(world, ep, p.as_mut()).map_err(CliError::from));
            let r = match result {
                Ok(r) => r,
                Err(e) if keep_going => {
                    log::error!("{}: {e}", ep.id);
                    failures.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            if let Some(f) = &r.failure {
                log::error!("{}: policy failure: {f}", ep.id);
                failures.fetch_add(1, Ordering::Relaxed);
            }
            if r.success {
                successes.fetch_add(1, Ordering::Relaxed);
            }
            write_file(&dir.join("results").join(format!("{}.json", ep.id)), &to_json_pretty(&r))?;
            let trace = dir.join("traces").join(format!("{}.jsonl", ep.id));
            write_file(&trace, b"")?;
            write_trace_file(&trace, &r)?;
            Ok(())
        })
    });
    outcome?;
    let failed = failures.into_inner();
    println!(
        "run {name}: {} episodes, {} successful, {failed} failed; results in {}",
        jobs.len(),
        successes.into_inner(),
        dir.display()
    );
    if failed > 0 && !keep_going {
        return Err(CliError::EpisodeFailures(failed));
    }
    Ok(())
}

/// Reads `runs/<name>/results/*.json` in file-name order.
pub fn load_results(out: &Path, name: &str) -> Result<Vec<EpisodeResult>, CliError> {
    let dir = run_dir(out, name).join("results");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::BadFile { path: p.clone(), reason: e.to_string() })
        })
        .collect()
}

fn all_runs(out: &Path) -> Result<Vec<String>, CliError> {
    let dir = out.join("runs");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("results").is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .collect();
    names.sort();
    Ok(names)
}

pub fn cmd_eval(cfg: ExperimentConfig, a: EvalArgs) -> Result<(), CliError> {
    let out = cfg.output_dir.clone();
    let runs = if a.runs.is_empty() { all_runs(&out)? } else { a.runs };
    if runs.is_empty() {
        return Err(CliError::BadArgs(format!("no runs under {}", out.join("runs").display())));
    }
    let isr = match a.isr_mode.to_ascii_lowercase().as_str() {
        "pair" => IsrMode::Pair,
        "normalized" => IsrMode::Normalized,
        other => return Err(CliError::BadArgs(format!("unknown ISR mode `{other}`"))),
    };
    let mut results = Vec::new();
    for r in &runs {
        check_name(r)?;
        results.extend(load_results(&out, r)?);
    }
    let radius = a.radius.unwrap_or(cfg.runner.success_radius);
    if !(radius > 0.0) {
        return Err(CliError::BadArgs(format!("radius {radius} must be positive")));
    }
    let agg = aggregate(&results, radius, a.group, isr)?;
    let label = a.name.unwrap_or_else(|| runs.join("+"));
    check_name(&label)?;
    let group = serde_json::to_value(a.group).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let stem = out.join("reports").join(format!("{label}-{group}"));
    emit_report(&agg, ReportFormat::Csv, &stem.with_extension("csv"))?;
    emit_report(&agg, ReportFormat::Markdown, &stem.with_extension("md"))?;
    print!("{}", to_markdown(&agg));
    Ok(())
}

pub fn cmd_inspect_memory(cfg: ExperimentConfig, a: InspectArgs) -> Result<(), CliError> {
    let out = cfg.output_dir.clone();
    let bank = MemoryBank::new(memory_dir(&out));
    let meta: MemoryMeta = match bank.read_meta(&a.key) {
        Ok(Some(m)) => m,
        Ok(None) | Err(SumError::InvalidKey(_)) => return Err(CliError::UnknownKey(a.key)),
        Err(e) => return Err(e.into()),
    };
    let src = bank.record_dir(&a.key);
    let dest = a.dest.unwrap_or_else(|| out.join("inspect").join(&a.key));
    let mut wanted = Vec::new();
    if a.selection.wants_frontal() {
        wanted.push(("frontal.png", &meta.frontal_sha256));
    }
    if a.selection.wants_oblique() {
        wanted.push(("oblique.png", &meta.oblique_sha256));
    }
    for (name, digest) in wanted {
        let path = src.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != *digest {
            return Err(SumError::CorruptRecord { key: a.key.clone(), reason: format!("{name} digest mismatch") }.into());
        }
        let to = dest.join(name);
        write_file(&to, &bytes)?;
        println!("{}", to.display());
    }
    let meta_path = dest.join("meta.json");
    write_file(&meta_path, &to_json_pretty(&meta))?;
    println!("{}", meta_path.display());
    Ok(())
}
