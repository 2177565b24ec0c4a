//! Command-line front end: `gen-scenarios`, `train`, `eval`, `noise-sweep`.
//!
//! Settings resolve as library defaults, then `--desk-scale`, then the
//! `--config` file, then explicit flags. The global seed falls back to
//! `ECO_MRTL_SEED` and finally 0.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{EvalEcho, RunConfig};

use crate::control::ObservationScales;
use crate::error::Error;
use crate::evalbench::{
    compare, evaluate, noise_sweep, write_benefit_map, ControllerKind, EvalConfig, NoiseCurve, NoiseKind, NoiseSpec,
    Policies,
};
use crate::learner::{load_params, train, PolicyMode, PolicyParams, TrainConfig, TrainOptions};
use crate::scenario::{corpus_hash, generate_corpus, load_corpus, save_corpus, Context, ContextSpace};

pub const SEED_ENV: &str = "ECO_MRTL_SEED";

#[derive(Debug, Parser)]
#[command(name = "eco-mrtl", version, about = "Eco-driving benchmark: scenario generation, residual policy training and evaluation")]
pub struct Cli {
    /// Flat TOML file with setting overrides (unknown keys are errors).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed [default: $ECO_MRTL_SEED, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads [default: all cores]. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a corpus of intersection contexts.
    GenScenarios(GenArgs),
    /// Train a residual (or from-scratch) policy on a corpus.
    Train(TrainArgs),
    /// Paired benchmark of controllers against the IDM baseline.
    Eval(EvalArgs),
    /// Emission curves under actuator noise.
    NoiseSweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of contexts.
    #[arg(long)]
    pub n: usize,
    /// Output corpus file.
    #[arg(long)]
    pub out: PathBuf,
    /// AV penetration levels to draw from; a subset of the published levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 1.0])]
    pub penetration: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus file [default: `corpus` from --config].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration JSON lines [default: <out>.log.jsonl].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Reduced workstation schedule (50 iterations).
    #[arg(long)]
    pub desk_scale: bool,
    /// Training iterations [default: 400, 50 with --desk-scale].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// `mrtl` (residual on the nominal policy) or `multitask` (from scratch) [default: mrtl].
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus file [default: `corpus` from --config].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// MRTL checkpoint [default: `checkpoint` from --config].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Multi-task checkpoint.
    #[arg(long)]
    pub multitask_checkpoint: Option<PathBuf>,
    /// Controllers to compare; `idm` is always added as the baseline.
    #[arg(long, value_delimiter = ',', default_value = "idm,nominal")]
    pub controllers: Vec<String>,
    /// Evaluation seed indices [default: 0,1,2,3,4].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory [default: `report_dir` from --config].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Corpus file [default: `corpus` from --config].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `control` (level = std) or `bias` (level = mean, std 0.3).
    #[arg(long)]
    pub kind: String,
    /// Noise levels, e.g. 0,0.1,0.2,0.3.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "nominal")]
    pub controllers: Vec<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub multitask_checkpoint: Option<PathBuf>,
    /// Evaluation seed indices [default: 0,1,2,3,4].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory [default: `report_dir` from --config].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or missing inputs: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) | Error::InvalidSpace(m) => Self::Usage(m),
            Error::MissingParams(k) => Self::Usage(format!("controller `{k}` requires a checkpoint")),
            other => Self::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

struct Ctx {
    file: RunConfig,
    seed: u64,
    verbose: u8,
}

impl Ctx {
    fn resolve(cli: &Cli) -> CliResult<Self> {
        let file = match &cli.config {
            Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
            None => RunConfig::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|e| CliError::Usage(format!("{SEED_ENV}={v}: {e}")))?),
            Err(_) => None,
        };
        let seed = cli.seed.or(file.seed).or(env_seed).unwrap_or(0);
        let verbose = cli.verbose.max(file.verbosity.unwrap_or(0));
        Ok(Self { file, seed, verbose })
    }

    fn input(&self, flag: &Option<PathBuf>, key: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
        let p = flag.clone().or_else(|| key.clone()).ok_or_else(|| CliError::Usage(format!("--{what} is required")))?;
        if !p.is_file() {
            return usage(format!("{what} `{}` does not exist", p.display()));
        }
        Ok(p)
    }

    fn corpus(&self, flag: &Option<PathBuf>) -> CliResult<(Vec<Context>, String)> {
        let path = self.input(flag, &self.file.corpus, "corpus")?;
        let corpus = load_corpus(&path)?;
        let hash = corpus_hash(&corpus);
        Ok((corpus, hash))
    }

    fn out_dir(&self, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
        let dir = flag.clone().or_else(|| self.file.report_dir.clone()).ok_or_else(|| CliError::Usage("--out is required".into()))?;
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn eval_config(&self, seeds: &Option<Vec<u64>>) -> CliResult<EvalConfig> {
        let mut cfg = self.file.eval_config();
        if let Some(s) = seeds {
            cfg.seeds = s.clone();
        }
        if cfg.seeds.is_empty() {
            return usage("at least one evaluation seed is required");
        }
        cfg.sim.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> CliResult {
    let ctx = Ctx::resolve(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return usage("--workers must be at least 1");
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(Error::Config(e.to_string())))?;
    pool.install(|| match &cli.command {
        Command::GenScenarios(a) => gen_scenarios(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::NoiseSweep(a) => cmd_noise_sweep(&ctx, a),
    })
}

fn gen_scenarios(ctx: &Ctx, a: &GenArgs) -> CliResult {
    if a.n == 0 {
        return usage("--n must be at least 1");
    }
    let published = ContextSpace::default().penetration_levels;
    if a.penetration.is_empty() || a.penetration.iter().any(|p| !published.contains(p)) {
        return usage(format!("--penetration must be a subset of {published:?}"));
    }
    let space = ContextSpace { penetration_levels: a.penetration.clone(), ..ContextSpace::default() };
    let corpus = generate_corpus(&space, a.n, ctx.seed)?;
    save_corpus(&corpus, &a.out)?;
    println!("wrote {} contexts to {} (seed {}, sha256 {})", corpus.len(), a.out.display(), ctx.seed, corpus_hash(&corpus));
    Ok(())
}

fn parse_mode(s: &str) -> CliResult<PolicyMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "mrtl" => Ok(PolicyMode::Mrtl),
        "multitask" => Ok(PolicyMode::Multitask),
        other => usage(format!("unknown mode `{other}` (expected mrtl or multitask)")),
    }
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> CliResult {
    let (corpus, _) = ctx.corpus(&a.corpus)?;
    let mut cfg = if a.desk_scale { TrainConfig::desk() } else { TrainConfig::default() };
    ctx.file.apply_train(&mut cfg);
    cfg.seed = ctx.seed;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(m) = &a.mode {
        cfg.mode = parse_mode(m)?;
    }
    cfg.validate()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path)?);
    if ctx.verbose > 0 {
        eprintln!("training {} on {} contexts for {} iterations (seed {})", cfg.mode.as_str(), corpus.len(), cfg.iterations, cfg.seed);
    }
    let opts = TrainOptions { checkpoint: Some(a.out.clone()), log: Some(&mut log), wall_time: false };
    let outcome = train::<f64>(&corpus, &cfg, opts);
    log.flush()?;
    let outcome = outcome?;
    if ctx.verbose > 0 {
        if let Some(last) = outcome.log.last() {
            eprintln!("final mean return {:.3}", last.mean_return);
        }
    }
    println!("wrote checkpoint {} and log {}", a.out.display(), log_path.display());
    Ok(())
}

fn parse_kinds(list: &[String]) -> CliResult<Vec<ControllerKind>> {
    let mut kinds = Vec::new();
    for s in list.iter().filter(|s| !s.trim().is_empty()) {
        let k: ControllerKind = s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return usage("no controllers given");
    }
    Ok(kinds)
}

struct Loaded {
    mrtl: Option<PolicyParams<f64>>,
    multitask: Option<PolicyParams<f64>>,
    echo: Vec<(String, String)>,
}

impl Loaded {
    fn policies(&self) -> Policies<'_, f64> {
        Policies { mrtl: self.mrtl.as_ref(), multitask: self.multitask.as_ref() }
    }
}

fn load_policies(
    ctx: &Ctx,
    kinds: &[ControllerKind],
    mrtl: &Option<PathBuf>,
    multitask: &Option<PathBuf>,
) -> CliResult<Loaded> {
    let mut out = Loaded { mrtl: None, multitask: None, echo: Vec::new() };
    if kinds.contains(&ControllerKind::Mrtl) {
        let p = mrtl.clone().or_else(|| ctx.file.checkpoint.clone());
        let p = match p {
            Some(p) => p,
            None => return usage("controller `mrtl` requires --checkpoint"),
        };
        let p = ctx.input(&Some(p), &None, "checkpoint")?;
        out.echo.push(("mrtl".into(), p.display().to_string()));
        out.mrtl = Some(load_params(&p)?);
    }
    if kinds.contains(&ControllerKind::Multitask) {
        let p = ctx.input(multitask, &None, "multitask-checkpoint")?;
        out.echo.push(("multitask".into(), p.display().to_string()));
        out.multitask = Some(load_params(&p)?);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes)?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> CliResult {
    let mut kinds = parse_kinds(&a.controllers)?;
    if !kinds.contains(&ControllerKind::Idm) {
        kinds.insert(0, ControllerKind::Idm);
    }
    let cfg = ctx.eval_config(&a.seeds)?;
    let loaded = load_policies(ctx, &kinds, &a.checkpoint, &a.multitask_checkpoint)?;
    let (corpus, hash) = ctx.corpus(&a.corpus)?;
    let dir = ctx.out_dir(&a.out)?;
    let echo = EvalEcho {
        tool_version: env!("CARGO_PKG_VERSION"),
        corpus_hash: &hash,
        sim: &cfg.sim,
        nominal: &cfg.nominal,
        seeds: &cfg.seeds,
        observation_scales: ObservationScales::default(),
        checkpoints: loaded.echo.clone(),
        noise: None,
    };
    let echo = serde_json::to_value(&echo)?;
    if ctx.verbose > 0 {
        eprintln!("evaluating {} controllers on {} contexts x {} seeds", kinds.len(), corpus.len(), cfg.seeds.len());
    }
    let records = evaluate(&corpus, &kinds, &cfg, &loaded.policies())?;
    let report = compare(&records, corpus.len(), ControllerKind::Idm, echo.clone())?;

    write_file(&dir.join("report.json"), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    let mut summary = String::new();
    for line in serde_json::to_string_pretty(&echo)?.lines() {
        summary.push_str("# ");
        summary.push_str(line);
        summary.push('\n');
    }
    summary.push_str(&report.summary_table());
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    let mut csv = Vec::new();
    write_benefit_map(&report.benefit_rows(&corpus)?, &mut csv)?;
    write_file(&dir.join("benefit_map.csv"), &csv)?;
    print!("{}", report.summary_table());
    Ok(())
}

fn cmd_noise_sweep(ctx: &Ctx, a: &SweepArgs) -> CliResult {
    let kind: NoiseKind = a.kind.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let spec = NoiseSpec { kind, levels: a.levels.clone() };
    spec.validate()?;
    let kinds = parse_kinds(&a.controllers)?;
    let cfg = ctx.eval_config(&a.seeds)?;
    let loaded = load_policies(ctx, &kinds, &a.checkpoint, &a.multitask_checkpoint)?;
    let (corpus, hash) = ctx.corpus(&a.corpus)?;
    let dir = ctx.out_dir(&a.out)?;
    let echo = EvalEcho {
        tool_version: env!("CARGO_PKG_VERSION"),
        corpus_hash: &hash,
        sim: &cfg.sim,
        nominal: &cfg.nominal,
        seeds: &cfg.seeds,
        observation_scales: ObservationScales::default(),
        checkpoints: loaded.echo.clone(),
        noise: Some(serde_json::to_value(&spec)?),
    };
    let echo = serde_json::to_value(&echo)?;
    let curves = kinds
        .iter()
        .map(|&k| {
            if ctx.verbose > 0 {
                eprintln!("{k}: {} noise at {} levels", kind, spec.levels.len());
            }
            noise_sweep(k, &corpus, &spec, &cfg, &loaded.policies())
        })
        .collect::<Result<Vec<NoiseCurve>, Error>>()?;

    let doc = serde_json::json!({ "config": echo, "curves": curves });
    let stem = format!("noise_{}", kind.as_str());
    write_file(&dir.join(format!("{stem}.json")), (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "controller",
        "noise",
        "level",
        "total_emission",
        "emission_per_vehicle",
        "mean_speed",
        "throughput",
        "idling_time_per_vehicle",
        "emission_change_pct",
    ])
    .map_err(Error::from)?;
    for c in &curves {
        for p in &c.points {
            let m = &p.metrics;
            w.write_record([
                c.controller.as_str().to_string(),
                c.noise.as_str().to_string(),
                p.level.to_string(),
                m.total_emission.to_string(),
                m.emission_per_vehicle.to_string(),
                m.mean_speed.to_string(),
                m.throughput.to_string(),
                m.idling_time_per_vehicle.to_string(),
                p.emission_change_pct.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(Error::Io(e.into_error())))?;
    write_file(&dir.join(format!("{stem}.csv")), &bytes)?;
    for c in &curves {
        let pts: Vec<String> = c.points.iter().map(|p| format!("{}: {:+.2}%", p.level, p.emission_change_pct)).collect();
        println!("{} {} noise: {}", c.controller, c.noise, pts.join(", "));
    }
    Ok(())
}
