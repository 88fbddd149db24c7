use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use musclerun_core::analysis::{self, ExperimentalBand, Foot, JOINTS};
use musclerun_core::bench::bench;
use musclerun_core::dynamics::CompiledModel;
use musclerun_core::environment::{
    generate_obstacles, ConstantPolicy, Environment, EpisodeConfig, Policy, ScriptedPolicy, ZeroPolicy, DEFAULT_LAMBDA,
    DEFAULT_MAX_OBSTACLES,
};
use musclerun_core::grader::{self, EvaluationSpec, Server, ServerConfig, TOKEN_ENV};
use musclerun_core::model::load_model_file;
use musclerun_core::trajectory::{record_episode, replay, TrajectoryLog};
use musclerun_core::{Error, Result};

/// Environment variable with the comma-separated tokens a server accepts.
const TOKENS_ENV: &str = "MUSCLERUN_TOKENS";

#[derive(Parser)]
#[command(name = "musclerun", version, about = "Deterministic planar musculoskeletal running environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and print its result.
    Run(RunArgs),
    /// Measure control steps per second.
    Bench(BenchArgs),
    /// Print the obstacle course for an episode config.
    Course(EpisodeArgs),
    /// Host the remote grader.
    Serve(ServeArgs),
    /// Submit a policy to a remote grader.
    Submit(SubmitArgs),
    /// Print the ranked leaderboard.
    Board(BoardArgs),
    /// Build a representative gait cycle from a trajectory log.
    Analyze(AnalyzeArgs),
    /// Re-simulate a log's actions and check that the trajectory matches.
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct EpisodeArgs {
    /// Course seed; drawn from entropy when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    difficulty: u8,
    #[arg(long, default_value_t = DEFAULT_MAX_OBSTACLES)]
    max_obstacles: usize,
}

impl EpisodeArgs {
    fn config(&self) -> Result<EpisodeConfig> {
        match self.seed {
            Some(seed) => EpisodeConfig::new(seed, self.difficulty, self.max_obstacles),
            None => EpisodeConfig::with_random_seed(self.difficulty, self.max_obstacles),
        }
    }
}

#[derive(Args)]
struct EnvArgs {
    /// Model file; the built-in runner when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ligament penalty weight.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

impl EnvArgs {
    fn environment(&self) -> Result<Environment> {
        let model = match &self.model {
            Some(p) => Arc::new(CompiledModel::new(load_model_file(p)?)?),
            None => CompiledModel::default_runner(),
        };
        Ok(Environment::new(model)?.with_lambda(self.lambda))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    #[command(flatten)]
    env: EnvArgs,
    /// `zero`, `constant:C` or `scripted:FILE`.
    #[arg(long, default_value = "zero")]
    policy: String,
    /// Trajectory log output.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value = "zero")]
    policy: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// `open-stage`, `playoff` or a TOML spec file.
    #[arg(long, default_value = "open-stage")]
    spec: String,
    /// Evaluations per token and UTC day.
    #[arg(long, default_value_t = grader::server::DEFAULT_BUDGET)]
    budget: u32,
    #[arg(long, default_value = "leaderboard.jsonl")]
    leaderboard: PathBuf,
    /// Accepted tokens, comma separated; falls back to $MUSCLERUN_TOKENS.
    #[arg(long)]
    tokens: Option<String>,
    /// Idle timeout per session, seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[command(flatten)]
    env: EnvArgs,
}

#[derive(Args)]
struct SubmitArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    address: String,
    /// Falls back to $MUSCLERUN_TOKEN.
    #[arg(long)]
    token: Option<String>,
    #[arg(long, default_value = "zero")]
    policy: String,
}

#[derive(Args)]
struct BoardArgs {
    #[arg(long, default_value = "leaderboard.jsonl")]
    path: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = "right")]
    foot: String,
    /// Trailing window analyzed, seconds.
    #[arg(long, default_value_t = analysis::DEFAULT_WINDOW)]
    window: f64,
    /// Experimental band file to compare against.
    #[arg(long)]
    band: Option<PathBuf>,
    /// Cycle table output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    #[command(flatten)]
    env: EnvArgs,
}

fn policy_from(spec: &str) -> Result<Box<dyn Policy>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "zero" => Ok(Box::new(ZeroPolicy)),
        "constant" => {
            let c: f64 = arg.parse().map_err(|_| Error::InvalidArgument(format!("bad constant \"{arg}\"")))?;
            Ok(Box::new(ConstantPolicy(c)))
        }
        "scripted" => Ok(Box::new(ScriptedPolicy::load(Path::new(arg))?)),
        _ => Err(Error::InvalidArgument(format!("unknown policy \"{spec}\"; use zero, constant:C or scripted:FILE"))),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut env = a.env.environment()?;
    let cfg = a.episode.config()?;
    let mut policy = policy_from(&a.policy)?;
    let (r, log) = record_episode(&mut env, cfg, policy.as_mut())?;
    if let Some(path) = &a.log {
        log.save(path)?;
    }
    println!(
        "seed={} difficulty={} max_obstacles={} reward={:?} final_x={:?} ligament_integral={:?} steps={} termination={}",
        cfg.seed, cfg.difficulty, cfg.max_obstacles, r.reward, r.final_x, r.ligament_integral, r.steps_taken, r.termination
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = EpisodeConfig::new(a.episode.seed.unwrap_or(0), a.episode.difficulty, a.episode.max_obstacles)?;
    let mut policy = policy_from(&a.policy)?;
    let r = bench(&Environment::default_runner(), a.episodes, cfg, policy.as_mut())?;
    println!("episodes={} control_steps={} seconds={:.3}", r.episodes, r.control_steps, r.seconds);
    println!("steps_per_second={:.1}", r.steps_per_second);
    println!(
        "substeps={} substeps_per_control={} substep_dt={:?} integrator=\"{}\"",
        r.substeps, r.substeps_per_control, r.substep_dt, r.integrator
    );
    Ok(())
}

fn cmd_course(a: EpisodeArgs) -> Result<()> {
    let cfg = a.config()?;
    let c = generate_obstacles(&cfg);
    println!("# seed={} difficulty={} max_obstacles={}", cfg.seed, cfg.difficulty, cfg.max_obstacles);
    if c.obstacles.is_empty() {
        println!("no obstacles");
    } else {
        println!("index,x,y,r");
        for (i, o) in c.obstacles.iter().enumerate() {
            println!("{i},{:?},{:?},{:?}", o.x, o.y, o.r);
        }
    }
    println!("# psoas_scale_r={:?} psoas_scale_l={:?}", c.psoas_scale_r, c.psoas_scale_l);
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let tokens = a.tokens.or_else(|| std::env::var(TOKENS_ENV).ok()).unwrap_or_default();
    let tokens: Vec<String> = tokens.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
    let mut cfg = ServerConfig::new(EvaluationSpec::resolve(&a.spec)?, a.leaderboard, tokens);
    cfg.budget = a.budget;
    cfg.idle_timeout = Duration::from_secs(a.timeout);
    cfg.environment = a.env.environment()?;
    let server = Server::bind(&a.bind, cfg)?;
    println!("listening={}", server.local_addr()?);
    server.run()
}

fn cmd_submit(a: SubmitArgs) -> Result<()> {
    let token = a
        .token
        .or_else(|| std::env::var(TOKEN_ENV).ok())
        .ok_or_else(|| Error::InvalidArgument(format!("no token; pass --token or set {TOKEN_ENV}")))?;
    let mut policy = policy_from(&a.policy)?;
    let r = grader::client_run(&a.address, &token, policy.as_mut())?;
    for (i, (reward, res)) in r.rewards.iter().zip(&r.results).enumerate() {
        println!("episode={i} reward={reward:?} steps={} termination={}", res.steps_taken, res.termination);
    }
    println!("spec={} score={:?}", r.spec.name, r.score);
    Ok(())
}

fn cmd_board(a: BoardArgs) -> Result<()> {
    let list = grader::leaderboard_report(&a.path, a.top)?;
    if list.is_empty() {
        println!("empty leaderboard");
    }
    for (rank, e) in list.iter().enumerate() {
        println!("{},{},{:?},{},{}", rank + 1, e.token, e.score, e.spec, e.timestamp_ms);
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let log = TrajectoryLog::load(&a.log)?;
    let foot: Foot = a.foot.parse()?;
    let rep = analysis::segment_and_average(&log, foot, a.window)?;
    match &a.out {
        Some(p) => rep.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?,
        None => rep.write_csv(std::io::stdout().lock())?,
    }
    eprintln!("cycles={}", rep.cycles);
    if let Some(band) = &a.band {
        let agreement = analysis::band_agreement(&rep, &ExperimentalBand::load(band)?)?;
        let parts: Vec<String> = JOINTS.iter().zip(agreement).map(|(j, f)| format!("{j}={f:?}")).collect();
        println!("agreement {}", parts.join(" "));
    }
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let log = TrajectoryLog::load(&a.log)?;
    let report = replay(&a.env.environment()?, &log)?;
    match report.first_mismatch {
        None => {
            println!(
                "verified records={} reward={:?} termination={}",
                report.records, report.result.reward, report.result.termination
            );
            Ok(())
        }
        Some(i) => Err(Error::ReplayMismatch(format!("replay diverges from the log at record {i}"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Course(a) => cmd_course(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Submit(a) => cmd_submit(a),
        Command::Board(a) => cmd_board(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error code={} message={msg:?}", e.code());
            ExitCode::FAILURE
        }
    }
}
