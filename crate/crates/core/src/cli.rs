//! Command-line surface shared by the `fresh` binary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::agent::QNetworkPair;
use crate::buffers::MaskDistribution;
use crate::envs::{make_env, EnvId};
use crate::error::{Error, Result};
use crate::fnn::EnsembleFnn;
use crate::plot::{aggregate, metric_column, render_svg, smooth, CurveBand};
use crate::service::FeedbackServer;
use crate::trainer::{
    evaluate_fnn, evaluate_optimal, evaluate_q, mean_std, read_metrics_csv, EvalStats, FeedbackKinds,
    FeedbackSourceKind, PolicyMode, RunSummary, SharedFeedback, Trainer, TrainRunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "fresh", version, about = "Reward shaping from binary feedback for deep Q-learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Roll out a saved policy without exploration.
    Evaluate(EvaluateArgs),
    /// Sweep feedback type, head count and thresholds over several seeds.
    Ablate(AblateArgs),
    /// Draw learning curves from metrics files.
    Plot(PlotArgs),
    /// Print the effective run configuration as TOML.
    Config(RunArgs),
}

fn parse_beta(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "none" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| format!("expected a number or \"none\": {e}"))
}

/// Run settings; flags override the config file, which overrides defaults.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment id: aimline or gaterun.
    #[arg(long)]
    pub env: Option<EnvId>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feedback source: oracle, interactive or none.
    #[arg(long)]
    pub feedback: Option<FeedbackSourceKind>,
    /// Which labels to collect: both, actions_only or states_only.
    #[arg(long)]
    pub feedback_type: Option<FeedbackKinds>,
    #[arg(long)]
    pub heads_a: Option<usize>,
    #[arg(long)]
    pub heads_s: Option<usize>,
    /// Action confidence threshold, or "none".
    #[arg(long)]
    pub beta_a: Option<String>,
    /// State confidence threshold, or "none".
    #[arg(long)]
    pub beta_s: Option<String>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Episodes between feedback sessions.
    #[arg(long)]
    pub nc: Option<u64>,
    /// New labels that trigger a refit.
    #[arg(long)]
    pub nf: Option<usize>,
    /// Random-play trajectories before the first session.
    #[arg(long)]
    pub ni: Option<usize>,
    /// Labels gathered before the first fit.
    #[arg(long)]
    pub mi: Option<usize>,
    #[arg(long)]
    pub episodes: Option<u64>,
    /// Mask distribution: bernoulli:p or exp:rate.
    #[arg(long)]
    pub mask: Option<MaskDistribution>,
    /// Oracle label flip probability.
    #[arg(long)]
    pub error_rate: Option<f64>,
    /// Oracle not-sure probability.
    #[arg(long)]
    pub not_sure_rate: Option<f64>,
    /// Labels per feedback session.
    #[arg(long)]
    pub session_budget: Option<usize>,
    /// Episodes between checkpoints and greedy evaluations.
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<TrainRunConfig> {
        let mut c = match &self.config {
            Some(path) => TrainRunConfig::load(path)?,
            None => TrainRunConfig::for_env(self.env.unwrap_or(EnvId::AimLine)),
        };
        if let Some(v) = self.env {
            c.env_id = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.feedback {
            c.feedback_source = v;
        }
        if let Some(v) = self.feedback_type {
            c.feedback_type = v;
        }
        if let Some(v) = self.heads_a {
            c.fnn.heads_action = v;
        }
        if let Some(v) = self.heads_s {
            c.fnn.heads_state = v;
        }
        if let Some(v) = &self.beta_a {
            c.shaping.beta_a = parse_beta(v).map_err(Error::usage)?;
        }
        if let Some(v) = &self.beta_s {
            c.shaping.beta_s = parse_beta(v).map_err(Error::usage)?;
        }
        if let Some(v) = self.lambda_a {
            c.shaping.lambda_a = v;
        }
        if let Some(v) = self.lambda_s {
            c.shaping.lambda_s = v;
        }
        if let Some(v) = self.nc {
            c.n_c = v;
        }
        if let Some(v) = self.nf {
            c.n_f = v;
        }
        if let Some(v) = self.ni {
            c.n_i = v;
        }
        if let Some(v) = self.mi {
            c.m_i = Some(v);
        }
        if let Some(v) = self.episodes {
            c.total_episodes = v;
        }
        if let Some(v) = self.mask {
            c.masking = v;
        }
        if let Some(v) = self.error_rate {
            c.oracle.error_rate = v;
        }
        if let Some(v) = self.not_sure_rate {
            c.oracle.not_sure_rate = v;
        }
        if let Some(v) = self.session_budget {
            c.oracle.session_budget = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = self.eval_episodes {
            c.eval_episodes = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run directory; defaults to runs/<run id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Address for the feedback console (interactive feedback only).
    #[arg(long)]
    pub bind: Option<String>,
    /// Port for the feedback console on 127.0.0.1 (interactive feedback only).
    #[arg(long)]
    pub port: Option<u16>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Q-network weights; needs --env.
    #[arg(long)]
    pub q: Option<PathBuf>,
    /// Feedback-network weights; needs --env.
    #[arg(long)]
    pub fnn: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<EnvId>,
    /// q_greedy or fnn_policy.
    #[arg(long, default_value = "q_greedy")]
    pub mode: PolicyMode,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Feedback types to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub feedback_types: Vec<FeedbackKinds>,
    /// Ensemble sizes to compare (used for both action and state heads).
    #[arg(long, value_delimiter = ',')]
    pub heads: Vec<usize>,
    /// Threshold pairs beta_a:beta_s to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metrics files, optionally prefixed with a group label as label=path.
    #[arg(required = true)]
    pub files: Vec<String>,
    #[arg(long, default_value = "return_env")]
    pub column: String,
    /// Moving-average window in episodes.
    #[arg(long, default_value_t = 1)]
    pub smooth: usize,
    #[arg(long, default_value = "curves.svg")]
    pub out: PathBuf,
    #[arg(long, default_value = "Learning curves")]
    pub title: String,
}

/// Everything needed to reconstruct a run directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub config: TrainRunConfig,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub summary: Option<RunSummary>,
}

pub fn run_id(config: &TrainRunConfig) -> String {
    let source = match config.feedback_source {
        FeedbackSourceKind::Oracle => "oracle",
        FeedbackSourceKind::Interactive => "interactive",
        FeedbackSourceKind::None => "none",
    };
    format!("{}-{source}-s{}", config.env_id, config.seed)
}

fn write_manifest(dir: &Path, config: &TrainRunConfig, summary: Option<RunSummary>) -> Result<()> {
    let mut outputs: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    outputs.sort();
    let manifest = RunManifest {
        run_id: run_id(config),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: vec![config.seed],
        outputs,
        summary,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Ablate(args) => ablate(args),
        Command::Plot(args) => plot(args),
        Command::Config(args) => {
            print!("{}", args.resolve()?.to_toml_string()?);
            Ok(())
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let interactive = config.feedback_source == FeedbackSourceKind::Interactive;
    let bind = match (&args.bind, args.port) {
        (Some(_), Some(_)) => return Err(Error::usage("give either --bind or --port, not both")),
        (Some(b), None) => Some(b.clone()),
        (None, Some(p)) => Some(format!("127.0.0.1:{p}")),
        (None, None) => None,
    };
    if interactive && bind.is_none() {
        return Err(Error::usage("interactive feedback needs --port or --bind for the console"));
    }
    if !interactive && bind.is_some() {
        return Err(Error::usage("--port and --bind only apply to interactive feedback"));
    }
    let dir = args.out.unwrap_or_else(|| PathBuf::from("runs").join(run_id(&config)));
    let mut trainer = if args.resume {
        Trainer::resume(&dir.join("checkpoint"))?
    } else {
        Trainer::new(config)?
    }
    .with_output(&dir);
    let config = trainer.config().clone();
    fs::create_dir_all(&dir)?;
    write_manifest(&dir, &config, None)?;
    let summary = match bind {
        Some(addr) => {
            let env = make_env(config.env_id, &config.env)?;
            let server = FeedbackServer::start(
                &addr,
                config.env_id,
                env.spec().action_names.clone(),
                Duration::from_secs(config.session_timeout_secs),
            )?;
            eprintln!("feedback console listening on http://{}", server.addr());
            let mut handler = server.handler();
            trainer.run(Some(&mut handler))?
        }
        None => trainer.run(None)?,
    };
    write_manifest(&dir, &config, Some(summary.clone()))?;
    println!("run directory: {}", dir.display());
    println!("episodes: {}  feedback records: {}  refits: {}", summary.episodes, summary.feedback_total, summary.refits);
    if let Some(e) = summary.final_eval {
        println!("greedy evaluation: {:.3} ± {:.3}", e.mean, e.std);
    }
    Ok(())
}

fn load_q(path: &Path) -> Result<QNetworkPair> {
    QNetworkPair::read(&mut BufReader::new(File::open(path)?))
}

fn load_fnn(path: &Path) -> Result<EnsembleFnn> {
    EnsembleFnn::read(&mut BufReader::new(File::open(path)?))
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let (env_id, q_path, fnn_path) = match &args.run {
        Some(dir) => {
            let text = fs::read_to_string(dir.join("config.toml"))?;
            let config = TrainRunConfig::from_toml_str(&text)?;
            let ck = dir.join("checkpoint");
            (config.env_id, Some(ck.join("q.bin")), Some(ck.join("fnn.bin")))
        }
        None => {
            let env = args.env.ok_or_else(|| Error::usage("--env is required without --run"))?;
            (env, args.q.clone(), args.fnn.clone())
        }
    };
    let mut env = make_env(env_id, &Default::default())?;
    let stats = match args.mode {
        PolicyMode::QGreedy => {
            let path = q_path.ok_or_else(|| Error::usage("q_greedy needs --q or --run"))?;
            evaluate_q(&load_q(&path)?, env.as_mut(), args.episodes, args.seed)?
        }
        PolicyMode::FnnPolicy => {
            let path = fnn_path.ok_or_else(|| Error::usage("fnn_policy needs --fnn or --run"))?;
            evaluate_fnn(&load_fnn(&path)?, env.as_mut(), args.episodes, args.seed)?
        }
    };
    let optimal = evaluate_optimal(env.as_mut(), args.episodes, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&EvaluationReport::new(args.mode, stats, optimal.mean))?);
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    mode: PolicyMode,
    episodes: usize,
    mean: f64,
    std: f64,
    optimal_mean: f64,
}

impl EvaluationReport {
    fn new(mode: PolicyMode, stats: EvalStats, optimal_mean: f64) -> Self {
        EvaluationReport { mode, episodes: stats.returns.len(), mean: stats.mean, std: stats.std, optimal_mean }
    }
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub feedback_type: FeedbackKinds,
    pub heads: usize,
    pub beta_a: Option<f64>,
    pub beta_s: Option<f64>,
}

impl Arm {
    pub fn name(&self) -> String {
        let b = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let kind = match self.feedback_type {
            FeedbackKinds::Both => "both",
            FeedbackKinds::ActionsOnly => "actions_only",
            FeedbackKinds::StatesOnly => "states_only",
        };
        format!("{kind}-k{}-ba{}-bs{}", self.heads, b(self.beta_a), b(self.beta_s))
    }

    pub fn apply(&self, base: &TrainRunConfig, seed: u64) -> TrainRunConfig {
        let mut c = base.clone();
        c.seed = seed;
        c.feedback_type = self.feedback_type;
        c.fnn.heads_action = self.heads;
        c.fnn.heads_state = self.heads;
        c.shaping.beta_a = self.beta_a;
        c.shaping.beta_s = self.beta_s;
        c
    }
}

fn parse_beta_pair(s: &str) -> Result<(Option<f64>, Option<f64>)> {
    let (a, b) = s.split_once(':').ok_or_else(|| Error::usage(format!("threshold pair {s:?} must be beta_a:beta_s")))?;
    Ok((parse_beta(a).map_err(Error::usage)?, parse_beta(b).map_err(Error::usage)?))
}

/// Cartesian product of the requested sweeps; unswept axes keep the base value.
pub fn arms(base: &TrainRunConfig, kinds: &[FeedbackKinds], heads: &[usize], betas: &[String]) -> Result<Vec<Arm>> {
    if kinds.is_empty() && heads.is_empty() && betas.is_empty() {
        return Err(Error::usage("empty sweep: give --feedback-types, --heads or --betas"));
    }
    let kinds = if kinds.is_empty() { vec![base.feedback_type] } else { kinds.to_vec() };
    let heads = if heads.is_empty() { vec![base.fnn.heads_action] } else { heads.to_vec() };
    let betas = if betas.is_empty() {
        vec![(base.shaping.beta_a, base.shaping.beta_s)]
    } else {
        betas.iter().map(|s| parse_beta_pair(s)).collect::<Result<_>>()?
    };
    let mut out = Vec::new();
    for &feedback_type in &kinds {
        for &h in &heads {
            for &(beta_a, beta_s) in &betas {
                out.push(Arm { feedback_type, heads: h, beta_a, beta_s });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Runs every arm for every seed. Within a seed all arms start from the same
/// initial feedback.
pub fn run_ablation(base: &TrainRunConfig, arms: &[Arm], seeds: &[u64], out: &Path) -> Result<Vec<ArmSummary>> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::usage("empty sweep"));
    }
    if base.feedback_source != FeedbackSourceKind::Oracle {
        return Err(Error::usage("ablations need oracle feedback"));
    }
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    for &seed in seeds {
        let mut donor = base.clone();
        donor.seed = seed;
        donor.feedback_type = FeedbackKinds::Both;
        let shared: SharedFeedback = Trainer::collect_initial_feedback(donor)?;
        for (i, arm) in arms.iter().enumerate() {
            let config = arm.apply(base, seed);
            let dir = out.join(arm.name()).join(format!("seed{seed}"));
            let mut trainer = Trainer::new(config.clone())?.with_shared_feedback(shared.clone()).with_output(&dir);
            let summary = trainer.run(None)?;
            let final_return = summary.final_eval.as_ref().map_or(f64::NAN, |e| e.mean);
            log::info!("{} seed {seed}: final greedy return {final_return:.3}", arm.name());
            finals[i].push(final_return);
            write_manifest(&dir, &config, Some(summary))?;
        }
    }
    let summaries: Vec<ArmSummary> = arms
        .iter()
        .zip(&finals)
        .map(|(arm, values)| {
            let (mean, std) = mean_std(values);
            ArmSummary { arm: arm.name(), seeds: values.len(), mean, std }
        })
        .collect();
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv")).map_err(|e| Error::Format(e.to_string()))?;
    for s in &summaries {
        w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(summaries)
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut base = args.run.resolve()?;
    if args.run.feedback.is_none() {
        base.feedback_source = FeedbackSourceKind::Oracle;
    }
    let arms = arms(&base, &args.feedback_types, &args.heads, &args.betas)?;
    let summaries = run_ablation(&base, &arms, &args.seeds, &args.out)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<40} {:>6} {:>12} {:>12}", "arm", "seeds", "mean", "std")?;
    for s in summaries {
        writeln!(out, "{:<40} {:>6} {:>12.3} {:>12.3}", s.arm, s.seeds, s.mean, s.std)?;
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for spec in &args.files {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), p),
            None => ("runs".to_string(), spec.as_str()),
        };
        let rows = read_metrics_csv(Path::new(path))?;
        let values = smooth(&metric_column(&rows, &args.column)?, args.smooth);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, runs)) => runs.push(values),
            None => groups.push((label, vec![values])),
        }
    }
    let curves: Vec<CurveBand> = groups.iter().map(|(l, runs)| aggregate(l, runs)).collect::<Result<_>>()?;
    for c in curves.iter().filter(|c| c.truncated) {
        eprintln!("warning: {} runs differ in length; truncated to {} episodes", c.label, c.mean.len());
    }
    let svg = render_svg(&curves, &args.title, &args.column)?;
    let mut f = BufWriter::new(File::create(&args.out)?);
    f.write_all(svg.as_bytes())?;
    f.flush()?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}
