//! `skillnudge` command-line verbs.

use std::fmt::Write as _;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use skillnudge_core::bomi::{calibrate, CalibrationSet};
use skillnudge_core::iohmm::{cross_validate, mc_train, FitConfig, IohmmModel};
use skillnudge_core::metrics::vaf_curve;
use skillnudge_core::policy::{RewardWeights, SolveConfig};
use skillnudge_core::simulator::{
    demo_model, run_arm, summarise_arm, synthetic_map, tune_alpha_gamma, ExperimentConfig, Planner, PolicyKind, Setup,
    DEFAULT_ALPHA_GRID, DEFAULT_GAMMA_GRID,
};

use crate::analyze::{analyze, LogSummary};
use crate::config::{ServiceConfig, Thresholds};
use crate::model_file::{sha256_hex, ModelFile, Provenance, QFunctionPayload};
use crate::trial_log::{records_from_rollout, sequences_from_records, write_log, LogReadReport};

#[derive(Debug, Parser)]
#[command(name = "skillnudge", version, about = "Skill-aware nudge planning for body-machine-interface training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a body-machine-interface map from a posture table.
    Calibrate(CalibrateArgs),
    /// Fit an IOHMM to trial logs with cross-validated hyperparameters and restarts.
    Fit(FitArgs),
    /// Solve the nudge-planning problem for a fitted model.
    Solve(SolveArgs),
    /// Run simulated training sessions for one or more policy arms.
    Simulate(SimulateArgs),
    /// Produce metric, synergy and transition reports from trial logs.
    Analyze(AnalyzeArgs),
    /// Serve live sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Comma-separated table, one posture of 20 joint angles (radians) per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Trial-log files (JSON lines).
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Candidate state counts.
    #[arg(long, value_delimiter = ',', default_value = "7")]
    pub states: Vec<usize>,
    /// Candidate ridge weights on the MNL weights.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub l2: Vec<f64>,
    /// Candidate elastic-net weights on the emission coefficients.
    #[arg(long, value_delimiter = ',', default_value = "0.0001")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.725)]
    pub l1_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub permutations: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.98)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_sot: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_g: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Learner model; the built-in demonstration model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Planner model when it differs from the learner.
    #[arg(long)]
    pub planner_model: Option<PathBuf>,
    /// Solved Q-function for the planner model; solved with defaults when omitted.
    #[arg(long)]
    pub qfunction: Option<PathBuf>,
    /// Map used for heuristic onset postures; a synthetic map when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "control,heuristic,qmdp")]
    pub policy: Vec<PolicyKind>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub blocks: usize,
    #[arg(long, default_value_t = 60)]
    pub trials_per_block: usize,
    /// Also grid-search the planner's (alpha, gamma).
    #[arg(long)]
    pub tune: bool,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    /// Adds transition-matrix reports for this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Service configuration supplying the analysis thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `server.port`.
    #[arg(long)]
    pub port: Option<u16>,
}

fn read_model(path: &Path) -> anyhow::Result<(ModelFile, IohmmModel)> {
    let f = ModelFile::read(path).with_context(|| format!("loading {}", path.display()))?;
    let m = f.iohmm().with_context(|| format!("loading {}", path.display()))?;
    Ok((f, m))
}

fn read_logs(paths: &[PathBuf], err: &mut dyn Write) -> anyhow::Result<(LogReadReport, String)> {
    let mut report = LogReadReport::default();
    let mut bytes = Vec::new();
    for p in paths {
        let raw = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let text = String::from_utf8(raw).with_context(|| format!("{} is not UTF-8", p.display()))?;
        let r = crate::trial_log::parse_log(&text);
        for s in &r.skipped {
            writeln!(err, "warning: {}:{}: skipped: {}", p.display(), s.line, s.reason)?;
        }
        if r.partial_tail {
            writeln!(err, "warning: {}: ignored unterminated final line", p.display())?;
        }
        bytes.extend_from_slice(text.as_bytes());
        report.merge(r);
    }
    Ok((report, sha256_hex(&bytes)))
}

pub fn calibrate_cmd(a: &CalibrateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let raw = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let cal = CalibrationSet::from_delimited(raw.as_slice())?;
    let map = calibrate(&cal)?;
    let prov = Provenance::new("calibrate").with_data_hash(sha256_hex(&raw));
    ModelFile::from_bomi_map(&map, prov).write(&a.output)?;
    writeln!(out, "poses,{}", cal.poses().len())?;
    writeln!(out, "components,vaf")?;
    for (k, v) in vaf_curve(cal.poses())?.iter().enumerate() {
        writeln!(out, "{},{v}", k + 1)?;
    }
    Ok(())
}

pub fn fit_cmd(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let (logs, hash) = read_logs(&a.logs, err)?;
    let (seqs, dropped) = sequences_from_records(&logs.records);
    if dropped > 0 {
        writeln!(err, "warning: {dropped} records without SoT left out of training")?;
    }
    if seqs.is_empty() {
        bail!("no training sequences in the given logs");
    }
    let base = FitConfig {
        l1_ratio: a.l1_ratio,
        n_permutations: a.permutations,
        max_iterations: a.max_iterations,
        log_lik_tolerance: a.tolerance,
        seed: a.seed,
        ..FitConfig::default()
    };
    let mut grid = Vec::new();
    for &n_states in &a.states {
        for &l2_transition in &a.l2 {
            for &elastic_net_alpha in &a.alpha {
                grid.push(FitConfig { n_states, l2_transition, elastic_net_alpha, ..base.clone() });
            }
        }
    }
    let cfg = if grid.len() > 1 {
        let cv = cross_validate(&seqs, &grid, a.folds, a.seed)?;
        writeln!(out, "candidate,n_states,l2_transition,elastic_net_alpha,l1_ratio,mean_heldout_log_lik")?;
        for (i, (c, s)) in grid.iter().zip(&cv.mean_scores).enumerate() {
            writeln!(out, "{i},{},{},{},{},{s}", c.n_states, c.l2_transition, c.elastic_net_alpha, c.l1_ratio)?;
        }
        cv.config
    } else {
        grid.remove(0)
    };
    writeln!(
        out,
        "selected,n_states={},l2_transition={},elastic_net_alpha={},l1_ratio={}",
        cfg.n_states, cfg.l2_transition, cfg.elastic_net_alpha, cfg.l1_ratio
    )?;
    let mc = mc_train(&seqs, &cfg)?;
    writeln!(out, "run,seed,objective,log_lik,error")?;
    for c in &mc.candidates {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", c.run, c.seed, f(c.objective), f(c.log_lik), c.error.as_deref().unwrap_or(""))?;
    }
    writeln!(out, "iteration,objective,log_lik")?;
    for (i, (o, l)) in mc.best.objective_trace.iter().zip(&mc.best.log_lik_trace).enumerate() {
        writeln!(out, "{i},{o},{l}")?;
    }
    let prov = Provenance::new("fit").with_config(&cfg).with_seed("seed", cfg.seed).with_data_hash(hash);
    ModelFile::from_iohmm(&mc.best.model, prov).write(&a.output)?;
    writeln!(out, "best_run,{}", mc.best_run)?;
    writeln!(out, "log_lik,{}", mc.best.log_lik)?;
    Ok(())
}

pub fn solve_cmd(a: &SolveArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let (file, model) = read_model(&a.model)?;
    let weights = RewardWeights { w_sot: a.w_sot, w_g: a.w_g };
    let solve = SolveConfig { alpha: a.alpha, tolerance: a.tolerance, max_iterations: a.max_iterations };
    let planner = Planner::new(&model, weights, a.gamma, &solve)?;
    let payload = QFunctionPayload { q: planner.q.clone(), weights };
    let config = serde_json::json!({ "solve": solve, "gamma": a.gamma, "weights": weights });
    let prov = Provenance::new("solve").with_config(&config).with_data_hash(file.payload_hash());
    ModelFile::from_qfunction(&payload, model.n_states(), prov).write(&a.output)?;
    writeln!(out, "iterations,residual")?;
    writeln!(out, "{},{}", planner.report.iterations, planner.report.residual)?;
    Ok(())
}

pub fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if a.episodes == 0 || a.policy.is_empty() {
        bail!("need at least one episode and one policy");
    }
    let (learner, learner_file) = match &a.model {
        Some(p) => {
            let (f, m) = read_model(p)?;
            (m, Some(f))
        }
        None => (demo_model(), None),
    };
    let (planner_model, planner_file) = match &a.planner_model {
        Some(p) => {
            let (f, m) = read_model(p)?;
            (m, Some(f))
        }
        None => (learner.clone(), learner_file),
    };
    let planner = match &a.qfunction {
        Some(p) => {
            let qf = ModelFile::read(p).with_context(|| format!("loading {}", p.display()))?;
            let expected = planner_file.as_ref().map(ModelFile::payload_hash);
            if expected.is_some() && qf.provenance.data_hash != expected {
                bail!("{} was not solved for the planner model", p.display());
            }
            let q = qf.qfunction()?;
            Planner::from_parts(&planner_model, q.q, q.weights)?
        }
        None => Planner::with_defaults(&planner_model)?,
    };
    let map = match &a.map {
        Some(p) => ModelFile::read(p)?.bomi_map()?,
        None => synthetic_map(a.seed),
    };
    let setup = Setup::new(&learner, planner, map);
    let base = ExperimentConfig { blocks: a.blocks, trials_per_block: a.trials_per_block, seed: a.seed, ..Default::default() };
    let log_dir = a.output_dir.join("logs");
    std::fs::create_dir_all(&log_dir)?;

    let mut curves = String::from("policy,trial,mean_re,ci_re,mean_sot,ci_sot,mean_expected_state\n");
    let mut episodes = String::from(
        "policy,episode,cumulative_cost,mean_re,mean_sot,trials_to_re_threshold,trials_to_sot_threshold,mastery_trial,belief_fallbacks,belief_accuracy\n",
    );
    let o = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(out, "policy,episodes,mean_cumulative_cost,ci_cumulative_cost")?;
    for &kind in &a.policy {
        let rollouts = run_arm(&base, &setup, kind, a.episodes);
        let records: Vec<_> = rollouts.iter().flat_map(records_from_rollout).collect();
        write_log(&log_dir.join(format!("{kind}.jsonl")), &records)?;
        let s = summarise_arm(kind, &rollouts);
        for t in 0..s.mean_re.len() {
            writeln!(curves, "{kind},{t},{},{},{},{},{}", s.mean_re[t], s.ci_re[t], s.mean_sot[t], s.ci_sot[t], s.mean_expected_state[t])?;
        }
        for r in &rollouts {
            let e = &r.summary;
            writeln!(
                episodes,
                "{kind},{},{},{},{},{},{},{},{},{}",
                r.episode,
                e.cumulative_cost,
                e.mean_re,
                e.mean_sot,
                o(e.trials_to_re_threshold),
                o(e.trials_to_sot_threshold),
                o(e.mastery_trial),
                e.belief_fallbacks,
                e.belief_accuracy
            )?;
        }
        writeln!(out, "{kind},{},{},{}", s.n_episodes, s.mean_cumulative_cost, s.ci_cumulative_cost)?;
    }
    std::fs::write(a.output_dir.join("curves.csv"), curves)?;
    std::fs::write(a.output_dir.join("episodes.csv"), episodes)?;
    if a.tune {
        let (points, best) = tune_alpha_gamma(&setup, &planner_model, &base, &DEFAULT_ALPHA_GRID, &DEFAULT_GAMMA_GRID, a.episodes)?;
        let mut t = String::from("alpha,gamma,mean_cumulative_cost,best\n");
        for (i, p) in points.iter().enumerate() {
            writeln!(t, "{},{},{},{}", p.alpha, p.gamma, p.mean_cumulative_cost, i == best)?;
        }
        std::fs::write(a.output_dir.join("tuning.csv"), t)?;
        writeln!(out, "tuned,alpha={},gamma={}", points[best].alpha, points[best].gamma)?;
    }
    Ok(())
}

pub fn analyze_cmd(a: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let thresholds = match &a.config {
        Some(p) => ServiceConfig::load(Some(p))?.thresholds,
        None => Thresholds::default(),
    };
    let model = match &a.model {
        Some(p) => Some(read_model(p)?.1),
        None => None,
    };
    let (logs, _) = read_logs(&a.logs, err)?;
    let summary = LogSummary { skipped_lines: logs.skipped.len(), partial_tail: logs.partial_tail };
    analyze(&logs.records, &summary, model.as_ref(), &thresholds).write(&a.output_dir)?;
    writeln!(out, "records,{}", logs.records.len())?;
    writeln!(out, "skipped,{}", logs.skipped.len())?;
    Ok(())
}

pub fn serve_cmd(a: &ServeArgs) -> anyhow::Result<()> {
    let mut cfg = ServiceConfig::load(a.config.as_deref())?;
    if let Some(p) = a.port {
        cfg.server.port = p;
    }
    let addr: SocketAddr = format!("{}:{}", cfg.server.host, cfg.server.port).parse().context("server address")?;
    let state = crate::server::app_state(&cfg)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::server::serve(state, addr, |bound| log::info!("listening on ws://{bound}/ws")))
}

/// Runs a parsed command line; `out` receives the command's report and `err` warnings.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::Calibrate(a) => calibrate_cmd(a, out),
        Command::Fit(a) => fit_cmd(a, out, err),
        Command::Solve(a) => solve_cmd(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Analyze(a) => analyze_cmd(a, out, err),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(&cli, out, err)
}

