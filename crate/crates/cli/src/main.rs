use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dote_core::baselines::{
    linreg_fit, oracle_optimize, prediction_based_te, OracleMethod, OracleOptions,
};
use dote_core::engine::{train, DoteModel, TrainConfig};
use dote_core::harness::{
    failure_scenarios, load_rows, percentile_summary, resolve_objective, run_experiment,
    run_failures, runtime_benchmark, save_rows, summarize_ratios, ExperimentConfig, Instance,
    LossRow, RatioRow, SummaryRow, TunnelSpec,
};
use dote_core::net_model::{history_windows, DemandTrace, Topology};
use dote_core::objectives::ObjectiveKind;
use dote_core::traffic::{
    gravity_trace, perturb_trace, ring_chord_topology, toy_bimodal_trace, toy_topology,
    GravityParams, RingChordParams, ToyBimodalParams,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "dote",
    version,
    about = "Learn TE configurations from demand history"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a topology file.
    GenTopology(GenTopologyArgs),
    /// Write a demand trace CSV.
    GenTraffic(GenTrafficArgs),
    /// Compute tunnels for every pair with demand.
    Tunnels(TunnelsArgs),
    /// Train a model; writes the checkpoint and per-step losses.
    Train(TrainArgs),
    /// Per-epoch optimal objective values.
    Oracle(OracleArgs),
    /// Prediction-based TE values on the test split.
    PredictTe(PredictArgs),
    /// Run an experiment described by a JSON config.
    Eval(EvalArgs),
    /// Evaluate schemes under random link failures.
    Failures(FailuresArgs),
    /// Compare per-decision latency of the model and the oracle.
    Bench(BenchArgs),
    /// Summarize a ratios file.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyKind {
    Toy,
    RingChord,
}

#[derive(clap::Args)]
struct GenTopologyArgs {
    #[arg(long, value_enum)]
    kind: TopologyKind,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    chords: usize,
    #[arg(long, default_value_t = 10.0)]
    min_capacity: f64,
    #[arg(long, default_value_t = 40.0)]
    max_capacity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrafficKind {
    Toy,
    Gravity,
    Perturb,
}

#[derive(clap::Args)]
struct GenTrafficArgs {
    #[arg(long, value_enum)]
    kind: TrafficKind,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Topology (gravity).
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Total demand per epoch (gravity).
    #[arg(long, default_value_t = 100.0)]
    total_volume: f64,
    /// Lognormal jitter shape (gravity).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Trace to perturb (perturb).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Noise level in [0, 1) (perturb).
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TunnelsArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Restrict to pairs with demand in this trace; all pairs otherwise.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "yen:4")]
    spec: TunnelSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct InstanceArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// `yen:<k>`, `disjoint`, or a tunnel file.
    #[arg(long, default_value = "yen:4")]
    tunnels: TunnelSpec,
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance> {
        let topology = Topology::load(&self.topology)?;
        let trace = DemandTrace::load_csv(&self.trace)?;
        Ok(Instance::new(topology, trace, &self.tunnels)?)
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// `mlu`, `mcf`, `conc` or `conc:<epsilon>`.
    #[arg(long, default_value = "mlu")]
    objective: ObjectiveKind,
    #[arg(long, default_value_t = 12)]
    h: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    final_lr_fraction: f64,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "128,128,128,128,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Loss CSV; defaults to the checkpoint path with a `.losses.csv` suffix.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(clap::Args)]
struct OracleSettings {
    #[arg(long, value_enum, default_value_t = MethodArg::Lp)]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lp,
    FirstOrder,
}

impl OracleSettings {
    fn options(&self) -> OracleOptions {
        OracleOptions {
            method: match self.method {
                MethodArg::Lp => OracleMethod::Lp,
                MethodArg::FirstOrder => OracleMethod::FirstOrder,
            },
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(clap::Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "mlu")]
    objective: ObjectiveKind,
    #[command(flatten)]
    oracle: OracleSettings,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "mlu")]
    objective: ObjectiveKind,
    #[arg(long, default_value_t = 12)]
    h: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[command(flatten)]
    oracle: OracleSettings,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct FailuresArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    n_links: usize,
    #[arg(long, default_value_t = 10)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_retries: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[command(flatten)]
    oracle: OracleSettings,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[command(flatten)]
    oracle: OracleSettings,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    ratios: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ValueRow {
    epoch: usize,
    value: f64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::GenTopology(a) => gen_topology(a),
        Command::GenTraffic(a) => gen_traffic(a),
        Command::Tunnels(a) => tunnels(a),
        Command::Train(a) => train_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::PredictTe(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Failures(a) => failures_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn gen_topology(a: GenTopologyArgs) -> Result<()> {
    let topo = match a.kind {
        TopologyKind::Toy => toy_topology(),
        TopologyKind::RingChord => ring_chord_topology(
            RingChordParams {
                nodes: a.nodes,
                chords: a.chords,
                min_capacity: a.min_capacity,
                max_capacity: a.max_capacity,
            },
            a.seed,
        )?,
    };
    topo.save(&a.out)?;
    log::info!("{} nodes, {} edges", topo.node_count(), topo.edge_count());
    Ok(())
}

fn gen_traffic(a: GenTrafficArgs) -> Result<()> {
    let trace = match a.kind {
        TrafficKind::Toy => toy_bimodal_trace(ToyBimodalParams {
            seed: a.seed,
            epochs: a.epochs,
        })?,
        TrafficKind::Gravity => {
            let path = a
                .topology
                .context("--topology is required for gravity traffic")?;
            let topo = Topology::load(path)?;
            let params = GravityParams {
                masses: None,
                total_volume: a.total_volume,
                sigma: a.sigma,
            };
            gravity_trace(&topo, a.epochs, &params, a.seed)?
        }
        TrafficKind::Perturb => {
            let path = a.input.context("--input is required for perturbation")?;
            perturb_trace(&DemandTrace::load_csv(path)?, a.alpha, a.seed)?
        }
    };
    trace.save_csv(&a.out)?;
    Ok(())
}

fn tunnels(a: TunnelsArgs) -> Result<()> {
    let topo = Topology::load(&a.topology)?;
    let pairs = match &a.trace {
        Some(p) => DemandTrace::load_csv(p)?.active_pairs(),
        None => {
            let n = topo.node_count();
            (0..n)
                .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
                .collect()
        }
    };
    let set = a.spec.build(&topo, &pairs)?;
    set.save(&a.out)?;
    println!("{} pairs, {} tunnels", set.pair_count(), set.tunnel_count());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let cfg = TrainConfig {
        history: a.h,
        batch_size: a.batch,
        steps: a.steps,
        learning_rate: a.lr,
        final_lr_fraction: a.final_lr_fraction,
        seed: a.seed,
        objective: resolve_objective(a.objective, &instance.trace),
        train_fraction: a.train_fraction,
        hidden: a.hidden,
    };
    let report = train(&instance.trace, &instance.inc, &cfg)?;
    report.model.save(&a.out)?;
    let losses_path = a
        .losses
        .unwrap_or_else(|| with_suffix(&a.out, ".losses.csv"));
    let rows: Vec<LossRow> = report
        .losses
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossRow { step, loss })
        .collect();
    save_rows(&losses_path, &rows)?;
    println!(
        "trained {} steps in {:.2?}; final loss {}",
        report.losses.len(),
        report.timings.total,
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn oracle_cmd(a: OracleArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let objective = resolve_objective(a.objective, &instance.trace);
    let opts = a.oracle.options();
    let mut rows = Vec::with_capacity(instance.trace.len());
    for (epoch, dm) in instance.trace.matrices().iter().enumerate() {
        let sol = oracle_optimize(&instance.inc, dm, objective, &opts)
            .with_context(|| format!("oracle on epoch {epoch}"))?;
        rows.push(ValueRow {
            epoch,
            value: sol.value,
        });
    }
    save_rows(&a.out, &rows)?;
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let objective = resolve_objective(a.objective, &instance.trace);
    let opts = a.oracle.options();
    let (train_trace, test_trace) = instance.trace.split(a.train_fraction)?;
    let predictor = linreg_fit(&train_trace, a.h)?;
    let mut rows = Vec::new();
    for s in history_windows(&test_trace, a.h)? {
        let sol = prediction_based_te(&predictor, s.window, &instance.inc, objective, &opts)?;
        let value = dote_core::objectives::objective_value(
            &instance.inc,
            &sol.config,
            s.target,
            objective,
        )?;
        rows.push(ValueRow {
            epoch: s.epoch,
            value,
        });
    }
    save_rows(&a.out, &rows)?;
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<10} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "scheme", "n", "min", "p25", "median", "p75", "max", "mean"
    );
    for r in rows {
        println!(
            "{:<10} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            r.scheme, r.count, r.min, r.p25, r.median, r.p75, r.max, r.mean
        );
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if a.out_dir.is_some() {
        cfg.output_dir = a.out_dir;
    }
    let report = run_experiment(&cfg)?;
    print_summary(&report.summary_rows());
    Ok(())
}

fn failures_cmd(a: FailuresArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let model = DoteModel::load(&a.model)?;
    model.check_compatible(&instance.inc)?;
    let scenarios = failure_scenarios(
        &instance.topology,
        &instance.trace,
        a.n_links,
        a.scenarios,
        a.seed,
        a.max_retries,
    )?;
    let rows = run_failures(
        &instance,
        &model,
        a.train_fraction,
        &scenarios,
        &a.oracle.options(),
    )?;
    save_rows(&a.out, &rows)?;
    let columns = [
        (
            "dote",
            rows.iter().map(|r| r.dote_ratio).collect::<Vec<_>>(),
        ),
        ("pred", rows.iter().map(|r| r.pred_ratio).collect()),
        ("fa-pred", rows.iter().map(|r| r.fa_pred_ratio).collect()),
    ];
    for (name, values) in columns {
        if let Ok(s) = percentile_summary(&values) {
            println!(
                "{name:<8} median {:.5} p90 {:.5} max {:.5}",
                s.median, s.p90, s.max
            );
        }
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let model = DoteModel::load(&a.model)?;
    model.check_compatible(&instance.inc)?;
    let (_, test_trace) = instance.trace.split(a.train_fraction)?;
    let samples = history_windows(&test_trace, model.history())?;
    let table = runtime_benchmark(
        &model,
        &instance.inc,
        &samples,
        &a.oracle.options(),
        a.repetitions,
    )?;
    let rows = table.rows()?;
    save_rows(&a.out, &rows)?;
    for r in &rows {
        println!(
            "{:<8} median {:.3e} s over {}",
            r.scheme, r.median, r.repetitions
        );
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let rows: Vec<RatioRow> = load_rows(&a.ratios)?;
    if rows.is_empty() {
        bail!("{} has no rows", a.ratios.display());
    }
    let summary = summarize_ratios(&rows)?;
    if let Some(out) = &a.out {
        save_rows(out, &summary)?;
    }
    print_summary(&summary);
    Ok(())
}
