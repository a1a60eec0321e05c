//! Experiment orchestration: loading instances, running every scheme against
//! the per-epoch oracle, and latency measurements.

mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    linreg_fit, oracle_optimize, prediction_based_te, tabular_sgd, HistoryIndex, OracleOptions,
    TheoryBounds,
};
use crate::engine::{infer, train, DoteModel, TrainConfig};
use crate::net_model::{
    edge_disjoint_paths_for_pairs, history_windows, yen_k_shortest_for_pairs, DemandMatrix,
    DemandTrace, HistorySample, IncidenceMatrices, NodeId, Topology, TunnelSet,
};
use crate::objectives::{objective_value, ObjectiveKind, SplitConfig, TeConfig};
use crate::resilience::{eval_under_failures, fail_links, FailureRow, FailureScenario};
use crate::traffic::{
    gravity_trace, perturb_trace, ring_chord_topology, toy_bimodal_trace, toy_topology,
    GravityParams, RingChordParams, ToyBimodalParams,
};
use crate::{Error, Result};

pub use report::{
    load_rows, normalized_ratio, percentile_summary, read_rows, save_rows, summarize_ratios,
    write_rows, LatencyRow, PercentileSummary, RatioRow, SummaryRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Dote,
    Pred,
    Oracle,
    Tabular,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dote => "dote",
            Scheme::Pred => "pred",
            Scheme::Oracle => "oracle",
            Scheme::Tabular => "tabular",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dote" => Ok(Scheme::Dote),
            "pred" => Ok(Scheme::Pred),
            "oracle" => Ok(Scheme::Oracle),
            "tabular" => Ok(Scheme::Tabular),
            _ => Err(Error::parse("scheme", format!("unknown scheme {s:?}"))),
        }
    }
}

/// Where tunnels come from: `yen:<k>`, `disjoint`, or a tunnel file path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TunnelSpec {
    Yen(usize),
    Disjoint,
    File(PathBuf),
}

impl FromStr for TunnelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "disjoint" {
            return Ok(TunnelSpec::Disjoint);
        }
        if let Some(k) = s.strip_prefix("yen:") {
            return match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(TunnelSpec::Yen(k)),
                _ => Err(Error::parse(
                    "tunnel spec",
                    format!("bad path count in {s:?}"),
                )),
            };
        }
        if s.is_empty() {
            return Err(Error::parse("tunnel spec", "empty"));
        }
        Ok(TunnelSpec::File(PathBuf::from(s)))
    }
}

impl fmt::Display for TunnelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TunnelSpec::Yen(k) => write!(f, "yen:{k}"),
            TunnelSpec::Disjoint => f.write_str("disjoint"),
            TunnelSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl TryFrom<String> for TunnelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TunnelSpec> for String {
    fn from(t: TunnelSpec) -> String {
        t.to_string()
    }
}

impl TunnelSpec {
    /// Tunnels for `pairs` (generated) or as stored on disk.
    pub fn build(&self, topology: &Topology, pairs: &[(NodeId, NodeId)]) -> Result<TunnelSet> {
        let set = match self {
            TunnelSpec::Yen(k) => yen_k_shortest_for_pairs(topology, *k, pairs),
            TunnelSpec::Disjoint => edge_disjoint_paths_for_pairs(topology, pairs),
            TunnelSpec::File(p) => TunnelSet::load(p)?,
        };
        set.validate(topology)?;
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologySource {
    File {
        path: PathBuf,
    },
    Toy,
    RingChord {
        nodes: usize,
        chords: usize,
        min_capacity: f64,
        max_capacity: f64,
        seed: u64,
    },
}

impl TopologySource {
    pub fn load(&self) -> Result<Topology> {
        match self {
            TopologySource::File { path } => Topology::load(path),
            TopologySource::Toy => Ok(toy_topology()),
            TopologySource::RingChord {
                nodes,
                chords,
                min_capacity,
                max_capacity,
                seed,
            } => ring_chord_topology(
                RingChordParams {
                    nodes: *nodes,
                    chords: *chords,
                    min_capacity: *min_capacity,
                    max_capacity: *max_capacity,
                },
                *seed,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrafficSource {
    File {
        path: PathBuf,
    },
    Toy {
        epochs: usize,
        seed: u64,
    },
    Gravity {
        epochs: usize,
        seed: u64,
        total_volume: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        masses: Option<Vec<f64>>,
    },
}

impl TrafficSource {
    pub fn load(&self, topology: &Topology) -> Result<DemandTrace> {
        match self {
            TrafficSource::File { path } => DemandTrace::load_csv(path),
            TrafficSource::Toy { epochs, seed } => toy_bimodal_trace(ToyBimodalParams {
                seed: *seed,
                epochs: *epochs,
            }),
            TrafficSource::Gravity {
                epochs,
                seed,
                total_volume,
                sigma,
                masses,
            } => gravity_trace(
                topology,
                *epochs,
                &GravityParams {
                    masses: masses.clone(),
                    total_volume: *total_volume,
                    sigma: *sigma,
                },
                *seed,
            ),
        }
    }
}

/// Multiplicative test-time noise; the training data stays clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub alpha: f64,
    pub seed: u64,
}

/// Settings of the tabular baseline (MLU only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularSettings {
    /// Target accuracy fixing the iteration count and step.
    pub epsilon: f64,
    /// Number of most recent matrices identifying a history; 0 puts every
    /// window in one class.
    pub history: usize,
    /// Upper bound on the iteration count the accuracy target asks for.
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TabularSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            history: 0,
            max_iterations: 2_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    pub traffic: TrafficSource,
    pub tunnels: TunnelSpec,
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub train: TrainConfig,
    /// Load this checkpoint instead of training.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub test_perturbation: Option<Perturbation>,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub tabular: TabularSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory for cached per-epoch oracle values.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::parse("experiment config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |p: &Path| Err(Error::Config(format!("{} does not exist", p.display())));
        if let TopologySource::File { path } = &self.topology {
            if !path.exists() {
                return missing(path);
            }
        }
        if let TrafficSource::File { path } = &self.traffic {
            if !path.exists() {
                return missing(path);
            }
        }
        if let TunnelSpec::File(path) = &self.tunnels {
            if !path.exists() {
                return missing(path);
            }
        }
        if let Some(path) = &self.model {
            if !path.exists() {
                return missing(path);
            }
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes requested".into()));
        }
        if self.schemes.contains(&Scheme::Tabular) && self.objective != ObjectiveKind::MinMlu {
            return Err(Error::Config("the tabular scheme supports MLU only".into()));
        }
        if let Some(p) = &self.test_perturbation {
            if !(0.0..1.0).contains(&p.alpha) {
                return Err(Error::Config(format!(
                    "perturbation {} outside [0, 1)",
                    p.alpha
                )));
            }
        }
        self.train.validate()
    }
}

/// Replaces the placeholder threshold of a bare `conc` objective with the
/// default derived from `trace`.
pub fn resolve_objective(kind: ObjectiveKind, trace: &DemandTrace) -> ObjectiveKind {
    match kind {
        ObjectiveKind::MaxConcurrentFlow(eps) if eps == f64::MIN_POSITIVE => {
            ObjectiveKind::concurrent_for(trace.matrices())
        }
        k => k,
    }
}

/// A topology, a trace over it and the tunnels every scheme routes on.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: Topology,
    pub trace: DemandTrace,
    pub tunnels: TunnelSet,
    pub inc: IncidenceMatrices,
}

impl Instance {
    /// Builds tunnels for every pair with demand in `trace`.
    pub fn new(topology: Topology, trace: DemandTrace, tunnels: &TunnelSpec) -> Result<Self> {
        if trace.node_count() != topology.node_count() {
            return Err(Error::Dimension(format!(
                "trace has {} nodes, topology has {}",
                trace.node_count(),
                topology.node_count()
            )));
        }
        let tunnels = tunnels.build(&topology, &trace.active_pairs())?;
        tunnels.check_covers(&trace)?;
        let inc = IncidenceMatrices::build(&topology, &tunnels)?;
        Ok(Self {
            topology,
            trace,
            tunnels,
            inc,
        })
    }
}

/// Hex digest identifying one oracle computation.
fn oracle_cache_key(
    inc: &IncidenceMatrices,
    topology: &Topology,
    targets: &[&DemandMatrix],
    objective: ObjectiveKind,
    opts: &OracleOptions,
) -> String {
    let mut h = Sha256::new();
    h.update(topology.to_json_string().as_bytes());
    h.update(inc.tunnel_set().to_json_string().as_bytes());
    h.update(objective.to_string().as_bytes());
    h.update(
        serde_json::to_string(opts)
            .expect("options serialize")
            .as_bytes(),
    );
    for dm in targets {
        h.update((dm.node_count() as u64).to_le_bytes());
        for v in dm.values() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct OracleRow {
    epoch: usize,
    value: f64,
}

/// Oracle value on every sample's realized matrix, read from or written to
/// `cache_dir` when given.
pub fn oracle_values(
    inc: &IncidenceMatrices,
    topology: &Topology,
    samples: &[HistorySample<'_>],
    objective: ObjectiveKind,
    opts: &OracleOptions,
    cache_dir: Option<&Path>,
) -> Result<Vec<f64>> {
    let targets: Vec<&DemandMatrix> = samples.iter().map(|s| s.target).collect();
    let cache_path = cache_dir.map(|dir| {
        dir.join(format!(
            "oracle-{}.csv",
            oracle_cache_key(inc, topology, &targets, objective, opts)
        ))
    });
    if let Some(path) = cache_path.as_ref().filter(|p| p.exists()) {
        let rows: Vec<OracleRow> = load_rows(path)?;
        if rows.len() == samples.len() && rows.iter().zip(samples).all(|(r, s)| r.epoch == s.epoch)
        {
            log::debug!("oracle values from cache {}", path.display());
            return Ok(rows.into_iter().map(|r| r.value).collect());
        }
        log::warn!("ignoring stale oracle cache {}", path.display());
    }
    let values: Vec<f64> = targets
        .iter()
        .map(|dm| oracle_optimize(inc, dm, objective, opts).map(|s| s.value))
        .collect::<Result<_>>()?;
    if let Some(path) = cache_path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let rows: Vec<OracleRow> = samples
            .iter()
            .zip(&values)
            .map(|(s, &value)| OracleRow {
                epoch: s.epoch,
                value,
            })
            .collect();
        save_rows(&path, &rows)?;
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub values: Vec<f64>,
    pub ratios: Vec<f64>,
    pub summary: PercentileSummary,
    /// Mean wall-clock time of one decision.
    pub decision_time: Duration,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub objective: ObjectiveKind,
    /// Target epochs, as indices into the test split.
    pub epochs: Vec<usize>,
    pub oracle: Vec<f64>,
    pub schemes: Vec<SchemeResult>,
    /// Training losses when a model was trained.
    pub losses: Option<Vec<f64>>,
    pub model: Option<DoteModel>,
}

impl MetricsReport {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeResult> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    pub fn ratio_rows(&self) -> Vec<RatioRow> {
        self.schemes
            .iter()
            .flat_map(|s| {
                self.epochs.iter().zip(s.values.iter().zip(&s.ratios)).map(
                    |(&epoch, (&value, &ratio))| RatioRow {
                        scheme: s.scheme.name().to_string(),
                        epoch,
                        value,
                        ratio,
                    },
                )
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.schemes
            .iter()
            .map(|s| SummaryRow::new(s.scheme.name(), s.summary))
            .collect()
    }

    pub fn latency_rows(&self) -> Vec<LatencyRow> {
        self.schemes
            .iter()
            .map(|s| {
                let t = s.decision_time.as_secs_f64();
                LatencyRow {
                    scheme: s.scheme.name().to_string(),
                    repetitions: s.values.len(),
                    median: t,
                    min: t,
                    max: t,
                }
            })
            .collect()
    }

    /// Writes `ratios.csv`, `summary.csv` and `latency.csv`, plus
    /// `losses.csv` and `model.json` when a model was trained. Everything but
    /// the latency file is a pure function of the configuration.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_rows(dir.join("ratios.csv"), &self.ratio_rows())?;
        save_rows(dir.join("summary.csv"), &self.summary_rows())?;
        save_rows(dir.join("latency.csv"), &self.latency_rows())?;
        if let Some(losses) = &self.losses {
            let rows: Vec<LossRow> = losses
                .iter()
                .enumerate()
                .map(|(step, &loss)| LossRow { step, loss })
                .collect();
            save_rows(dir.join("losses.csv"), &rows)?;
        }
        if let Some(model) = &self.model {
            model.save(dir.join("model.json"))?;
        }
        Ok(())
    }
}

/// One line of a training loss file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

/// Runs each sample through `decide`, scores the decision on the realized
/// matrix and reports the mean decision time.
fn score_decisions(
    inc: &IncidenceMatrices,
    samples: &[HistorySample<'_>],
    objective: ObjectiveKind,
    mut decide: impl FnMut(&HistorySample<'_>) -> Result<TeConfig>,
) -> Result<(Vec<f64>, Duration)> {
    let mut values = Vec::with_capacity(samples.len());
    let mut spent = Duration::ZERO;
    for s in samples {
        let start = Instant::now();
        let config = decide(s)?;
        spent += start.elapsed();
        values.push(objective_value(inc, &config, s.target, objective)?);
    }
    let mean = spent / samples.len().max(1) as u32;
    Ok((values, mean))
}

/// Decisions of the tabular SGD policy. Histories are keyed by the last
/// `settings.history` matrices of the window; unseen histories split evenly.
fn tabular_decisions(
    inc: &IncidenceMatrices,
    train_samples: &[HistorySample<'_>],
    settings: &TabularSettings,
) -> Result<impl Fn(&HistorySample<'_>) -> Result<TeConfig>> {
    let h = settings.history;
    let key =
        move |w: &[DemandMatrix]| -> Vec<DemandMatrix> { w[w.len().saturating_sub(h)..].to_vec() };
    let mut index = HistoryIndex::default();
    let ids: Vec<usize> = train_samples
        .iter()
        .map(|s| index.intern(&key(s.window)))
        .collect();
    let bounds = TheoryBounds::new(inc, train_samples.iter().map(|s| s.target), index.len());
    let iterations = bounds
        .iterations_for(settings.epsilon)
        .clamp(1, settings.max_iterations.max(1));
    let eta = bounds.step_for(iterations);
    let eta = if eta.is_finite() && eta > 0.0 {
        eta
    } else {
        1.0
    };
    log::info!(
        "tabular SGD: {} histories, {iterations} iterations, step {eta:.4e}",
        index.len()
    );
    let targets: Vec<DemandMatrix> = train_samples.iter().map(|s| s.target.clone()).collect();
    let policy = tabular_sgd(
        inc,
        index.len(),
        |rng| {
            use rand::Rng;
            let k = rng.random_range(0..ids.len());
            (ids[k], targets[k].clone())
        },
        eta,
        iterations,
        settings.seed,
    )?;
    let uniform = SplitConfig::uniform(inc);
    Ok(move |s: &HistorySample<'_>| {
        let config = index
            .get(&key(s.window))
            .map_or_else(|| uniform.clone(), |id| policy.get(id).clone());
        Ok(TeConfig::Split(config))
    })
}

/// Trains or loads the model, evaluates every requested scheme on the test
/// split and normalizes each against the per-epoch oracle.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let topology = cfg
        .topology
        .load()
        .map_err(|e| e.in_stage("loading topology"))?;
    let trace = cfg
        .traffic
        .load(&topology)
        .map_err(|e| e.in_stage("loading traffic"))?;
    let instance =
        Instance::new(topology, trace, &cfg.tunnels).map_err(|e| e.in_stage("building tunnels"))?;
    let objective = resolve_objective(cfg.objective, &instance.trace);
    let report = evaluate_instance(&instance, objective, cfg)?;
    if let Some(dir) = &cfg.output_dir {
        report
            .write(dir)
            .map_err(|e| e.in_stage("writing reports"))?;
    }
    Ok(report)
}

/// [`run_experiment`] on an already built instance.
pub fn evaluate_instance(
    instance: &Instance,
    objective: ObjectiveKind,
    cfg: &ExperimentConfig,
) -> Result<MetricsReport> {
    let inc = &instance.inc;
    let history = cfg.train.history;
    let (train_trace, test_trace) = instance.trace.split(cfg.train.train_fraction)?;
    let test_trace = match cfg.test_perturbation {
        Some(p) => perturb_trace(&test_trace, p.alpha, p.seed)?,
        None => test_trace,
    };
    let samples = history_windows(&test_trace, history).map_err(|e| e.in_stage("test split"))?;
    let oracle = oracle_values(
        inc,
        &instance.topology,
        &samples,
        objective,
        &cfg.oracle,
        cfg.cache_dir.as_deref(),
    )
    .map_err(|e| e.in_stage("oracle"))?;

    let mut losses = None;
    let mut model = None;
    let mut schemes = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let stage = format!("scheme {}", scheme.name());
        let (values, decision_time) = match scheme {
            Scheme::Oracle => score_decisions(inc, &samples, objective, |s| {
                oracle_optimize(inc, s.target, objective, &cfg.oracle).map(|o| o.config)
            }),
            Scheme::Pred => linreg_fit(&train_trace, history).and_then(|predictor| {
                score_decisions(inc, &samples, objective, |s| {
                    prediction_based_te(&predictor, s.window, inc, objective, &cfg.oracle)
                        .map(|o| o.config)
                })
            }),
            Scheme::Tabular => history_windows(&train_trace, history).and_then(|train_samples| {
                let decide = tabular_decisions(inc, &train_samples, &cfg.tabular)?;
                score_decisions(inc, &samples, objective, decide)
            }),
            Scheme::Dote => {
                let m = match &cfg.model {
                    Some(path) => {
                        let m = DoteModel::load(path)?;
                        m.check_compatible(inc)?;
                        if m.objective() != objective || m.history() != history {
                            return Err(Error::Config(format!(
                                "checkpoint was trained for {} with history {}",
                                m.objective(),
                                m.history()
                            ))
                            .in_stage(stage));
                        }
                        m
                    }
                    None => {
                        let train_cfg = TrainConfig {
                            objective,
                            ..cfg.train.clone()
                        };
                        let report = train(&instance.trace, inc, &train_cfg)
                            .map_err(|e| e.in_stage("training"))?;
                        losses = Some(report.losses);
                        report.model
                    }
                };
                let out = score_decisions(inc, &samples, objective, |s| infer(&m, s.window, inc));
                model = Some(m);
                out
            }
        }
        .map_err(|e| e.in_stage(stage.clone()))?;
        let ratios: Vec<f64> = values
            .iter()
            .zip(&oracle)
            .map(|(&v, &o)| normalized_ratio(v, o))
            .collect();
        let summary = percentile_summary(&ratios).map_err(|e| e.in_stage(stage))?;
        schemes.push(SchemeResult {
            scheme,
            values,
            ratios,
            summary,
            decision_time,
        });
    }
    if cfg.model.is_some() {
        model = None;
    }
    Ok(MetricsReport {
        objective,
        epochs: samples.iter().map(|s| s.epoch).collect(),
        oracle,
        schemes,
        losses,
        model,
    })
}

/// Per-decision wall-clock samples for the model and for one oracle solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyTable {
    pub dote: Vec<Duration>,
    pub oracle: Vec<Duration>,
}

impl LatencyTable {
    pub fn rows(&self) -> Result<Vec<LatencyRow>> {
        Ok(vec![
            LatencyRow::from_samples("dote", &self.dote)?,
            LatencyRow::from_samples("oracle", &self.oracle)?,
        ])
    }

    pub fn median_dote(&self) -> Duration {
        median_duration(&self.dote)
    }

    pub fn median_oracle(&self) -> Duration {
        median_duration(&self.oracle)
    }
}

fn median_duration(samples: &[Duration]) -> Duration {
    let mut s = samples.to_vec();
    s.sort();
    s.get((s.len().max(1) - 1) / 2).copied().unwrap_or_default()
}

/// Times `repetitions` decisions of each kind, cycling over `samples`: model
/// inference on the window, and the oracle on the realized matrix.
pub fn runtime_benchmark(
    model: &DoteModel,
    inc: &IncidenceMatrices,
    samples: &[HistorySample<'_>],
    opts: &OracleOptions,
    repetitions: usize,
) -> Result<LatencyTable> {
    if samples.is_empty() || repetitions == 0 {
        return Err(Error::Config(
            "benchmark needs samples and repetitions".into(),
        ));
    }
    let mut table = LatencyTable {
        dote: Vec::with_capacity(repetitions),
        oracle: Vec::with_capacity(repetitions),
    };
    for r in 0..repetitions {
        let s = &samples[r % samples.len()];
        let start = Instant::now();
        std::hint::black_box(infer(model, s.window, inc)?);
        table.dote.push(start.elapsed());
        let start = Instant::now();
        std::hint::black_box(oracle_optimize(inc, s.target, model.objective(), opts)?);
        table.oracle.push(start.elapsed());
    }
    Ok(table)
}

/// False when two measurements of the same thing are more than 5x apart.
pub fn latencies_consistent(a: Duration, b: Duration) -> bool {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    hi.as_secs_f64() <= 5.0 * lo.as_secs_f64()
}

/// `count` admissible scenarios of `n_links` failed edges, scenario `k`
/// seeded with `seed + k`.
pub fn failure_scenarios(
    topology: &Topology,
    trace: &DemandTrace,
    n_links: usize,
    count: usize,
    seed: u64,
    max_retries: usize,
) -> Result<Vec<FailureScenario>> {
    (0..count as u64)
        .map(|k| fail_links(topology, n_links, trace, seed.wrapping_add(k), max_retries))
        .collect()
}

/// One line of a failure report: raw values and ratios to the fault-aware
/// oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReportRow {
    pub scenario: usize,
    pub epoch: usize,
    pub failed_edges: usize,
    pub dead_pairs: usize,
    pub oracle: f64,
    pub dote: f64,
    pub pred: f64,
    pub fa_pred: f64,
    pub dote_ratio: f64,
    pub pred_ratio: f64,
    pub fa_pred_ratio: f64,
}

impl From<&FailureRow> for FailureReportRow {
    fn from(r: &FailureRow) -> Self {
        let o = r.fault_aware_oracle;
        Self {
            scenario: r.scenario,
            epoch: r.epoch,
            failed_edges: r.failed_edges,
            dead_pairs: r.dead_pairs,
            oracle: o,
            dote: r.dote,
            pred: r.prediction,
            fa_pred: r.fault_aware_prediction,
            dote_ratio: normalized_ratio(r.dote, o),
            pred_ratio: normalized_ratio(r.prediction, o),
            fa_pred_ratio: normalized_ratio(r.fault_aware_prediction, o),
        }
    }
}

/// Trains (or takes) a model, fits the predictor on the training split and
/// scores every scenario on the test split.
pub fn run_failures(
    instance: &Instance,
    model: &DoteModel,
    train_fraction: f64,
    scenarios: &[FailureScenario],
    opts: &OracleOptions,
) -> Result<Vec<FailureReportRow>> {
    let (train_trace, test_trace) = instance.trace.split(train_fraction)?;
    let predictor = linreg_fit(&train_trace, model.history())?;
    let rows = eval_under_failures(
        model,
        &predictor,
        &test_trace,
        &instance.topology,
        &instance.inc,
        scenarios,
        opts,
    )?;
    Ok(rows.iter().map(FailureReportRow::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(schemes: Vec<Scheme>) -> ExperimentConfig {
        ExperimentConfig {
            topology: TopologySource::Toy,
            traffic: TrafficSource::Toy {
                epochs: 200,
                seed: 5,
            },
            tunnels: TunnelSpec::Yen(2),
            objective: ObjectiveKind::MinMlu,
            train: TrainConfig {
                history: 4,
                steps: 50,
                hidden: vec![16],
                ..TrainConfig::default()
            },
            model: None,
            schemes,
            test_perturbation: None,
            oracle: OracleOptions::default(),
            tabular: TabularSettings::default(),
            output_dir: None,
            cache_dir: None,
        }
    }

    #[test]
    fn tunnel_spec_parsing() {
        assert_eq!("yen:4".parse::<TunnelSpec>().unwrap(), TunnelSpec::Yen(4));
        assert_eq!(
            "disjoint".parse::<TunnelSpec>().unwrap(),
            TunnelSpec::Disjoint
        );
        assert!("yen:0".parse::<TunnelSpec>().is_err());
        assert_eq!(
            "t.json".parse::<TunnelSpec>().unwrap(),
            TunnelSpec::File("t.json".into())
        );
    }

    #[test]
    fn oracle_scheme_is_self_normalized() {
        let report = run_experiment(&toy_config(vec![Scheme::Oracle])).unwrap();
        let oracle = report.scheme(Scheme::Oracle).unwrap();
        assert!(oracle.ratios.iter().all(|&r| r == 1.0));
        assert_eq!(report.epochs.len(), 50 - 4);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = toy_config(vec![Scheme::Dote, Scheme::Pred]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), cfg);
        let minimal = r#"{"topology": {"kind": "toy"}, "traffic": {"kind": "toy", "epochs": 40, "seed": 1},
            "tunnels": "yen:2", "objective": "mlu", "schemes": ["oracle"]}"#;
        let parsed = ExperimentConfig::from_json_str(minimal).unwrap();
        assert_eq!(parsed.train.history, 12);
        let bad = minimal.replace("\"oracle\"", "\"rl\"");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
        let tab = minimal
            .replace("\"mlu\"", "\"mcf\"")
            .replace("\"oracle\"", "\"tabular\"");
        assert!(ExperimentConfig::from_json_str(&tab).is_err());
    }

    #[test]
    fn oracle_cache_is_reused_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(vec![Scheme::Oracle, Scheme::Pred]);
        cfg.cache_dir = Some(dir.path().to_path_buf());
        let first = run_experiment(&cfg).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let second = run_experiment(&cfg).unwrap();
        assert_eq!(first.oracle, second.oracle);
        assert_eq!(first.ratio_rows(), second.ratio_rows());
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(vec![Scheme::Dote, Scheme::Pred, Scheme::Tabular]);
        cfg.output_dir = Some(dir.path().to_path_buf());
        cfg.tabular.max_iterations = 2000;
        let report = run_experiment(&cfg).unwrap();
        let ratios: Vec<RatioRow> = load_rows(dir.path().join("ratios.csv")).unwrap();
        assert_eq!(ratios, report.ratio_rows());
        let summary: Vec<SummaryRow> = load_rows(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary, report.summary_rows());
        assert_eq!(summarize_ratios(&ratios).unwrap(), summary);
        for s in &report.schemes {
            assert!(s.ratios.iter().all(|&r| r >= 1.0 - 1e-9), "{:?}", s.scheme);
        }
        assert!(dir.path().join("model.json").exists());
        let losses: Vec<LossRow> = load_rows(dir.path().join("losses.csv")).unwrap();
        assert_eq!(losses.len(), 50);
    }

    #[test]
    fn latency_consistency_flag() {
        let ms = Duration::from_millis;
        assert!(latencies_consistent(ms(10), ms(40)));
        assert!(!latencies_consistent(ms(60), ms(10)));
    }
}
