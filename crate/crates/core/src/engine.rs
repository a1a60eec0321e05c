//! Training a network that maps recent demand history directly to a TE
//! configuration, and running it.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net_model::{
    history_windows, DemandMatrix, DemandTrace, HistorySample, IncidenceMatrices,
};
use crate::neural::{
    adam_step, backward, forward_batch, init_params, Activation, AdamState, Checkpoint, Gradients,
    MlpParameters,
};
use crate::objectives::{
    flow_gradient, flow_value, mlu, mlu_subgradient, normalize_caps, normalize_splits,
    objective_value, ObjectiveKind, TeConfig,
};
use crate::{Error, Result};

/// Losses beyond this multiple of the first step's loss count as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// History window length `H`.
    pub history: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step relative to the first; the rate decays
    /// geometrically in between. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub train_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            history: 12,
            batch_size: 32,
            steps: 5000,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
            objective: ObjectiveKind::MinMlu,
            train_fraction: 0.75,
            hidden: vec![128; 5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.history == 0 {
            return bad("history length must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final learning-rate fraction must lie in (0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        Ok(())
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(t)
    }
}

/// Everything besides the weights needed to run a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub history: usize,
    pub node_count: usize,
    pub tunnel_count: usize,
    pub objective: ObjectiveKind,
    /// Demands are divided by this before entering the network.
    pub input_scale: f64,
    /// Sigmoid outputs are multiplied by this to give raw caps (flow
    /// objectives) or raw split weights (MLU).
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoteModel {
    pub params: MlpParameters,
    pub meta: ModelMeta,
}

impl DoteModel {
    /// Fresh network sized for `inc` with seeded initialization.
    pub fn new(
        inc: &IncidenceMatrices,
        history: usize,
        hidden: &[usize],
        objective: ObjectiveKind,
        input_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = inc.node_count();
        let mut dims = vec![history * n * n.saturating_sub(1)];
        dims.extend_from_slice(hidden);
        dims.push(inc.tunnel_count());
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Sigmoid);
        let params = init_params(seed, &dims, &activations)?;
        let output_scale = if objective.is_flow() {
            inc.c_max()
        } else {
            1.0
        };
        Ok(Self {
            params,
            meta: ModelMeta {
                history,
                node_count: n,
                tunnel_count: inc.tunnel_count(),
                objective,
                input_scale: if input_scale > 0.0 { input_scale } else { 1.0 },
                output_scale,
            },
        })
    }

    pub fn objective(&self) -> ObjectiveKind {
        self.meta.objective
    }

    pub fn history(&self) -> usize {
        self.meta.history
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            meta: Some(serde_json::to_value(&self.meta).expect("meta serializes")),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let meta = ckpt
            .meta
            .ok_or_else(|| Error::parse("model", "checkpoint carries no model metadata"))?;
        let meta: ModelMeta = serde_json::from_value(meta).map_err(|e| Error::parse("model", e))?;
        let model = Self {
            params: ckpt.params,
            meta,
        };
        let n = model.meta.node_count;
        if model.params.input_dim() != model.meta.history * n * n.saturating_sub(1)
            || model.params.output_dim() != model.meta.tunnel_count
        {
            return Err(Error::parse(
                "model",
                "network shape disagrees with metadata",
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Errors unless the model was built for this incidence structure.
    pub fn check_compatible(&self, inc: &IncidenceMatrices) -> Result<()> {
        if self.meta.node_count != inc.node_count() || self.meta.tunnel_count != inc.tunnel_count()
        {
            return Err(Error::Dimension(format!(
                "model expects {} nodes and {} tunnels, instance has {} and {}",
                self.meta.node_count,
                self.meta.tunnel_count,
                inc.node_count(),
                inc.tunnel_count()
            )));
        }
        Ok(())
    }

    /// Network input for a window: off-diagonal entries of each matrix in
    /// row-major order, oldest matrix first, divided by the input scale.
    pub fn encode(&self, window: &[DemandMatrix]) -> Result<Vec<f64>> {
        if window.len() != self.meta.history {
            return Err(Error::Dimension(format!(
                "window of {} matrices, model expects {}",
                window.len(),
                self.meta.history
            )));
        }
        let n = self.meta.node_count;
        let mut x = Vec::with_capacity(self.params.input_dim());
        for dm in window {
            if dm.node_count() != n {
                return Err(Error::Dimension(format!(
                    "window matrix has {} nodes, model expects {n}",
                    dm.node_count()
                )));
            }
            x.extend(dm.offdiag().map(|v| v / self.meta.input_scale));
        }
        Ok(x)
    }

    /// Raw decision vectors (split weights or caps) for a batch of windows.
    fn raw_outputs(
        &self,
        windows: &[&[DemandMatrix]],
    ) -> Result<(Array2<f64>, crate::neural::ForwardCache)> {
        let width = self.params.input_dim();
        let mut flat = Vec::with_capacity(windows.len() * width);
        for w in windows {
            flat.extend(self.encode(w)?);
        }
        let input = Array2::from_shape_vec((windows.len(), width), flat).expect("encoded width");
        forward_batch(&self.params, input.view())
    }
}

/// Loss of one raw decision on one realized matrix and its gradient with
/// respect to the sigmoid outputs. Loss is MLU, or the negated flow objective.
fn loss_and_grad(
    model: &DoteModel,
    inc: &IncidenceMatrices,
    sigmoid_out: &[f64],
    target: &DemandMatrix,
) -> Result<(f64, Vec<f64>)> {
    let scale = model.meta.output_scale;
    let raw: Vec<f64> = sigmoid_out.iter().map(|v| v * scale).collect();
    match model.meta.objective {
        ObjectiveKind::MinMlu => {
            let loss = mlu(inc, &raw, target)?;
            let mut g = mlu_subgradient(inc, &raw, target)?;
            g.iter_mut().for_each(|g| *g *= scale);
            Ok((loss, g))
        }
        kind => {
            let value = flow_value(inc, &raw, target, kind)?;
            let mut g = flow_gradient(inc, &raw, target, kind)?;
            g.iter_mut().for_each(|g| *g *= -scale);
            Ok((-value, g))
        }
    }
}

/// Mean loss over `samples` and the gradient of that mean with respect to the
/// network parameters, from a single batched backward pass.
pub fn minibatch_gradient(
    model: &DoteModel,
    inc: &IncidenceMatrices,
    samples: &[HistorySample<'_>],
) -> Result<(f64, Gradients)> {
    if samples.is_empty() {
        return Err(Error::Config("empty minibatch".into()));
    }
    let windows: Vec<&[DemandMatrix]> = samples.iter().map(|s| s.window).collect();
    let (out, cache) = model.raw_outputs(&windows)?;
    let m = samples.len() as f64;
    let mut upstream = Array2::zeros(out.dim());
    let mut total = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let row = out.row(k);
        let (loss, g) = loss_and_grad(model, inc, row.as_slice().expect("contiguous"), s.target)?;
        total += loss;
        for (u, g) in upstream.row_mut(k).iter_mut().zip(g) {
            *u = g / m;
        }
    }
    let grads = backward(&model.params, &cache, upstream.view())?;
    Ok((total / m, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTimings {
    pub total: Duration,
    pub mean_step: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Minibatch mean loss at every step, before that step's update.
    pub losses: Vec<f64>,
    pub model: DoteModel,
    pub timings: TrainTimings,
}

impl TrainReport {
    /// Writes `step,loss` rows.
    pub fn write_losses_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::parse("loss csv", e);
        w.write_record(["step", "loss"]).map_err(wrap)?;
        for (step, loss) in self.losses.iter().enumerate() {
            w.write_record([step.to_string(), format!("{loss:e}")])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("loss csv", e))
    }
}

/// Trains on the earlier `train_fraction` of `trace`.
///
/// Each step samples `batch_size` history windows uniformly with replacement,
/// evaluates the composed loss on the realized next matrix and applies one
/// Adam update to the minibatch mean gradient.
pub fn train(
    trace: &DemandTrace,
    inc: &IncidenceMatrices,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if trace.node_count() != inc.node_count() {
        return Err(Error::Dimension(format!(
            "trace has {} nodes, topology has {}",
            trace.node_count(),
            inc.node_count()
        )));
    }
    let (train_part, _) = trace.split(cfg.train_fraction)?;
    let samples = history_windows(&train_part, cfg.history)?;
    let mut model = DoteModel::new(
        inc,
        cfg.history,
        &cfg.hidden,
        cfg.objective,
        train_part.max_demand(),
        cfg.seed,
    )?;
    // Separate streams keep initialization and sampling independent.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3f_1e5a_3b1e);
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let start = Instant::now();
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| samples[rng.random_range(0..samples.len())]));
        let (loss, grads) = minibatch_gradient(&model, inc, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        if let Some(&first) = losses.first() {
            let first: f64 = first;
            if first != 0.0 && loss.abs() > DIVERGENCE_FACTOR * first.abs() {
                return Err(Error::Diverged {
                    step,
                    reason: format!(
                        "loss {loss:e} exceeds {DIVERGENCE_FACTOR:e} times initial {first:e}"
                    ),
                });
            }
        }
        losses.push(loss);
        adam.learning_rate = cfg.learning_rate_at(step);
        adam_step(&mut model.params, &grads, &mut adam).map_err(|e| Error::Diverged {
            step,
            reason: e.to_string(),
        })?;
        if step % 1000 == 0 {
            log::debug!("step {step}: loss {loss:.6}");
        }
    }
    let total = start.elapsed();
    let mean_step = if cfg.steps > 0 {
        total / cfg.steps as u32
    } else {
        Duration::ZERO
    };
    Ok(TrainReport {
        losses,
        model,
        timings: TrainTimings { total, mean_step },
    })
}

/// The TE configuration the model commits to after seeing `window`.
pub fn infer(
    model: &DoteModel,
    window: &[DemandMatrix],
    inc: &IncidenceMatrices,
) -> Result<TeConfig> {
    model.check_compatible(inc)?;
    let (out, _) = model.raw_outputs(&[window])?;
    let raw: Vec<f64> = out
        .row(0)
        .iter()
        .map(|v| v * model.meta.output_scale)
        .collect();
    Ok(if model.objective().is_flow() {
        TeConfig::Capped(normalize_caps(inc, &raw))
    } else {
        TeConfig::Split(normalize_splits(inc, &raw))
    })
}

/// Objective value of the model's decision on every window of `test`, scored
/// against the realized next matrix, in epoch order.
pub fn evaluate(
    model: &DoteModel,
    test: &DemandTrace,
    inc: &IncidenceMatrices,
) -> Result<Vec<f64>> {
    history_windows(test, model.history())?
        .iter()
        .map(|s| {
            let config = infer(model, s.window, inc)?;
            objective_value(inc, &config, s.target, model.objective())
        })
        .collect()
}
