//! A small fully connected network with reverse-mode gradients and Adam.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic function without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<Layer>;

/// Per-layer inputs and pre-activations of one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` feeds layer `l`; the last entry is the network output.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn pre_activations(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.pre[layer].view()
    }

    pub fn activations(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.inputs[layer + 1].view()
    }
}

/// Draws weights from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with zero biases.
pub fn init_params(seed: u64, dims: &[usize], activations: &[Activation]) -> Result<MlpParameters> {
    if dims.len() < 2 {
        return Err(Error::Config(
            "a network needs at least input and output sizes".into(),
        ));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::Config(format!(
            "{} layers but {} activations",
            dims.len() - 1,
            activations.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|d| {
            let (fan_in, fan_out) = (d[0], d[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w =
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-scale..scale));
            Layer {
                w,
                b: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpParameters {
        layers,
        activations: activations.to_vec(),
    })
}

impl MlpParameters {
    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.ncols()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters flattened layer by layer (weights row-major, then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Overwrites parameters from the layout of [`MlpParameters::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut()
                .chain(l.b.iter_mut())
                .for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Runs a batch (one row per example) through the network.
pub fn forward_batch(
    params: &MlpParameters,
    input: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if input.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input width {} but network expects {}",
            input.ncols(),
            params.input_dim()
        )));
    }
    let mut inputs = vec![input.to_owned()];
    let mut pre = Vec::with_capacity(params.layers.len());
    for (layer, act) in params.layers.iter().zip(&params.activations) {
        let z = inputs.last().expect("input").dot(&layer.w.t()) + &layer.b;
        let a = z.mapv(|v| act.apply(v));
        pre.push(z);
        inputs.push(a);
    }
    let out = inputs.last().expect("output").clone();
    Ok((out, ForwardCache { inputs, pre }))
}

/// Single-example forward pass.
pub fn forward(
    params: &MlpParameters,
    input: ArrayView1<'_, f64>,
) -> Result<(Array1<f64>, ForwardCache)> {
    let batch = input.insert_axis(Axis(0));
    let (out, cache) = forward_batch(params, batch)?;
    Ok((out.row(0).to_owned(), cache))
}

/// Gradients of `sum_rows <d_output[row], output[row]>` with respect to every
/// parameter, i.e. the batch-summed chain rule for the upstream gradient.
pub fn backward(
    params: &MlpParameters,
    cache: &ForwardCache,
    d_output: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let out_shape = cache.inputs.last().expect("output").dim();
    if d_output.dim() != out_shape || cache.pre.len() != params.layers.len() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match cached output {:?}",
            d_output.dim(),
            out_shape
        )));
    }
    let mut grads = vec![None; params.layers.len()];
    let mut upstream = d_output.to_owned();
    for l in (0..params.layers.len()).rev() {
        let act = params.activations[l];
        let mut delta = upstream;
        ndarray::Zip::from(&mut delta)
            .and(&cache.pre[l])
            .and(&cache.inputs[l + 1])
            .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        let w = delta.t().dot(&cache.inputs[l]);
        let b = delta.sum_axis(Axis(0));
        upstream = delta.dot(&params.layers[l].w);
        grads[l] = Some(Layer { w, b });
    }
    Ok(grads.into_iter().map(|g| g.expect("filled")).collect())
}

/// Adam optimizer state and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Zero moments with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(params: &MlpParameters, learning_rate: f64) -> Self {
        let zeros: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut MlpParameters,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != params.layers.len()
        || grads
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.w.dim() != p.w.dim() || g.b.dim() != p.b.dim())
    {
        return Err(Error::Dimension(
            "gradient shape does not match parameters".into(),
        ));
    }
    if grads
        .iter()
        .any(|g| g.w.iter().chain(g.b.iter()).any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("gradient passed to Adam".into()));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = state.learning_rate;
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (l, layer) in params.layers.iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.w)
            .and(&grads[l].w)
            .and(&mut state.m[l].w)
            .and(&mut state.v[l].w)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.b)
            .and(&grads[l].b)
            .and(&mut state.m[l].b)
            .and(&mut state.v[l].b)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Parameters plus optional free-form metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParameters,
    pub meta: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn to_json_string(&self) -> String {
        let p = &self.params;
        let file = CheckpointFile {
            dims: p.dims(),
            activations: p.activations.clone(),
            layers: p
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.w.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.b.to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
        let bad = |m: String| Error::parse("checkpoint", m);
        if file.dims.len() < 2
            || file.layers.len() != file.dims.len() - 1
            || file.activations.len() != file.layers.len()
        {
            return Err(bad("dims, activations and layers disagree".into()));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, lf) in file.layers.into_iter().enumerate() {
            let (fan_in, fan_out) = (file.dims[k], file.dims[k + 1]);
            if lf.w.len() != fan_out
                || lf.w.iter().any(|r| r.len() != fan_in)
                || lf.b.len() != fan_out
            {
                return Err(bad(format!(
                    "layer {k} does not have shape {fan_out}x{fan_in}"
                )));
            }
            let flat: Vec<f64> = lf.w.into_iter().flatten().collect();
            let w = Array2::from_shape_vec((fan_out, fan_in), flat).expect("checked shape");
            layers.push(Layer {
                w,
                b: Array1::from(lf.b),
            });
        }
        let params = MlpParameters {
            layers,
            activations: file.activations,
        };
        if !params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Self {
            params,
            meta: file.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

pub fn save_checkpoint(params: &MlpParameters, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint {
        params: params.clone(),
        meta: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParameters> {
    Checkpoint::load(path).map(|c| c.params)
}
