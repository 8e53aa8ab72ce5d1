//! A small fully connected cardinality estimator with hand-written
//! backpropagation, trainable under Q-Error or Flow-Loss.
//!
//! The network maps a sub-plan feature vector to a log-cardinality. Outputs
//! are clamped to `[0, ln Π |member tables|]`; the clamp passes gradients
//! straight through so a saturated unit can recover.
//!
//! Q-Error training minimises the mean `|ln y_est − ln y_true|` over
//! sub-plan minibatches. Flow-Loss training works on whole queries. By
//! default each query's Flow-Loss is divided by one constant, the mean
//! minimum Flow-Loss of the training set, so expensive queries keep their
//! weight while the learning rate stays scale-free; [`FlowNormalization`]
//! can instead divide every query by its own minimum.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CardinalityVector, CostParams};
use crate::error::{Error, Result};
use crate::flow_loss::{flow_loss, flow_loss_with_grad};
use crate::plan_graph::PlanGraph;
use crate::plan_search::{p_cost, q_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Qerror,
    Flowloss,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qerror" => Ok(LossKind::Qerror),
            "flowloss" => Ok(LossKind::Flowloss),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected qerror or flowloss)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Qerror => "qerror",
            LossKind::Flowloss => "flowloss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Divisor applied to each query's Flow-Loss during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowNormalization {
    /// Mean minimum Flow-Loss over the training queries.
    #[default]
    Global,
    /// The query's own minimum `FlowLoss(Y_true)`.
    PerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Queries per batch under Flow-Loss, sub-plans per batch under Q-Error.
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub hidden: Vec<usize>,
    pub optimizer: Optimizer,
    /// Clip the global gradient norm to this value.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Compute learning-curve metrics every this many epochs (and after the
    /// last one).
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub flow_normalization: FlowNormalization,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Qerror,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 1,
            init_scale: 1.0,
            hidden: vec![64, 64],
            optimizer: Optimizer::Sgd,
            clip_norm: None,
            eval_every: 1,
            flow_normalization: FlowNormalization::Global,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.batch_size > 0
            && self.init_scale > 0.0
            && self.eval_every > 0
            && self.hidden.iter().all(|&h| h > 0)
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if positive {
            Ok(())
        } else {
            Err(Error::Config(format!("training hyperparameters must be positive: {self:?}")))
        }
    }
}

/// One training or evaluation unit: a query's plan graph, features, labels.
#[derive(Debug, Clone)]
pub struct QuerySample {
    pub query_id: String,
    pub pg: PlanGraph,
    /// Row `i` holds the features of node `i + 1`.
    pub features: DMatrix<f64>,
    pub log_upper: Vec<f64>,
    pub y_true: CardinalityVector,
    pub heuristic: CardinalityVector,
}

impl QuerySample {
    pub fn num_subplans(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    /// Inputs are standardised as `(x − shift) · scale` before layer 0.
    pub input_shift: DVector<f64>,
    pub input_scale: DVector<f64>,
    pub config: TrainConfig,
}

/// Parameter-shaped gradient (or optimiser state).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Layer>,
}

impl Grads {
    fn zeros_like(m: &Model) -> Self {
        Grads {
            layers: m
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.bias *= k;
        }
    }

    fn norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.norm_squared() + l.bias.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>()).collect()
    }
}

/// Cached forward pass of a batch.
struct Forward {
    /// Input to every layer (standardised input first).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<DMatrix<f64>>,
    /// Unclamped outputs.
    raw: DVector<f64>,
}

impl Model {
    /// He-initialised network; the output layer is scaled down by 0.1 and
    /// its bias set to `output_bias`.
    pub fn new(input_dim: usize, config: TrainConfig, output_bias: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![input_dim];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let sd = config.init_scale * (2.0 / w[0].max(1) as f64).sqrt() * if i == last { 0.1 } else { 1.0 };
                let normal = Normal::new(0.0, sd).expect("finite sd");
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(&mut rng)),
                    bias: DVector::from_element(w[1], if i == last { output_bias } else { 0.0 }),
                }
            })
            .collect();
        Ok(Model {
            layers,
            input_shift: DVector::zeros(input_dim),
            input_scale: DVector::from_element(input_dim, 1.0),
            config,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// Sets the standardisation from the rows of `samples`.
    pub fn fit_input_scaling(&mut self, samples: &[QuerySample]) {
        let d = self.input_dim();
        let n: usize = samples.iter().map(QuerySample::num_subplans).sum();
        if n == 0 {
            return;
        }
        let mut mean = DVector::zeros(d);
        for s in samples {
            for r in s.features.row_iter() {
                mean += r.transpose();
            }
        }
        mean /= n as f64;
        let mut var = DVector::zeros(d);
        for s in samples {
            for r in s.features.row_iter() {
                let dlt = r.transpose() - &mean;
                var += dlt.component_mul(&dlt);
            }
        }
        var /= n as f64;
        self.input_scale = var.map(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 });
        self.input_shift = mean;
    }

    fn forward(&self, x: &DMatrix<f64>) -> Forward {
        let mut a = x.clone();
        for mut col in a.row_iter_mut() {
            let z = (col.transpose() - &self.input_shift).component_mul(&self.input_scale);
            col.copy_from(&z.transpose());
        }
        let mut inputs = vec![a];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = inputs.last().expect("input") * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if i == last {
                return Forward { inputs, pre, raw: z.column(0).into_owned() };
            }
            let act = z.map(|v| v.max(0.0));
            pre.push(z);
            inputs.push(act);
        }
        unreachable!("model has an output layer")
    }

    /// Backpropagates `dout` (per-row `∂loss/∂output`) through `fwd`.
    fn backward(&self, fwd: &Forward, dout: &DVector<f64>) -> Grads {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = DMatrix::from_column_slice(dout.len(), 1, dout.as_slice());
        for i in (0..self.layers.len()).rev() {
            let a = &fwd.inputs[i];
            let dw = delta.transpose() * a;
            let db = delta.row_sum().transpose();
            grads.push(Layer { weights: dw, bias: db });
            if i > 0 {
                let mut next = &delta * &self.layers[i].weights;
                next.zip_apply(&fwd.pre[i - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = next;
            }
        }
        grads.reverse();
        Grads { layers: grads }
    }

    /// Clamped log-cardinalities for every row of `x`.
    pub fn predict_log(&self, x: &DMatrix<f64>, log_upper: &[f64]) -> DVector<f64> {
        let raw = self.forward(x).raw;
        DVector::from_fn(raw.len(), |i, _| raw[i].clamp(0.0, log_upper[i].max(0.0)))
    }

    /// Estimated rows for one feature vector; `log_upper` is the log of the
    /// product of its member table sizes.
    pub fn predict(&self, features: &[f64], log_upper: f64) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "feature vector has length {}, model expects {}",
                features.len(),
                self.input_dim()
            )));
        }
        let x = DMatrix::from_row_slice(1, features.len(), features);
        Ok(self.predict_log(&x, &[log_upper])[0].exp())
    }

    /// Estimated cardinality vector of a query (source entry 1).
    pub fn estimate(&self, s: &QuerySample) -> CardinalityVector {
        let o = self.predict_log(&s.features, &s.log_upper[1..]);
        let mut v = vec![1.0; s.pg.num_nodes()];
        for (i, x) in o.iter().enumerate() {
            v[i + 1] = x.exp().max(1.0);
        }
        CardinalityVector::new(v)
    }

    fn step(&mut self, g: &Grads, opt: &mut OptState) {
        let lr = self.config.learning_rate;
        match opt {
            OptState::Sgd => {
                for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
                    l.weights -= &gl.weights * lr;
                    l.bias -= &gl.bias * lr;
                }
            }
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t as i32);
                let c2 = 1.0 - B2.powi(*t as i32);
                for ((l, gl), (ml, vl)) in
                    self.layers.iter_mut().zip(&g.layers).zip(m.layers.iter_mut().zip(v.layers.iter_mut()))
                {
                    ml.weights.zip_apply(&gl.weights, |a, b| *a = B1 * *a + (1.0 - B1) * b);
                    vl.weights.zip_apply(&gl.weights, |a, b| *a = B2 * *a + (1.0 - B2) * b * b);
                    ml.bias.zip_apply(&gl.bias, |a, b| *a = B1 * *a + (1.0 - B1) * b);
                    vl.bias.zip_apply(&gl.bias, |a, b| *a = B2 * *a + (1.0 - B2) * b * b);
                    for (p, (mm, vv)) in l.weights.iter_mut().zip(ml.weights.iter().zip(vl.weights.iter())) {
                        *p -= lr * (mm / c1) / ((vv / c2).sqrt() + EPS);
                    }
                    for (p, (mm, vv)) in l.bias.iter_mut().zip(ml.bias.iter().zip(vl.bias.iter())) {
                        *p -= lr * (mm / c1) / ((vv / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn to_file(&self) -> ModelFile {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weights.nrows()));
        ModelFile {
            sizes,
            activation: "relu".into(),
            input_shift: self.input_shift.iter().copied().collect(),
            input_scale: self.input_scale.iter().copied().collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.transpose().iter().copied().collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
            config: self.config.clone(),
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("invalid checkpoint: {m}"));
        if f.activation != "relu" {
            return Err(bad("unsupported activation"));
        }
        let mut layers = Vec::new();
        for l in &f.layers {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(bad("layer shape mismatch"));
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_vec(l.bias.clone()),
            });
        }
        if layers.is_empty() || f.input_shift.len() != layers[0].weights.ncols() || f.input_scale.len() != f.input_shift.len() {
            return Err(bad("input size mismatch"));
        }
        Ok(Model {
            layers,
            input_shift: DVector::from_vec(f.input_shift),
            input_scale: DVector::from_vec(f.input_scale),
            config: f.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_file())? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// JSON checkpoint: layer sizes, row-major weights, config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub sizes: Vec<usize>,
    pub activation: String,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<LayerFile>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

enum OptState {
    Sgd,
    Adam { m: Grads, v: Grads, t: usize },
}

/// Flow-Loss of one query divided by `scale`, and its gradient w.r.t. the
/// model parameters.
fn flowloss_query_grad(model: &Model, s: &QuerySample, scale: f64, p: &CostParams) -> Result<(f64, Grads)> {
    let fwd = model.forward(&s.features);
    let mut y = vec![1.0; s.pg.num_nodes()];
    for i in 0..fwd.raw.len() {
        y[i + 1] = fwd.raw[i].clamp(0.0, s.log_upper[i + 1].max(0.0)).exp().max(1.0);
    }
    let lb = flow_loss_with_grad(&CardinalityVector::new(y.clone()), &s.y_true, &s.pg, p)?;
    let grad = lb.grad.expect("computed");
    // ∂(L/s)/∂o_i = ∂L/∂Y_i · Y_i / s
    let dout = DVector::from_fn(fwd.raw.len(), |i, _| grad[i + 1] * y[i + 1] / scale);
    Ok((lb.value / scale, model.backward(&fwd, &dout)))
}

/// Mean of `FlowLoss_i / scales[i]` over `samples` and its parameter
/// gradient.
pub fn flowloss_batch(model: &Model, samples: &[&QuerySample], scales: &[f64], p: &CostParams) -> Result<(f64, Grads)> {
    let parts: Vec<(f64, Grads)> = samples
        .par_iter()
        .zip(scales.par_iter())
        .map(|(s, &m)| flowloss_query_grad(model, s, m, p))
        .collect::<Result<_>>()?;
    let mut total = Grads::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let n = samples.len().max(1) as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Mean `|o − ln y|` over the given (sample, row) pairs and its gradient.
pub fn qerror_batch(model: &Model, samples: &[QuerySample], rows: &[(usize, usize)]) -> (f64, Grads) {
    let d = model.input_dim();
    let mut x = DMatrix::zeros(rows.len(), d);
    let mut target = Vec::with_capacity(rows.len());
    let mut upper = Vec::with_capacity(rows.len());
    for (k, &(q, r)) in rows.iter().enumerate() {
        x.row_mut(k).copy_from(&samples[q].features.row(r));
        target.push(samples[q].y_true.get(r + 1).ln());
        upper.push(samples[q].log_upper[r + 1].max(0.0));
    }
    let fwd = model.forward(&x);
    let n = rows.len().max(1) as f64;
    let mut loss = 0.0;
    let dout = DVector::from_fn(rows.len(), |k, _| {
        let o = fwd.raw[k].clamp(0.0, upper[k]);
        let diff = o - target[k];
        loss += diff.abs();
        diff.signum() / n
    });
    (loss / n, model.backward(&fwd, &dout))
}

/// Minimum Flow-Loss (at the true cardinalities) of every sample.
pub fn min_flow_losses(samples: &[QuerySample], p: &CostParams) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| Ok(flow_loss(&s.y_true, &s.y_true, &s.pg, p)?.value)).collect()
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 · n)`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub p_cost: f64,
    pub optimal_cost: f64,
    pub flow_loss_ratio: f64,
}

/// Summary over a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub subplans: usize,
    pub qerror_p50: f64,
    pub qerror_p90: f64,
    pub qerror_p99: f64,
    pub p_cost_mean: f64,
    pub p_cost_p90: f64,
    pub p_cost_p99: f64,
    pub subopt_mean: f64,
    pub subopt_p90: f64,
    pub subopt_p99: f64,
    /// Mean of `FlowLoss(Y_est) / FlowLoss(Y_true)`.
    pub flow_loss_mean: f64,
    #[serde(skip)]
    pub per_query: Vec<QueryMetrics>,
}

/// Metrics of estimated vectors `ests[i]` against `samples[i]`.
pub fn evaluate_vectors(samples: &[QuerySample], ests: &[CardinalityVector], p: &CostParams) -> Result<MetricsReport> {
    if samples.len() != ests.len() {
        return Err(Error::Domain("one estimate vector per sample is required".into()));
    }
    let per: Vec<(Vec<f64>, QueryMetrics)> = samples
        .par_iter()
        .zip(ests.par_iter())
        .map(|(s, y)| {
            let qe = (1..s.pg.num_nodes()).map(|i| q_error(s.y_true.get(i), y.get(i))).collect::<Result<Vec<_>>>()?;
            let pc = p_cost(y, &s.y_true, &s.pg, p)?;
            let opt = p_cost(&s.y_true, &s.y_true, &s.pg, p)?;
            let fl = flow_loss(y, &s.y_true, &s.pg, p)?.value / flow_loss(&s.y_true, &s.y_true, &s.pg, p)?.value;
            Ok((qe, QueryMetrics { query_id: s.query_id.clone(), p_cost: pc, optimal_cost: opt, flow_loss_ratio: fl }))
        })
        .collect::<Result<_>>()?;
    let qerrors: Vec<f64> = per.iter().flat_map(|p| p.0.iter().copied()).collect();
    let per_query: Vec<QueryMetrics> = per.into_iter().map(|p| p.1).collect();
    let costs: Vec<f64> = per_query.iter().map(|q| q.p_cost).collect();
    let subopt: Vec<f64> = per_query.iter().map(|q| q.p_cost / q.optimal_cost).collect();
    let fl: Vec<f64> = per_query.iter().map(|q| q.flow_loss_ratio).collect();
    Ok(MetricsReport {
        queries: samples.len(),
        subplans: qerrors.len(),
        qerror_p50: percentile(&qerrors, 50.0),
        qerror_p90: percentile(&qerrors, 90.0),
        qerror_p99: percentile(&qerrors, 99.0),
        p_cost_mean: mean(&costs),
        p_cost_p90: percentile(&costs, 90.0),
        p_cost_p99: percentile(&costs, 99.0),
        subopt_mean: mean(&subopt),
        subopt_p90: percentile(&subopt, 90.0),
        subopt_p99: percentile(&subopt, 99.0),
        flow_loss_mean: mean(&fl),
        per_query,
    })
}

pub fn evaluate(model: &Model, samples: &[QuerySample], p: &CostParams) -> Result<MetricsReport> {
    let ests: Vec<CardinalityVector> = samples.iter().map(|s| model.estimate(s)).collect();
    evaluate_vectors(samples, &ests, p)
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    /// Mean training objective of the epoch (train rows only; NaN otherwise).
    pub train_loss: f64,
    pub qerror_p50: f64,
    pub qerror_p90: f64,
    pub qerror_p99: f64,
    pub flow_loss_mean: f64,
    pub p_cost_mean: f64,
    pub subopt_mean: f64,
}

/// Column order of the learning-curve CSV.
pub const LEARNING_CURVE_HEADER: [&str; 9] = [
    "epoch",
    "split",
    "train_loss",
    "qerror_p50",
    "qerror_p90",
    "qerror_p99",
    "flow_loss_mean",
    "p_cost_mean",
    "subopt_mean",
];

/// Trains a fresh model on `train`; after every `eval_every` epochs, records
/// metrics on `train` and on each named evaluation set.
pub fn train(
    train: &[QuerySample],
    evals: &[(&str, &[QuerySample])],
    cfg: &TrainConfig,
    p: &CostParams,
) -> Result<(Model, Vec<EpochMetrics>)> {
    cfg.validate()?;
    p.validate()?;
    let first = train.first().ok_or_else(|| Error::Config("training set is empty".into()))?;
    let dim = first.features.ncols();
    let labels: Vec<f64> = train.iter().flat_map(|s| s.y_true.values()[1..].iter().map(|y| y.ln())).collect();
    let mut model = Model::new(dim, cfg.clone(), mean(&labels))?;
    model.fit_input_scaling(train);
    let mut opt = match cfg.optimizer {
        Optimizer::Sgd => OptState::Sgd,
        Optimizer::Adam => OptState::Adam { m: Grads::zeros_like(&model), v: Grads::zeros_like(&model), t: 0 },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0074_7261_696e);
    let scales = match cfg.loss {
        LossKind::Flowloss => {
            let mins = min_flow_losses(train, p)?;
            match cfg.flow_normalization {
                FlowNormalization::PerQuery => mins,
                FlowNormalization::Global => vec![mean(&mins); mins.len()],
            }
        }
        LossKind::Qerror => Vec::new(),
    };
    let mut rows: Vec<(usize, usize)> =
        train.iter().enumerate().flat_map(|(q, s)| (0..s.num_subplans()).map(move |r| (q, r))).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        match cfg.loss {
            LossKind::Qerror => {
                rows.shuffle(&mut rng);
                for chunk in rows.chunks(cfg.batch_size) {
                    let (l, mut g) = qerror_batch(&model, train, chunk);
                    apply(&mut model, &mut opt, &mut g, l, epoch)?;
                    epoch_loss += l;
                    batches += 1;
                }
            }
            LossKind::Flowloss => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let batch: Vec<&QuerySample> = chunk.iter().map(|&i| &train[i]).collect();
                    let mins: Vec<f64> = chunk.iter().map(|&i| scales[i]).collect();
                    let (l, mut g) = flowloss_batch(&model, &batch, &mins, p).map_err(|e| match e {
                        Error::Numerical(reason) => Error::Divergence { epoch, reason },
                        other => other,
                    })?;
                    apply(&mut model, &mut opt, &mut g, l, epoch)?;
                    epoch_loss += l;
                    batches += 1;
                }
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let sets = std::iter::once(("train", train)).chain(evals.iter().copied());
            for (name, set) in sets {
                if set.is_empty() {
                    continue;
                }
                let r = evaluate(&model, set, p)?;
                log.push(EpochMetrics {
                    epoch,
                    split: name.to_string(),
                    train_loss: if name == "train" { epoch_loss / batches.max(1) as f64 } else { f64::NAN },
                    qerror_p50: r.qerror_p50,
                    qerror_p90: r.qerror_p90,
                    qerror_p99: r.qerror_p99,
                    flow_loss_mean: r.flow_loss_mean,
                    p_cost_mean: r.p_cost_mean,
                    subopt_mean: r.subopt_mean,
                });
            }
        }
    }
    Ok((model, log))
}

fn apply(model: &mut Model, opt: &mut OptState, g: &mut Grads, loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch, reason: format!("non-finite loss {loss}") });
    }
    if let Some(c) = model.config.clip_norm {
        let n = g.norm();
        if n > c {
            g.scale(c / n);
        }
    }
    model.step(g, opt);
    if !model.is_finite() {
        return Err(Error::Divergence { epoch, reason: "non-finite parameters".into() });
    }
    Ok(())
}

pub fn write_learning_curve(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LEARNING_CURVE_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            fmt_f(r.train_loss),
            fmt_f(r.qerror_p50),
            fmt_f(r.qerror_p90),
            fmt_f(r.qerror_p99),
            fmt_f(r.flow_loss_mean),
            fmt_f(r.p_cost_mean),
            fmt_f(r.subopt_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip formatting; empty for NaN.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}
