//! Shallow downstream classifiers trained on frozen embeddings.
//!
//! A linear probe by default, optionally with one `tanh` hidden layer,
//! trained by seeded minibatch gradient descent with a fixed step on an
//! L2-regularised cross-entropy objective.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Single-label classification.
    SoftmaxXent,
    /// Independent binary targets per class (multilabel, frame tagging).
    SigmoidBce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// `0` trains a linear probe.
    #[serde(default)]
    pub hidden_units: usize,
    pub objective: Objective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_units: 0,
            objective: Objective::SoftmaxXent,
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 100,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes {
        ids: Vec<usize>,
        num_classes: usize,
    },
    /// `N x K` matrix of 0/1 entries.
    Multilabel(Array2<f64>),
}

impl Targets {
    pub fn classes(ids: Vec<usize>, num_classes: usize) -> Self {
        Targets::Classes { ids, num_classes }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { ids, .. } => ids.len(),
            Targets::Multilabel(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Multilabel(m) => m.ncols(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Targets::Classes { ids, num_classes } => {
                if *num_classes == 0 {
                    return Err(Error::Validation("need at least one class".into()));
                }
                if let Some(bad) = ids.iter().find(|&&c| c >= *num_classes) {
                    return Err(Error::Validation(format!(
                        "class id {bad} out of range for {num_classes} classes"
                    )));
                }
            }
            Targets::Multilabel(m) => {
                if m.ncols() == 0 {
                    return Err(Error::Validation("need at least one label column".into()));
                }
                if m.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Validation(
                        "multilabel targets must be 0 or 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Every sample carries the same target.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Targets::Classes { ids, .. } => ids.windows(2).all(|w| w[0] == w[1]),
            Targets::Multilabel(m) => m.rows().into_iter().all(|r| r == m.row(0)),
        }
    }

    fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes { ids, num_classes } => Targets::Classes {
                ids: rows.iter().map(|&r| ids[r]).collect(),
                num_classes: *num_classes,
            },
            Targets::Multilabel(m) => Targets::Multilabel(m.select(Axis(0), rows)),
        }
    }

    /// Dense `N x K` target matrix (one-hot for class ids).
    fn dense(&self) -> Array2<f64> {
        match self {
            Targets::Classes { ids, num_classes } => {
                let mut m = Array2::zeros((ids.len(), *num_classes));
                for (i, &c) in ids.iter().enumerate() {
                    m[[i, c]] = 1.0;
                }
                m
            }
            Targets::Multilabel(m) => m.clone(),
        }
    }
}

/// One affine layer; `weights` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weights: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Trained classifier. One layer for a linear probe, two with a hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    layers: Vec<Dense>,
    objective: Objective,
}

impl ProbeModel {
    pub fn from_layers(layers: Vec<Dense>, objective: Objective) -> Result<Self> {
        if layers.is_empty() || layers.len() > 2 {
            return Err(Error::Shape(format!(
                "probe needs one or two layers, got {}",
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::Shape(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(Error::Shape(format!("layer {i}: input width mismatch")));
            }
        }
        if layers.iter().any(|l| {
            l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
        }) {
            return Err(Error::Validation("probe parameters must be finite".into()));
        }
        Ok(Self { layers, objective })
    }

    /// All-zero model; `hidden = 0` gives a linear probe.
    pub fn zeros(input_dim: usize, output_dim: usize, hidden: usize, objective: Objective) -> Self {
        let layers = if hidden == 0 {
            vec![Dense::zeros(input_dim, output_dim)]
        } else {
            vec![
                Dense::zeros(input_dim, hidden),
                Dense::zeros(hidden, output_dim),
            ]
        };
        Self { layers, objective }
    }

    fn init(input_dim: usize, output_dim: usize, cfg: &ProbeConfig) -> Self {
        if cfg.hidden_units == 0 {
            return Self::zeros(input_dim, output_dim, 0, cfg.objective);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1217_u64.rotate_left(48));
        let hidden = Dense::uniform(input_dim, cfg.hidden_units, &mut rng);
        let output = Dense::uniform(cfg.hidden_units, output_dim, &mut rng);
        Self {
            layers: vec![hidden, output],
            objective: cfg.objective,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    /// Every scalar parameter, layer by layer, weights (row-major) before bias.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, probe expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("features must be finite".into()));
        }
        Ok(())
    }

    /// Hidden activations (if any) and output logits.
    fn forward(&self, x: ArrayView2<'_, f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        match self.layers.as_slice() {
            [out] => (None, out.forward(x)),
            [hidden, out] => {
                let h = hidden.forward(x).mapv(f64::tanh);
                let z = out.forward(h.view());
                (Some(h), z)
            }
            _ => unreachable!("probe has one or two layers"),
        }
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let (_, mut z) = self.forward(x);
        match self.objective {
            Objective::SoftmaxXent => {
                for mut row in z.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
                }
            }
            Objective::SigmoidBce => z.mapv_inplace(sigmoid),
        }
        Ok(z)
    }

    /// Argmax class per row.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.rows().into_iter().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradient of the regularised objective, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    /// Same ordering as [`ProbeModel::parameters_mut`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_batch(model: &ProbeModel, x: ArrayView2<'_, f64>, targets: &Targets) -> Result<()> {
    model.check_input(x)?;
    targets.validate()?;
    if targets.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            x.nrows(),
            targets.len()
        )));
    }
    if targets.num_outputs() != model.output_dim() {
        return Err(Error::Shape(format!(
            "targets have {} outputs, model has {}",
            targets.num_outputs(),
            model.output_dim()
        )));
    }
    if model.objective == Objective::SoftmaxXent && matches!(targets, Targets::Multilabel(_)) {
        return Err(Error::Config(
            "multilabel targets need the sigmoid objective".into(),
        ));
    }
    Ok(())
}

fn l2_penalty(model: &ProbeModel, l2: f64) -> f64 {
    0.5 * l2
        * model
            .layers
            .iter()
            .map(|l| {
                l.weights
                    .iter()
                    .chain(l.bias.iter())
                    .map(|w| w * w)
                    .sum::<f64>()
            })
            .sum::<f64>()
}

/// Mean per-sample cross-entropy plus `l2 / 2` times the squared norm of all parameters.
pub fn loss(model: &ProbeModel, x: ArrayView2<'_, f64>, targets: &Targets, l2: f64) -> Result<f64> {
    check_batch(model, x, targets)?;
    let (_, z) = model.forward(x);
    let n = x.nrows() as f64;
    let data = match (model.objective, targets) {
        (Objective::SoftmaxXent, Targets::Classes { ids, .. }) => z
            .rows()
            .into_iter()
            .zip(ids)
            .map(|(row, &c)| log_sum_exp(row) - row[c])
            .sum::<f64>(),
        (Objective::SigmoidBce, _) => {
            let y = targets.dense();
            z.iter()
                .zip(y.iter())
                .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
                .sum::<f64>()
        }
        (Objective::SoftmaxXent, Targets::Multilabel(_)) => unreachable!("rejected by check_batch"),
    };
    Ok(data / n + l2_penalty(model, l2))
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn gradient(
    model: &ProbeModel,
    x: ArrayView2<'_, f64>,
    targets: &Targets,
    l2: f64,
) -> Result<Gradient> {
    check_batch(model, x, targets)?;
    let (hidden, z) = model.forward(x);
    let n = x.nrows() as f64;
    let y = targets.dense();
    let probs = match model.objective {
        Objective::SoftmaxXent => {
            let mut p = z;
            for mut row in p.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
            }
            p
        }
        Objective::SigmoidBce => z.mapv(sigmoid),
    };
    let dz = (probs - &y) / n;

    let layer_grad = |input: ArrayView2<'_, f64>, delta: &Array2<f64>, layer: &Dense| Dense {
        weights: input.t().dot(delta) + &(&layer.weights * l2),
        bias: delta.sum_axis(Axis(0)) + &(&layer.bias * l2),
    };

    let layers = match (hidden, model.layers.as_slice()) {
        (None, [out]) => vec![layer_grad(x, &dz, out)],
        (Some(h), [first, out]) => {
            let out_grad = layer_grad(h.view(), &dz, out);
            let dh = dz.dot(&out.weights.t());
            let dpre = dh * &h.mapv(|v| 1.0 - v * v);
            vec![layer_grad(x, &dpre, first), out_grad]
        }
        _ => unreachable!("probe has one or two layers"),
    };
    Ok(Gradient { layers })
}

/// Result of [`train_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub model: ProbeModel,
    /// Full-data objective before training and after every epoch.
    pub loss_history: Vec<f64>,
    /// All training samples carried the same target.
    pub degenerate_labels: bool,
}

/// Seeded shuffled minibatch gradient descent with a fixed step.
pub fn train_probe(
    x: ArrayView2<'_, f64>,
    targets: &Targets,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    cfg.validate()?;
    if x.nrows() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 training samples, got {}",
            x.nrows()
        )));
    }
    if cfg.objective == Objective::SoftmaxXent && matches!(targets, Targets::Multilabel(_)) {
        return Err(Error::Config(
            "multilabel targets need the sigmoid objective".into(),
        ));
    }
    let mut model = ProbeModel::init(x.ncols(), targets.num_outputs(), cfg);
    let mut history = vec![loss(&model, x, targets, cfg.l2)?];
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full_batch = cfg.batch_size >= x.nrows();

    for _ in 0..cfg.epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let grad = if full_batch {
                gradient(&model, x, targets, cfg.l2)?
            } else {
                let xb = x.select(Axis(0), chunk);
                gradient(&model, xb.view(), &targets.select(chunk), cfg.l2)?
            };
            for (layer, g) in model.layers.iter_mut().zip(&grad.layers) {
                layer.weights.scaled_add(-cfg.learning_rate, &g.weights);
                layer.bias.scaled_add(-cfg.learning_rate, &g.bias);
            }
        }
        history.push(loss(&model, x, targets, cfg.l2)?);
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "training diverged; lower the learning rate".into(),
        ));
    }
    Ok(ProbeFit {
        model,
        loss_history: history,
        degenerate_labels: targets.is_degenerate(),
    })
}

/// Per-column z-scoring fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}
