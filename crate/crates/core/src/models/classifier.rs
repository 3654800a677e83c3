use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::{parse_header, parse_row, Lines};
use crate::error::{Error, Result};
use crate::graph::LabelAssignment;
use crate::smoothing::Embedding;

/// Softmax-linear classifier `softmax(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `c × d`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl LinearClassifier {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weights: Array2::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    /// Weights drawn from N(0, 0.01²), zero bias.
    pub fn seeded(num_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        Self {
            weights: Array2::from_shape_simple_fn((num_classes, dim), || normal.sample(&mut rng)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.dim());
        self.weights
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(h).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_proba(&self, h: &[f64]) -> Vec<f64> {
        softmax(&self.logits(h))
    }

    /// Argmax class, lowest index on ties.
    pub fn predict(&self, h: &[f64]) -> usize {
        argmax(&self.predict_proba(h))
    }

    /// Probability matrix for every row of `h`.
    pub fn predict_all(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((h.nrows(), self.num_classes()));
        for (i, row) in h.rows().into_iter().enumerate() {
            let row = row.to_vec();
            for (k, p) in self.predict_proba(&row).into_iter().enumerate() {
                out[[i, k]] = p;
            }
        }
        out
    }

    /// Cross-entropy `−log p_y(h)` and its gradient with respect to `h`.
    pub fn cross_entropy_grad(&self, h: &[f64], label: usize) -> (f64, Vec<f64>) {
        let logits = self.logits(h);
        let probs = softmax(&logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - logits[label];
        let mut delta = probs;
        delta[label] -= 1.0;
        (loss, self.pullback(&delta))
    }

    /// `Wᵀ g`: maps a gradient on the logits back to the input.
    pub fn pullback(&self, logit_grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, g) in self.weights.rows().into_iter().zip(logit_grad) {
            for (o, a) in out.iter_mut().zip(w) {
                *o += g * a;
            }
        }
        out
    }

    /// Plain-text checkpoint: header, `c` weight rows, bias row.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!(
            "LinearClassifier dim={} classes={} hidden=0\n",
            self.dim(),
            self.num_classes()
        );
        for row in self.weights.rows() {
            out.push_str(&join(row.iter()));
        }
        out.push_str(&join(self.bias.iter()));
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let header = parse_header(lines.next_line()?, "LinearClassifier")?;
        let (dim, classes) = (header.dim, header.classes);
        let mut weights = Array2::zeros((classes, dim));
        for k in 0..classes {
            let row = parse_row(lines.next_line()?, dim)?;
            weights.row_mut(k).assign(&Array1::from(row));
        }
        let bias = Array1::from(parse_row(lines.next_line()?, classes)?);
        lines.finish()?;
        Ok(Self { weights, bias })
    }
}

pub(crate) fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
    s
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy plus `½ · weight_decay · ‖W‖²` over a labeled set.
pub fn training_loss(
    model: &LinearClassifier,
    examples: ArrayView2<'_, f64>,
    targets: &[usize],
    weight_decay: f64,
) -> f64 {
    let n = targets.len() as f64;
    let mut total = 0.0;
    for (row, &y) in examples.rows().into_iter().zip(targets) {
        let logits = model.logits(row.as_slice().expect("standard layout"));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / n + 0.5 * weight_decay * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`training_loss`] with respect to `(W, b)`.
pub fn training_gradient(
    model: &LinearClassifier,
    examples: ArrayView2<'_, f64>,
    targets: &[usize],
    weight_decay: f64,
) -> (Array2<f64>, Array1<f64>) {
    let n = targets.len() as f64;
    let mut gw = Array2::zeros(model.weights.raw_dim());
    let mut gb = Array1::zeros(model.num_classes());
    for (row, &y) in examples.rows().into_iter().zip(targets) {
        let mut delta = model.predict_proba(row.as_slice().expect("standard layout"));
        delta[y] -= 1.0;
        for (k, d) in delta.iter().enumerate() {
            gb[k] += d / n;
            gw.row_mut(k).scaled_add(d / n, &row);
        }
    }
    gw.scaled_add(weight_decay, &model.weights);
    (gw, gb)
}

/// Full-batch gradient descent on [`training_loss`]. The step size is halved
/// whenever a step would raise the loss, so the returned trace (initial loss
/// followed by one entry per epoch) is nonincreasing.
pub fn fit_classifier(
    examples: ArrayView2<'_, f64>,
    targets: &[usize],
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::InvalidLabel("no labeled examples to train on".into()));
    }
    if examples.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            actual: examples.nrows(),
            context: "training rows vs targets".into(),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= num_classes) {
        return Err(Error::InvalidLabel(format!("class {bad} >= {num_classes}")));
    }
    if !(config.lr > 0.0) || !(config.weight_decay >= 0.0) {
        return Err(Error::param("classifier lr must be > 0 and weight_decay >= 0"));
    }
    let examples = examples.as_standard_layout();
    let examples = examples.view();
    let mut model = LinearClassifier::seeded(num_classes, examples.ncols(), config.seed);
    let wd = config.weight_decay;
    let mut loss = training_loss(&model, examples, targets, wd);
    let mut trace = vec![loss];
    let mut lr = config.lr;

    'epochs: for _ in 0..config.epochs {
        let (gw, gb) = training_gradient(&model, examples, targets, wd);
        loop {
            let mut trial = model.clone();
            trial.weights.scaled_add(-lr, &gw);
            trial.bias.scaled_add(-lr, &gb);
            let trial_loss = training_loss(&trial, examples, targets, wd);
            if trial_loss <= loss + 1e-12 && trial_loss.is_finite() {
                model = trial;
                loss = trial_loss;
                trace.push(loss);
                break;
            }
            lr *= 0.5;
            if lr < config.lr * 1e-12 {
                // stationary to working precision
                trace.push(loss);
                break 'epochs;
            }
        }
    }
    Ok((model, trace))
}

/// Trains on the labeled rows of `h`, in ascending node order.
pub fn train_classifier(
    h: &Embedding,
    labels: &LabelAssignment,
    config: &ClassifierConfig,
) -> Result<LinearClassifier> {
    let (rows, targets) = labeled_rows(h, labels)?;
    fit_classifier(rows.view(), &targets, labels.num_classes(), config).map(|(m, _)| m)
}

pub(crate) fn labeled_rows(
    h: &Embedding,
    labels: &LabelAssignment,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let nodes: Vec<usize> = labels.labeled_nodes().collect();
    if let Some(&bad) = nodes.iter().find(|&&n| n >= h.rows()) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            node_count: h.rows(),
        });
    }
    let rows = h.matrix().select(ndarray::Axis(0), &nodes);
    let targets = nodes.iter().map(|&n| labels.label(n).unwrap()).collect();
    Ok((rows, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::grad_check;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearClassifier::zeros(4, 3);
        for p in m.predict_proba(&[1.0, -2.0, 0.5]) {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_of_ten_and_zero() {
        // e^10 / (e^10 + 1) = 0.9999546
        let p = softmax(&[10.0, 0.0]);
        assert_abs_diff_eq!(p[0], 0.999_954_602_131_297_6, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 4.539_786_870_243_442e-5, epsilon = 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, -0.5]);
        let b = softmax(&[101.0, 102.0, 99.5]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let cfg = ClassifierConfig {
            epochs: 0,
            seed: 5,
            ..Default::default()
        };
        let (m, trace) = fit_classifier(x.view(), &[0, 1], 2, &cfg).unwrap();
        assert_eq!(m, LinearClassifier::seeded(2, 2, 5));
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn separable_toy_is_fit_within_200_epochs() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let y = [0, 1, 0, 1];
        let cfg = ClassifierConfig {
            epochs: 200,
            lr: 0.1,
            ..Default::default()
        };
        let (m, trace) = fit_classifier(x.view(), &y, 2, &cfg).unwrap();
        for (row, &t) in x.rows().into_iter().zip(&y) {
            assert_eq!(m.predict(&row.to_vec()), t);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn heavy_weight_decay_shrinks_to_uniform() {
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.3, -2.0]];
        let cfg = ClassifierConfig {
            epochs: 300,
            weight_decay: 1e6,
            ..Default::default()
        };
        let (m, trace) = fit_classifier(x.view(), &[0, 1, 2], 3, &cfg).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-6));
        for p in m.predict_proba(&[1.0, 2.0]) {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-4);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn conflicting_identical_examples_go_uniform() {
        let x = array![[1.0, 1.0], [1.0, 1.0]];
        let cfg = ClassifierConfig {
            epochs: 2000,
            lr: 0.5,
            ..Default::default()
        };
        let (m, _) = fit_classifier(x.view(), &[0, 1], 2, &cfg).unwrap();
        let p = m.predict_proba(&[1.0, 1.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(fit_classifier(x.view(), &[], 2, &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut m = LinearClassifier::seeded(3, 4, 9);
        m.bias = array![0.1, -1.0 / 3.0, 2.5e-7];
        let text = m.to_checkpoint();
        assert!(text.starts_with("LinearClassifier dim=4 classes=3"));
        let back = LinearClassifier::from_checkpoint(&text).unwrap();
        let h = [0.3, -1.2, 4.0, 1e-3];
        for (a, b) in m.predict_proba(&h).iter().zip(back.predict_proba(&h)) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(m, back);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let text = LinearClassifier::seeded(2, 2, 1).to_checkpoint();
        let cut: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(LinearClassifier::from_checkpoint(&cut).is_err());
    }

    #[test]
    fn input_gradient_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut m = LinearClassifier::seeded(3, 5, rng.random());
            m.weights.mapv_inplace(|w| w * 100.0);
            let h: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..3);
            let err = grad_check(|x| m.cross_entropy_grad(x, y), &h, 1e-6);
            assert!(err <= 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn parameter_gradient_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
        let y = [0, 1, 2, 0, 1, 1];
        for _ in 0..20 {
            let mut base = LinearClassifier::seeded(3, 3, rng.random());
            base.weights.mapv_inplace(|w| w * 50.0);
            let flat: Vec<f64> = base.weights.iter().chain(base.bias.iter()).copied().collect();
            let f = |theta: &[f64]| {
                let m = LinearClassifier {
                    weights: Array2::from_shape_vec((3, 3), theta[..9].to_vec()).unwrap(),
                    bias: Array1::from(theta[9..].to_vec()),
                };
                let (gw, gb) = training_gradient(&m, x.view(), &y, 0.03);
                let g = gw.iter().chain(gb.iter()).copied().collect();
                (training_loss(&m, x.view(), &y, 0.03), g)
            };
            let err = grad_check(f, &flat, 1e-6);
            assert!(err <= 1e-4, "relative error {err}");
        }
    }
}
