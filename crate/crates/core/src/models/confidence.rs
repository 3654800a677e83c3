//! Confidence scores of classifier outputs and the low-confidence target set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::classifier::{softmax, LinearClassifier};
use crate::error::{Error, Result};
use crate::graph::LabelAssignment;
use crate::smoothing::Embedding;

/// How peaked a probability vector is. All probability-based metrics map
/// uniform to 0 and one-hot to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMetric {
    /// Population variance of the entries scaled by `c² / (c − 1)`.
    #[default]
    Peakedness,
    /// `1 − H(p) / ln c`.
    Entropy,
    /// Top-1 minus top-2 probability.
    Margin,
    /// Largest logit. Convex in the classifier input; defined on logits only.
    MaxLogit,
}

impl ConfidenceMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Peakedness => "peakedness",
            Self::Entropy => "entropy",
            Self::Margin => "margin",
            Self::MaxLogit => "max-logit",
        }
    }
}

impl fmt::Display for ConfidenceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfidenceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peakedness" | "variance" => Ok(Self::Peakedness),
            "entropy" => Ok(Self::Entropy),
            "margin" => Ok(Self::Margin),
            "max-logit" => Ok(Self::MaxLogit),
            other => Err(Error::UnknownMetric(other.to_string())),
        }
    }
}

/// Confidence of a probability vector.
pub fn confidence(probs: &[f64], metric: ConfidenceMetric) -> Result<f64> {
    match metric {
        ConfidenceMetric::MaxLogit => Err(Error::param("max-logit confidence needs logits")),
        m => Ok(prob_confidence_grad(probs, m).0),
    }
}

/// Value and gradient (with respect to the probabilities) of a
/// probability-based metric.
fn prob_confidence_grad(probs: &[f64], metric: ConfidenceMetric) -> (f64, Vec<f64>) {
    let c = probs.len();
    let cf = c as f64;
    if c < 2 {
        return (1.0, vec![0.0; c]);
    }
    match metric {
        ConfidenceMetric::Peakedness => {
            let mean = probs.iter().sum::<f64>() / cf;
            let scale = cf * cf / (cf - 1.0);
            let var = probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / cf;
            let grad = probs.iter().map(|p| scale * 2.0 * (p - mean) / cf).collect();
            (scale * var, grad)
        }
        ConfidenceMetric::Entropy => {
            let ln_c = cf.ln();
            let mut h = 0.0;
            let mut grad = Vec::with_capacity(c);
            for &p in probs {
                let p = p.max(f64::MIN_POSITIVE);
                h -= p * p.ln();
                grad.push((p.ln() + 1.0) / ln_c);
            }
            (1.0 - h / ln_c, grad)
        }
        ConfidenceMetric::Margin => {
            let (mut first, mut second) = (0usize, usize::MAX);
            for i in 1..c {
                if probs[i] > probs[first] {
                    second = first;
                    first = i;
                } else if second == usize::MAX || probs[i] > probs[second] {
                    second = i;
                }
            }
            if second == usize::MAX {
                second = if first == 0 { 1 } else { 0 };
            }
            let mut grad = vec![0.0; c];
            grad[first] += 1.0;
            grad[second] -= 1.0;
            (probs[first] - probs[second], grad)
        }
        ConfidenceMetric::MaxLogit => unreachable!("handled on logits"),
    }
}

/// `Conf ∘ f` at embedding `h`.
pub fn confidence_at(model: &LinearClassifier, h: &[f64], metric: ConfidenceMetric) -> f64 {
    let logits = model.logits(h);
    match metric {
        ConfidenceMetric::MaxLogit => logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        m => prob_confidence_grad(&softmax(&logits), m).0,
    }
}

/// `Conf ∘ f` at `h` and its gradient with respect to `h`.
pub fn confidence_grad(
    model: &LinearClassifier,
    h: &[f64],
    metric: ConfidenceMetric,
) -> (f64, Vec<f64>) {
    let logits = model.logits(h);
    if metric == ConfidenceMetric::MaxLogit {
        let top = super::classifier::argmax(&logits);
        let mut g = vec![0.0; logits.len()];
        g[top] = 1.0;
        return (logits[top], model.pullback(&g));
    }
    let probs = softmax(&logits);
    let (value, dp) = prob_confidence_grad(&probs, metric);
    // softmax Jacobian: dz_k = p_k (dp_k − Σ_j p_j dp_j)
    let inner: f64 = probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
    let dz: Vec<f64> = probs.iter().zip(&dp).map(|(p, g)| p * (g - inner)).collect();
    (value, model.pullback(&dz))
}

/// Per-node confidence and the bottom-quantile unlabeled target set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    pub scores: Vec<f64>,
    /// Ascending node index.
    pub low_conf_set: Vec<usize>,
    pub quantile: f64,
    pub metric: ConfidenceMetric,
}

/// Scores every row of `h`; the target set is the `⌊quantile · #unlabeled⌋`
/// (at least one) unlabeled nodes with the lowest score, ties by index.
pub fn build_confidence_state(
    model: &LinearClassifier,
    h: &Embedding,
    labels: &LabelAssignment,
    quantile: f64,
    metric: ConfidenceMetric,
) -> Result<ConfidenceState> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::param("confidence quantile must lie in (0, 1)"));
    }
    let scores: Vec<f64> = (0..h.rows())
        .map(|i| confidence_at(model, h.row(i), metric))
        .collect();
    let mut unlabeled: Vec<usize> = (0..h.rows()).filter(|&i| !labels.is_labeled(i)).collect();
    let take = ((quantile * unlabeled.len() as f64).floor() as usize)
        .max(1)
        .min(unlabeled.len());
    unlabeled.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut low_conf_set: Vec<usize> = unlabeled.into_iter().take(take).collect();
    low_conf_set.sort_unstable();
    Ok(ConfidenceState {
        scores,
        low_conf_set,
        quantile,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::grad_check;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    const PROB_METRICS: [ConfidenceMetric; 3] = [
        ConfidenceMetric::Peakedness,
        ConfidenceMetric::Entropy,
        ConfidenceMetric::Margin,
    ];

    #[test]
    fn uniform_has_zero_confidence() {
        for c in 2..6 {
            let u = vec![1.0 / c as f64; c];
            for m in PROB_METRICS {
                assert_abs_diff_eq!(confidence(&u, m).unwrap(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_two_classes_scales_to_one() {
        // raw variance of (1, 0) is 0.25, scale 4/1
        assert_abs_diff_eq!(
            confidence(&[1.0, 0.0], ConfidenceMetric::Peakedness).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn one_hot_four_classes_scales_to_one() {
        // raw variance 3/16, scale 16/3
        let v = confidence(&[0.0, 0.0, 1.0, 0.0], ConfidenceMetric::Peakedness).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            confidence(&[0.0, 0.0, 1.0, 0.0], ConfidenceMetric::Entropy).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unknown_metric_id() {
        assert!(matches!(
            "variance-of-logits".parse::<ConfidenceMetric>(),
            Err(Error::UnknownMetric(_))
        ));
        assert_eq!("margin".parse::<ConfidenceMetric>().unwrap(), ConfidenceMetric::Margin);
    }

    #[test]
    fn permutation_invariant() {
        let p = [0.1, 0.6, 0.05, 0.25];
        let q = [0.25, 0.05, 0.1, 0.6];
        for m in PROB_METRICS {
            assert_abs_diff_eq!(
                confidence(&p, m).unwrap(),
                confidence(&q, m).unwrap(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn composed_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for metric in [
            ConfidenceMetric::Peakedness,
            ConfidenceMetric::Entropy,
            ConfidenceMetric::MaxLogit,
        ] {
            for _ in 0..20 {
                let mut model = LinearClassifier::seeded(4, 5, rng.random());
                model.weights.mapv_inplace(|w| w * 80.0);
                let h: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
                let err = grad_check(|x| confidence_grad(&model, x, metric), &h, 1e-6);
                assert!(err <= 1e-4, "{metric}: {err}");
            }
        }
    }

    fn embedding(rows: usize, f: impl Fn(usize) -> f64) -> Embedding {
        Embedding::new(Array2::from_shape_fn((rows, 2), |(i, k)| f(i) * (k as f64 + 1.0))).unwrap()
    }

    #[test]
    fn tiny_quantile_keeps_one_node() {
        let mut model = LinearClassifier::zeros(2, 2);
        model.weights[[0, 0]] = 1.0;
        let h = embedding(11, |i| i as f64);
        let labels = LabelAssignment::new(2, BTreeMap::from([(0, 0)])).unwrap();
        let st = build_confidence_state(&model, &h, &labels, 1e-9, ConfidenceMetric::Peakedness)
            .unwrap();
        assert_eq!(st.low_conf_set.len(), 1);
        // node 0 is labeled, node 1 has the smallest logit gap
        assert_eq!(st.low_conf_set, vec![1]);
    }

    #[test]
    fn identical_embeddings_tie_break_by_index() {
        let model = LinearClassifier::seeded(3, 2, 1);
        let h = embedding(10, |_| 0.7);
        let labels = LabelAssignment::new(3, BTreeMap::from([(1, 0), (4, 2)])).unwrap();
        let st =
            build_confidence_state(&model, &h, &labels, 0.5, ConfidenceMetric::Peakedness).unwrap();
        assert_eq!(st.low_conf_set, vec![0, 2, 3, 5]);
    }

    #[test]
    fn quantile_counts() {
        let model = LinearClassifier::seeded(2, 2, 2);
        let h = embedding(101, |i| (i as f64).sin());
        let labels = LabelAssignment::new(2, BTreeMap::from([(50, 1)])).unwrap();
        let st =
            build_confidence_state(&model, &h, &labels, 0.2, ConfidenceMetric::Peakedness).unwrap();
        assert_eq!(st.low_conf_set.len(), 20);
        assert!(!st.low_conf_set.contains(&50));
        let cutoff = st.low_conf_set.iter().map(|&i| st.scores[i]).fold(f64::MIN, f64::max);
        let excluded_min = (0..101)
            .filter(|i| *i != 50 && !st.low_conf_set.contains(i))
            .map(|i| st.scores[i])
            .fold(f64::MAX, f64::min);
        assert!(cutoff <= excluded_min);
    }
}
