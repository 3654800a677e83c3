//! Per-candidate objectives and their analytic gradients.
//!
//! The full objective is
//!
//! ```text
//! L_g(x) = CE(f(x), y) − α Σ_i ω_i [Conf∘f(E[H̃_i](x)) − Conf∘f(H_i)]
//! E[H̃_i](x) = (1 − w_i) H_i + w_i x,   w_i = Connect(x, H_i) λ̃ / (1 + d_i λ + (k + 1) λ̃)
//! ```
//!
//! with `k` virtual nodes already placed and `ω_i` the target weights
//! (1 per node, member counts for prototypes). The relaxed objective bounds
//! the confidence after the update by the convex combination of endpoint
//! confidences and takes the generated node's own confidence as 1:
//!
//! ```text
//! L_apx(x) = CE(f(x), y) − α Σ_i ω_i [w_i + (1 − w_i) Conf∘f(H_i)],
//! w_i = Connect(x, H_i) λ̃ / (1 + d_i λ + λ̃)
//! ```
//!
//! so the target confidences are constants and no gradient flows through
//! the confidence function.

use serde::{Deserialize, Serialize};

use crate::models::{confidence_grad, ConfidenceMetric, LinearClassifier, LinkPredictor};
use crate::smoothing::{edge_coefficient, SmoothingParams};

/// A node (or prototype) the generated nodes try to make more confident.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Pre-generation embedding, fed to the link predictor.
    pub anchor: Vec<f64>,
    /// Working embedding after the expected updates applied so far.
    pub embedding: Vec<f64>,
    pub degree: f64,
    pub weight: f64,
    /// `Conf ∘ f(embedding)`.
    pub confidence: f64,
}

impl Target {
    pub fn new(
        embedding: Vec<f64>,
        degree: f64,
        weight: f64,
        classifier: &LinearClassifier,
        metric: ConfidenceMetric,
    ) -> Self {
        let confidence = crate::models::confidence_at(classifier, &embedding, metric);
        Self {
            anchor: embedding.clone(),
            embedding,
            degree,
            weight,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    #[default]
    Full,
    Apx,
}

/// Components of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// Classification loss of the candidate against its source label.
    pub w1: f64,
    /// Confidence gain (full) or edge-weighted gain `Σ ω w (1 − Conf)` (apx).
    pub w2: f64,
    pub total: f64,
}

/// Everything an objective evaluation needs besides the candidate itself.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub classifier: &'a LinearClassifier,
    pub link: &'a LinkPredictor,
    pub metric: ConfidenceMetric,
    pub targets: &'a [Target],
    pub label: usize,
    pub alpha: f64,
    pub params: SmoothingParams,
    /// Virtual nodes generated before this candidate.
    pub prior_set_size: usize,
}

impl ObjectiveContext<'_> {
    pub fn evaluate(&self, kind: ObjectiveKind, x: &[f64]) -> (ObjectiveTerms, Vec<f64>) {
        match kind {
            ObjectiveKind::Full => objective_full(x, self),
            ObjectiveKind::Apx => objective_apx(x, self),
        }
    }
}

pub fn objective_full(x: &[f64], ctx: &ObjectiveContext<'_>) -> (ObjectiveTerms, Vec<f64>) {
    let (w1, mut grad) = ctx.classifier.cross_entropy_grad(x, ctx.label);
    let mut w2 = 0.0;
    let mut gain_grad = vec![0.0; x.len()];
    let mut updated = vec![0.0; x.len()];
    for t in ctx.targets {
        let (p, dp) = ctx.link.score_grad(x, &t.anchor);
        let coef = edge_coefficient(t.degree, ctx.prior_set_size, &ctx.params);
        let w = p * coef;
        for ((u, h), xv) in updated.iter_mut().zip(&t.embedding).zip(x) {
            *u = (1.0 - w) * h + w * xv;
        }
        let (conf, dconf) = confidence_grad(ctx.classifier, &updated, ctx.metric);
        w2 += t.weight * (conf - t.confidence);
        // d/dx Conf(u(x)) = w ∇Conf + coef ⟨∇Conf, x − H⟩ ∇p
        let toward: f64 = dconf
            .iter()
            .zip(x.iter().zip(&t.embedding))
            .map(|(g, (xv, h))| g * (xv - h))
            .sum();
        for ((acc, g), q) in gain_grad.iter_mut().zip(&dconf).zip(&dp) {
            *acc += t.weight * (w * g + coef * toward * q);
        }
    }
    for (g, a) in grad.iter_mut().zip(&gain_grad) {
        *g -= ctx.alpha * a;
    }
    let total = w1 - ctx.alpha * w2;
    (ObjectiveTerms { w1, w2, total }, grad)
}

pub fn objective_apx(x: &[f64], ctx: &ObjectiveContext<'_>) -> (ObjectiveTerms, Vec<f64>) {
    let (w1, mut grad) = ctx.classifier.cross_entropy_grad(x, ctx.label);
    let mut w2 = 0.0;
    let mut baseline = 0.0;
    for t in ctx.targets {
        let (p, dp) = ctx.link.score_grad(x, &t.anchor);
        let coef = edge_coefficient(t.degree, 0, &ctx.params);
        let slack = 1.0 - t.confidence;
        w2 += t.weight * p * coef * slack;
        baseline += t.weight * t.confidence;
        let s = ctx.alpha * t.weight * coef * slack;
        for (g, q) in grad.iter_mut().zip(&dp) {
            *g -= s * q;
        }
    }
    let total = w1 - ctx.alpha * (w2 + baseline);
    (ObjectiveTerms { w1, w2, total }, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{confidence_at, grad_check};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fixture(seed: u64) -> (LinearClassifier, LinkPredictor, Vec<Target>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let mut clf = LinearClassifier::seeded(3, d, rng.random());
        clf.weights.mapv_inplace(|w| w * 100.0);
        let link = LinkPredictor::seeded(d, 8, rng.random());
        let targets = (0..5)
            .map(|_| {
                let h: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let deg = rng.random_range(0..6) as f64;
                let w = rng.random_range(0.5..2.0);
                Target::new(h, deg, w, &clf, ConfidenceMetric::Peakedness)
            })
            .collect();
        (clf, link, targets)
    }

    fn ctx<'a>(
        clf: &'a LinearClassifier,
        link: &'a LinkPredictor,
        targets: &'a [Target],
        alpha: f64,
    ) -> ObjectiveContext<'a> {
        ObjectiveContext {
            classifier: clf,
            link,
            metric: ConfidenceMetric::Peakedness,
            targets,
            label: 1,
            alpha,
            params: SmoothingParams {
                lambda: 0.8,
                lambda_tilde: 1.3,
                ..Default::default()
            },
            prior_set_size: 2,
        }
    }

    #[test]
    fn alpha_zero_reduces_to_cross_entropy() {
        let (clf, link, targets) = fixture(1);
        let c = ctx(&clf, &link, &targets, 0.0);
        let x = [0.2, -0.4, 0.9, 0.1];
        let (ce, g_ce) = clf.cross_entropy_grad(&x, 1);
        for kind in [ObjectiveKind::Full, ObjectiveKind::Apx] {
            let (terms, g) = c.evaluate(kind, &x);
            assert_eq!(terms.total, ce);
            assert_eq!(g, g_ce);
        }
    }

    #[test]
    fn no_gain_when_candidate_sits_on_the_target_and_never_connects() {
        let (clf, mut link, targets) = fixture(2);
        link.b2 = -1e4; // Connect ≈ 0 everywhere
        let single = vec![targets[0].clone()];
        let c = ctx(&clf, &link, &single, 0.9);
        let (terms, _) = objective_full(&single[0].embedding, &c);
        assert_abs_diff_eq!(terms.w2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn apx_without_connections_is_constant_beyond_the_loss() {
        let (clf, mut link, targets) = fixture(3);
        link.b2 = -1e4;
        let c = ctx(&clf, &link, &targets, 0.7);
        let x = [1.0, 0.0, -1.0, 0.5];
        let (terms, _) = objective_apx(&x, &c);
        let conf_sum: f64 = targets.iter().map(|t| t.weight * t.confidence).sum();
        assert_abs_diff_eq!(terms.total, terms.w1 - 0.7 * conf_sum, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.w2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn full_gain_matches_direct_evaluation() {
        let (clf, link, targets) = fixture(4);
        let c = ctx(&clf, &link, &targets, 1.0);
        let x = [0.5, 0.5, -0.2, 0.0];
        let (terms, _) = objective_full(&x, &c);
        let mut direct = 0.0;
        for t in &targets {
            let p = link.score(&x, &t.anchor);
            let u = crate::smoothing::expected_update_after_set(
                &t.embedding,
                &x,
                t.degree,
                p,
                c.prior_set_size,
                &c.params,
            );
            direct += t.weight
                * (confidence_at(&clf, &u, ConfidenceMetric::Peakedness)
                    - confidence_at(&clf, &t.embedding, ConfidenceMetric::Peakedness));
        }
        assert_abs_diff_eq!(terms.w2, direct, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let (clf, link, targets) = fixture(100 + seed);
            let c = ctx(&clf, &link, &targets, 0.9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            for kind in [ObjectiveKind::Full, ObjectiveKind::Apx] {
                let f = |p: &[f64]| {
                    let (t, g) = c.evaluate(kind, p);
                    (t.total, g)
                };
                let err = grad_check(f, &x, 1e-6);
                assert!(err <= 1e-4, "{kind:?} seed {seed}: {err}");
            }
        }
    }
}
