//! Set functions over generated nodes and greedy selection.
//!
//! A small instance fixes the targets, a finite pool of candidate features
//! and the link probability of every (candidate, target) pair. The value of
//! an ordered sequence of candidates is the total confidence gain after
//! applying their expected updates one after another; a set is valued in
//! its canonical order (ascending candidate confidence, ties by index).

use crate::models::{confidence_at, ConfidenceMetric, LinearClassifier};
use crate::smoothing::{expected_update_after_set, SmoothingParams};

#[derive(Debug, Clone)]
pub struct GainInstance {
    pub classifier: LinearClassifier,
    pub metric: ConfidenceMetric,
    pub params: SmoothingParams,
    /// `(embedding, degree)` per target.
    pub targets: Vec<(Vec<f64>, f64)>,
    pub candidates: Vec<Vec<f64>>,
    /// `probs[c][i]`: link probability between candidate `c` and target `i`.
    pub probs: Vec<Vec<f64>>,
}

/// Outcome of the premise checks for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Premises {
    pub convex_segments: bool,
    pub candidates_dominate: bool,
}

impl Premises {
    pub fn hold(&self) -> bool {
        self.convex_segments && self.candidates_dominate
    }
}

/// Whether `t ↦ f((1 − t) a + t b)` has nonnegative second differences
/// (down to `-tol`) on `points` evenly spaced nodes of `[0, 1]`.
pub fn segment_is_convex<F: Fn(&[f64]) -> f64>(
    f: F,
    a: &[f64],
    b: &[f64],
    points: usize,
    tol: f64,
) -> bool {
    let values: Vec<f64> = (0..points)
        .map(|k| {
            let t = k as f64 / (points - 1) as f64;
            let x: Vec<f64> = a.iter().zip(b).map(|(u, v)| (1.0 - t) * u + t * v).collect();
            f(&x)
        })
        .collect();
    values.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -tol)
}

impl GainInstance {
    fn conf(&self, h: &[f64]) -> f64 {
        confidence_at(&self.classifier, h, self.metric)
    }

    pub fn candidate_confidence(&self, c: usize) -> f64 {
        self.conf(&self.candidates[c])
    }

    /// Ascending candidate confidence, ties by index.
    pub fn canonical(&self, set: &[usize]) -> Vec<usize> {
        let mut out = set.to_vec();
        let conf: Vec<f64> = out.iter().map(|&c| self.candidate_confidence(c)).collect();
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(out[a].cmp(&out[b])));
        out = order.into_iter().map(|k| set[k]).collect();
        out
    }

    /// Per-target embeddings after applying `sequence` in order.
    pub fn embeddings_after(&self, sequence: &[usize]) -> Vec<Vec<f64>> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, (h, d))| {
                sequence.iter().enumerate().fold(h.clone(), |cur, (k, &c)| {
                    expected_update_after_set(
                        &cur,
                        &self.candidates[c],
                        *d,
                        self.probs[c][i],
                        k,
                        &self.params,
                    )
                })
            })
            .collect()
    }

    /// Total confidence gain of an ordered sequence.
    pub fn sequence_value(&self, sequence: &[usize]) -> f64 {
        self.embeddings_after(sequence)
            .iter()
            .zip(&self.targets)
            .map(|(after, (h, _))| self.conf(after) - self.conf(h))
            .sum()
    }

    pub fn set_value(&self, set: &[usize]) -> f64 {
        self.sequence_value(&self.canonical(set))
    }

    /// Convexity of the confidence composition on every target-to-candidate
    /// and candidate-to-candidate segment, and every candidate more
    /// confident than every target.
    pub fn premises(&self, grid_points: usize) -> Premises {
        let f = |x: &[f64]| self.conf(x);
        let tol = 1e-12;
        let mut convex = self.targets.iter().all(|(h, _)| {
            self.candidates
                .iter()
                .all(|x| segment_is_convex(f, h, x, grid_points, tol))
        });
        for (a, xa) in self.candidates.iter().enumerate() {
            for xb in &self.candidates[a + 1..] {
                convex &= segment_is_convex(f, xa, xb, grid_points, tol);
            }
        }
        let min_candidate = (0..self.candidates.len())
            .map(|c| self.candidate_confidence(c))
            .fold(f64::INFINITY, f64::min);
        let max_target = self
            .targets
            .iter()
            .map(|(h, _)| self.conf(h))
            .fold(f64::NEG_INFINITY, f64::max);
        Premises {
            convex_segments: convex,
            candidates_dominate: min_candidate > max_target,
        }
    }
}

/// Picks `budget` distinct candidates one at a time, each maximizing the
/// value of the sequence with it appended; ties go to the lower index.
/// Returns the chosen sequence and its value.
pub fn greedy_select(inst: &GainInstance, budget: usize) -> (Vec<usize>, f64) {
    let mut chosen: Vec<usize> = Vec::new();
    let mut value = 0.0;
    for _ in 0..budget.min(inst.candidates.len()) {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..inst.candidates.len()).filter(|c| !chosen.contains(c)) {
            let mut seq = chosen.clone();
            seq.push(c);
            let v = inst.sequence_value(&seq);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        let (c, v) = best.expect("nonempty pool");
        chosen.push(c);
        value = v;
    }
    (chosen, value)
}

/// Best value over every ordered sequence of `budget` distinct candidates.
pub fn exhaustive_best(inst: &GainInstance, budget: usize) -> (Vec<usize>, f64) {
    fn walk(inst: &GainInstance, budget: usize, seq: &mut Vec<usize>, best: &mut (Vec<usize>, f64)) {
        if seq.len() == budget {
            let v = inst.sequence_value(seq);
            if v > best.1 {
                *best = (seq.clone(), v);
            }
            return;
        }
        for c in 0..inst.candidates.len() {
            if !seq.contains(&c) {
                seq.push(c);
                walk(inst, budget, seq, best);
                seq.pop();
            }
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    walk(inst, budget.min(inst.candidates.len()), &mut Vec::new(), &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn instance() -> GainInstance {
        // two classes; logit gap equals the first coordinate
        let mut classifier = LinearClassifier::zeros(2, 2);
        classifier.weights = array![[0.5, 0.0], [-0.5, 0.0]];
        GainInstance {
            classifier,
            metric: ConfidenceMetric::MaxLogit,
            params: SmoothingParams::default(),
            targets: vec![(vec![0.1, 0.0], 1.0), (vec![-0.1, 1.0], 2.0)],
            candidates: vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![0.5, -1.0]],
            probs: vec![vec![1.0, 0.5], vec![0.2, 0.9], vec![0.0, 0.0]],
        }
    }

    #[test]
    fn empty_sequence_has_zero_value() {
        assert_eq!(instance().sequence_value(&[]), 0.0);
    }

    #[test]
    fn single_candidate_matches_hand_update() {
        let inst = instance();
        // target 0: d = 1, λ = λ̃ = 1, p = 1 → w = 1/3
        let after = inst.embeddings_after(&[0]);
        assert_abs_diff_eq!(after[0][0], 0.1 + (1.0 - 0.1) / 3.0, epsilon = 1e-15);
        // target 1: d = 2, p = 0.5 → w = 0.5 / 4
        assert_abs_diff_eq!(after[1][0], -0.1 + 0.125 * 1.1, epsilon = 1e-15);
    }

    #[test]
    fn unconnected_candidate_adds_nothing() {
        let inst = instance();
        assert_eq!(inst.sequence_value(&[2]), 0.0);
    }

    #[test]
    fn canonical_orders_by_confidence() {
        let inst = instance();
        assert_eq!(inst.canonical(&[1, 0, 2]), vec![2, 0, 1]);
    }

    #[test]
    fn max_logit_segments_are_convex() {
        let inst = instance();
        assert!(inst.premises(17).convex_segments);
    }

    #[test]
    fn concave_segment_is_detected() {
        assert!(!segment_is_convex(|x| -x[0] * x[0], &[0.0], &[1.0], 9, 1e-12));
        assert!(segment_is_convex(|x| x[0] * x[0], &[0.0], &[1.0], 9, 1e-12));
    }

    #[test]
    fn greedy_never_beats_exhaustive() {
        let inst = instance();
        for budget in 1..=3 {
            let (g, gv) = greedy_select(&inst, budget);
            let (_, ev) = exhaustive_best(&inst, budget);
            assert_eq!(g.len(), budget);
            assert!(gv <= ev + 1e-15);
        }
        assert_eq!(greedy_select(&inst, 1).1, exhaustive_best(&inst, 1).1);
    }
}
