//! Greedy synthesis of labeled virtual nodes.
//!
//! Each round visits the labeled nodes in ascending order and, for every
//! one, optimizes a candidate feature in embedding space that is classified
//! as the source's label while raising the confidence of the low-confidence
//! targets it is expected to connect to. After each candidate the targets'
//! working embeddings are moved by its expected update, so later candidates
//! see the marginal gain left over.

mod augment;
mod descent;
mod objective;
mod prototypes;
mod select;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment_init, InitKind, FALLBACK_SIGMA};
pub use descent::{descend_candidate, Descent};
pub use objective::{
    objective_apx, objective_full, ObjectiveContext, ObjectiveKind, ObjectiveTerms, Target,
};
pub use prototypes::{summarize_prototypes, Prototypes};
pub use select::{exhaustive_best, greedy_select, segment_is_convex, GainInstance, Premises};

use crate::error::{Error, Result};
use crate::graph::{Graph, LabelAssignment};
use crate::models::{confidence_at, ConfidenceState, LinearClassifier, LinkPredictor};
use crate::smoothing::{expected_update_after_set, Embedding, SmoothingParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub alpha: f64,
    /// Generated nodes per labeled node (`m`).
    pub nodes_per_label: usize,
    /// Descent step size.
    pub lr: f64,
    /// Descent stops once the gradient max-norm is at most this.
    pub grad_threshold: f64,
    /// Target `W1 / W2` ratio of the α controller; `None` keeps α fixed.
    pub eta: Option<f64>,
    /// Targets dropped per pruning pass; `None` means a tenth of them.
    pub prune_tail: Option<usize>,
    /// Generated nodes between pruning passes; 0 disables pruning.
    pub prune_period: usize,
    /// k-means prototypes standing in for the targets; 0 uses every target.
    pub prototype_count: usize,
    pub objective: ObjectiveKind,
    pub init_kind: InitKind,
    pub max_descent_steps: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            nodes_per_label: 5,
            lr: 0.001,
            grad_threshold: 1e-3,
            eta: None,
            prune_tail: None,
            prune_period: 25,
            prototype_count: 0,
            objective: ObjectiveKind::Full,
            init_kind: InitKind::None,
            max_descent_steps: 500,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("lr", self.lr)?;
        positive("grad_threshold", self.grad_threshold)?;
        if let Some(eta) = self.eta {
            positive("eta", eta)?;
        }
        if let InitKind::Perturbation { sigma } = self.init_kind {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::param("perturbation sigma must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// A synthesized labeled node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedNode {
    pub feature: Vec<f64>,
    pub source: usize,
    pub label: usize,
    /// Link probability to each candidate neighbor.
    pub connect_probs: BTreeMap<usize, f64>,
    pub sampled_edges: Vec<usize>,
}

/// Read-only state the generator works from.
#[derive(Debug, Clone, Copy)]
pub struct GenerationInputs<'a> {
    pub graph: &'a Graph,
    pub embedding: &'a Embedding,
    pub labels: &'a LabelAssignment,
    pub confidence: &'a ConfidenceState,
    pub classifier: &'a LinearClassifier,
    pub link: &'a LinkPredictor,
    pub params: SmoothingParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub nodes: Vec<GeneratedNode>,
    /// Confidence of every target (or prototype) after the expected updates.
    pub target_confidence: Vec<f64>,
    /// Targets removed by pruning, in removal order.
    pub pruned: Vec<usize>,
    pub final_alpha: f64,
    pub descent_steps: usize,
}

/// Drops the `k_t` lowest-probability entries, ties removing the lower index
/// first.
pub fn prune_tail(connect_probs: &BTreeMap<usize, f64>, k_t: usize) -> BTreeMap<usize, f64> {
    let mut order: Vec<(usize, f64)> = connect_probs.iter().map(|(&k, &v)| (k, v)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    order.into_iter().skip(k_t).collect()
}

/// `α · clip(√(W1 / (η W2)), 0.5, 2)`; α is returned unchanged when
/// `W2 ≤ 1e-12`.
pub fn update_alpha(w1: f64, w2: f64, eta: f64, alpha: f64) -> f64 {
    if w2 <= 1e-12 {
        return alpha;
    }
    let ratio = (w1 / (eta * w2)).max(0.0);
    alpha * ratio.sqrt().clamp(0.5, 2.0)
}

/// Independent Bernoulli draw per candidate in ascending index order; the
/// result is also stored on the node.
pub fn sample_edges<R: Rng + ?Sized>(node: &mut GeneratedNode, rng: &mut R) -> Vec<usize> {
    let edges: Vec<usize> = node
        .connect_probs
        .iter()
        .filter(|&(_, &p)| rng.random::<f64>() < p)
        .map(|(&j, _)| j)
        .collect();
    node.sampled_edges = edges.clone();
    edges
}

struct TargetSet {
    targets: Vec<Target>,
    /// Graph nodes each target stands for.
    groups: Vec<Vec<usize>>,
}

fn build_targets(inputs: &GenerationInputs<'_>, config: &GenerationConfig) -> Result<TargetSet> {
    let h = inputs.embedding;
    let set = &inputs.confidence.low_conf_set;
    let metric = inputs.confidence.metric;
    if let Some(&bad) = set.iter().find(|&&i| i >= h.rows()) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            node_count: h.rows(),
        });
    }
    if config.prototype_count == 0 {
        let targets = set
            .iter()
            .map(|&i| {
                let deg = inputs.graph.degree(i) as f64;
                Target::new(h.row(i).to_vec(), deg, 1.0, inputs.classifier, metric)
            })
            .collect();
        return Ok(TargetSet {
            targets,
            groups: set.iter().map(|&i| vec![i]).collect(),
        });
    }
    let rows = h.matrix().select(ndarray::Axis(0), set);
    let protos = summarize_prototypes(rows.view(), config.prototype_count, config.seed)?;
    let mut targets = Vec::with_capacity(protos.len());
    let mut groups = Vec::with_capacity(protos.len());
    for c in 0..protos.len() {
        let members: Vec<usize> = protos.members(c).into_iter().map(|k| set[k]).collect();
        let degree = members.iter().map(|&i| inputs.graph.degree(i) as f64).sum::<f64>()
            / members.len() as f64;
        targets.push(Target::new(
            protos.centers.row(c).to_vec(),
            degree,
            protos.member_counts[c] as f64,
            inputs.classifier,
            metric,
        ));
        groups.push(members);
    }
    Ok(TargetSet { targets, groups })
}

/// Greedy generation: `nodes_per_label` rounds over the labeled nodes.
pub fn greedy_generate(
    inputs: &GenerationInputs<'_>,
    config: &GenerationConfig,
) -> Result<GenerationOutcome> {
    config.validate()?;
    inputs.params.validate()?;
    let h = inputs.embedding;
    let metric = inputs.confidence.metric;
    let sources: Vec<usize> = inputs.labels.labeled_nodes().collect();
    if sources.is_empty() {
        return Err(Error::InvalidLabel("no labeled nodes to generate from".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&v| v >= h.rows()) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            node_count: h.rows(),
        });
    }
    if inputs.confidence.low_conf_set.is_empty() {
        return Err(Error::param("low-confidence target set is empty"));
    }
    let TargetSet {
        mut targets,
        groups,
    } = build_targets(inputs, config)?;
    let mut outcome = GenerationOutcome {
        nodes: Vec::new(),
        target_confidence: Vec::new(),
        pruned: Vec::new(),
        final_alpha: config.alpha,
        descent_steps: 0,
    };
    if config.nodes_per_label == 0 {
        outcome.target_confidence = targets.iter().map(|t| t.confidence).collect();
        return Ok(outcome);
    }

    let pool: Vec<(&[f64], usize)> = sources
        .iter()
        .map(|&v| (h.row(v), inputs.labels.label(v).expect("labeled")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active = vec![true; targets.len()];
    let mut window = vec![0.0; targets.len()];
    let mut window_len = 0usize;
    let mut alpha = config.alpha;

    for _round in 0..config.nodes_per_label {
        for (slot, &source) in sources.iter().enumerate() {
            let label = pool[slot].1;
            let x0 = augment_init(slot, &pool, config.init_kind, &mut rng);
            let live: Vec<usize> = (0..targets.len()).filter(|&t| active[t]).collect();
            let live_targets: Vec<Target> = live.iter().map(|&t| targets[t].clone()).collect();
            let ctx = ObjectiveContext {
                classifier: inputs.classifier,
                link: inputs.link,
                metric,
                targets: &live_targets,
                label,
                alpha,
                params: inputs.params,
                prior_set_size: outcome.nodes.len(),
            };
            let descent = descend_candidate(
                &x0,
                |x| ctx.evaluate(config.objective, x),
                config.lr,
                config.grad_threshold,
                config.max_descent_steps,
            )?;
            outcome.descent_steps += descent.steps;
            let x = descent.x;
            if let Some(eta) = config.eta {
                let last = descent.trace.last().expect("trace holds the start");
                alpha = update_alpha(last.w1, last.w2, eta, alpha);
            }

            let mut connect_probs = BTreeMap::new();
            for &t in &live {
                for &j in &groups[t] {
                    connect_probs.insert(j, inputs.link.score(&x, h.row(j)));
                }
                let target = &mut targets[t];
                let p = inputs.link.score(&x, &target.anchor);
                target.embedding = expected_update_after_set(
                    &target.embedding,
                    &x,
                    target.degree,
                    p,
                    outcome.nodes.len(),
                    &inputs.params,
                );
                target.confidence = confidence_at(inputs.classifier, &target.embedding, metric);
                window[t] += p;
            }
            outcome.nodes.push(GeneratedNode {
                feature: x,
                source,
                label,
                connect_probs,
                sampled_edges: Vec::new(),
            });
            window_len += 1;

            if config.prune_period > 0 && outcome.nodes.len() % config.prune_period == 0 {
                let means: BTreeMap<usize, f64> = live
                    .iter()
                    .map(|&t| (t, window[t] / window_len as f64))
                    .collect();
                let k_t = config
                    .prune_tail
                    .unwrap_or(live.len() / 10)
                    .min(live.len().saturating_sub(1));
                let kept = prune_tail(&means, k_t);
                for &t in &live {
                    if !kept.contains_key(&t) {
                        active[t] = false;
                        outcome.pruned.push(t);
                    }
                }
                window.iter_mut().for_each(|w| *w = 0.0);
                window_len = 0;
            }
        }
    }
    outcome.target_confidence = targets.iter().map(|t| t.confidence).collect();
    outcome.final_alpha = alpha;
    Ok(outcome)
}

fn join_values<T: std::fmt::Display>(values: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    for (k, v) in values.enumerate() {
        if k > 0 {
            out.push(',');
        }
        write!(out, "{v}").expect("writing to a String");
    }
    out
}

/// One line per node: `source<TAB>label<TAB>edges<TAB>features`, with
/// comma-separated edges and features.
pub fn format_generated(nodes: &[GeneratedNode]) -> String {
    let mut out = String::new();
    for n in nodes {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            n.source,
            n.label,
            join_values(n.sampled_edges.iter()),
            join_values(n.feature.iter())
        )
        .expect("writing to a String");
    }
    out
}

pub fn save_generated(nodes: &[GeneratedNode], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_generated(nodes)).map_err(|e| Error::io(path, e))
}

/// Reads the format of [`save_generated`]. Link probabilities are not
/// stored, so `connect_probs` comes back empty.
pub fn load_generated(path: impl AsRef<Path>) -> Result<Vec<GeneratedNode>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut nodes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(line_no, format!("bad integer {s:?}: {e}")))
        };
        let source = int(fields[0])?;
        let label = int(fields[1])?;
        let sampled_edges = fields[2]
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(int)
            .collect::<Result<Vec<_>>>()?;
        let feature = fields[3]
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite feature".into()));
        }
        nodes.push(GeneratedNode {
            feature,
            source,
            label,
            connect_probs: BTreeMap::new(),
            sampled_edges,
        });
    }
    Ok(nodes)
}
