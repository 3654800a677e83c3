//! Sessions of generation plus fine-tuning, fusion of their outputs, and
//! accuracy evaluation.
//!
//! A session generates virtual nodes, samples their edges, re-solves the
//! embeddings of the original nodes on the augmented graph, and retrains the
//! classifier on the real labels plus the generated ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{greedy_generate, sample_edges, save_generated, GeneratedNode, GenerationConfig, GenerationInputs};
use crate::graph::{add_virtual_node, io::format_matrix, FeatureMatrix, Graph, LabelAssignment};
use crate::models::{
    argmax, build_confidence_state, fit_classifier, train_classifier, train_link_predictor,
    ClassifierConfig, ConfidenceMetric, ConfidenceState, LinearClassifier, LinkConfig, LinkPredictor,
};
use crate::smoothing::{smooth, smooth_with_virtual, Embedding, SmoothingParams};

/// Hyperparameters of the non-generative part of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub smoothing: SmoothingParams,
    pub classifier: ClassifierConfig,
    pub link: LinkConfig,
    pub confidence: ConfidenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceConfig {
    pub metric: ConfidenceMetric,
    /// Fraction of unlabeled nodes forming the low-confidence target set.
    pub quantile: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            metric: ConfidenceMetric::Peakedness,
            quantile: 0.2,
        }
    }
}

/// Everything the plain pipeline produces: smooth, train, predict.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub embedding: Embedding,
    pub classifier: LinearClassifier,
    pub link: LinkPredictor,
    pub confidence: ConfidenceState,
    pub probabilities: Array2<f64>,
}

impl Baseline {
    pub fn predictions(&self) -> Vec<usize> {
        predictions(&self.probabilities)
    }
}

/// Row-wise argmax, lowest index on ties.
pub fn predictions(probabilities: &Array2<f64>) -> Vec<usize> {
    probabilities
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("standard layout")))
        .collect()
}

/// Smooths the features, trains the classifier on `labels` and the link
/// predictor on the graph, and scores every node.
pub fn fit_baseline(
    graph: &Graph,
    features: &FeatureMatrix,
    labels: &LabelAssignment,
    config: &ModelConfig,
) -> Result<Baseline> {
    let embedding = smooth(graph, features, &config.smoothing)?;
    let classifier = train_classifier(&embedding, labels, &config.classifier)?;
    let link = train_link_predictor(&embedding, graph, &config.link)?.model;
    let confidence = build_confidence_state(
        &classifier,
        &embedding,
        labels,
        config.confidence.quantile,
        config.confidence.metric,
    )?;
    let probabilities = classifier.predict_all(embedding.matrix().view());
    Ok(Baseline {
        embedding,
        classifier,
        link,
        confidence,
        probabilities,
    })
}

/// Output of one generation + fine-tuning session.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub seed: u64,
    pub nodes: Vec<GeneratedNode>,
    /// Re-solved embedding of the original nodes.
    pub embedding: Embedding,
    pub classifier: LinearClassifier,
    /// Class probabilities of every original node.
    pub probabilities: Array2<f64>,
}

/// Seed of session `k` within a trial.
pub fn session_seed(trial_seed: u64, k: usize) -> u64 {
    trial_seed.wrapping_mul(1000).wrapping_add(k as u64)
}

/// Runs generation with `session_seed`, wires the generated nodes into a copy
/// of the graph and retrains on the augmented labels.
pub fn run_session(
    graph: &Graph,
    features: &FeatureMatrix,
    labels: &LabelAssignment,
    baseline: &Baseline,
    config: &ModelConfig,
    generation: &GenerationConfig,
    session_seed: u64,
) -> Result<SessionResult> {
    if graph.virtual_count() > 0 {
        return Err(Error::param("session graph already carries virtual nodes"));
    }
    let gen_config = GenerationConfig {
        seed: session_seed,
        ..*generation
    };
    let inputs = GenerationInputs {
        graph,
        embedding: &baseline.embedding,
        labels,
        confidence: &baseline.confidence,
        classifier: &baseline.classifier,
        link: &baseline.link,
        params: config.smoothing,
    };
    let mut nodes = greedy_generate(&inputs, &gen_config)?.nodes;

    let mut edge_rng = ChaCha8Rng::seed_from_u64(session_seed);
    edge_rng.set_stream(1);
    let mut augmented = graph.clone();
    let mut all_features = features.clone();
    for node in &mut nodes {
        let edges = sample_edges(node, &mut edge_rng);
        add_virtual_node(&mut augmented, &mut all_features, &node.feature, &edges)?;
    }
    let all = all_features.into_inner();
    let (orig, virt) = all.view().split_at(Axis(0), graph.node_count());
    let embedding = smooth_with_virtual(&augmented, orig, virt, &config.smoothing)?;

    let labeled: Vec<usize> = labels.labeled_nodes().collect();
    let mut targets: Vec<usize> = labeled.iter().map(|&v| labels.label(v).expect("labeled")).collect();
    let mut examples = embedding.matrix().select(Axis(0), &labeled);
    for node in &nodes {
        examples
            .push_row(ndarray::ArrayView1::from(&node.feature))
            .map_err(|e| Error::param(format!("generated feature shape: {e}")))?;
        targets.push(node.label);
    }
    let (classifier, _) = fit_classifier(examples.view(), &targets, labels.num_classes(), &config.classifier)?;
    let probabilities = classifier.predict_all(embedding.matrix().view());
    Ok(SessionResult {
        seed: session_seed,
        nodes,
        embedding,
        classifier,
        probabilities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub seed: u64,
    pub n_generated: usize,
    pub accuracy: Option<f64>,
    pub seconds: Option<f64>,
}

/// Writes `generated.tsv`, `probabilities.csv` and `summary.json` to `dir`.
pub fn save_session(result: &SessionResult, summary: &SessionSummary, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_generated(&result.nodes, dir.join("generated.tsv"))?;
    let probs = dir.join("probabilities.csv");
    fs::write(&probs, format_matrix(result.probabilities.view())).map_err(|e| Error::io(&probs, e))?;
    let json = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

/// Mean-pooled probabilities and their argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub probabilities: Array2<f64>,
    pub predictions: Vec<usize>,
}

/// Entry-wise mean of the sessions' probability matrices.
///
/// Each entry is computed from its values sorted ascending as
/// `min + Σ (v − min) / k`, which is independent of session order and
/// returns the input exactly when every session agrees.
pub fn fuse_sessions(results: &[SessionResult]) -> Result<Fused> {
    let matrices: Vec<&Array2<f64>> = results.iter().map(|r| &r.probabilities).collect();
    fuse_probabilities(&matrices)
}

pub fn fuse_probabilities(matrices: &[&Array2<f64>]) -> Result<Fused> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::param("fusion needs at least one session"))?;
    let shape = first.dim();
    if let Some(bad) = matrices.iter().find(|m| m.dim() != shape) {
        return Err(Error::DimensionMismatch {
            expected: shape.0 * shape.1,
            actual: bad.len(),
            context: format!("session probability shape {:?} vs {:?}", bad.dim(), shape),
        });
    }
    let k = matrices.len() as f64;
    let mut values = Vec::with_capacity(matrices.len());
    let probabilities = Array2::from_shape_fn(shape, |idx| {
        values.clear();
        values.extend(matrices.iter().map(|m| m[idx]));
        values.sort_by(f64::total_cmp);
        let lo = values[0];
        lo + values.iter().map(|v| v - lo).sum::<f64>() / k
    });
    let predictions = predictions(&probabilities);
    Ok(Fused {
        probabilities,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per class present in the test set.
    pub per_class: BTreeMap<usize, f64>,
}

/// Micro accuracy of `predicted` against `truth` over `test`.
pub fn evaluate(predicted: &[usize], truth: &[usize], test: &[usize]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let limit = predicted.len().min(truth.len());
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for &i in test {
        if i >= limit {
            return Err(Error::NodeOutOfRange {
                node: i,
                node_count: limit,
            });
        }
        let entry = hits.entry(truth[i]).or_default();
        entry.1 += 1;
        if predicted[i] == truth[i] {
            entry.0 += 1;
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        per_class: hits.into_iter().map(|(c, (h, n))| (c, h as f64 / n as f64)).collect(),
    })
}
