use std::collections::HashSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::{parse_header, parse_row, Lines};
use super::classifier::join;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::smoothing::Embedding;

/// Two-layer MLP on the elementwise product of two embeddings:
/// `σ(w₂ · relu(W₁ (h_u ⊙ h_v) + b₁) + b₂)`.
///
/// The product featurization makes the score exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredictor {
    /// `hidden × d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub hidden: usize,
    /// Negatives sampled per positive edge, fresh every epoch.
    pub negative_ratio: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Shift the output bias so scores estimate the graph's actual edge
    /// probability instead of the rate under the sampled negative ratio.
    pub calibrate: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            negative_ratio: 1.0,
            epochs: 30,
            lr: 0.05,
            batch_size: 64,
            seed: 0,
            calibrate: true,
        }
    }
}

/// Output of [`train_link_predictor`].
#[derive(Debug, Clone)]
pub struct LinkFit {
    pub model: LinkPredictor,
    /// Mean binary cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// `false` when the graph had no non-edges and training saw positives only.
    pub negatives_sampled: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinkPredictor {
    /// He-initialized first layer, `N(0, 1/hidden)` output layer, zero biases.
    pub fn seeded(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0 / dim.max(1) as f64).sqrt()).expect("valid normal");
        let n2 = Normal::new(0.0, (1.0 / hidden.max(1) as f64).sqrt()).expect("valid normal");
        Self {
            w1: Array2::from_shape_simple_fn((hidden, dim), || n1.sample(&mut rng)),
            b1: Array1::zeros(hidden),
            w2: Array1::from_shape_simple_fn(hidden, || n2.sample(&mut rng)),
            b2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    fn forward(&self, pair: &[f64]) -> (Vec<f64>, f64) {
        let pre: Vec<f64> = self
            .w1
            .rows()
            .into_iter()
            .zip(&self.b1)
            .map(|(w, b)| w.iter().zip(pair).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect();
        let out = pre
            .iter()
            .zip(&self.w2)
            .map(|(a, w)| a.max(0.0) * w)
            .sum::<f64>()
            + self.b2;
        (pre, out)
    }

    /// Link probability in (0, 1).
    pub fn score(&self, u: &[f64], v: &[f64]) -> f64 {
        let pair: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
        sigmoid(self.forward(&pair).1)
    }

    /// Score and its gradient with respect to the first argument.
    pub fn score_grad(&self, x: &[f64], h: &[f64]) -> (f64, Vec<f64>) {
        let pair: Vec<f64> = x.iter().zip(h).map(|(a, b)| a * b).collect();
        let (pre, out) = self.forward(&pair);
        let p = sigmoid(out);
        let dout = p * (1.0 - p);
        let mut dpair = vec![0.0; pair.len()];
        for ((w_row, a), w2) in self.w1.rows().into_iter().zip(&pre).zip(&self.w2) {
            if *a > 0.0 {
                let s = dout * w2;
                for (d, w) in dpair.iter_mut().zip(w_row) {
                    *d += s * w;
                }
            }
        }
        let grad = dpair.iter().zip(h).map(|(d, hv)| d * hv).collect();
        (p, grad)
    }

    /// Accumulates `scale · ∂BCE/∂θ` for one example into `grads`; returns the loss.
    fn accumulate(&self, pair: &[f64], target: f64, scale: f64, grads: &mut LinkPredictor) -> f64 {
        let (pre, out) = self.forward(pair);
        let p = sigmoid(out);
        // BCE on the logit, stable form
        let loss = out.max(0.0) - out * target + (-out.abs()).exp().ln_1p();
        let dout = (p - target) * scale;
        grads.b2 += dout;
        for (k, a) in pre.iter().enumerate() {
            if *a > 0.0 {
                grads.w2[k] += dout * a;
                let da = dout * self.w2[k];
                grads.b1[k] += da;
                grads.w1.row_mut(k).iter_mut().zip(pair).for_each(|(g, x)| *g += da * x);
            }
        }
        loss
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!(
            "LinkPredictor dim={} classes=1 hidden={}\n",
            self.dim(),
            self.hidden()
        );
        for row in self.w1.rows() {
            out.push_str(&join(row.iter()));
        }
        out.push_str(&join(self.b1.iter()));
        out.push_str(&join(self.w2.iter()));
        out.push_str(&join(std::iter::once(&self.b2)));
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let header = parse_header(lines.next_line()?, "LinkPredictor")?;
        let (dim, hidden) = (header.dim, header.hidden);
        let mut w1 = Array2::zeros((hidden, dim));
        for k in 0..hidden {
            w1.row_mut(k)
                .assign(&Array1::from(parse_row(lines.next_line()?, dim)?));
        }
        let b1 = Array1::from(parse_row(lines.next_line()?, hidden)?);
        let w2 = Array1::from(parse_row(lines.next_line()?, hidden)?);
        let b2 = parse_row(lines.next_line()?, 1)?[0];
        lines.finish()?;
        Ok(Self { w1, b1, w2, b2 })
    }
}

/// Draws `count` distinct-endpoint non-edges among the first `n` nodes.
fn sample_negatives(
    graph: &Graph,
    n: usize,
    count: usize,
    non_edges: Option<&[(usize, usize)]>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    match non_edges {
        Some(pool) => (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
        None => {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n);
                if u != v && !graph.has_edge(u, v) {
                    out.push((u.min(v), u.max(v)));
                }
            }
            out
        }
    }
}

/// Mini-batch gradient descent on binary cross-entropy: graph edges are
/// positives, uniformly sampled non-edges are negatives. Only original
/// (non-virtual) nodes take part.
pub fn train_link_predictor(h: &Embedding, graph: &Graph, config: &LinkConfig) -> Result<LinkFit> {
    let n = graph.original_count();
    if h.rows() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h.rows(),
            context: "embedding rows vs original nodes".into(),
        });
    }
    let positives: Vec<(usize, usize)> = graph.edges().filter(|&(_, v)| v < n).collect();
    if positives.is_empty() {
        return Err(Error::param("link predictor needs at least one edge"));
    }
    if config.hidden == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::param("link predictor needs hidden > 0, batch_size > 0, lr > 0"));
    }
    if !(config.negative_ratio >= 0.0 && config.negative_ratio.is_finite()) {
        return Err(Error::param("negative_ratio must be finite and nonnegative"));
    }

    let total_pairs = n * (n - 1) / 2;
    let free = total_pairs - positives.len();
    let negatives_sampled = free > 0 && config.negative_ratio > 0.0;
    if free == 0 {
        log::warn!("graph is complete; training link predictor on positives only");
    }
    // enumerate non-edges when they are scarce so rejection sampling stays cheap
    let pool: Option<Vec<(usize, usize)>> = (negatives_sampled && free * 4 < total_pairs).then(|| {
        let edge_set: HashSet<(usize, usize)> = positives.iter().copied().collect();
        (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|p| !edge_set.contains(p))
            .collect()
    });
    let neg_count = if negatives_sampled {
        (config.negative_ratio * positives.len() as f64).round() as usize
    } else {
        0
    };

    let mut model = LinkPredictor::seeded(h.dim(), config.hidden, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut examples: Vec<(usize, usize, f64)> = Vec::new();
    let mut pair = vec![0.0; h.dim()];

    for _ in 0..config.epochs {
        examples.clear();
        examples.extend(positives.iter().map(|&(u, v)| (u, v, 1.0)));
        let negs = sample_negatives(graph, n, neg_count, pool.as_deref(), &mut rng);
        examples.extend(negs.into_iter().map(|(u, v)| (u, v, 0.0)));
        examples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in examples.chunks(config.batch_size) {
            let mut grads = LinkPredictor {
                w1: Array2::zeros(model.w1.raw_dim()),
                b1: Array1::zeros(model.hidden()),
                w2: Array1::zeros(model.hidden()),
                b2: 0.0,
            };
            let scale = 1.0 / batch.len() as f64;
            for &(u, v, t) in batch {
                for ((p, a), b) in pair.iter_mut().zip(h.row(u)).zip(h.row(v)) {
                    *p = a * b;
                }
                epoch_loss += model.accumulate(&pair, t, scale, &mut grads);
            }
            model.w1.scaled_add(-config.lr, &grads.w1);
            model.b1.scaled_add(-config.lr, &grads.b1);
            model.w2.scaled_add(-config.lr, &grads.w2);
            model.b2 -= config.lr * grads.b2;
        }
        let mean = epoch_loss / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("link predictor loss diverged".into()));
        }
        epoch_losses.push(mean);
    }
    if config.calibrate && neg_count > 0 && config.epochs > 0 {
        // prior correction: training odds are the true odds scaled by
        // (non-edges / sampled negatives)
        model.b2 += (neg_count as f64 / free as f64).ln();
    }

    Ok(LinkFit {
        model,
        epoch_losses,
        negatives_sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::grad_check;
    use ndarray::Array2;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn score_is_bit_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = LinkPredictor::seeded(6, 16, 3);
        for _ in 0..200 {
            let u = random_vec(&mut rng, 6);
            let v = random_vec(&mut rng, 6);
            assert_eq!(m.score(&u, &v).to_bits(), m.score(&v, &u).to_bits());
        }
    }

    #[test]
    fn untrained_scores_lie_in_open_unit_interval() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let h = Embedding::new(Array2::from_shape_fn((3, 2), |(i, k)| (i + k) as f64)).unwrap();
        let cfg = LinkConfig {
            epochs: 0,
            ..Default::default()
        };
        let fit = train_link_predictor(&h, &g, &cfg).unwrap();
        assert_eq!(fit.model, LinkPredictor::seeded(2, cfg.hidden, cfg.seed));
        for u in 0..3 {
            for v in 0..3 {
                let s = fit.model.score(h.row(u), h.row(v));
                assert!(s > 0.0 && s < 1.0);
            }
        }
    }

    #[test]
    fn separated_cliques_score_higher_within() {
        // two 6-cliques with features ±(1, 1, 1, 1) plus small jitter
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let h = Embedding::new(Array2::from_shape_fn((n, 4), |(i, _)| {
            let sign = if i < 6 { 1.0 } else { -1.0 };
            sign + rng.random_range(-0.2..0.2)
        }))
        .unwrap();
        let mut edges = Vec::new();
        for base in [0, 6] {
            for u in base..base + 6 {
                for v in (u + 1)..base + 6 {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n, edges).unwrap();
        let fit = train_link_predictor(
            &h,
            &g,
            &LinkConfig {
                epochs: 200,
                hidden: 16,
                ..Default::default()
            },
        )
        .unwrap();
        let (mut within, mut wn, mut cross, mut cn) = (0.0, 0, 0.0, 0);
        for u in 0..n {
            for v in (u + 1)..n {
                let s = fit.model.score(h.row(u), h.row(v));
                if (u < 6) == (v < 6) {
                    within += s;
                    wn += 1;
                } else {
                    cross += s;
                    cn += 1;
                }
            }
        }
        assert!(fit.negatives_sampled);
        assert!(within / wn as f64 > cross / cn as f64 + 0.2);
    }

    #[test]
    fn complete_graph_trains_on_positives_only() {
        let edges: Vec<_> = (0..4).flat_map(|u| ((u + 1)..4).map(move |v| (u, v))).collect();
        let g = Graph::from_edges(4, edges).unwrap();
        let h = Embedding::new(Array2::from_elem((4, 2), 0.5)).unwrap();
        let fit = train_link_predictor(&h, &g, &LinkConfig::default()).unwrap();
        assert!(!fit.negatives_sampled);
        assert!(fit.model.score(h.row(0), h.row(1)) > 0.5);
    }

    #[test]
    fn edgeless_graph_is_rejected() {
        let h = Embedding::new(Array2::zeros((3, 2))).unwrap();
        assert!(train_link_predictor(&h, &Graph::new(3), &LinkConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        let h = Embedding::new(Array2::from_shape_fn((5, 3), |(i, k)| ((i * 3 + k) as f64).cos()))
            .unwrap();
        let a = train_link_predictor(&h, &g, &LinkConfig::default()).unwrap();
        let b = train_link_predictor(&h, &g, &LinkConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn input_gradient_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = LinkPredictor::seeded(5, 12, rng.random());
            let x = random_vec(&mut rng, 5);
            let h = random_vec(&mut rng, 5);
            let err = grad_check(|p| m.score_grad(p, &h), &x, 1e-6);
            assert!(err <= 1e-4, "{err}");
        }
    }

    #[test]
    fn parameter_gradient_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (d, hid) = (3, 5);
        for _ in 0..20 {
            let base = LinkPredictor::seeded(d, hid, rng.random());
            let pair = random_vec(&mut rng, d);
            let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let unpack = |theta: &[f64]| LinkPredictor {
                w1: Array2::from_shape_vec((hid, d), theta[..hid * d].to_vec()).unwrap(),
                b1: Array1::from(theta[hid * d..hid * d + hid].to_vec()),
                w2: Array1::from(theta[hid * d + hid..hid * d + 2 * hid].to_vec()),
                b2: theta[hid * d + 2 * hid],
            };
            let flat: Vec<f64> = base
                .w1
                .iter()
                .chain(&base.b1)
                .chain(&base.w2)
                .chain(std::iter::once(&base.b2))
                .copied()
                .collect();
            let f = |theta: &[f64]| {
                let m = unpack(theta);
                let mut g = LinkPredictor {
                    w1: Array2::zeros((hid, d)),
                    b1: Array1::zeros(hid),
                    w2: Array1::zeros(hid),
                    b2: 0.0,
                };
                let loss = m.accumulate(&pair, target, 1.0, &mut g);
                let flat = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(std::iter::once(&g.b2));
                (loss, flat.copied().collect())
            };
            let err = grad_check(f, &flat, 1e-6);
            assert!(err <= 1e-4, "{err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = LinkPredictor::seeded(4, 7, 21);
        let back = LinkPredictor::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(m, back);
        assert!(crate::models::LinearClassifier::from_checkpoint(&m.to_checkpoint()).is_err());
    }

    #[test]
    fn calibrated_scores_track_edge_density() {
        let ds = crate::graph::sbm_generate(&crate::graph::SbmParams {
            blocks: 3,
            nodes_per_block: 40,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 4,
            feature_noise: 0.5,
            seed: 5,
        })
        .unwrap();
        let h = Embedding::new(ds.features.view().to_owned()).unwrap();
        let n = ds.graph.node_count();
        let pairs = (n * (n - 1) / 2) as f64;
        let density = ds.graph.edge_count() as f64 / pairs;
        let mean_score = |calibrate: bool| {
            let cfg = LinkConfig {
                calibrate,
                ..Default::default()
            };
            let m = train_link_predictor(&h, &ds.graph, &cfg).unwrap().model;
            let total: f64 = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .map(|(u, v)| m.score(h.row(u), h.row(v)))
                .sum();
            total / pairs
        };
        let (raw, calibrated) = (mean_score(false), mean_score(true));
        assert!(raw > 2.0 * density, "raw {raw} vs density {density}");
        assert!(
            calibrated > 0.5 * density && calibrated < 2.0 * density,
            "calibrated {calibrated} vs density {density}"
        );
    }
}
