//! Planted-partition (stochastic block model) generator with Gaussian block features.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureMatrix, Graph, LabelAssignment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 16,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

/// Samples a planted-partition graph. Node `i` belongs to block
/// `i / nodes_per_block`; features are the block centroid plus isotropic
/// Gaussian noise and every node is labeled with its block id.
///
/// Random draws happen in a fixed order (centroids, features, then pairs in
/// lexicographic order) so output is bit-identical for a given seed.
pub fn sbm_generate(params: &SbmParams) -> Result<Dataset> {
    let SbmParams {
        blocks,
        nodes_per_block,
        p_in,
        p_out,
        feature_dim,
        feature_noise,
        seed,
    } = *params;
    if blocks < 2 {
        return Err(Error::param("sbm needs at least 2 blocks"));
    }
    if nodes_per_block == 0 || feature_dim == 0 {
        return Err(Error::param("sbm needs nonzero block size and feature dim"));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=p_in).contains(&p_out) {
        return Err(Error::param(format!(
            "sbm requires 0 <= p_out <= p_in <= 1 (got p_in={p_in}, p_out={p_out})"
        )));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(Error::param("feature_noise must be a finite nonnegative stddev"));
    }

    let n = blocks * nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(blocks);
    while centroids.len() < blocks {
        let c: Vec<f64> = (0..feature_dim).map(|_| std_normal.sample(&mut rng)).collect();
        if centroids.iter().all(|other| *other != c) {
            centroids.push(c);
        }
    }

    let mut x = Array2::zeros((n, feature_dim));
    for i in 0..n {
        let c = &centroids[i / nodes_per_block];
        for k in 0..feature_dim {
            x[[i, k]] = c[k] + feature_noise * std_normal.sample(&mut rng);
        }
    }

    let mut graph = Graph::new(n);
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if u / nodes_per_block == v / nodes_per_block {
                p_in
            } else {
                p_out
            };
            if rng.random::<f64>() < p {
                graph.add_edge(u, v)?;
            }
        }
    }

    let labels: BTreeMap<usize, usize> = (0..n).map(|i| (i, i / nodes_per_block)).collect();
    Ok(Dataset {
        graph,
        features: FeatureMatrix::new(x)?,
        labels: LabelAssignment::new(blocks, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(blocks: usize, per: usize, p_in: f64, p_out: f64) -> SbmParams {
        SbmParams {
            blocks,
            nodes_per_block: per,
            p_in,
            p_out,
            feature_dim: 4,
            feature_noise: 0.5,
            seed: 7,
        }
    }

    #[test]
    fn forced_topology_gives_two_triangles() {
        let ds = sbm_generate(&params(2, 3, 1.0, 0.0)).unwrap();
        let edges: Vec<_> = ds.graph.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(ds.graph.component_count(), 2);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = params(3, 20, 0.4, 0.05);
        assert_eq!(sbm_generate(&p).unwrap(), sbm_generate(&p).unwrap());
    }

    #[test]
    fn within_block_edge_count_concentrates() {
        let ds = sbm_generate(&SbmParams {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 2,
            feature_noise: 1.0,
            seed: 11,
        })
        .unwrap();
        let within = ds.graph.edges().filter(|&(u, v)| u / 100 == v / 100).count() as f64;
        // 4 blocks of C(100, 2) = 4950 pairs each
        let trials: f64 = 4.0 * 4950.0;
        let mean = 0.3 * trials;
        let sd = (trials * 0.3 * 0.7).sqrt();
        assert!((within - mean).abs() <= 3.0 * sd, "{within} vs {mean}±{sd}");
    }

    #[test]
    fn labels_are_block_ids() {
        let ds = sbm_generate(&params(3, 5, 0.5, 0.1)).unwrap();
        assert_eq!(ds.labels.len(), 15);
        assert_eq!(ds.labels.label(7), Some(1));
        assert_eq!(ds.labels.num_classes(), 3);
    }

    #[test]
    fn isolated_blocks_when_p_out_is_zero() {
        for seed in 0..5 {
            let mut p = params(5, 30, 0.5, 0.0);
            p.seed = seed;
            let ds = sbm_generate(&p).unwrap();
            assert_eq!(ds.graph.component_count(), 5);
        }
    }

    #[test]
    fn preconditions_enforced() {
        assert!(sbm_generate(&params(1, 3, 0.5, 0.1)).is_err());
        assert!(sbm_generate(&params(2, 3, 0.1, 0.5)).is_err());
        assert!(sbm_generate(&params(2, 3, 1.5, 0.5)).is_err());
    }
}
