//! Initial candidates for generated nodes.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Noise scale used when interpolation or mixup lacks a second same-class node.
pub const FALLBACK_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitKind {
    /// Copy of the source embedding.
    #[default]
    None,
    /// Source plus isotropic Gaussian noise.
    Perturbation { sigma: f64 },
    /// Random convex combination of the source and another same-class node.
    Interpolation,
    /// Uniform average of a random same-class subset containing the source.
    Mixup,
}

fn perturb<R: Rng + ?Sized>(source: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma.abs()).expect("finite sigma");
    source.iter().map(|v| v + normal.sample(rng)).collect()
}

/// Initial feature for a candidate generated from `source`.
///
/// `pool` lists the labeled embeddings with their classes; same-class members
/// other than the source row are looked up by `source_index` within the pool.
pub fn augment_init<R: Rng + ?Sized>(
    source_index: usize,
    pool: &[(&[f64], usize)],
    kind: InitKind,
    rng: &mut R,
) -> Vec<f64> {
    let (source, label) = pool[source_index];
    let peers = || -> Vec<usize> {
        pool.iter()
            .enumerate()
            .filter(|&(i, &(_, c))| c == label && i != source_index)
            .map(|(i, _)| i)
            .collect()
    };
    match kind {
        InitKind::None => source.to_vec(),
        InitKind::Perturbation { sigma } => perturb(source, sigma, rng),
        InitKind::Interpolation => {
            let peers = peers();
            if peers.is_empty() {
                return perturb(source, FALLBACK_SIGMA, rng);
            }
            let other = pool[peers[rng.random_range(0..peers.len())]].0;
            let a1: f64 = rng.random_range(f64::EPSILON..1.0);
            let a2: f64 = rng.random_range(f64::EPSILON..1.0);
            source
                .iter()
                .zip(other)
                .map(|(s, o)| (a1 * s + a2 * o) / (a1 + a2))
                .collect()
        }
        InitKind::Mixup => {
            let peers = peers();
            if peers.is_empty() {
                return perturb(source, FALLBACK_SIGMA, rng);
            }
            let extra = rng.random_range(1..=peers.len());
            let mut out = source.to_vec();
            for i in sample(rng, peers.len(), extra) {
                for (o, v) in out.iter_mut().zip(pool[peers[i]].0) {
                    *o += v;
                }
            }
            let k = (extra + 1) as f64;
            out.iter_mut().for_each(|o| *o /= k);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn none_copies_source() {
        let a = [1.0, 2.0];
        let pool = [(&a[..], 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_init(0, &pool, InitKind::None, &mut rng), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_noise_perturbation_copies_source() {
        let a = [1.5, -2.0, 0.25];
        let pool = [(&a[..], 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_init(0, &pool, InitKind::Perturbation { sigma: 0.0 }, &mut rng);
        assert_eq!(out, a.to_vec());
    }

    #[test]
    fn interpolation_stays_on_the_segment() {
        let a = [0.0, 0.0];
        let b = [1.0, 1.0];
        let pool = [(&a[..], 0), (&b[..], 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let out = augment_init(0, &pool, InitKind::Interpolation, &mut rng);
            assert_eq!(out[0], out[1]);
            assert!((0.0..=1.0).contains(&out[0]));
        }
    }

    #[test]
    fn mixup_is_a_class_average() {
        let a = [0.0, 3.0];
        let b = [3.0, 0.0];
        let c = [100.0, 100.0];
        let pool = [(&a[..], 0), (&b[..], 0), (&c[..], 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_init(0, &pool, InitKind::Mixup, &mut rng);
        assert_eq!(out, vec![1.5, 1.5]);
    }

    #[test]
    fn lone_class_member_falls_back_to_perturbation() {
        let a = [1.0, 1.0];
        let b = [5.0, 5.0];
        let pool = [(&a[..], 0), (&b[..], 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [InitKind::Interpolation, InitKind::Mixup] {
            let out = augment_init(0, &pool, kind, &mut rng);
            assert_ne!(out, a.to_vec());
            assert!(out.iter().all(|v| (v - 1.0).abs() < 10.0 * FALLBACK_SIGMA));
        }
    }
}
