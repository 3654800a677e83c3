//! k-means summaries of the target set.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const MOVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `k × d`
    pub centers: Array2<f64>,
    pub member_counts: Vec<usize>,
    /// Fraction of the points assigned to each center.
    pub weight: Vec<f64>,
    /// Center index of every input row.
    pub assignments: Vec<usize>,
}

impl Prototypes {
    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input rows assigned to `center`, ascending.
    pub fn members(&self, center: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c == center)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn row(m: ArrayView2<'_, f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Nearest center, lowest index on ties.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, center)| (c, sq_dist(point, center)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means++ seeding.
fn seed_centers(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![row(points, first)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(&row(points, i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every point coincides with a center; take an unused one
            let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen[pick] = true;
        let center = row(points, pick);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(&row(points, i), &center));
        }
        centers.push(center);
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. `k` is clamped to the number of
/// points; clusters left empty after convergence are dropped.
pub fn summarize_prototypes(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Prototypes> {
    if k == 0 {
        return Err(Error::param("prototype count must be at least 1"));
    }
    let n = points.nrows();
    if n == 0 {
        return Err(Error::param("cannot summarize an empty target set"));
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(points, k, &mut rng);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(points, i)).collect();
    let mut assignments = vec![0; n];

    for _ in 0..MAX_ITERS {
        for (a, p) in assignments.iter_mut().zip(&rows) {
            *a = nearest(p, &centers).0;
        }
        let mut moved: f64 = 0.0;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                rows.iter().zip(&assignments).filter(|&(_, &a)| a == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; center.len()];
            for m in &members {
                for (acc, v) in mean.iter_mut().zip(m.iter()) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= members.len() as f64);
            moved = moved.max(sq_dist(&mean, center).sqrt());
            *center = mean;
        }
        if moved < MOVE_TOLERANCE {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(&rows) {
        *a = nearest(p, &centers).0;
    }

    let mut counts = vec![0usize; centers.len()];
    for &a in &assignments {
        counts[a] += 1;
    }
    let remap: Vec<Option<usize>> = counts
        .iter()
        .scan(0, |next, &c| {
            Some((c > 0).then(|| {
                *next += 1;
                *next - 1
            }))
        })
        .collect();
    let kept = remap.iter().flatten().count();
    let d = points.ncols();
    let mut out = Array2::zeros((kept, d));
    let mut member_counts = vec![0; kept];
    for (c, slot) in remap.iter().enumerate() {
        if let Some(s) = *slot {
            member_counts[s] = counts[c];
        }
    }
    let assignments: Vec<usize> = assignments.iter().map(|&a| remap[a].unwrap()).collect();
    for (i, &a) in assignments.iter().enumerate() {
        let mut r = out.row_mut(a);
        r += &points.row(i);
    }
    for (mut r, &c) in out.axis_iter_mut(Axis(0)).zip(&member_counts) {
        r /= c as f64;
    }
    let weight = member_counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(Prototypes {
        centers: out,
        member_counts,
        weight,
        assignments,
    })
}
