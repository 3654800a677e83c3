//! Executable property suites run by `nodegen selftest`.
//!
//! Every suite is seeded and returns a [`PropertyOutcome`] with a one-line
//! detail string carrying its counters.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::finetune::{fit_baseline, fuse_probabilities, run_session, ModelConfig};
use crate::generation::{
    descend_candidate, exhaustive_best, greedy_generate, greedy_select, GainInstance,
    GenerationConfig, GenerationInputs, ObjectiveContext, ObjectiveKind, Target,
};
use crate::graph::{sbm_generate, Dataset, LabelAssignment, SbmParams};
use crate::models::{confidence_at, grad_check, ConfidenceMetric, LinearClassifier, LinkPredictor};
use crate::smoothing::{expected_update, fixed_point_residual, smooth, SmoothingParams};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, run: impl FnOnce() -> (bool, String)) -> PropertyOutcome {
    let start = Instant::now();
    let (passed, detail) = run();
    PropertyOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Counters of the expected-update Monte-Carlo check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationCheck {
    pub instances: usize,
    /// Coordinates whose sample mean left the `4σ̂/√M` band.
    pub outside_band: usize,
    /// Largest `|mean − expected| / (σ̂/√M)` seen (0 where `σ̂ = 0`).
    pub max_z: f64,
    /// Largest deviation of the closed form from the mixture it summarizes.
    pub identity_error: f64,
}

/// One node `i` with `d` smoothed neighbors: `H_i` is its fixed point. With
/// probability `p` a virtual node joins its neighborhood and the local update
/// moves `H_i` to the re-solved value; the sample mean of that update is
/// compared to [`expected_update`].
pub fn check_expected_update(instances: usize, samples: usize, seed: u64) -> ExpectationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let mut out = ExpectationCheck {
        instances,
        outside_band: 0,
        max_z: 0.0,
        identity_error: 0.0,
    };
    for _ in 0..instances {
        let lambda = rng.random_range(0.05..3.0);
        let lambda_tilde = rng.random_range(0.05..3.0);
        let d = rng.random_range(0..10usize);
        let p = rng.random_range(0.0..1.0);
        let params = SmoothingParams {
            lambda,
            lambda_tilde,
            ..Default::default()
        };
        let x_i = uniform_vec(&mut rng, dim, -2.0, 2.0);
        let neighbor_sum: Vec<f64> = (0..dim)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).sum())
            .collect();
        let x_v = uniform_vec(&mut rng, dim, -2.0, 2.0);
        let denom = 1.0 + d as f64 * lambda;
        let h_i: Vec<f64> = x_i
            .iter()
            .zip(&neighbor_sum)
            .map(|(x, s)| (x + lambda * s) / denom)
            .collect();
        let connected: Vec<f64> = (0..dim)
            .map(|k| (x_i[k] + lambda * neighbor_sum[k] + lambda_tilde * x_v[k]) / (denom + lambda_tilde))
            .collect();
        let expected = expected_update(&h_i, &x_v, d as f64, p, &params);

        for k in 0..dim {
            let mixture = (1.0 - p) * h_i[k] + p * connected[k];
            out.identity_error = out.identity_error.max((mixture - expected[k]).abs());
        }

        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for _ in 0..samples {
            let row = if rng.random::<f64>() < p { &connected } else { &h_i };
            for k in 0..dim {
                sum[k] += row[k];
                sum_sq[k] += row[k] * row[k];
            }
        }
        let m = samples as f64;
        for k in 0..dim {
            let mean = sum[k] / m;
            let var = ((sum_sq[k] - m * mean * mean) / (m - 1.0)).max(0.0);
            let se = var.sqrt() / m.sqrt();
            let dev = (mean - expected[k]).abs();
            if dev > (4.0 * se).max(1e-12 * (1.0 + expected[k].abs())) {
                out.outside_band += 1;
            }
            if se > 0.0 {
                out.max_z = out.max_z.max(dev / se);
            }
        }
    }
    out
}

/// A two-class classifier whose logit gap is `2 s ⟨u, h⟩` for a random unit
/// direction `u`.
fn two_class_classifier(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> (LinearClassifier, Vec<f64>) {
    let mut u = uniform_vec(rng, dim, -1.0, 1.0);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let mut clf = LinearClassifier::zeros(2, dim);
    for k in 0..dim {
        clf.weights[[0, k]] = scale * u[k];
        clf.weights[[1, k]] = -scale * u[k];
    }
    (clf, u)
}

/// A point whose projection on `u` is `along`, with an orthogonal offset.
fn point_at(rng: &mut ChaCha8Rng, u: &[f64], along: f64, spread: f64) -> Vec<f64> {
    let noise = uniform_vec(rng, u.len(), -spread, spread);
    let proj: f64 = noise.iter().zip(u).map(|(a, b)| a * b).sum();
    noise
        .iter()
        .zip(u)
        .map(|(n, uk)| n - proj * uk + along * uk)
        .collect()
}

/// Small random set-function instance: targets near the decision boundary,
/// candidates on the positive side, random link probabilities.
pub fn random_gain_instance(
    seed: u64,
    targets: usize,
    candidates: usize,
    grid: bool,
) -> GainInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2;
    let scale = rng.random_range(0.3..0.9);
    let (classifier, u) = two_class_classifier(&mut rng, dim, scale);
    let params = SmoothingParams {
        lambda: rng.random_range(0.5..2.0),
        lambda_tilde: rng.random_range(0.5..2.0),
        ..Default::default()
    };
    let target_list: Vec<(Vec<f64>, f64)> = (0..targets)
        .map(|_| {
            let along = rng.random_range(-0.25..0.25);
            (point_at(&mut rng, &u, along, 1.0), rng.random_range(1..=6) as f64)
        })
        .collect();
    let candidates: Vec<Vec<f64>> = if grid {
        // 4 × 2 lattice along u and its normal
        let normal = [-u[1], u[0]];
        let base = rng.random_range(0.4..0.8);
        let step = rng.random_range(0.1..0.3);
        (0..4)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| {
                let along = base + step * a as f64;
                let side = (b as f64 - 0.5) * 0.6;
                vec![along * u[0] + side * normal[0], along * u[1] + side * normal[1]]
            })
            .collect()
    } else {
        (0..candidates)
            .map(|_| {
                let along = rng.random_range(0.4..1.4);
                point_at(&mut rng, &u, along, 1.0)
            })
            .collect()
    };
    let probs = candidates
        .iter()
        .map(|_| uniform_vec(&mut rng, target_list.len(), 0.0, 1.0))
        .collect();
    GainInstance {
        classifier,
        metric: ConfidenceMetric::Peakedness,
        params,
        targets: target_list,
        candidates,
        probs,
    }
}

/// Counters of the monotonicity and diminishing-returns checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SetFunctionCheck {
    pub instances: usize,
    /// Instances whose premises failed and were not checked.
    pub skipped: usize,
    pub monotone_violations: usize,
    /// Monotonicity violations where the added candidate is the most
    /// confident one, so it is appended at the end of the canonical order.
    pub monotone_append_violations: usize,
    pub diminishing_violations: usize,
    /// Largest violation amount of either kind.
    pub worst: f64,
    /// Skipped instances by failed premise.
    pub nonconvex: usize,
    pub not_dominating: usize,
}

impl SetFunctionCheck {
    pub fn skip_rate(&self) -> f64 {
        self.skipped as f64 / self.instances.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.monotone_violations == 0 && self.diminishing_violations == 0
    }
}

/// Grid resolution of the segment convexity premise.
pub const CONVEXITY_GRID: usize = 33;

/// Monotonicity: adding any candidate to any subset (both valued in canonical
/// order) never lowers the total confidence gain. Diminishing returns: for
/// `S ⊂ T` and `c ∉ T`, appending `c` to `T` gains no more than appending it
/// to `S`. Both within `slack`.
pub fn check_set_function(inst: &GainInstance, slack: f64) -> SetFunctionCheck {
    let n = inst.candidates.len();
    let subsets = 1usize << n;
    let members = |mask: usize| -> Vec<usize> { (0..n).filter(|c| mask & (1 << c) != 0).collect() };
    let canonical: Vec<Vec<usize>> = (0..subsets).map(|m| inst.canonical(&members(m))).collect();
    let values: Vec<f64> = canonical.iter().map(|s| inst.sequence_value(s)).collect();
    let mut out = SetFunctionCheck {
        instances: 1,
        ..Default::default()
    };
    for mask in 0..subsets {
        for c in (0..n).filter(|c| mask & (1 << c) == 0) {
            let drop = values[mask] - values[mask | (1 << c)];
            if drop > slack {
                out.monotone_violations += 1;
                if canonical[mask | (1 << c)].last() == Some(&c) {
                    out.monotone_append_violations += 1;
                }
                out.worst = out.worst.max(drop);
            }
        }
    }
    let appended_gain = |mask: usize, c: usize| {
        let mut seq = canonical[mask].clone();
        seq.push(c);
        inst.sequence_value(&seq) - values[mask]
    };
    for t in 0..subsets {
        // every S ⊆ T, enumerated as submasks
        let mut s = t;
        loop {
            if s != t {
                for c in (0..n).filter(|c| t & (1 << c) == 0) {
                    let excess = appended_gain(t, c) - appended_gain(s, c);
                    if excess > slack {
                        out.diminishing_violations += 1;
                        out.worst = out.worst.max(excess);
                    }
                }
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & t;
        }
    }
    out
}

/// Runs [`check_set_function`] on `instances` random instances with at most
/// 20 targets and 6 candidates, skipping those whose premises fail.
pub fn check_monotone_submodular(instances: usize, seed: u64) -> SetFunctionCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SetFunctionCheck {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let inst = random_gain_instance(
            rng.random(),
            rng.random_range(2..=20),
            rng.random_range(2..=6),
            false,
        );
        let premises = inst.premises(CONVEXITY_GRID);
        if !premises.hold() {
            out.skipped += 1;
            out.nonconvex += usize::from(!premises.convex_segments);
            out.not_dominating += usize::from(!premises.candidates_dominate);
            continue;
        }
        let one = check_set_function(&inst, 1e-9);
        out.monotone_violations += one.monotone_violations;
        out.monotone_append_violations += one.monotone_append_violations;
        out.diminishing_violations += one.diminishing_violations;
        out.worst = out.worst.max(one.worst);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GreedyCheck {
    pub instances: usize,
    pub skipped: usize,
    pub failures: usize,
    /// Smallest greedy / optimum ratio over checked instances with a
    /// positive optimum.
    pub worst_ratio: f64,
}

/// Greedy with budget 2 against the exhaustive best ordered pair on an
/// 8-point candidate grid with 4 targets.
pub fn check_greedy_quality(instances: usize, seed: u64) -> GreedyCheck {
    let bound = 1.0 - (-1.0f64).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GreedyCheck {
        instances,
        worst_ratio: f64::INFINITY,
        ..Default::default()
    };
    for _ in 0..instances {
        let inst = random_gain_instance(rng.random(), 4, 8, true);
        if !inst.premises(CONVEXITY_GRID).hold() {
            out.skipped += 1;
            continue;
        }
        let (_, greedy) = greedy_select(&inst, 2);
        let (_, best) = exhaustive_best(&inst, 2);
        if greedy < bound * best - 1e-12 {
            out.failures += 1;
        }
        if best > 0.0 {
            out.worst_ratio = out.worst_ratio.min(greedy / best);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxationCheck {
    pub instances: usize,
    /// Largest `[g(E) − g(H)] − w [g(x) − g(H)]` seen.
    pub max_excess: f64,
    pub violations: usize,
    /// Instances where the bound written without the `− g(H)` on its right
    /// side fails; possible only when `g(H) < 0`.
    pub literal_violations: usize,
}

/// Convex-surrogate check of the relaxation: with `g` the max logit,
/// `g(E[H̃]) − g(H) ≤ w (g(x) − g(H))` for `E[H̃] = (1 − w) H + w x`.
pub fn check_relaxation(instances: usize, seed: u64) -> RelaxationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RelaxationCheck {
        instances,
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..instances {
        let dim = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let mut clf = LinearClassifier::seeded(classes, dim, rng.random());
        clf.weights.mapv_inplace(|w| w * 200.0);
        clf.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let params = SmoothingParams {
            lambda: rng.random_range(0.05..3.0),
            lambda_tilde: rng.random_range(0.05..3.0),
            ..Default::default()
        };
        let h = uniform_vec(&mut rng, dim, -2.0, 2.0);
        let x = uniform_vec(&mut rng, dim, -2.0, 2.0);
        let degree = rng.random_range(0..10) as f64;
        let p = rng.random_range(0.0..1.0);
        let w = crate::smoothing::update_weight(degree, p, 0, &params);
        let e = expected_update(&h, &x, degree, p, &params);
        let g = |v: &[f64]| confidence_at(&clf, v, ConfidenceMetric::MaxLogit);
        let (ge, gh, gx) = (g(&e), g(&h), g(&x));
        let excess = (ge - gh) - w * (gx - gh);
        out.max_excess = out.max_excess.max(excess);
        if excess > 1e-9 {
            out.violations += 1;
        }
        if ge - gh > (1.0 - w) * gh + w * gx + 1e-9 {
            out.literal_violations += 1;
        }
    }
    out
}

/// Random objective instance for gradient checks.
fn objective_fixture(rng: &mut ChaCha8Rng) -> (LinearClassifier, LinkPredictor, Vec<Target>, SmoothingParams) {
    let dim = rng.random_range(3..7);
    let classes = rng.random_range(2..5);
    let mut clf = LinearClassifier::seeded(classes, dim, rng.random());
    clf.weights.mapv_inplace(|w| w * 100.0);
    let link = LinkPredictor::seeded(dim, 16, rng.random());
    let params = SmoothingParams {
        lambda: rng.random_range(0.2..2.0),
        lambda_tilde: rng.random_range(0.2..2.0),
        ..Default::default()
    };
    let targets = (0..rng.random_range(1..8))
        .map(|_| {
            let h = uniform_vec(rng, dim, -1.0, 1.0);
            let degree = rng.random_range(0..8) as f64;
            let weight = rng.random_range(0.5..3.0);
            Target::new(h, degree, weight, &clf, ConfidenceMetric::Peakedness)
        })
        .collect();
    (clf, link, targets, params)
}

/// Largest finite-difference relative error of each objective over `points`
/// random instances: `(full, apx)`.
pub fn check_objective_gradients(points: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..points {
        let (clf, link, targets, params) = objective_fixture(&mut rng);
        let label = rng.random_range(0..clf.num_classes());
        let x = uniform_vec(&mut rng, clf.dim(), -1.5, 1.5);
        let ctx = ObjectiveContext {
            classifier: &clf,
            link: &link,
            metric: ConfidenceMetric::Peakedness,
            targets: &targets,
            label,
            alpha: rng.random_range(0.1..2.0),
            params,
            prior_set_size: rng.random_range(0..5),
        };
        for kind in [ObjectiveKind::Full, ObjectiveKind::Apx] {
            let err = grad_check(
                |p| {
                    let (t, g) = ctx.evaluate(kind, p);
                    (t.total, g)
                },
                &x,
                1e-6,
            );
            match kind {
                ObjectiveKind::Full => worst.0 = worst.0.max(err),
                ObjectiveKind::Apx => worst.1 = worst.1.max(err),
            }
        }
    }
    worst
}

/// Small planted-partition dataset with a sparse stratified split, shared by
/// the pipeline-level suites.
fn fixture(blocks: usize, per_block: usize, seed: u64) -> crate::Result<(Dataset, LabelAssignment)> {
    let dataset = sbm_generate(&SbmParams {
        blocks,
        nodes_per_block: per_block,
        p_in: 0.15,
        p_out: 0.02,
        feature_dim: 8,
        feature_noise: 2.0,
        seed,
    })?;
    let split = crate::harness::split_labels(&dataset.labels, 0.05, seed)?;
    Ok((dataset, split.train))
}

fn outcome_of(result: crate::Result<(bool, String)>) -> (bool, String) {
    result.unwrap_or_else(|e| (false, format!("error: {e}")))
}

fn graph_degree_sum() -> (bool, String) {
    outcome_of((|| {
        let (mut ds, _) = fixture(3, 30, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let originals = ds.graph.node_count();
        let mut bad = 0;
        for _ in 0..20 {
            let k = rng.random_range(0..6);
            let edges: Vec<usize> = (0..k).map(|_| rng.random_range(0..originals)).collect();
            let mut edges = edges;
            edges.sort_unstable();
            edges.dedup();
            let feature = uniform_vec(&mut rng, ds.features.dim(), -1.0, 1.0);
            crate::graph::add_virtual_node(&mut ds.graph, &mut ds.features, &feature, &edges)?;
            let sum: usize = ds.graph.degrees().iter().sum();
            bad += usize::from(sum != 2 * ds.graph.edge_count());
        }
        Ok((bad == 0, format!("20 insertions, {bad} mismatches")))
    })())
}

fn graph_round_trip() -> (bool, String) {
    outcome_of((|| {
        let (ds, _) = fixture(3, 20, 4)?;
        let dir = std::env::temp_dir().join(format!("nodegen-selftest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
        let (e, f, l) = (dir.join("edges.tsv"), dir.join("features.csv"), dir.join("labels.tsv"));
        crate::graph::save_edges(&ds.graph, &e)?;
        crate::graph::save_features(&ds.features, &f)?;
        crate::graph::save_labels(&ds.labels, &l)?;
        let back = crate::graph::load_graph(&e, &f, &l);
        let _ = std::fs::remove_dir_all(&dir);
        let same = back? == ds;
        Ok((same, format!("{} nodes, {} edges, identical: {same}", ds.graph.node_count(), ds.graph.edge_count())))
    })())
}

fn graph_isolated_blocks() -> (bool, String) {
    outcome_of((|| {
        let mut wrong = 0;
        for seed in 0..5 {
            let ds = sbm_generate(&SbmParams {
                blocks: 4,
                nodes_per_block: 25,
                p_in: 0.3,
                p_out: 0.0,
                seed,
                ..Default::default()
            })?;
            wrong += usize::from(ds.graph.component_count() != 4);
        }
        Ok((wrong == 0, format!("5 graphs, {wrong} with a component count other than 4")))
    })())
}

fn smoothing_residual() -> (bool, String) {
    outcome_of((|| {
        let (ds, _) = fixture(4, 40, 5)?;
        let params = SmoothingParams::default();
        let h = smooth(&ds.graph, &ds.features, &params)?;
        let r = fixed_point_residual(&ds.graph, ds.features.view(), None, h.matrix().view(), &params);
        // a sweep moving by at most tol leaves a residual of at most tol
        Ok((r <= 1e-7, format!("residual {r:.3e}")))
    })())
}

fn smoothing_expected_update() -> (bool, String) {
    let c = check_expected_update(100, 10_000, 1);
    (
        c.outside_band == 0 && c.identity_error <= 1e-12,
        format!(
            "{} instances, {} coordinates outside 4σ̂/√M, max z {:.2}, identity error {:.1e}",
            c.instances, c.outside_band, c.max_z, c.identity_error
        ),
    )
}

fn smoothing_segment() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for _ in 0..200 {
        let h = uniform_vec(&mut rng, 3, -2.0, 2.0);
        let x = uniform_vec(&mut rng, 3, -2.0, 2.0);
        let d = rng.random_range(0..10) as f64;
        let base = SmoothingParams {
            lambda: rng.random_range(0.05..3.0),
            lambda_tilde: rng.random_range(0.05..3.0),
            ..Default::default()
        };
        let p = rng.random_range(0.0..1.0);
        let dist = |v: &[f64]| v.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let span = dist(&x);
        let e = expected_update(&h, &x, d, p, &base);
        // on the segment: distances to both ends add up to its length
        let to_x = e.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if (dist(&e) + to_x - span).abs() > 1e-9 * (1.0 + span) {
            bad += 1;
        }
        let more_p = expected_update(&h, &x, d, (p + 0.1).min(1.0), &base);
        let more_lt = expected_update(
            &h,
            &x,
            d,
            p,
            &SmoothingParams {
                lambda_tilde: base.lambda_tilde * 1.5,
                ..base
            },
        );
        if dist(&more_p) < dist(&e) - 1e-12 || dist(&more_lt) < dist(&e) - 1e-12 {
            bad += 1;
        }
    }
    (bad == 0, format!("200 instances, {bad} violations"))
}

fn smoothing_permutation() -> (bool, String) {
    outcome_of((|| {
        let (ds, _) = fixture(3, 30, 7)?;
        let n = ds.graph.node_count();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(n / 3);
        let edges: Vec<(usize, usize)> = ds.graph.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        let permuted_graph = crate::Graph::from_edges(n, edges)?;
        let mut x = ndarray::Array2::zeros((n, ds.features.dim()));
        for i in 0..n {
            x.row_mut(perm[i]).assign(&ds.features.row(i));
        }
        let params = SmoothingParams {
            tolerance: 1e-12,
            ..Default::default()
        };
        let h = smooth(&ds.graph, &ds.features, &params)?;
        let hp = smooth(&permuted_graph, &crate::FeatureMatrix::new(x)?, &params)?;
        let worst = (0..n)
            .flat_map(|i| h.row(i).iter().zip(hp.row(perm[i])).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0f64, f64::max);
        Ok((worst <= 1e-9, format!("max row difference {worst:.2e}")))
    })())
}

fn models_loss_monotone() -> (bool, String) {
    outcome_of((|| {
        let (ds, labels) = fixture(3, 30, 8)?;
        let h = smooth(&ds.graph, &ds.features, &SmoothingParams::default())?;
        let (rows, targets) = crate::models::classifier::labeled_rows(&h, &labels)?;
        let config = crate::models::ClassifierConfig {
            lr: 0.5,
            ..Default::default()
        };
        let (_, trace) = crate::models::fit_classifier(rows.view(), &targets, labels.num_classes(), &config)?;
        let rises = trace.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        Ok((rises == 0, format!("{} epochs, {rises} increases", trace.len() - 1)))
    })())
}

fn models_confidence_permutation() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut errors = 0;
    for _ in 0..100 {
        let c = rng.random_range(2..7);
        let raw = uniform_vec(&mut rng, c, 0.01, 1.0);
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut shuffled = probs.clone();
        shuffled.rotate_left(1);
        shuffled.reverse();
        for metric in [ConfidenceMetric::Peakedness, ConfidenceMetric::Entropy, ConfidenceMetric::Margin] {
            match (
                crate::models::confidence(&probs, metric),
                crate::models::confidence(&shuffled, metric),
            ) {
                (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                _ => errors += 1,
            }
        }
    }
    (
        worst <= 1e-12 && errors == 0,
        format!("100 vectors × 3 metrics, max difference {worst:.1e}"),
    )
}

fn models_link_symmetry() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let link = LinkPredictor::seeded(6, 16, 10);
    let asymmetric = (0..200)
        .filter(|_| {
            let u = uniform_vec(&mut rng, 6, -2.0, 2.0);
            let v = uniform_vec(&mut rng, 6, -2.0, 2.0);
            link.score(&u, &v).to_bits() != link.score(&v, &u).to_bits()
        })
        .count();
    (asymmetric == 0, format!("200 pairs, {asymmetric} asymmetric"))
}

fn models_gradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut clf_err, mut link_err, mut conf_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let dim = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let n = 6;
        let examples = ndarray::Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let base = LinearClassifier::seeded(classes, dim, rng.random());
        let unpack = |p: &[f64]| {
            let mut m = base.clone();
            m.weights.iter_mut().zip(p).for_each(|(w, v)| *w = *v);
            m.bias.iter_mut().zip(&p[classes * dim..]).for_each(|(b, v)| *b = *v);
            m
        };
        let point: Vec<f64> = base.weights.iter().chain(base.bias.iter()).copied().collect();
        clf_err = clf_err.max(grad_check(
            |p| {
                let m = unpack(p);
                let (gw, gb) = crate::models::classifier::training_gradient(&m, examples.view(), &targets, 0.01);
                let loss = crate::models::classifier::training_loss(&m, examples.view(), &targets, 0.01);
                (loss, gw.iter().chain(gb.iter()).copied().collect())
            },
            &point,
            1e-6,
        ));

        let link = LinkPredictor::seeded(dim, 8, rng.random());
        let h = uniform_vec(&mut rng, dim, -1.0, 1.0);
        let x = uniform_vec(&mut rng, dim, -1.0, 1.0);
        link_err = link_err.max(grad_check(|p| link.score_grad(p, &h), &x, 1e-6));

        let mut clf = base.clone();
        clf.weights.mapv_inplace(|w| w * 50.0);
        conf_err = conf_err.max(grad_check(
            |p| crate::models::confidence_grad(&clf, p, ConfidenceMetric::Peakedness),
            &x,
            1e-6,
        ));
    }
    let worst = clf_err.max(link_err).max(conf_err);
    (
        worst <= 1e-4,
        format!("20 points each: classifier {clf_err:.1e}, link {link_err:.1e}, confidence {conf_err:.1e}"),
    )
}

fn generation_monotone_submodular() -> (bool, String) {
    let c = check_monotone_submodular(100, 2);
    (
        c.passed(),
        format!(
            "skip rate {:.2} ({} nonconvex, {} not dominating); {} monotonicity and {} diminishing-returns violations, worst {:.3e}",
            c.skip_rate(),
            c.nonconvex,
            c.not_dominating,
            c.monotone_violations,
            c.diminishing_violations,
            c.worst
        ),
    )
}

fn generation_greedy_quality() -> (bool, String) {
    let c = check_greedy_quality(50, 3);
    (
        c.failures == 0,
        format!(
            "{} checked, {} skipped, {} below (1 − 1/e), worst ratio {:.4}",
            c.instances - c.skipped,
            c.skipped,
            c.failures,
            c.worst_ratio
        ),
    )
}

fn generation_relaxation() -> (bool, String) {
    let c = check_relaxation(100, 4);
    (
        c.violations == 0,
        format!("100 instances, {} violations, max excess {:.2e}", c.violations, c.max_excess),
    )
}

fn generation_gradients() -> (bool, String) {
    let (full, apx) = check_objective_gradients(20, 5);
    (
        full <= 1e-4 && apx <= 1e-4,
        format!("max relative error: full {full:.1e}, apx {apx:.1e}"),
    )
}

fn generation_determinism() -> (bool, String) {
    outcome_of((|| {
        let (ds, labels) = fixture(3, 30, 12)?;
        let models = ModelConfig::default();
        let baseline = fit_baseline(&ds.graph, &ds.features, &labels, &models)?;
        let inputs = GenerationInputs {
            graph: &ds.graph,
            embedding: &baseline.embedding,
            labels: &labels,
            confidence: &baseline.confidence,
            classifier: &baseline.classifier,
            link: &baseline.link,
            params: models.smoothing,
        };
        let config = GenerationConfig {
            nodes_per_label: 2,
            seed: 12,
            init_kind: crate::generation::InitKind::Mixup,
            ..Default::default()
        };
        let a = greedy_generate(&inputs, &config)?;
        let b = greedy_generate(&inputs, &config)?;
        let bits = |o: &crate::generation::GenerationOutcome| -> Vec<u64> {
            o.nodes.iter().flat_map(|n| n.feature.iter().map(|v| v.to_bits())).collect()
        };
        let same = a == b && bits(&a) == bits(&b);
        let mislabeled = a
            .nodes
            .iter()
            .filter(|n| labels.label(n.source) != Some(n.label))
            .count();
        Ok((
            same && mislabeled == 0,
            format!("{} nodes, repeat identical: {same}, label mismatches: {mislabeled}", a.nodes.len()),
        ))
    })())
}

fn generation_descent_trace() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut rises = 0;
    let mut steps = 0;
    let mut errors = 0;
    for _ in 0..20 {
        let (clf, link, targets, params) = objective_fixture(&mut rng);
        let ctx = ObjectiveContext {
            classifier: &clf,
            link: &link,
            metric: ConfidenceMetric::Peakedness,
            targets: &targets,
            label: rng.random_range(0..clf.num_classes()),
            alpha: 0.9,
            params,
            prior_set_size: 0,
        };
        let x0 = uniform_vec(&mut rng, clf.dim(), -1.0, 1.0);
        for kind in [ObjectiveKind::Full, ObjectiveKind::Apx] {
            match descend_candidate(&x0, |x| ctx.evaluate(kind, x), 0.01, 1e-6, 200) {
                Ok(d) => {
                    steps += d.steps;
                    rises += d.trace.windows(2).filter(|w| w[1].total > w[0].total).count();
                }
                Err(_) => errors += 1,
            }
        }
    }
    (
        rises == 0 && errors == 0,
        format!("40 runs, {steps} steps, {rises} increases, {errors} errors"),
    )
}

/// Seconds per call of `f`, the best of three batches.
fn per_call(calls: usize, mut f: impl FnMut()) -> f64 {
    (0..3)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..calls {
                f();
            }
            start.elapsed().as_secs_f64() / calls as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn generation_apx_scaling() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dim = 8;
    let clf = LinearClassifier::seeded(4, dim, 1);
    let link = LinkPredictor::seeded(dim, 32, 2);
    let make = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Target> {
        (0..n)
            .map(|_| Target::new(uniform_vec(rng, dim, -1.0, 1.0), 3.0, 1.0, &clf, ConfidenceMetric::Peakedness))
            .collect()
    };
    let small = make(&mut rng, 200);
    let large = make(&mut rng, 800);
    let x = uniform_vec(&mut rng, dim, -1.0, 1.0);
    let cost = |targets: &[Target]| {
        let ctx = ObjectiveContext {
            classifier: &clf,
            link: &link,
            metric: ConfidenceMetric::Peakedness,
            targets,
            label: 0,
            alpha: 0.9,
            params: SmoothingParams::default(),
            prior_set_size: 0,
        };
        per_call(50, || {
            std::hint::black_box(ctx.evaluate(ObjectiveKind::Apx, std::hint::black_box(&x)));
        }) / targets.len() as f64
    };
    let ratio = cost(&large) / cost(&small);
    (
        (0.5..=2.0).contains(&ratio),
        format!("per-target cost ratio 800 vs 200 targets: {ratio:.2}"),
    )
}

fn generation_prototype_speedup() -> (bool, String) {
    outcome_of((|| {
        let ds = sbm_generate(&SbmParams {
            blocks: 4,
            nodes_per_block: 300,
            p_in: 0.02,
            p_out: 0.002,
            feature_dim: 8,
            feature_noise: 2.0,
            seed: 15,
        })?;
        let labels = crate::harness::split_labels(&ds.labels, 0.003, 15)?.train;
        let models = ModelConfig::default();
        let baseline = fit_baseline(&ds.graph, &ds.features, &labels, &models)?;
        let inputs = GenerationInputs {
            graph: &ds.graph,
            embedding: &baseline.embedding,
            labels: &labels,
            confidence: &baseline.confidence,
            classifier: &baseline.classifier,
            link: &baseline.link,
            params: models.smoothing,
        };
        let run = |prototypes: usize| -> crate::Result<f64> {
            let config = GenerationConfig {
                nodes_per_label: 1,
                objective: ObjectiveKind::Apx,
                prototype_count: prototypes,
                seed: 15,
                ..Default::default()
            };
            let start = Instant::now();
            greedy_generate(&inputs, &config)?;
            Ok(start.elapsed().as_secs_f64())
        };
        let targets = baseline.confidence.low_conf_set.len();
        let (full, proto) = (run(0)?, run(10)?);
        Ok((
            targets >= 200 && proto <= full,
            format!("|V_s| = {targets}: {full:.3}s without prototypes, {proto:.3}s with 10"),
        ))
    })())
}

fn finetune_baseline_identity() -> (bool, String) {
    outcome_of((|| {
        let (ds, labels) = fixture(3, 30, 16)?;
        let models = ModelConfig::default();
        let baseline = fit_baseline(&ds.graph, &ds.features, &labels, &models)?;
        let generation = GenerationConfig {
            nodes_per_label: 0,
            ..Default::default()
        };
        let session = run_session(&ds.graph, &ds.features, &labels, &baseline, &models, &generation, 16)?;
        let fused = fuse_probabilities(&[&session.probabilities])?;
        let bits = |m: &ndarray::Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let same = session.nodes.is_empty()
            && bits(&session.probabilities) == bits(&baseline.probabilities)
            && bits(&fused.probabilities) == bits(&baseline.probabilities)
            && fused.predictions == baseline.predictions();
        Ok((same, format!("m = 0 session bit-identical to baseline: {same}")))
    })())
}

fn finetune_fusion() -> (bool, String) {
    outcome_of((|| {
        let (ds, labels) = fixture(3, 30, 17)?;
        let models = ModelConfig::default();
        let baseline = fit_baseline(&ds.graph, &ds.features, &labels, &models)?;
        let generation = GenerationConfig {
            nodes_per_label: 1,
            ..Default::default()
        };
        let run = |seed| run_session(&ds.graph, &ds.features, &labels, &baseline, &models, &generation, seed);
        let a = run(1)?;
        let copies = fuse_probabilities(&[&a.probabilities, &a.probabilities, &a.probabilities])?;
        let copies_ok = copies.probabilities == a.probabilities;
        let b = run(2)?;
        let c = run(3)?;
        let b_again = run(2)?;
        let order_ok = b.probabilities == b_again.probabilities;
        let forward = fuse_probabilities(&[&a.probabilities, &b.probabilities, &c.probabilities])?;
        let backward = fuse_probabilities(&[&c.probabilities, &a.probabilities, &b.probabilities])?;
        let perm_ok = forward == backward;
        Ok((
            copies_ok && order_ok && perm_ok,
            format!("k copies exact: {copies_ok}, rerun identical: {order_ok}, permutation invariant: {perm_ok}"),
        ))
    })())
}

fn harness_reproducible() -> (bool, String) {
    outcome_of((|| {
        let config = crate::harness::ExperimentConfig {
            dataset: crate::harness::DatasetSource::Sbm(SbmParams {
                blocks: 3,
                nodes_per_block: 30,
                p_in: 0.15,
                p_out: 0.02,
                feature_dim: 8,
                feature_noise: 2.0,
                seed: 18,
            }),
            label_fraction: 0.05,
            trials: 2,
            sessions: 2,
            generation: GenerationConfig {
                nodes_per_label: 1,
                ..Default::default()
            },
            record_timing: false,
            ..Default::default()
        };
        let dataset = config.dataset.load(None)?;
        let first = crate::harness::run_experiment_on(&dataset, &config);
        let second = crate::harness::run_experiment_on(&dataset, &config);
        let csv = |r| crate::harness::format_summary_csv(r, false);
        let same = csv(&first) == csv(&second);

        let plain = crate::harness::ExperimentConfig {
            generation: GenerationConfig {
                nodes_per_label: 0,
                ..config.generation
            },
            ..config.clone()
        };
        let disabled = crate::harness::run_experiment_on(&dataset, &plain);
        let baseline_ok = first
            .trials
            .iter()
            .zip(&disabled.trials)
            .all(|(a, b)| a.baseline_acc.is_some() && a.baseline_acc == b.augmented_acc);
        Ok((
            same && baseline_ok && first.failed_trials == 0,
            format!("summary identical: {same}, baseline equals generation-disabled run: {baseline_ok}"),
        ))
    })())
}

/// Runs every property suite with fixed seeds.
pub fn selftest() -> Vec<PropertyOutcome> {
    let suites: [(&'static str, fn() -> (bool, String)); 22] = [
        ("graph.degree_sum", graph_degree_sum),
        ("graph.round_trip", graph_round_trip),
        ("graph.sbm_isolated_blocks", graph_isolated_blocks),
        ("smoothing.fixed_point_residual", smoothing_residual),
        ("smoothing.expected_update_monte_carlo", smoothing_expected_update),
        ("smoothing.expected_update_segment", smoothing_segment),
        ("smoothing.permutation_equivariance", smoothing_permutation),
        ("models.loss_monotone", models_loss_monotone),
        ("models.confidence_permutation", models_confidence_permutation),
        ("models.link_symmetry", models_link_symmetry),
        ("models.gradients", models_gradients),
        ("generation.monotone_submodular", generation_monotone_submodular),
        ("generation.greedy_quality", generation_greedy_quality),
        ("generation.jensen_relaxation", generation_relaxation),
        ("generation.objective_gradients", generation_gradients),
        ("generation.determinism_and_labels", generation_determinism),
        ("generation.descent_trace", generation_descent_trace),
        ("generation.apx_linear_cost", generation_apx_scaling),
        ("generation.prototype_speedup", generation_prototype_speedup),
        ("finetune.baseline_identity", finetune_baseline_identity),
        ("finetune.fusion", finetune_fusion),
        ("harness.reproducible_report", harness_reproducible),
    ];
    suites.into_iter().map(|(name, run)| timed(name, run)).collect()
}
