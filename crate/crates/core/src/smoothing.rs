//! Laplacian-smoothness embeddings.
//!
//! The embedding minimizes `Σ_i ‖H_i − X_i‖² + λ Σ_i Σ_{j∈N(i)} ‖H_i − H_j‖²`,
//! whose node-centric stationarity condition is the fixed point
//!
//! ```text
//! H_i = (X_i + λ Σ_{j∈N(i)} H_j) / (1 + d_i λ)
//! ```
//!
//! Virtual neighbors enter with weight `λ̃` and fixed features, so they add
//! `λ̃ X_ṽ` to the numerator and `λ̃` to the denominator. The system is
//! strictly diagonally dominant and Jacobi iteration contracts in the
//! max-norm.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingParams {
    /// Smoothness weight on real edges.
    pub lambda: f64,
    /// Weight on edges to virtual nodes.
    pub lambda_tilde: f64,
    pub max_iters: usize,
    /// Stop once the max per-coordinate change of a sweep is at most this.
    pub tolerance: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_tilde: 1.0,
            max_iters: 10_000,
            tolerance: 1e-8,
        }
    }
}

impl SmoothingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda must be finite and nonnegative"));
        }
        if !(self.lambda_tilde >= 0.0 && self.lambda_tilde.is_finite()) {
            return Err(Error::param("lambda_tilde must be finite and nonnegative"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::param("tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Node embeddings (row = node).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array2<f64>);

impl Embedding {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding entry".into()));
        }
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0
            .row(i)
            .to_slice()
            .expect("embeddings are stored in standard layout")
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Solves the smoothness fixed point over every node of `graph`, treating
/// all nodes (virtual or not) as unknowns. Starts from `H = X`.
pub fn smooth(graph: &Graph, x: &FeatureMatrix, params: &SmoothingParams) -> Result<Embedding> {
    if x.rows() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            actual: x.rows(),
            context: "feature rows vs node count".into(),
        });
    }
    solve(graph, x.view(), None, graph.node_count(), params)
}

/// Solves for the original nodes of a graph carrying virtual nodes. The
/// virtual nodes' features are constants; `x` holds original-node rows only
/// and `virtual_features` one row per virtual node, in index order.
pub fn smooth_with_virtual(
    graph: &Graph,
    x: ArrayView2<'_, f64>,
    virtual_features: ArrayView2<'_, f64>,
    params: &SmoothingParams,
) -> Result<Embedding> {
    let originals = graph.original_count();
    if x.nrows() != originals {
        return Err(Error::DimensionMismatch {
            expected: originals,
            actual: x.nrows(),
            context: "original feature rows".into(),
        });
    }
    if virtual_features.nrows() != graph.virtual_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.virtual_count(),
            actual: virtual_features.nrows(),
            context: "virtual feature rows".into(),
        });
    }
    if graph.virtual_count() > 0 && virtual_features.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            actual: virtual_features.ncols(),
            context: "virtual feature width".into(),
        });
    }
    solve(graph, x, Some(virtual_features), originals, params)
}

/// Jacobi sweeps over nodes `0..unknowns`; neighbors at index `>= unknowns`
/// read their (fixed) row from `fixed`.
fn solve(
    graph: &Graph,
    x: ArrayView2<'_, f64>,
    fixed: Option<ArrayView2<'_, f64>>,
    unknowns: usize,
    params: &SmoothingParams,
) -> Result<Embedding> {
    params.validate()?;
    let dim = x.ncols();
    let lambda = params.lambda;
    let lambda_tilde = params.lambda_tilde;
    let x = x.as_standard_layout();
    let fixed = fixed.map(|f| match f.nrows() {
        0 => Array2::zeros((0, f.ncols())),
        _ => f.as_standard_layout().into_owned(),
    });

    let mut current = x.to_owned();
    let mut next = Array2::<f64>::zeros((unknowns, dim));
    let mut acc = vec![0.0; dim];
    let mut residual = f64::INFINITY;

    for _ in 0..params.max_iters {
        residual = 0.0;
        for i in 0..unknowns {
            acc.fill(0.0);
            let mut real = 0usize;
            let mut virt = 0usize;
            for &j in graph.neighbors(i) {
                if j < unknowns {
                    real += 1;
                    for (a, h) in acc.iter_mut().zip(current.row(j)) {
                        *a += h;
                    }
                } else {
                    virt += 1;
                }
            }
            let mut denom = 1.0 + real as f64 * lambda;
            let mut row: Vec<f64> = x
                .row(i)
                .iter()
                .zip(&acc)
                .map(|(xi, s)| xi + lambda * s)
                .collect();
            if virt > 0 {
                let fixed = fixed.as_ref().expect("virtual neighbor without fixed rows");
                acc.fill(0.0);
                for &j in graph.neighbors(i).iter().filter(|&&j| j >= unknowns) {
                    for (a, f) in acc.iter_mut().zip(fixed.row(j - unknowns)) {
                        *a += f;
                    }
                }
                for (r, s) in row.iter_mut().zip(&acc) {
                    *r += lambda_tilde * s;
                }
                denom += virt as f64 * lambda_tilde;
            }
            for (k, r) in row.into_iter().enumerate() {
                let v = r / denom;
                residual = f64::max(residual, (v - current[[i, k]]).abs());
                next[[i, k]] = v;
            }
        }
        std::mem::swap(&mut current, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual <= params.tolerance {
            return Embedding::new(current);
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iters,
        residual,
    })
}

/// Max per-coordinate violation of the fixed-point equations by `h`
/// (rows for original nodes). Virtual neighbors read from `virtual_features`.
pub fn fixed_point_residual(
    graph: &Graph,
    x: ArrayView2<'_, f64>,
    virtual_features: Option<ArrayView2<'_, f64>>,
    h: ArrayView2<'_, f64>,
    params: &SmoothingParams,
) -> f64 {
    let unknowns = h.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..unknowns {
        let mut num = x.row(i).to_owned();
        let mut denom = 1.0;
        for &j in graph.neighbors(i) {
            if j < unknowns {
                num.scaled_add(params.lambda, &h.row(j));
                denom += params.lambda;
            } else if let Some(vf) = virtual_features {
                num.scaled_add(params.lambda_tilde, &vf.row(j - unknowns));
                denom += params.lambda_tilde;
            }
        }
        for (n, hv) in num.iter().zip(h.row(i)) {
            worst = worst.max((n / denom - hv).abs());
        }
    }
    worst
}

/// Mixing weight `w` of a virtual node on a target after `prior_set_size`
/// earlier virtual nodes: `p λ̃ / (1 + d λ + (prior_set_size + 1) λ̃)`.
pub fn update_weight(degree: f64, p: f64, prior_set_size: usize, params: &SmoothingParams) -> f64 {
    p * edge_coefficient(degree, prior_set_size, params)
}

/// `λ̃ / (1 + d λ + (prior_set_size + 1) λ̃)`, the mixing weight at `p = 1`.
pub fn edge_coefficient(degree: f64, prior_set_size: usize, params: &SmoothingParams) -> f64 {
    params.lambda_tilde
        / (1.0 + degree * params.lambda + (prior_set_size as f64 + 1.0) * params.lambda_tilde)
}

/// Expected embedding of a node after attaching one virtual node with edge
/// probability `p`: `(1 − w) H_i + w X_ṽ`, `w = p λ̃ / (1 + d_i λ + λ̃)`.
pub fn expected_update(
    h_i: &[f64],
    x_virtual: &[f64],
    degree: f64,
    p: f64,
    params: &SmoothingParams,
) -> Vec<f64> {
    expected_update_after_set(h_i, x_virtual, degree, p, 0, params)
}

/// Expected update when `prior_set_size` virtual nodes were attached before
/// this one; the extra nodes enlarge the denominator.
pub fn expected_update_after_set(
    h_i: &[f64],
    x_virtual: &[f64],
    degree: f64,
    p: f64,
    prior_set_size: usize,
    params: &SmoothingParams,
) -> Vec<f64> {
    let w = update_weight(degree, p, prior_set_size, params);
    h_i.iter()
        .zip(x_virtual)
        .map(|(h, x)| (1.0 - w) * h + w * x)
        .collect()
}
