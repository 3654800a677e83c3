//! Graph, feature and label storage.
//!
//! Graphs are undirected and unweighted. Node indices are dense and 0-based.
//! Virtual (generated) nodes are only ever appended, so they always occupy
//! the tail of the index range.

pub(crate) mod io;
mod sbm;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub use io::{
    load_graph, load_graph_with_classes, read_edges, read_features, read_labels, save_edges,
    save_features, save_labels, save_matrix,
};
pub use sbm::{sbm_generate, SbmParams};

/// Sparse undirected graph with per-node virtual flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    virtual_flags: Vec<bool>,
    original_count: usize,
    edge_count: usize,
}

impl Graph {
    /// Edgeless graph on `node_count` original nodes.
    pub fn new(node_count: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); node_count],
            virtual_flags: vec![false; node_count],
            original_count: node_count,
            edge_count: 0,
        }
    }

    /// Builds a graph from possibly directed, possibly repeated pairs.
    /// Pairs are symmetrized, duplicates collapse and self-loops are dropped.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut graph = Self::new(node_count);
        for (u, v) in edges {
            graph.add_edge(u, v)?;
        }
        Ok(graph)
    }

    /// Inserts the undirected edge `{u, v}`. Returns `false` when the edge
    /// already existed or `u == v`.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        let n = self.node_count();
        for node in [u, v] {
            if node >= n {
                return Err(Error::NodeOutOfRange {
                    node,
                    node_count: n,
                });
            }
        }
        if u == v {
            return Ok(false);
        }
        match self.adjacency[u].binary_search(&v) {
            Ok(_) => Ok(false),
            Err(pos) => {
                self.adjacency[u].insert(pos, v);
                let pos_v = self.adjacency[v].binary_search(&u).unwrap_err();
                self.adjacency[v].insert(pos_v, u);
                self.edge_count += 1;
                Ok(true)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Number of non-virtual nodes. Stable once the first virtual node exists.
    pub fn original_count(&self) -> usize {
        self.original_count
    }

    pub fn virtual_count(&self) -> usize {
        self.node_count() - self.original_count()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Sorted neighbor list.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.node_count() && self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn is_virtual(&self, node: usize) -> bool {
        self.virtual_flags[node]
    }

    pub fn virtual_flags(&self) -> &[bool] {
        &self.virtual_flags
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Appends a virtual node wired to existing original nodes and returns its index.
    pub fn push_virtual(&mut self, edges: &[usize]) -> Result<usize> {
        let originals = self.original_count();
        for &e in edges {
            if e >= originals {
                return Err(Error::NodeOutOfRange {
                    node: e,
                    node_count: originals,
                });
            }
        }
        let id = self.node_count();
        self.adjacency.push(Vec::new());
        self.virtual_flags.push(true);
        for &e in edges {
            self.add_edge(id, e)?;
        }
        Ok(id)
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = Vec::new();
        let mut components = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }
}

/// Dense node-by-feature matrix; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {bad}")));
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                    context: format!("feature row {i}"),
                });
            }
            flat.extend_from_slice(row);
        }
        let values = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::param(e.to_string()))?;
        Self::new(values)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
                context: "appended feature row".into(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("appended feature row".into()));
        }
        self.0
            .push(Axis(0), Array1::from(row.to_vec()).view())
            .map_err(|e| Error::param(e.to_string()))
    }
}

/// Class labels for the labeled subset of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    num_classes: usize,
    labels: BTreeMap<usize, usize>,
}

impl LabelAssignment {
    pub fn new(num_classes: usize, labels: BTreeMap<usize, usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidLabel("labeled set is empty".into()));
        }
        if let Some((node, class)) = labels.iter().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidLabel(format!(
                "node {node} has class {class} >= {num_classes}"
            )));
        }
        Ok(Self {
            num_classes,
            labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels.get(&node).copied()
    }

    pub fn is_labeled(&self, node: usize) -> bool {
        self.labels.contains_key(&node)
    }

    /// Labeled nodes in ascending index order.
    pub fn labeled_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&n, &c)| (n, c))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Restriction to `nodes`; nodes without a label are skipped.
    pub fn restrict(&self, nodes: &[usize]) -> Result<Self> {
        let labels = nodes
            .iter()
            .filter_map(|&n| self.label(n).map(|c| (n, c)))
            .collect();
        Self::new(self.num_classes, labels)
    }

    pub fn max_node(&self) -> Option<usize> {
        self.labels.keys().next_back().copied()
    }
}

/// A graph with its node features and (partial) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelAssignment,
}

/// Appends a virtual node with the given feature row and edges to original nodes.
/// Returns the new node's index.
pub fn add_virtual_node(
    graph: &mut Graph,
    features: &mut FeatureMatrix,
    node_feature: &[f64],
    edges: &[usize],
) -> Result<usize> {
    if features.rows() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            actual: features.rows(),
            context: "feature rows vs node count".into(),
        });
    }
    if node_feature.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: features.dim(),
            actual: node_feature.len(),
            context: "virtual node feature".into(),
        });
    }
    // validate before mutating either structure
    let originals = graph.original_count();
    if let Some(&bad) = edges.iter().find(|&&e| e >= originals) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            node_count: originals,
        });
    }
    features.push_row(node_feature)?;
    graph.push_virtual(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn from_edges_symmetrizes_and_dedups() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let err = Graph::from_edges(2, [(0, 2)]).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { node: 2, .. }));
    }

    #[test]
    fn virtual_node_without_edges_is_isolated() {
        let mut g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let mut x = FeatureMatrix::new(array![[1.0], [2.0]]).unwrap();
        let id = add_virtual_node(&mut g, &mut x, &[3.0], &[]).unwrap();
        assert_eq!(id, 2);
        assert_eq!(g.degrees(), vec![1, 1, 0]);
        assert_eq!(x.rows(), 3);
        assert!(g.is_virtual(2));
    }

    #[test]
    fn virtual_node_degree_bookkeeping() {
        let mut g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let mut x = FeatureMatrix::new(array![[1.0], [2.0]]).unwrap();
        add_virtual_node(&mut g, &mut x, &[0.5], &[0, 1]).unwrap();
        assert_eq!(g.degrees(), vec![2, 2, 2]);
        assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
    }

    #[test]
    fn five_virtual_nodes_sit_at_the_tail() {
        let mut g = Graph::new(4);
        let mut x = FeatureMatrix::new(Array2::zeros((4, 2))).unwrap();
        for k in 0..5 {
            add_virtual_node(&mut g, &mut x, &[k as f64, 0.0], &[k % 4]).unwrap();
        }
        let flags = g.virtual_flags();
        assert_eq!(flags.iter().filter(|f| **f).count(), 5);
        assert!(flags[..4].iter().all(|f| !f));
        assert!(flags[4..].iter().all(|f| *f));
        assert_eq!(g.original_count(), 4);
    }

    #[test]
    fn virtual_edges_must_target_original_nodes() {
        let mut g = Graph::new(2);
        let mut x = FeatureMatrix::new(Array2::zeros((2, 1))).unwrap();
        add_virtual_node(&mut g, &mut x, &[0.0], &[0]).unwrap();
        let err = add_virtual_node(&mut g, &mut x, &[0.0], &[2]).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { node: 2, .. }));
        assert_eq!(g.node_count(), 3);
        assert_eq!(x.rows(), 3);
    }

    #[test]
    fn virtual_feature_dimension_checked() {
        let mut g = Graph::new(2);
        let mut x = FeatureMatrix::new(Array2::zeros((2, 2))).unwrap();
        let err = add_virtual_node(&mut g, &mut x, &[0.0], &[]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn label_assignment_rejects_out_of_range_class() {
        let err = LabelAssignment::new(2, BTreeMap::from([(0, 2)])).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel(_)));
        assert!(LabelAssignment::new(2, BTreeMap::new()).is_err());
    }

    #[test]
    fn components_of_edgeless_graph() {
        assert_eq!(Graph::new(3).component_count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn degree_sum_is_twice_edge_count(
                edges in prop::collection::vec((0usize..12, 0usize..12), 0..40),
                virtuals in prop::collection::vec(prop::collection::vec(0usize..12, 0..6), 0..5),
            ) {
                let mut g = Graph::from_edges(12, edges).unwrap();
                let mut x = FeatureMatrix::new(Array2::zeros((12, 1))).unwrap();
                for v in virtuals {
                    add_virtual_node(&mut g, &mut x, &[1.0], &v).unwrap();
                    prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
                }
                for u in 0..g.node_count() {
                    prop_assert!(!g.has_edge(u, u));
                    prop_assert_eq!(g.degree(u), g.neighbors(u).len());
                }
            }
        }
    }
}
