//! Plain-text dataset formats.
//!
//! - edges: `u<TAB>v` per line, `#` comments and blank lines ignored
//! - features: header-less comma-separated rows, row `i` is node `i`
//! - labels: `node<TAB>class` per line; absent nodes are unlabeled

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::{Dataset, FeatureMatrix, Graph, LabelAssignment};
use crate::error::{Error, Result};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Yields `(1-based line number, trimmed content)` for non-blank, non-comment lines.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_pair(path: &Path, lineno: usize, line: &str, what: &str) -> Result<(usize, usize)> {
    let mut fields = line.split_whitespace();
    let mut next = |name: &str| -> Result<usize> {
        let tok = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, format!("missing {name} in {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| parse_err(path, lineno, format!("invalid {name} `{tok}`")))
    };
    let a = next("first field")?;
    let b = next("second field")?;
    if fields.next().is_some() {
        return Err(parse_err(path, lineno, format!("trailing fields in {what}")));
    }
    Ok((a, b))
}

pub fn read_edges(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    content_lines(&text)
        .map(|(n, l)| parse_pair(path, n, l, "edge"))
        .collect()
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut dim = None;
    let mut flat = Vec::new();
    let mut rows = 0;
    for (lineno, line) in content_lines(&text) {
        let start = flat.len();
        for tok in line.split(',') {
            let tok = tok.trim();
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("invalid number `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value `{tok}`")));
            }
            flat.push(v);
        }
        let width = flat.len() - start;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {d} columns, found {width}"),
                ))
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, dim.unwrap_or(0)), flat)
        .map_err(|e| Error::param(e.to_string()))?;
    FeatureMatrix::new(values)
}

/// Raw `(node, class)` pairs in file order.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    content_lines(&text)
        .map(|(n, l)| parse_pair(path, n, l, "label"))
        .collect()
}

/// Loads a dataset, inferring the class count as `1 + max class id`.
pub fn load_graph(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<Dataset> {
    load_graph_with_classes(edge_path, feature_path, label_path, None)
}

/// Loads a dataset. With `num_classes` given, any label id `>= num_classes` is an error.
pub fn load_graph_with_classes(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let edges = read_edges(&edge_path)?;
    let features = read_features(&feature_path)?;
    let raw_labels = read_labels(&label_path)?;

    let max_edge = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    let max_label = raw_labels.iter().map(|&(n, _)| n + 1).max().unwrap_or(0);
    let node_count = features.rows().max(max_edge).max(max_label);
    if features.rows() != node_count {
        return Err(Error::DimensionMismatch {
            expected: node_count,
            actual: features.rows(),
            context: format!(
                "feature rows in {} vs node count implied by edges/labels",
                feature_path.as_ref().display()
            ),
        });
    }

    let inferred = raw_labels.iter().map(|&(_, c)| c + 1).max().unwrap_or(0);
    let classes = num_classes.unwrap_or(inferred);
    let mut labels = BTreeMap::new();
    for &(node, class) in &raw_labels {
        if class >= classes {
            return Err(Error::InvalidLabel(format!(
                "node {node} has class {class} >= {classes}"
            )));
        }
        if let Some(prev) = labels.insert(node, class) {
            if prev != class {
                return Err(Error::InvalidLabel(format!(
                    "node {node} labeled both {prev} and {class}"
                )));
            }
        }
    }

    let graph = Graph::from_edges(node_count, edges)?;
    let labels = LabelAssignment::new(classes, labels)?;
    Ok(Dataset {
        graph,
        features,
        labels,
    })
}

fn write(path: &Path, body: String) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn save_edges(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (u, v) in graph.edges() {
        let _ = writeln!(out, "{u}\t{v}");
    }
    write(path.as_ref(), out)
}

/// Writes a matrix as header-less CSV using shortest round-trip float formatting.
pub fn save_matrix(matrix: ArrayView2<'_, f64>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), format_matrix(matrix))
}

pub(crate) fn format_matrix(matrix: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    save_matrix(features.view(), path)
}

pub fn save_labels(labels: &LabelAssignment, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (n, c) in labels.iter() {
        let _ = writeln!(out, "{n}\t{c}");
    }
    write(path.as_ref(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn file(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn minimal_two_node_graph() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "0\t1\n");
        let x = file(&dir, "x.csv", "1,0\n0,1\n");
        let y = file(&dir, "y.tsv", "0\t0\n1\t1\n");
        let ds = load_graph(&e, &x, &y).unwrap();
        assert_eq!(ds.graph.node_count(), 2);
        assert_eq!(ds.graph.edge_count(), 1);
        assert_eq!(ds.labels.num_classes(), 2);
    }

    #[test]
    fn empty_edge_file_gives_isolated_nodes() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "# no edges\n");
        let x = file(&dir, "x.csv", "1\n2\n3\n");
        let y = file(&dir, "y.tsv", "2\t0\n");
        let ds = load_graph(&e, &x, &y).unwrap();
        assert_eq!(ds.graph.node_count(), 3);
        assert_eq!(ds.graph.edge_count(), 0);
        assert_eq!(ds.labels.len(), 1);
        assert!(!ds.labels.is_labeled(0));
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "# header\n0\t1\n1\tx\n");
        let x = file(&dir, "x.csv", "1\n2\n");
        let y = file(&dir, "y.tsv", "0\t0\n");
        match load_graph(&e, &x, &y).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_feature_rows_rejected() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "");
        let x = file(&dir, "x.csv", "1,2\n3\n");
        let y = file(&dir, "y.tsv", "0\t0\n");
        match load_graph(&e, &x, &y).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("columns"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_beyond_declared_class_count_rejected() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "0\t1\n");
        let x = file(&dir, "x.csv", "1\n2\n");
        let y = file(&dir, "y.tsv", "0\t0\n1\t3\n");
        let err = load_graph_with_classes(&e, &x, &y, Some(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel(_)));
    }

    #[test]
    fn edges_beyond_feature_rows_rejected() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "0\t5\n");
        let x = file(&dir, "x.csv", "1\n2\n");
        let y = file(&dir, "y.tsv", "0\t0\n");
        assert!(matches!(
            load_graph(&e, &x, &y).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn directed_input_is_symmetrized() {
        let dir = TempDir::new().unwrap();
        let e = file(&dir, "e.tsv", "0\t1\n1\t0\n2\t1\n");
        let x = file(&dir, "x.csv", "1\n2\n3\n");
        let y = file(&dir, "y.tsv", "0\t0\n");
        let ds = load_graph(&e, &x, &y).unwrap();
        assert_eq!(ds.graph.edge_count(), 2);
        assert!(ds.graph.has_edge(1, 2));
    }
}
