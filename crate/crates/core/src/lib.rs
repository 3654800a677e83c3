//! Virtual-node generation for node classification on sparsely labeled graphs.
//!
//! The pipeline smooths node features over the graph, trains a linear
//! classifier and a pairwise link predictor, then greedily synthesizes labeled
//! virtual nodes that raise classifier confidence on the least confident
//! unlabeled nodes. The virtual nodes are wired into the graph, embeddings are
//! re-solved, and the classifier is retrained on real plus generated labels.
//!
//! Module map:
//!
//! - [`graph`]: adjacency storage, features, labels, file formats, SBM generator
//! - [`smoothing`]: Laplacian-smoothness solver and the expected-update algebra
//! - [`models`]: linear classifier, link predictor, confidence scores, grad checks
//! - [`generation`]: greedy virtual-node synthesis and its heuristics
//! - [`finetune`]: sessions, graph augmentation, retraining, fusion, evaluation
//! - [`harness`]: experiment configuration, label splits, reports
//! - [`verify`]: executable property suites used by `selftest`

pub mod error;
pub mod finetune;
pub mod generation;
pub mod graph;
pub mod harness;
pub mod models;
pub mod smoothing;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Dataset, FeatureMatrix, Graph, LabelAssignment};
pub use smoothing::{Embedding, SmoothingParams};
