//! Downstream classifier, link predictor and confidence scoring.

mod checkpoint;
pub mod classifier;
pub mod confidence;
mod gradcheck;
pub mod link;

pub use classifier::{
    argmax, fit_classifier, softmax, train_classifier, ClassifierConfig, LinearClassifier,
};
pub use confidence::{
    build_confidence_state, confidence, confidence_at, confidence_grad, ConfidenceMetric,
    ConfidenceState,
};
pub use gradcheck::grad_check;
pub use link::{train_link_predictor, LinkConfig, LinkFit, LinkPredictor};
