//! Kernel patch triage: watch a git repository, keep patches touching the
//! modules you ship, score each one as a likely bug fix, and fold reviewer
//! verdicts back into the training data.
//!
//! The modules follow the flow of a patch:
//!
//! * [`patch`]: commit/diff types and the git text parser
//! * [`ingest`]: commit enumeration over a monitoring window, labeling
//! * [`filter`]: concerned-module path filtering
//! * [`preprocess`]: tokenizers, vocabularies, fixed-shape encodings
//! * [`classifier`]: the neural scorer, its gradients and training loop
//! * [`bundle`]: the deployable model directory
//! * [`pipeline`]: score revision, thresholds, funnel, reports
//! * [`feedback`]: reviewer verdicts and retraining corpora

pub mod bundle;
pub mod classifier;
pub mod feedback;
pub mod filter;
pub mod ingest;
pub mod patch;
pub mod pipeline;
pub mod preprocess;
