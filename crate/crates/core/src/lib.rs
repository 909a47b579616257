//! Quality-control toolkit for surgical-instrument imagery.
//!
//! * [`imaging`]: pixel-exact preprocessing and augmentation transforms
//! * [`dataset`]: labels, annotation records, manifests, splits, synthetic corpora
//! * [`augment`]: the fixed twelve-transform dataset expansion
//! * [`model`]: classifier backends, the early-stopping training loop, a baseline model
//! * [`pipeline`]: two-stage inference with confidence-threshold dispositions
//! * [`metrics`]: classification and detection metrics, latency benchmarking
//! * [`stats`]: chi-square, one-way ANOVA and Levene tests

pub mod augment;
pub mod dataset;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod stats;
