//! Metric learning from few labeled classes plus unlabeled data.
//!
//! An embedding network is first meta-trained on label-disjoint episodes,
//! learning both a feature space and a similarity space defined by distances
//! to per-class references. The similarity space then pseudo-labels pairs of
//! unlabeled samples for a second, semi-supervised phase.

pub mod datasets;
pub mod embed;
pub mod episodes;
pub mod evalmetrics;
pub mod numcore;
pub mod objectives;
pub mod pseudolabel;
pub mod trainer;

mod fsutil;

pub use fsutil::atomic_write;
