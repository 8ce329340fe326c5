//! Flagging echosounder pings whose automatic bottom line needs expert correction.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`echogram`]: the Sv matrix, its `.echg` codec and the formatting steps
//!   (row trim, no-bottom filter, NaN fill, per-depth standardization).
//! - [`synthgen`]: deterministic synthetic surveys with ground truth and the
//!   usual detector failure modes (plankton over the bottom, transducer
//!   offset, soft bottom).
//! - [`bottomline`]: max-gradient bottom detection, weak/strong labeling and
//!   the threshold sweep.
//! - [`learn`]: random forest, linear SVM, feed-forward and 1-D convolutional
//!   networks, trained from scratch.
//! - [`bayesopt`]: Gaussian-process Bayesian optimization with expected
//!   improvement.
//! - [`harness`]: dataset construction, scaling and cross-domain experiments,
//!   and per-ping flagging for review.

pub mod bayesopt;
pub mod bottomline;
pub mod echogram;
pub mod harness;
pub mod learn;
pub mod rng;
pub mod synthgen;

pub use bottomline::{LabelingConfig, PingLabel};
pub use echogram::{BottomRecord, Echogram, StandardizationStats};
pub use learn::{Dataset, ModelSpec, TrainConfig, TrainedModel};
