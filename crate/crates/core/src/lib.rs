//! Split inference between a lightweight boosted-tree client model and a
//! fused classifier ensemble on a server, with a trainable routing unit that
//! decides per sample where inference happens.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decision_unit;
pub mod error;
pub mod fusion;
pub mod gbdt;
pub mod pipeline;
pub mod posterior;
pub mod preprocess;
pub mod synthetic;

pub use data::{split_dataset, Dataset, Sample, Split, SplitSpec};
pub use error::{Error, Result};
pub use posterior::{argmax_class, PosteriorVector};
