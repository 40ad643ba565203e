//! Zero-shot classification by crafting frozen softmax rules.
//!
//! A feature extractor is trained against fixed class rules, either the seen class
//! embeddings themselves or visual prototypes of seen classes. Unseen classes get
//! rules of the same kind, and test samples are classified by an argmax over the
//! combined pool. For the generalized setting, a seen/unseen discriminator trained
//! on mixup negatives rebalances the two groups of scores.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod config;
pub mod crafting;
pub mod dataio;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rebalance;

pub use error::{Error, ErrorKind, Result};
