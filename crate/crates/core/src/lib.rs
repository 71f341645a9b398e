//! Continual unsupervised domain adaptation of a small semantic segmenter
//! through class-conditional feature-statistics style transfer.
//!
//! Labeled source images are re-rendered in the per-class style of each
//! incoming unlabeled target domain. The segmenter is fine-tuned on the
//! re-rendered images. Styles of earlier domains are kept as compact
//! per-class moments and replayed to limit forgetting.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the filesystem live in the `cace` companion crate.
#![no_std]
// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod feature_stats;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod segmenter;
pub mod style_memory;
pub mod synth_domains;
pub mod tensor;
pub mod trainer;
pub mod transfer_net;

pub use error::{Error, Result};
pub use feature_stats::{ClassMoments, LayerMoments, Moments, DEFAULT_EPS};
pub use tensor::{FeatureMap, LabelMap};
