//! Desk-scale laboratory for debiased cross-domain sequential
//! recommendation.
//!
//! The crate bundles five things behind one deterministic CLI:
//!
//! - a small `f64` tensor type with tape-based reverse-mode
//!   differentiation ([`tape`]) and Adam ([`optim`]);
//! - a synthetic interaction generator with known ground-truth ratings,
//!   propensities and exposure masks, plus a CSV loader with the usual
//!   sparsity filtering ([`datagen`]);
//! - sequence encoders and a cross-domain interest-group module that
//!   propagates encoded sequences between domains ([`encoder`],
//!   [`interest`]);
//! - doubly robust training: prediction, imputation and propensity heads
//!   trained in alternating phases ([`model`], [`loss`], [`train`]);
//! - estimator arithmetic and numerical verification of the bias and
//!   tail-bound results the training objective rests on ([`theory`]),
//!   with ranking evaluation in [`eval`].
//!
//! The narrative guide lives in `book/` and is mirrored as doc-tested
//! chapters under [`guide`].

pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod guide;
pub mod interest;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
