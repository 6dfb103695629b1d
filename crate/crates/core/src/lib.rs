//! Circuit parameter design for synchronous buck converters.
//!
//! The crate covers the whole design flow: discrete component catalogs
//! ([`catalog`]), a built-in circuit evaluation engine ([`convsim`]),
//! batch-normalized neural-network surrogates ([`surrogate`]), a penalty
//! fitness genetic algorithm ([`evo`]) and the orchestration that ties them
//! together ([`designer`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod convsim;
pub mod designer;
pub mod error;
pub mod evo;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
