//! Filtered randomized benchmarking with random circuits.
//!
//! Superoperators are real matrices in the normalized Weyl (Pauli) basis; see
//! [`weyl`] for the index convention.

// `!(x >= 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod analysis;
pub mod clifford;
pub mod ensembles;
pub mod error;
pub mod frame;
pub mod group;
pub mod haar;
pub mod linalg;
pub mod local;
pub mod noise;
pub mod rb_engine;
pub mod spectra;
pub mod stabilizer;
pub mod states;
pub mod superop;
pub mod weyl;

pub use clifford::{CliffordTableau, Pauli};
pub use error::{Error, Result};
pub use group::{GroupElement, GroupTag, IrrepKind, IrrepLabel, IrrepSpec};
pub use linalg::{LinearMap, SparseApply};
pub use superop::Superop;
pub use weyl::WeylLabel;
