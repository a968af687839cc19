//! Desk-scale laboratory for sample-wise feature/classifier alignment.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense matrices, a reverse-mode tape and the seeded RNG.
//! * [`data`]: synthetic cluster datasets and severity-indexed shifts.
//! * [`model`]: MLP feature extractor with batch standardisation and a
//!   bias-free linear classifier, trained into the terminal phase.
//! * [`metrics`]: FCA distances, G-FCA/P-FCA statistics and NC1-NC4.
//! * [`tta`]: the streaming test-time adaptation engine and scenarios.
//! * [`report`]: configuration, manifests, CSV/JSON artifacts and the
//!   experiment orchestration used by the `nclab` binary.
//!
//! The numeric core is generic over [`Scalar`]; everything that touches
//! files or trained models is pinned to `f64` through the aliases below.

mod binio;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod tta;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision matrix, the storage type of every model and dataset.
pub type Matrix = tensor::Matrix<f64>;
/// Single-precision matrix, handy for cheap metric evaluation.
pub type Matrix32 = tensor::Matrix<f32>;
/// Double-precision gradient tape.
pub type Tape = tensor::Tape<f64>;
/// Gradients produced by [`Tape::backward`](tensor::Tape::backward).
pub type Gradients = tensor::Gradients<f64>;
/// Per-sample FCA distance vector in double precision.
pub type FcaVector = metrics::FcaVector<f64>;

/// Tool version stamped into manifests and file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
