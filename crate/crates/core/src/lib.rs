//! Ternary fNIRS task classification (mental arithmetic, motor imagery, idle
//! state).
//!
//! ```text
//! optical density ──mbll──▶ ΔHbO/ΔHbR ──band-pass 0.01–0.09 Hz (zero phase)──▶
//!   epochs −5…25 s ──baseline [−1, 0) s──▶
//!     ├─ ICA(20) per time step ──▶ bidirectional LSTM
//!     ├─ window statistics / band power / temporal means ──▶ baselines, ANN
//!     └─ features ──▶ kernel PCA ──▶ classifier
//! ```
//!
//! [`io`] reads and writes the CSV formats and generates seeded synthetic
//! recordings, [`signal`] holds the preprocessing chain, [`features`] the
//! hand-crafted features, [`dimred`] ICA and kernel PCA, [`nn`] the
//! from-scratch recurrent network and its training loop, [`classifiers`] the
//! linear and shallow baselines and [`eval`] splits and metrics.

pub mod class;
pub mod classifiers;
pub mod dimred;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod numfmt;
pub mod rng;
pub mod signal;

pub use class::Class;
pub use error::{Error, Result};
