//! DeepCoDA: log-bottleneck networks that learn normalization-free
//! log-contrasts from compositional data, with a self-explanation head that
//! produces sample-specific weights.
//!
//! The crate also carries the synthetic case/control generators, LASSO
//! logistic baselines, the split/AUC benchmark protocol and interpretability
//! reports.

pub mod coda;
pub mod error;
pub mod eval;
pub mod explain;
pub mod io;
pub mod lasso;
pub mod matrix;
pub mod net;
pub mod par;
pub mod synth;
pub mod train;

pub use coda::{AbundanceKind, CompositionMatrix, LabelVector};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use net::{DeepCodaParams, ForwardTrace, Head};
pub use train::{TrainConfig, TrainReport};
