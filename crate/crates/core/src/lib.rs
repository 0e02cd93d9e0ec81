//! Generalized Student-t mixture models fitted by variational Bayes, with a
//! simulator for LPI radar pulse-compression waveforms and an STFT/PCA
//! feature pipeline.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod io;
pub mod mixture;
pub mod numkernel;
pub mod seed;
pub mod waveform;

pub use error::{Error, Result};
