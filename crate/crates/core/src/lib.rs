//! Fast automatic artifact rejection for EEG epochs, plus the evaluation
//! harness used to measure how rejection changes motor-imagery decoding.

pub mod baseline;
pub mod bench;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod faar;
pub mod features;
pub mod io;
pub mod knee;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod rng;
pub mod scenario;
pub mod sqi;
pub mod synth;

pub use error::{FaarError, Result};
pub use model::{EpochTensor, Method, Recording, RejectionDecision, WindowGrid};
