//! Comparison rejectors: fixed peak-to-peak thresholding and Isolation Forest.

pub mod iforest;
pub mod p2p;

pub use iforest::{iforest_fit, iforest_reject, IForest, IForestConfig};
pub use p2p::{p2p_reject, peak_to_peak, DEFAULT_P2P_UV};
