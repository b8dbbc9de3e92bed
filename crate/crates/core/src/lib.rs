//! Linear HydroNets: forecasting water levels over a river network by passing
//! per-basin temporal embeddings from sources down to the drain.
//!
//! The crate also contains a flat linear baseline, the evaluation metrics, a
//! synthetic basin-network generator and the experiment runners used by the
//! `hydronets` binary.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod region;
pub mod training;
