//! Spectral stationarity scoring, TIFO frequency re-weighting, normalization
//! baselines, linear forecasting backbones and distribution-shift metrics.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fft;
pub mod models;
pub mod nn;
pub mod report;
pub mod shift;
pub mod spectral;
pub mod stationarity;
pub mod tifo;
pub mod training;

pub use error::{Error, Result};
