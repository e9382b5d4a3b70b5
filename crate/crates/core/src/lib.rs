//! Unrolled multi-prior reconstruction of undersampled dynamic multi-coil MRI.
//!
//! The pipeline alternates an image-domain step (x-t), a temporal-frequency
//! step (x-f) and a calibrated k-space interpolation kernel (k-t), fusing
//! their k-space predictions every iteration.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod ktc;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod prior_kt;
pub mod prior_xf;
pub mod prior_xt;
pub mod sampling;
pub mod sensitivity;
pub mod transforms;

pub use data::{AcsRange, ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, TemporalSpectrum, C64};
pub use error::{Error, Result};
