//! Spatial-decay single number quantities of open-plan offices and their
//! measurement uncertainty.
//!
//! The three quantities are derived from the regression of the A-weighted
//! speech level against `log2` of the source distance along a measurement
//! path:
//!
//! * `D2S`, the level decrease per doubling of distance, dB(A);
//! * `LpAS4m`, the fitted level at 4 m, dB(A);
//! * `rc`, the comfort distance where the fitted level crosses a threshold
//!   (45 dB(A) by default), m.
//!
//! Uncertainties are available through closed-form propagation
//! ([`analytic`]) and a Monte-Carlo emulation of complete measurements
//! ([`monte_carlo`]) driven by a sound-field provider ([`field`]).
//! Several paths of one acoustic area are compared and pooled in [`area`].

pub mod analytic;
pub mod area;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod monte_carlo;
pub mod spectrum;

pub use error::{Error, Result};
pub use metrics::{compute_snq, DecayData, MeasurementPath, MeasurementPosition, SnqOptions, SnqSet};
pub use spectrum::OctaveSpectrum;
