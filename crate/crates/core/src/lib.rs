//! Spectrum demodulation for swept spin-resonance magnetometry.
//!
//! A resonance is swept periodically with a saw-tooth drive; the photon-count
//! trace is reduced to a few Fourier harmonics of the sweep rate, whose phase
//! gives the resonance frequency and whose magnitudes give the line width,
//! contrast and count rate.

pub mod bench;
pub mod demod;
pub mod error;
pub mod estimators;
pub mod gradiometry;
pub mod io;
pub mod lineshape;
pub mod rng;
pub mod scan;
pub mod simulator;
pub mod theory;
pub mod tracker;

pub use error::{Error, Result};
pub use lineshape::{GyromagneticRatio, LineShape, Lorentzian, ResonanceParams};
pub use simulator::{PhotonTrace, SweepConfig};
