//! Simulation of NLOS localization through a passive frequency-selective
//! metasurface (metaprism).
//!
//! A metaprism is a fixed reflectarray whose cells apply a reflection phase
//! that grows linearly with the frequency offset from the carrier. Different
//! OFDM subcarriers of a user's uplink signal are therefore reflected toward
//! different angles, and the base station can infer the user's angle (and,
//! with a randomized phase design, the full position) by matching the
//! received per-subcarrier profile against a database of precomputed
//! profiles on a spatial test grid.
//!
//! The crate is organized along the processing chain:
//!
//! - [`geometry`]: positions, angle pairs, direction cosines.
//! - [`metaprism`]: cell grid and phase-slope coefficient design
//!   (beamsteering and random).
//! - [`arrayfactor`]: far-field equivalent array factor and the closed-form
//!   per-subcarrier reflection-angle predictor.
//! - [`channel`]: spherical-wave per-cell links, cascade gain, Ricean
//!   specular/diffuse split, thermal noise.
//! - [`estimator`]: fingerprint database and maximum-likelihood grid search.
//! - [`experiments`]: scenarios, Monte Carlo campaigns, ECDF utilities.

pub mod arrayfactor;
pub mod channel;
pub mod estimator;
pub mod experiments;
pub mod geometry;
pub mod hashing;
pub mod metaprism;

use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical or physical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input is degenerate (zero-length vector, coincident points).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A cell or subcarrier index is out of range.
    #[error("index {index} out of range (valid 0..{len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// A fingerprint database does not match the configuration or metaprism
    /// that produced the received profile.
    #[error("stale fingerprint database: {0}")]
    StaleDatabase(String),

    /// A test grid or database does not cover the requested positions.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// An inconsistent run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A file in one of the crate's own text or binary formats failed to parse.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Reference noise temperature, K.
pub const T0_KELVIN: f64 = 290.0;
