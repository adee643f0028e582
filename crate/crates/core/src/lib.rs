//! Saturation-based characterisation of free-space light coupling to a single
//! trapped ion sitting in the focus of a deep parabolic mirror.
//!
//! The crate is organised bottom-up:
//!
//! - [`tls`]: steady-state two-level response, scattering rates and the power
//!   needed to reach an upper-level population of 1/4.
//! - [`mirror`]: parabola ray mapping and dipole-weighted solid angle.
//! - [`focal`]: apodisation of a radially polarised doughnut beam, dipole
//!   overlap, vector focal fields and FWHM metrology.
//! - [`coupling`]: the coupling-efficiency budget and its extraction from
//!   measured saturation powers.
//! - [`satfit`]: background handling and weighted Levenberg-Marquardt fits of
//!   saturation curves.
//! - [`scan`]: forward simulation and reconstruction of saturation-based focal
//!   scans.
//!
//! Powers are in watts and lengths in metres throughout; picowatts only
//! appear in CSV/JSON columns whose names say so.

pub mod constants;
pub mod coupling;
mod error;
pub mod focal;
pub mod mirror;
#[cfg(test)]
mod oracle;
pub mod quadrature;
pub mod satfit;
pub mod scan;
pub mod special;
pub mod tls;

pub use error::{Error, Result};

/// Watts per picowatt.
pub const PICOWATT: f64 = 1e-12;
