//! Spatio-temporal biphoton state of collinear SPDC in the Laguerre-Gaussian basis.
//!
//! The crate evaluates coincidence amplitudes of photon pairs produced by
//! spontaneous parametric down-conversion, projected onto Laguerre-Gaussian
//! signal/idler modes at given frequency detunings. Two independent routes are
//! provided: a closed-form expression built from regularized Gauss
//! hypergeometric functions ([`amplitude`]) and a brute-force multi-dimensional
//! quadrature of the underlying overlap integral ([`oracle`]) used to validate
//! the closed form. On top of the amplitudes sit state assembly and analysis
//! (reduced density matrices, purity, Schmidt numbers, spectral filtering) in
//! [`state`], and pump-beam engineering of OAM-entangled target states in
//! [`engineering`].
//!
//! All public interfaces use strict SI units (meters, seconds, rad/s, rad/m).

pub mod amplitude;
pub mod config;
pub mod dispersion;
pub mod engineering;
pub mod lgmodes;
pub mod oracle;
pub mod quadrature;
pub mod specialfn;
pub mod state;

/// Complex scalar used throughout the crate.
pub type Complex = num_complex::Complex64;

/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;

pub use amplitude::{coincidence_amplitude, AmplitudeRequest, PumpSpec, SpectralModel};
pub use dispersion::{BeamGeometry, CrystalSpec};
pub use lgmodes::ModeIndex;
