//! Laguerre-Gaussian mode amplitudes in transverse-momentum space and their
//! expansion coefficients.
//!
//! A mode is evaluated at its waist plane (the crystal center); in momentum
//! polar coordinates (rho, phi) it reads
//!
//!   LG_p^l(rho, phi) = e^{-rho^2 w^2/4} e^{i l phi} sum_{u=0}^{p} T_u^{p,l} rho^{2u+|l|}
//!
//! with
//!
//!   T_u^{p,l} = sqrt(p! (p+|l|)!/pi) (w/sqrt2)^{2u+|l|+1} (-1)^{p+u} i^l
//!               / ((p-u)! (|l|+u)! u!),
//!
//! normalized so that int |LG|^2 rho drho dphi = 1. The same `w` unit must be
//! used for the waist and 1/rho; the amplitude is unit-consistent rather than
//! being pinned to meters.

use crate::specialfn::ln_factorial;
use crate::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LgModeError {
    #[error("series index u = {u} exceeds radial number p = {p}")]
    IndexOutOfRange { u: u32, p: u32 },
}

/// One Laguerre-Gaussian mode label: radial number p >= 0, OAM number l.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub p: u32,
    pub l: i32,
}

impl ModeIndex {
    pub fn new(p: u32, l: i32) -> Self {
        Self { p, l }
    }

    /// Combined mode number N = 2p + |l| (sets the Gouy phase (N+1) atan(z/zR)).
    pub fn combined_n(&self) -> u32 {
        2 * self.p + self.l.unsigned_abs()
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.p, self.l)
    }
}

/// i^l for integer l.
fn i_pow(l: i32) -> Complex {
    match l.rem_euclid(4) {
        0 => Complex::new(1.0, 0.0),
        1 => Complex::new(0.0, 1.0),
        2 => Complex::new(-1.0, 0.0),
        _ => Complex::new(0.0, -1.0),
    }
}

/// Expansion coefficient T_u^{p,l} of the momentum-space LG polynomial.
pub fn t_coefficient(u: u32, mode: ModeIndex, waist: f64) -> Result<Complex, LgModeError> {
    if u > mode.p {
        return Err(LgModeError::IndexOutOfRange { u, p: mode.p });
    }
    let p = mode.p;
    let al = mode.l.unsigned_abs();
    let ln_mag = 0.5 * (ln_factorial(p) + ln_factorial(p + al) - std::f64::consts::PI.ln())
        + f64::from(2 * u + al + 1) * (waist / std::f64::consts::SQRT_2).ln()
        - ln_factorial(p - u)
        - ln_factorial(al + u)
        - ln_factorial(u);
    let sign = if (p + u) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(i_pow(mode.l) * (sign * ln_mag.exp()))
}

/// Momentum-space LG amplitude at radial momentum `rho` (in 1/waist-units)
/// and azimuth `phi`.
pub fn lg_amplitude(rho: f64, phi: f64, mode: ModeIndex, waist: f64) -> Complex {
    debug_assert!(rho >= 0.0);
    let al = mode.l.unsigned_abs();
    // Horner in rho^2 over the T_u ladder
    let rho2 = rho * rho;
    let mut poly = Complex::new(0.0, 0.0);
    for u in (0..=mode.p).rev() {
        let t = t_coefficient(u, mode, waist).expect("u <= p by construction");
        poly = poly * rho2 + t;
    }
    let radial = (-rho2 * waist * waist / 4.0).exp() * rho.powi(al as i32);
    let azimuthal = Complex::from_polar(1.0, f64::from(mode.l) * phi);
    poly * radial * azimuthal
}
