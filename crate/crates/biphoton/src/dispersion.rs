//! Crystal dispersion data and the spectral / longitudinal phase mismatch.
//!
//! `CrystalSpec` carries user-supplied central wavenumbers, group velocities
//! and group-velocity dispersions for the pump, signal and idler beams plus
//! the crystal length and an optional poling period. The Sellmeier helpers
//! derive those numbers from a refractive-index model by central finite
//! differences so configs can be written in terms of published coefficient
//! sets instead of opaque constants.

use crate::C_LIGHT;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("invalid {name}: {value} (must be > 0)")]
    NotPositive { name: &'static str, value: f64 },
    #[error("central phase matching violated: k_p - k_s - k_i - 2pi/poling = {residual} rad/m exceeds tolerance {tol} rad/m")]
    PhaseMatching { residual: f64, tol: f64 },
    #[error("wavelength {lambda_m} m outside the validity range [{min_m}, {max_m}] m of the coefficient set")]
    WavelengthRange { lambda_m: f64, min_m: f64, max_m: f64 },
}

/// Per-beam dispersion data at the central frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamDispersion {
    /// Central wavenumber inside the crystal (rad/m).
    pub k: f64,
    /// Group velocity (m/s).
    pub group_velocity: f64,
    /// Group-velocity dispersion d(1/u_g)/dOmega (s^2/m).
    pub gvd: f64,
}

/// Crystal length plus dispersion data for the three beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    /// Crystal length along z (m).
    pub length: f64,
    pub pump: BeamDispersion,
    pub signal: BeamDispersion,
    pub idler: BeamDispersion,
    /// Poling period (m); `None` for birefringent phase matching (treated as
    /// 2pi/poling = 0 in the phase-matching balance).
    pub poling_period: Option<f64>,
}

/// Default tolerance on the central phase-matching balance (rad/m).
pub const PHASE_MATCH_TOL: f64 = 1.0;

impl CrystalSpec {
    /// Validates positivity and the central phase-matching condition
    /// k_p - k_s - k_i - 2pi/poling = 0 within `tol` rad/m.
    pub fn validate(&self, tol: f64) -> Result<(), DispersionError> {
        for (name, v) in [
            ("crystal length", self.length),
            ("pump wavenumber", self.pump.k),
            ("signal wavenumber", self.signal.k),
            ("idler wavenumber", self.idler.k),
            ("pump group velocity", self.pump.group_velocity),
            ("signal group velocity", self.signal.group_velocity),
            ("idler group velocity", self.idler.group_velocity),
        ] {
            if !(v > 0.0) {
                return Err(DispersionError::NotPositive { name, value: v });
            }
        }
        if let Some(p) = self.poling_period {
            if !(p.abs() > 0.0) {
                return Err(DispersionError::NotPositive { name: "poling period", value: p });
            }
        }
        let residual = self.phase_matching_residual();
        if residual.abs() > tol {
            return Err(DispersionError::PhaseMatching { residual, tol });
        }
        Ok(())
    }

    pub fn phase_matching_residual(&self) -> f64 {
        let grating = self
            .poling_period
            .map_or(0.0, |p| 2.0 * std::f64::consts::PI / p);
        self.pump.k - self.signal.k - self.idler.k - grating
    }

    /// Poling period that exactly balances the supplied wavenumbers.
    pub fn balancing_poling_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.pump.k - self.signal.k - self.idler.k)
    }
}

/// Beam waists of pump/signal/idler at the crystal center (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub waist_pump: f64,
    pub waist_signal: f64,
    pub waist_idler: f64,
}

impl BeamGeometry {
    pub fn validate(&self) -> Result<(), DispersionError> {
        for (name, v) in [
            ("pump waist", self.waist_pump),
            ("signal waist", self.waist_signal),
            ("idler waist", self.waist_idler),
        ] {
            if !(v > 0.0) {
                return Err(DispersionError::NotPositive { name, value: v });
            }
        }
        Ok(())
    }

    /// Rayleigh length z_R = k w^2 / 2 of each beam (m), given the crystal.
    pub fn rayleigh_lengths(&self, crystal: &CrystalSpec) -> [f64; 3] {
        [
            crystal.pump.k * self.waist_pump * self.waist_pump / 2.0,
            crystal.signal.k * self.waist_signal * self.waist_signal / 2.0,
            crystal.idler.k * self.waist_idler * self.waist_idler / 2.0,
        ]
    }
}

/// Spectral phase mismatch Delta_Omega (rad/m) at signal/idler detunings
/// (rad/s):
///
/// (Os+Oi)/u_gp - Os/u_gs - Oi/u_gi + G_p (Os+Oi)^2/2 - G_s Os^2/2 - G_i Oi^2/2.
///
/// Detunings beyond 20% of the implied central frequency are outside the
/// narrow-deviation regime; a warning is logged but the value is still
/// returned.
pub fn delta_omega(omega_s: f64, omega_i: f64, crystal: &CrystalSpec) -> f64 {
    let omega_central = crystal.signal.k * crystal.signal.group_velocity;
    if omega_s.abs().max(omega_i.abs()) > 0.2 * omega_central {
        log::warn!(
            "detuning ({:.3e}, {:.3e}) rad/s is large compared to the central frequency scale {:.3e} rad/s",
            omega_s,
            omega_i,
            omega_central
        );
    }
    let op = omega_s + omega_i;
    op / crystal.pump.group_velocity
        - omega_s / crystal.signal.group_velocity
        - omega_i / crystal.idler.group_velocity
        + crystal.pump.gvd * op * op / 2.0
        - crystal.signal.gvd * omega_s * omega_s / 2.0
        - crystal.idler.gvd * omega_i * omega_i / 2.0
}

/// Transverse momentum in polar form (radial magnitude rad/m, azimuth rad).
#[derive(Debug, Clone, Copy)]
pub struct TransverseMomentum {
    pub rho: f64,
    pub phi: f64,
}

/// Full longitudinal phase mismatch Delta k_z (rad/m), including the
/// transverse and cross terms:
///
/// Delta_Omega + rho_s^2 (k_p-k_s)/(2 k_p k_s) + rho_i^2 (k_p-k_i)/(2 k_p k_i)
///             - rho_s rho_i cos(phi_i - phi_s)/k_p.
pub fn phase_mismatch_kz(
    q_s: TransverseMomentum,
    q_i: TransverseMomentum,
    omega_s: f64,
    omega_i: f64,
    crystal: &CrystalSpec,
) -> f64 {
    let kp = crystal.pump.k;
    let ks = crystal.signal.k;
    let ki = crystal.idler.k;
    delta_omega(omega_s, omega_i, crystal)
        + q_s.rho * q_s.rho * (kp - ks) / (2.0 * kp * ks)
        + q_i.rho * q_i.rho * (kp - ki) / (2.0 * kp * ki)
        - q_s.rho * q_i.rho * (q_i.phi - q_s.phi).cos() / kp
}

// ---------------------------------------------------------------------------
// Sellmeier convenience
// ---------------------------------------------------------------------------

/// Refractive-index model n^2(lambda) = a + sum_j b_j/(lum^2 - c_j) + d lum^2
/// with lum the wavelength in micrometers (the form used by common KTP and
/// borate coefficient tables). Coefficients are user-supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellmeierSet {
    pub a: f64,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
    /// Validity window in meters.
    pub valid_range: (f64, f64),
}

impl SellmeierSet {
    pub fn index(&self, lambda_m: f64) -> Result<f64, DispersionError> {
        if lambda_m < self.valid_range.0 || lambda_m > self.valid_range.1 {
            return Err(DispersionError::WavelengthRange {
                lambda_m,
                min_m: self.valid_range.0,
                max_m: self.valid_range.1,
            });
        }
        Ok(self.index_unchecked(lambda_m))
    }

    fn index_unchecked(&self, lambda_m: f64) -> f64 {
        let l2 = (lambda_m * 1e6).powi(2);
        let mut n2 = self.a + self.d * l2;
        for (bj, cj) in self.b.iter().zip(&self.c) {
            n2 += bj / (l2 - cj);
        }
        n2.sqrt()
    }
}

/// Central wavenumber, group velocity and GVD derived from an index model by
/// 5-point central finite differences of n(lambda).
///
/// `step` is the finite-difference step in meters; pass `None` for the
/// default `lambda * 1e-4`.
pub fn sellmeier_wavenumber(
    set: &SellmeierSet,
    lambda_m: f64,
    step: Option<f64>,
) -> Result<BeamDispersion, DispersionError> {
    let h = step.unwrap_or(lambda_m * 1e-4);
    // all five stencil points must stay inside the validity window
    set.index(lambda_m - 2.0 * h)?;
    set.index(lambda_m + 2.0 * h)?;
    let f = |x: f64| set.index_unchecked(x);
    let n0 = f(lambda_m);
    let d1 = (f(lambda_m - 2.0 * h) - 8.0 * f(lambda_m - h) + 8.0 * f(lambda_m + h)
        - f(lambda_m + 2.0 * h))
        / (12.0 * h);
    let d2 = (-f(lambda_m - 2.0 * h) + 16.0 * f(lambda_m - h) - 30.0 * n0
        + 16.0 * f(lambda_m + h)
        - f(lambda_m + 2.0 * h))
        / (12.0 * h * h);
    let k = 2.0 * std::f64::consts::PI * n0 / lambda_m;
    let n_group = n0 - lambda_m * d1;
    let group_velocity = C_LIGHT / n_group;
    let gvd = lambda_m.powi(3) * d2 / (2.0 * std::f64::consts::PI * C_LIGHT * C_LIGHT);
    Ok(BeamDispersion { k, group_velocity, gvd })
}
