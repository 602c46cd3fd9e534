//! Brute-force evaluation of the coincidence amplitude by direct quadrature
//! of the overlap integral, used to validate the closed form.
//!
//! The absolute azimuthal angle is integrated analytically (it only enforces
//! OAM conservation and contributes 2 pi); the remaining domain is
//! (rho_s, rho_i, dphi, z). The integrand is assembled literally from the LG
//! polynomials, the pump bracket and the phase-mismatch exponent, with no code
//! shared with the closed-form kernel. Slow by design.

use crate::amplitude::SpectralModel;
use crate::dispersion::{delta_omega, BeamGeometry, CrystalSpec};
use crate::lgmodes::ModeIndex;
use crate::quadrature::{gauss_legendre_on, panel_rule, tanh_sinh_on};
use crate::specialfn::ln_factorial;
use crate::Complex;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("brute-force quadrature did not stabilize: relative change {attained:.3e} > tolerance {tol:.3e} after {rounds} refinement rounds")]
    Accuracy { attained: f64, tol: f64, rounds: u32 },
    #[error("grid too small: {0}")]
    GridTooSmall(String),
}

/// Radial quadrature family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialFamily {
    /// Gauss-Legendre on the truncated interval [0, R].
    GaussLegendre,
    /// Tanh-sinh (double exponential) on [0, R]; an independent family used
    /// for cross-checks.
    TanhSinh,
}

/// Grid specification for the brute-force integral.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureGrid {
    /// Nodes per radial axis (Gauss-Legendre) or the level-equivalent budget
    /// (tanh-sinh uses the level whose node count is closest).
    pub radial_nodes: usize,
    /// Equally spaced nodes for the relative angle on [0, 2 pi).
    pub angular_nodes: usize,
    /// Radial truncation R = span_factor * max(2/w) over the three beams.
    pub span_factor: f64,
    pub family: RadialFamily,
    /// Gauss-Legendre points per z panel.
    pub z_nodes_per_panel: usize,
    /// Minimum number of z panels (grown automatically with the detuning
    /// oscillation rate).
    pub z_panels_min: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            radial_nodes: 96,
            angular_nodes: 128,
            span_factor: 8.0,
            family: RadialFamily::GaussLegendre,
            z_nodes_per_panel: 8,
            z_panels_min: 8,
        }
    }
}

impl QuadratureGrid {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.radial_nodes < 16 || self.angular_nodes < 16 || self.z_nodes_per_panel < 2 {
            return Err(OracleError::GridTooSmall(format!("{self:?}")));
        }
        Ok(())
    }

    fn radial_rule(&self, r_max: f64, refine: u32) -> (Vec<f64>, Vec<f64>) {
        let n = self.radial_nodes + self.radial_nodes / 2 * refine as usize;
        match self.family {
            RadialFamily::GaussLegendre => gauss_legendre_on(n, 0.0, r_max),
            RadialFamily::TanhSinh => {
                // pick the level whose count is at least n
                let mut level = 3;
                loop {
                    let (nodes, weights) = tanh_sinh_on(level, 0.0, r_max);
                    if nodes.len() >= n || level >= 12 {
                        return (nodes, weights);
                    }
                    level += 1;
                }
            }
        }
    }
}

/// Brute-force value with the grid-refinement error estimate attached.
#[derive(Debug, Clone, Copy)]
pub struct OracleValue {
    pub value: Complex,
    pub error_estimate: f64,
}

struct TupleSetup {
    ws: f64,
    wi: f64,
    kp: f64,
    ks: f64,
    ki: f64,
    half_length: f64,
    dom: f64,
}

/// Direct numerical value of the overlap integral for one mode tuple.
///
/// Returns exact zero for OAM-violating tuples without integrating. The grid
/// is refined (radial x1.5, angular x1.5, z panels x2) until two consecutive
/// evaluations agree to `tol` relative, up to `max_rounds` refinements.
pub fn brute_force_amplitude(
    pump_mode: ModeIndex,
    signal_mode: ModeIndex,
    idler_mode: ModeIndex,
    omega_s: f64,
    omega_i: f64,
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
    spectral_model: SpectralModel,
    grid: &QuadratureGrid,
    tol: f64,
) -> Result<OracleValue, OracleError> {
    grid.validate()?;
    if pump_mode.l != signal_mode.l + idler_mode.l {
        return Ok(OracleValue { value: Complex::new(0.0, 0.0), error_estimate: 0.0 });
    }
    let wp = geometry.waist_pump;
    let setup = TupleSetup {
        ws: geometry.waist_signal / wp,
        wi: geometry.waist_idler / wp,
        kp: crystal.pump.k * wp,
        ks: crystal.signal.k * wp,
        ki: crystal.idler.k * wp,
        half_length: crystal.length / (2.0 * wp),
        dom: delta_omega(omega_s, omega_i, crystal) * wp,
    };
    let env = spectral_model.envelope(omega_s, omega_i);

    const MAX_ROUNDS: u32 = 2;
    let mut prev: Option<Complex> = None;
    let mut attained = f64::INFINITY;
    for round in 0..=MAX_ROUNDS {
        let value = integrate(pump_mode, signal_mode, idler_mode, &setup, grid, round);
        if let Some(p) = prev {
            attained = (value - p).norm() / value.norm().max(f64::MIN_POSITIVE);
            if attained <= tol {
                return Ok(OracleValue {
                    value: 2.0 * std::f64::consts::PI * env * value,
                    error_estimate: attained,
                });
            }
        }
        prev = Some(value);
    }
    Err(OracleError::Accuracy { attained, tol, rounds: MAX_ROUNDS })
}

/// Signed magnitude of T_u^{p,l} with the i^l phase dropped (the three
/// phases cancel for OAM-conserving tuples).
fn t_real(u: u32, p: u32, al: u32, w: f64) -> f64 {
    let ln_mag = 0.5 * (ln_factorial(p) + ln_factorial(p + al) - std::f64::consts::PI.ln())
        + f64::from(2 * u + al + 1) * (w / std::f64::consts::SQRT_2).ln()
        - ln_factorial(p - u)
        - ln_factorial(al + u)
        - ln_factorial(u);
    let sign = if (p + u) % 2 == 0 { 1.0 } else { -1.0 };
    sign * ln_mag.exp()
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

fn integrate(
    pump_mode: ModeIndex,
    signal_mode: ModeIndex,
    idler_mode: ModeIndex,
    setup: &TupleSetup,
    grid: &QuadratureGrid,
    refine: u32,
) -> Complex {
    let r_max = grid.span_factor * (2.0f64).max(2.0 / setup.ws).max(2.0 / setup.wi);
    let (r_nodes, r_weights) = grid.radial_rule(r_max, refine);
    let nphi = grid.angular_nodes + grid.angular_nodes / 2 * refine as usize;
    let dphi = 2.0 * std::f64::consts::PI / nphi as f64;

    let oscillation =
        (setup.dom.abs() * 2.0 * setup.half_length / std::f64::consts::PI).ceil() as usize;
    let panels = (grid.z_panels_min.max(4 * oscillation)) << refine;
    let (z_nodes, z_weights) =
        panel_rule(grid.z_nodes_per_panel, panels, -setup.half_length, setup.half_length);

    // polynomial coefficient ladders of the three LG factors (pump waist = 1)
    let lp = pump_mode.l.unsigned_abs();
    let pump_poly: Vec<f64> = (0..=pump_mode.p).map(|u| t_real(u, pump_mode.p, lp, 1.0)).collect();
    let ls_abs = signal_mode.l.unsigned_abs();
    let li_abs = idler_mode.l.unsigned_abs();
    let sig_poly: Vec<f64> =
        (0..=signal_mode.p).map(|s| t_real(s, signal_mode.p, ls_abs, setup.ws)).collect();
    let idl_poly: Vec<f64> =
        (0..=idler_mode.p).map(|i| t_real(i, idler_mode.p, li_abs, setup.wi)).collect();

    let a_s = (setup.kp - setup.ks) / (2.0 * setup.kp * setup.ks);
    let a_i = (setup.kp - setup.ki) / (2.0 * setup.kp * setup.ki);
    let l_pump = pump_mode.l;
    let li = idler_mode.l;
    let ws2 = setup.ws * setup.ws;
    let wi2 = setup.wi * setup.wi;

    let phis: Vec<f64> = (0..nphi).map(|k| k as f64 * dphi).collect();

    // parallel over the signal radial axis; per-z accumulators are merged in
    // index order so the result is independent of the thread count
    let partials: Vec<Vec<Complex>> = r_nodes
        .par_iter()
        .zip(r_weights.par_iter())
        .map(|(&rs, &w_rs)| {
            let mut acc = vec![Complex::new(0.0, 0.0); z_nodes.len()];
            let rs2 = rs * rs;
            let radial_s = poly_eval(&sig_poly, rs2) * rs.powi(ls_abs as i32 + 1);
            for (&ri, &w_ri) in r_nodes.iter().zip(&r_weights) {
                let ri2 = ri * ri;
                let radial_i = poly_eval(&idl_poly, ri2) * ri.powi(li_abs as i32 + 1);
                let w_radial = w_rs * w_ri * radial_s * radial_i;
                if w_radial == 0.0 {
                    continue;
                }
                for &phi in &phis {
                    let cphi = phi.cos();
                    let rho_p2 = rs2 + ri2 + 2.0 * rs * ri * cphi;
                    // pump bracket: (rho_p^2)^u ladder and the OAM factor,
                    // written in the regular combined form for either sign
                    let bracket = if l_pump >= 0 {
                        Complex::new(rs + ri * cphi, ri * phi.sin()).powi(l_pump)
                    } else {
                        Complex::new(rs + ri * cphi, -ri * phi.sin()).powi(-l_pump)
                    };
                    let pump_radial = poly_eval(&pump_poly, rho_p2);
                    let gauss =
                        (-rho_p2 / 4.0 - rs2 * ws2 / 4.0 - ri2 * wi2 / 4.0).exp();
                    let angular = Complex::from_polar(1.0, -f64::from(li) * phi);
                    let static_part =
                        (w_radial * dphi * pump_radial * gauss) * bracket * angular;
                    if static_part.norm_sqr() < 1e-320 {
                        continue;
                    }
                    let mismatch = rs2 * a_s + ri2 * a_i - cphi * rs * ri / setup.kp;
                    for (k, &z) in z_nodes.iter().enumerate() {
                        acc[k] += static_part * Complex::from_polar(1.0, z * mismatch);
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = Complex::new(0.0, 0.0);
    for (k, (&z, &wz)) in z_nodes.iter().zip(&z_weights).enumerate() {
        let mut plane = Complex::new(0.0, 0.0);
        for p in &partials {
            plane += p[k];
        }
        total += wz * Complex::from_polar(1.0, z * setup.dom) * plane;
    }
    total
}
