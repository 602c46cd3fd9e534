//! Closed-form coincidence amplitudes of the LG-decomposed biphoton state.
//!
//! For an LG pump mode (p, l) and signal/idler modes (p_s, l_s), (p_i, l_i)
//! at detunings (Omega_s, Omega_i), the amplitude is a Kronecker delta on OAM
//! conservation l = l_s + l_i times a finite nested sum of regularized
//! hypergeometric kernels under a single oscillatory z-integral across the
//! crystal. Negative pump OAM is obtained from the conjugation rule
//! C^{l,ls,li} = conj(C^{-l,-ls,-li}).
//!
//! All lengths are rescaled internally to pump-waist units; the amplitude is
//! dimensionless, so the public SI interface is unaffected.

use crate::dispersion::{delta_omega, BeamGeometry, CrystalSpec, DispersionError};
use crate::lgmodes::ModeIndex;
use crate::quadrature::panel_rule;
use crate::specialfn::{binomial, hyp2f1_regularized_with_error, ln_factorial, ln_gamma, SpecialFnError};
use crate::Complex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AmplitudeError {
    #[error("mode {mode} outside truncation bounds (p_max = {p_max}, l_max = {l_max})")]
    Truncation { mode: ModeIndex, p_max: u32, l_max: u32 },
    #[error("z-quadrature failed to reach relative budget {budget:.1e} (attained {attained:.1e})")]
    Accuracy { budget: f64, attained: f64 },
    #[error("hypergeometric argument |D^2/(HB)| = {modulus:.6} left the convergence domain at z = {z_m} m")]
    HypergeometricArgument { modulus: f64, z_m: f64 },
    #[error("non-physical Gaussian coefficient (Re H = {re_h:.3e}, Re B = {re_b:.3e} must be > 0)")]
    GaussianConvergence { re_h: f64, re_b: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("summation index {name} = {got} exceeds its bound {bound}")]
    IndexBound { name: &'static str, got: u32, bound: u32 },
    #[error(transparent)]
    SpecialFn(#[from] SpecialFnError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
}

/// Spectral model of the pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectralModel {
    /// Continuous wave: the spectral envelope is dropped and the state module
    /// pairs detunings as Omega_i = -Omega_s.
    Cw,
    /// Gaussian pulse of duration t0 (seconds): envelope
    /// (t0/sqrt(pi)) exp(-t0^2 (Omega_s+Omega_i)^2 / 4).
    Pulsed { duration: f64 },
}

impl SpectralModel {
    pub fn envelope(&self, omega_s: f64, omega_i: f64) -> f64 {
        match self {
            SpectralModel::Cw => 1.0,
            SpectralModel::Pulsed { duration: t0 } => {
                let os = omega_s + omega_i;
                t0 / std::f64::consts::PI.sqrt() * (-t0 * t0 * os * os / 4.0).exp()
            }
        }
    }
}

/// Pump beam as a normalized superposition of LG components with a spectral
/// model and central wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    /// (mode, complex coefficient) with sum |a|^2 = 1.
    pub components: Vec<(ModeIndex, Complex)>,
    pub spectral_model: SpectralModel,
    /// Central (vacuum) wavelength in meters.
    pub central_wavelength: f64,
}

impl PumpSpec {
    pub fn validate(&self) -> Result<(), AmplitudeError> {
        let norm2: f64 = self.components.iter().map(|(_, a)| a.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(AmplitudeError::Precondition(format!(
                "pump coefficients are not normalized: sum |a|^2 = {norm2}"
            )));
        }
        Ok(())
    }

    /// Rescales the coefficients to unit total power.
    pub fn normalized(mut self) -> Self {
        let norm2: f64 = self.components.iter().map(|(_, a)| a.norm_sqr()).sum();
        if norm2 > 0.0 {
            let s = norm2.sqrt();
            for (_, a) in &mut self.components {
                *a /= s;
            }
        }
        self
    }
}

/// Mode truncation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub p_max: u32,
    pub l_max: u32,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { p_max: 10, l_max: 10 }
    }
}

impl Truncation {
    pub fn contains(&self, m: ModeIndex) -> bool {
        m.p <= self.p_max && m.l.unsigned_abs() <= self.l_max
    }
}

/// One coincidence-amplitude request.
#[derive(Debug, Clone, Copy)]
pub struct AmplitudeRequest<'a> {
    pub pump_mode: ModeIndex,
    pub signal_mode: ModeIndex,
    pub idler_mode: ModeIndex,
    /// Signal/idler detunings from the central frequencies (rad/s).
    pub omega_s: f64,
    pub omega_i: f64,
    pub geometry: &'a BeamGeometry,
    pub crystal: &'a CrystalSpec,
    pub spectral_model: SpectralModel,
    pub truncation: Truncation,
}

/// Complex coefficients of the z-integrand at one z for one tuple of
/// summation indices. `big_h`, `big_d`, `big_b` are in m^2 when built from SI
/// inputs; `d`, `h`, `b` are the exponents.
#[derive(Debug, Clone, Copy)]
pub struct ZIntegrandCoefficients {
    pub big_h: Complex,
    pub big_d: Complex,
    pub big_b: Complex,
    pub d: i32,
    pub h: f64,
    pub b: f64,
}

/// Indices of the nested sums: u <= p, s <= p_s, i <= p_i over the T ladder,
/// n <= l, m <= u, f <= u-m, v <= m over the binomial expansions.
#[derive(Debug, Clone, Copy)]
pub struct SummationIndices {
    pub u: u32,
    pub s: u32,
    pub i: u32,
    pub n: u32,
    pub m: u32,
    pub f: u32,
    pub v: u32,
}

fn gaussian_coefficients(z: f64, wp: f64, ws: f64, wi: f64, kp: f64, ks: f64, ki: f64) -> (Complex, Complex, Complex) {
    let big_h = Complex::new(wp * wp / 4.0 + ws * ws / 4.0, -z * (kp - ks) / (2.0 * kp * ks));
    let big_d = Complex::new(-wp * wp / 4.0, -z / (2.0 * kp));
    let big_b = Complex::new(wp * wp / 4.0 + wi * wi / 4.0, -z * (kp - ki) / (2.0 * kp * ki));
    (big_h, big_d, big_b)
}

/// Exponents (d, 2h, 2b) for one index tuple. Valid for pump l >= 0.
fn exponents(idx: SummationIndices, l: i32, ls: i32, li: i32) -> (i32, i64, i64) {
    let (u, s, i, n, m, f, v) = (
        idx.u as i64,
        idx.s as i64,
        idx.i as i64,
        idx.n as i64,
        idx.m as i64,
        idx.f as i64,
        idx.v as i64,
    );
    let (l, ls, li) = (l as i64, ls as i64, li as i64);
    let d = li + m - n - 2 * v;
    let h2 = 2 + 2 * s + l + li + 2 * (u - f) - 2 * n - 2 * v + ls.abs();
    let b2 = 2 + 2 * f + 2 * i + li + 2 * m - 2 * v + li.abs();
    (d as i32, h2, b2)
}

/// Coefficients of the z-integrand at height z (SI meters) for the request's
/// tuple and the given summation indices.
pub fn integrand_coefficients(
    z: f64,
    req: &AmplitudeRequest,
    idx: SummationIndices,
) -> Result<ZIntegrandCoefficients, AmplitudeError> {
    check_indices(req, idx)?;
    let g = req.geometry;
    let c = req.crystal;
    let (big_h, big_d, big_b) = gaussian_coefficients(
        z,
        g.waist_pump,
        g.waist_signal,
        g.waist_idler,
        c.pump.k,
        c.signal.k,
        c.idler.k,
    );
    let (d, h2, b2) = exponents(idx, req.pump_mode.l, req.signal_mode.l, req.idler_mode.l);
    Ok(ZIntegrandCoefficients {
        big_h,
        big_d,
        big_b,
        d,
        h: h2 as f64 / 2.0,
        b: b2 as f64 / 2.0,
    })
}

fn check_indices(req: &AmplitudeRequest, idx: SummationIndices) -> Result<(), AmplitudeError> {
    if req.pump_mode.l < 0 {
        return Err(AmplitudeError::Precondition(
            "summation indices are defined for pump l >= 0; use the conjugation rule".into(),
        ));
    }
    let bounds = [
        ("u", idx.u, req.pump_mode.p),
        ("s", idx.s, req.signal_mode.p),
        ("i", idx.i, req.idler_mode.p),
        ("n", idx.n, req.pump_mode.l as u32),
        ("m", idx.m, idx.u),
        ("f", idx.f, idx.u - idx.m.min(idx.u)),
        ("v", idx.v, idx.m),
    ];
    for (name, got, bound) in bounds {
        if got > bound {
            return Err(AmplitudeError::IndexBound { name, got, bound });
        }
    }
    Ok(())
}

/// Single-term z-integrand e^{i z DeltaOmega} D^d / (H^h B^b) 2F1~[h, b, 1+d, D^2/(HB)]
/// at z (meters), for one tuple of summation indices.
pub fn z_integrand(
    z: f64,
    req: &AmplitudeRequest,
    idx: SummationIndices,
) -> Result<Complex, AmplitudeError> {
    let co = integrand_coefficients(z, req, idx)?;
    if co.big_h.re <= 0.0 || co.big_b.re <= 0.0 {
        return Err(AmplitudeError::GaussianConvergence { re_h: co.big_h.re, re_b: co.big_b.re });
    }
    let x = co.big_d * co.big_d / (co.big_h * co.big_b);
    if x.norm() >= HYP_ARG_LIMIT {
        return Err(AmplitudeError::HypergeometricArgument { modulus: x.norm(), z_m: z });
    }
    let f = hyp2f1_regularized_with_error(
        Complex::new(co.h, 0.0),
        Complex::new(co.b, 0.0),
        Complex::new(1.0 + co.d as f64, 0.0),
        x,
    )?;
    let dom = delta_omega(req.omega_s, req.omega_i, req.crystal);
    let phase = Complex::from_polar(1.0, z * dom);
    let power = co.big_d.powi(co.d) * co.big_h.powf(-co.h) * co.big_b.powf(-co.b);
    Ok(phase * power * f.value)
}

// ---------------------------------------------------------------------------
// Term enumeration and the shared z-quadrature engine
// ---------------------------------------------------------------------------

/// Largest hypergeometric argument modulus accepted along the z path.
const HYP_ARG_LIMIT: f64 = 0.9;
/// Relative accuracy budget of the z-quadrature.
const QUAD_BUDGET: f64 = 1e-8;
/// Gauss-Legendre points per panel (doubled for the error estimate).
const NODES_PER_PANEL: usize = 8;
const MAX_PANEL_DOUBLINGS: u32 = 4;

#[derive(Debug, Clone, Copy)]
struct Term {
    coef: f64,
    h2: i64,
    b2: i64,
    d: i32,
}

/// ln |T_u^{p,l}| for waist w (w in the internal scaled units).
fn ln_t_mag(u: u32, p: u32, al: u32, w: f64) -> f64 {
    0.5 * (ln_factorial(p) + ln_factorial(p + al) - std::f64::consts::PI.ln())
        + f64::from(2 * u + al + 1) * (w / std::f64::consts::SQRT_2).ln()
        - ln_factorial(p - u)
        - ln_factorial(al + u)
        - ln_factorial(u)
}

fn gamma_real(half2: i64) -> f64 {
    ln_gamma(Complex::new(half2 as f64 / 2.0, 0.0))
        .expect("h, b >= 1 for OAM-conserving tuples")
        .re
        .exp()
}

/// Enumerates the merged term list for an OAM-conserving tuple with l >= 0.
/// Waists are in pump-waist units. The i^l phases of the three T factors
/// cancel exactly under l = l_s + l_i, so coefficients are real.
fn enumerate_terms(
    pump: ModeIndex,
    signal: ModeIndex,
    idler: ModeIndex,
    ws: f64,
    wi: f64,
) -> Vec<Term> {
    debug_assert!(pump.l >= 0 && pump.l == signal.l + idler.l);
    let l = pump.l as u32;
    let (als, ali) = (signal.l.unsigned_abs(), idler.l.unsigned_abs());
    let mut merged: HashMap<(i64, i64, i32), f64> = HashMap::new();
    for u in 0..=pump.p {
        let ln_tu = ln_t_mag(u, pump.p, l, 1.0);
        let sign_u = if (pump.p + u) % 2 == 0 { 1.0 } else { -1.0 };
        for s in 0..=signal.p {
            let ln_ts = ln_t_mag(s, signal.p, als, ws);
            let sign_s = if (signal.p + s) % 2 == 0 { 1.0 } else { -1.0 };
            for i in 0..=idler.p {
                let ln_ti = ln_t_mag(i, idler.p, ali, wi);
                let sign_i = if (idler.p + i) % 2 == 0 { 1.0 } else { -1.0 };
                let t_mag = (ln_tu + ln_ts + ln_ti).exp();
                let t_signed = t_mag * sign_u * sign_s * sign_i;
                for n in 0..=l {
                    let c_n = binomial(l, n);
                    for m in 0..=u {
                        let c_m = binomial(u, m);
                        for f in 0..=(u - m) {
                            let c_f = binomial(u - m, f);
                            for v in 0..=m {
                                let c_v = binomial(m, v);
                                let idx = SummationIndices { u, s, i, n, m, f, v };
                                let (d, h2, b2) =
                                    exponents(idx, pump.l, signal.l, idler.l);
                                debug_assert!(h2 >= 2 && b2 >= 2);
                                let coef = t_signed * c_n * c_m * c_f * c_v
                                    * gamma_real(h2)
                                    * gamma_real(b2);
                                *merged.entry((h2, b2, d)).or_insert(0.0) += coef;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut terms: Vec<Term> = merged
        .into_iter()
        .map(|((h2, b2, d), coef)| Term { coef, h2, b2, d })
        .collect();
    // deterministic order independent of hash state
    terms.sort_by_key(|t| (t.h2, t.b2, t.d));
    terms
}

/// Geometry and dispersion in pump-waist units.
#[derive(Debug, Clone, Copy)]
struct ScaledSetup {
    ws: f64,
    wi: f64,
    kp: f64,
    ks: f64,
    ki: f64,
    half_length: f64,
    delta_omega: f64,
}

impl ScaledSetup {
    fn build(geometry: &BeamGeometry, crystal: &CrystalSpec, dom: f64) -> Self {
        let wp = geometry.waist_pump;
        ScaledSetup {
            ws: geometry.waist_signal / wp,
            wi: geometry.waist_idler / wp,
            kp: crystal.pump.k * wp,
            ks: crystal.signal.k * wp,
            ki: crystal.idler.k * wp,
            half_length: crystal.length / (2.0 * wp),
            delta_omega: dom * wp,
        }
    }
}

/// Per-node tables shared by every term and every task at this z.
struct NodeTables {
    weight_phase: Complex,
    inv_sqrt_h_pows: Vec<Complex>,
    inv_sqrt_b_pows: Vec<Complex>,
    d_pows: Vec<Complex>,
    d_min: i32,
    hyp: HashMap<(i64, i64, i32), Complex>,
    hyp_err: f64,
}

fn build_node(
    z: f64,
    weight: f64,
    setup: &ScaledSetup,
    max_h2: i64,
    max_b2: i64,
    d_range: (i32, i32),
    keys: &[(i64, i64, i32)],
) -> Result<NodeTables, AmplitudeError> {
    let (big_h, big_d, big_b) = gaussian_coefficients(z, 1.0, setup.ws, setup.wi, setup.kp, setup.ks, setup.ki);
    if big_h.re <= 0.0 || big_b.re <= 0.0 {
        return Err(AmplitudeError::GaussianConvergence { re_h: big_h.re, re_b: big_b.re });
    }
    let x = big_d * big_d / (big_h * big_b);
    if x.norm() >= HYP_ARG_LIMIT {
        return Err(AmplitudeError::HypergeometricArgument { modulus: x.norm(), z_m: z });
    }
    let inv_sqrt_h = 1.0 / big_h.sqrt();
    let inv_sqrt_b = 1.0 / big_b.sqrt();
    let mut hp = Vec::with_capacity(max_h2 as usize + 1);
    let mut bp = Vec::with_capacity(max_b2 as usize + 1);
    let one = Complex::new(1.0, 0.0);
    hp.push(one);
    for j in 1..=max_h2 {
        hp.push(hp[(j - 1) as usize] * inv_sqrt_h);
    }
    bp.push(one);
    for j in 1..=max_b2 {
        bp.push(bp[(j - 1) as usize] * inv_sqrt_b);
    }
    let (d_min, d_max) = d_range;
    let mut dp = Vec::with_capacity((d_max - d_min + 1) as usize);
    for d in d_min..=d_max {
        dp.push(big_d.powi(d));
    }
    let mut hyp = HashMap::with_capacity(keys.len());
    let mut hyp_err = 0.0f64;
    for &(h2, b2, d) in keys {
        let f = hyp2f1_regularized_with_error(
            Complex::new(h2 as f64 / 2.0, 0.0),
            Complex::new(b2 as f64 / 2.0, 0.0),
            Complex::new(1.0 + d as f64, 0.0),
            x,
        )?;
        hyp_err = hyp_err.max(f.error_estimate);
        hyp.insert((h2, b2, d), f.value);
    }
    Ok(NodeTables {
        weight_phase: weight * Complex::from_polar(1.0, z * setup.delta_omega),
        inv_sqrt_h_pows: hp,
        inv_sqrt_b_pows: bp,
        d_pows: dp,
        d_min,
        hyp,
        hyp_err,
    })
}

fn accumulate(node: &NodeTables, terms: &[Term]) -> Complex {
    let mut acc = Complex::new(0.0, 0.0);
    for t in terms {
        let val = node.d_pows[(t.d - node.d_min) as usize]
            * node.inv_sqrt_h_pows[t.h2 as usize]
            * node.inv_sqrt_b_pows[t.b2 as usize]
            * node.hyp[&(t.h2, t.b2, t.d)];
        acc += t.coef * val;
    }
    node.weight_phase * acc
}

/// Diagnostics attached to an evaluated amplitude.
#[derive(Debug, Clone, Copy)]
pub struct AmplitudeValue {
    pub value: Complex,
    /// Relative z-quadrature error estimate from node doubling.
    pub quadrature_error: f64,
    /// Worst attained hypergeometric truncation error along the z path.
    pub specialfn_error: f64,
}

/// Batch kernel: evaluates several OAM-conserving tuples (all with pump
/// l >= 0) at one detuning pair over a shared adaptive z-grid.
fn integrate_termsets(
    setup: &ScaledSetup,
    termsets: &[Vec<Term>],
) -> Result<Vec<AmplitudeValue>, AmplitudeError> {
    let mut keys: Vec<(i64, i64, i32)> = termsets
        .iter()
        .flatten()
        .map(|t| (t.h2, t.b2, t.d))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.is_empty() {
        return Ok(vec![]);
    }
    let max_h2 = keys.iter().map(|k| k.0).max().unwrap();
    let max_b2 = keys.iter().map(|k| k.1).max().unwrap();
    let d_min = keys.iter().map(|k| k.2).min().unwrap();
    let d_max = keys.iter().map(|k| k.2).max().unwrap();

    let length = 2.0 * setup.half_length;
    // panel count resolving the e^{i z dOm} oscillation
    let oscillation = (setup.delta_omega.abs() * length / std::f64::consts::PI).ceil() as usize;
    let mut panels = (4 * oscillation).max(8);

    let eval = |panels: usize, nodes_per_panel: usize| -> Result<(Vec<Complex>, f64), AmplitudeError> {
        let (zs, ws) = panel_rule(nodes_per_panel, panels, -setup.half_length, setup.half_length);
        let mut sums = vec![Complex::new(0.0, 0.0); termsets.len()];
        let mut hyp_err = 0.0f64;
        for (&z, &w) in zs.iter().zip(&ws) {
            let node = build_node(z, w, setup, max_h2, max_b2, (d_min, d_max), &keys)?;
            hyp_err = hyp_err.max(node.hyp_err);
            for (k, terms) in termsets.iter().enumerate() {
                sums[k] += accumulate(&node, terms);
            }
        }
        Ok((sums, hyp_err))
    };

    let mut attained = f64::INFINITY;
    for _ in 0..=MAX_PANEL_DOUBLINGS {
        let (coarse, _) = eval(panels, NODES_PER_PANEL)?;
        let (fine, hyp_err) = eval(panels, 2 * NODES_PER_PANEL)?;
        let scale = fine.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        attained = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max)
            / scale;
        if attained <= QUAD_BUDGET {
            return Ok(fine
                .into_iter()
                .map(|value| AmplitudeValue { value, quadrature_error: attained, specialfn_error: hyp_err })
                .collect());
        }
        panels *= 2;
    }
    Err(AmplitudeError::Accuracy { budget: QUAD_BUDGET, attained })
}

const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

/// Closed-form coincidence amplitude for one mode tuple.
///
/// Returns exactly 0 when l != l_s + l_i. Pump modes with l < 0 are handled
/// through the conjugation rule.
pub fn coincidence_amplitude(req: &AmplitudeRequest) -> Result<Complex, AmplitudeError> {
    coincidence_amplitude_with_diagnostics(req).map(|v| v.value)
}

pub fn coincidence_amplitude_with_diagnostics(
    req: &AmplitudeRequest,
) -> Result<AmplitudeValue, AmplitudeError> {
    for mode in [req.pump_mode, req.signal_mode, req.idler_mode] {
        if !req.truncation.contains(mode) {
            return Err(AmplitudeError::Truncation {
                mode,
                p_max: req.truncation.p_max,
                l_max: req.truncation.l_max,
            });
        }
    }
    req.geometry.validate()?;
    if req.pump_mode.l != req.signal_mode.l + req.idler_mode.l {
        return Ok(AmplitudeValue {
            value: Complex::new(0.0, 0.0),
            quadrature_error: 0.0,
            specialfn_error: 0.0,
        });
    }
    if req.pump_mode.l < 0 {
        let neg = AmplitudeRequest {
            pump_mode: ModeIndex::new(req.pump_mode.p, -req.pump_mode.l),
            signal_mode: ModeIndex::new(req.signal_mode.p, -req.signal_mode.l),
            idler_mode: ModeIndex::new(req.idler_mode.p, -req.idler_mode.l),
            ..*req
        };
        let v = coincidence_amplitude_with_diagnostics(&neg)?;
        return Ok(AmplitudeValue { value: v.value.conj(), ..v });
    }
    let dom = delta_omega(req.omega_s, req.omega_i, req.crystal);
    let setup = ScaledSetup::build(req.geometry, req.crystal, dom);
    let terms = enumerate_terms(
        req.pump_mode,
        req.signal_mode,
        req.idler_mode,
        setup.ws,
        setup.wi,
    );
    let integral = integrate_termsets(&setup, &[terms])?;
    let env = req.spectral_model.envelope(req.omega_s, req.omega_i);
    let v = integral[0];
    Ok(AmplitudeValue { value: PI2 * env * v.value, ..v })
}

/// Work item for the batch evaluator: one pump component against one
/// signal/idler pair, weighted by the component coefficient.
#[derive(Debug, Clone, Copy)]
pub struct PairTask {
    pub pump_mode: ModeIndex,
    pub weight: Complex,
    pub signal_mode: ModeIndex,
    pub idler_mode: ModeIndex,
}

/// Detuning-independent part of a batch evaluation: enumerated term sets for
/// every OAM-conserving task, reusable across a whole frequency grid.
pub struct PreparedTasks {
    termsets: Vec<Vec<Term>>,
    /// Per task: None for OAM-violating tasks, otherwise (termset index,
    /// conjugate flag) and the task weight.
    slots: Vec<Option<(usize, bool)>>,
    weights: Vec<Complex>,
}

/// Enumerates the term sets of `tasks` once; the result can be evaluated at
/// many detunings with [`evaluate_prepared`].
pub fn prepare_pair_tasks(
    geometry: &BeamGeometry,
    tasks: &[PairTask],
) -> Result<PreparedTasks, AmplitudeError> {
    geometry.validate()?;
    let ws = geometry.waist_signal / geometry.waist_pump;
    let wi = geometry.waist_idler / geometry.waist_pump;
    let mut termsets: Vec<Vec<Term>> = Vec::new();
    let mut slots: Vec<Option<(usize, bool)>> = Vec::with_capacity(tasks.len());
    for t in tasks {
        if t.pump_mode.l != t.signal_mode.l + t.idler_mode.l {
            slots.push(None);
            continue;
        }
        let conj = t.pump_mode.l < 0;
        let (pm, sm, im) = if conj {
            (
                ModeIndex::new(t.pump_mode.p, -t.pump_mode.l),
                ModeIndex::new(t.signal_mode.p, -t.signal_mode.l),
                ModeIndex::new(t.idler_mode.p, -t.idler_mode.l),
            )
        } else {
            (t.pump_mode, t.signal_mode, t.idler_mode)
        };
        termsets.push(enumerate_terms(pm, sm, im, ws, wi));
        slots.push(Some((termsets.len() - 1, conj)));
    }
    Ok(PreparedTasks { termsets, slots, weights: tasks.iter().map(|t| t.weight).collect() })
}

/// Evaluates prepared tasks at one detuning pair over a shared adaptive
/// z-grid and hypergeometric cache. Results are ordered like the original
/// task list and independent of any parallel context.
pub fn evaluate_prepared(
    prepared: &PreparedTasks,
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
    spectral_model: SpectralModel,
    omega_s: f64,
    omega_i: f64,
) -> Result<Vec<Complex>, AmplitudeError> {
    let dom = delta_omega(omega_s, omega_i, crystal);
    let setup = ScaledSetup::build(geometry, crystal, dom);
    let env = spectral_model.envelope(omega_s, omega_i);
    let integrals = integrate_termsets(&setup, &prepared.termsets)?;
    Ok(prepared
        .slots
        .iter()
        .zip(&prepared.weights)
        .map(|(s, w)| match s {
            None => Complex::new(0.0, 0.0),
            Some((k, conj)) => {
                let raw = if *conj { integrals[*k].value.conj() } else { integrals[*k].value };
                w * PI2 * env * raw
            }
        })
        .collect())
}

/// One-shot batch evaluation: prepare + evaluate at a single detuning pair.
/// OAM-violating tasks yield exact zeros.
pub fn evaluate_pair_tasks(
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
    spectral_model: SpectralModel,
    omega_s: f64,
    omega_i: f64,
    tasks: &[PairTask],
) -> Result<Vec<Complex>, AmplitudeError> {
    let prepared = prepare_pair_tasks(geometry, tasks)?;
    evaluate_prepared(&prepared, geometry, crystal, spectral_model, omega_s, omega_i)
}

/// Amplitude of a full pump superposition onto one signal/idler pair.
pub fn amplitude_for_pump(
    pump: &PumpSpec,
    signal_mode: ModeIndex,
    idler_mode: ModeIndex,
    omega_s: f64,
    omega_i: f64,
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
) -> Result<Complex, AmplitudeError> {
    pump.validate()?;
    let tasks: Vec<PairTask> = pump
        .components
        .iter()
        .map(|&(mode, a)| PairTask { pump_mode: mode, weight: a, signal_mode, idler_mode })
        .collect();
    let vals = evaluate_pair_tasks(geometry, crystal, pump.spectral_model, omega_s, omega_i, &tasks)?;
    Ok(vals.into_iter().sum())
}

// ---------------------------------------------------------------------------
// Gouy-phase reduced amplitude
// ---------------------------------------------------------------------------

/// Relative tolerance on the equal-Rayleigh-length / k_p = 2 k_s geometry.
pub const GOUY_GEOMETRY_TOL: f64 = 1e-6;

/// Checks the reduced-kernel preconditions: equal Rayleigh lengths for all
/// three beams and k_p = 2 k_s = 2 k_i.
pub fn check_gouy_geometry(geometry: &BeamGeometry, crystal: &CrystalSpec) -> Result<(), AmplitudeError> {
    let zr = geometry.rayleigh_lengths(crystal);
    let zmax = zr.iter().cloned().fold(f64::MIN, f64::max);
    let zmin = zr.iter().cloned().fold(f64::MAX, f64::min);
    if (zmax - zmin) / zmax > GOUY_GEOMETRY_TOL {
        return Err(AmplitudeError::Precondition(format!(
            "Rayleigh lengths are not equal: {zr:?} m"
        )));
    }
    let kp = crystal.pump.k;
    for k in [crystal.signal.k, crystal.idler.k] {
        if ((kp - 2.0 * k) / kp).abs() > GOUY_GEOMETRY_TOL {
            return Err(AmplitudeError::Precondition(format!(
                "k_p = 2 k_(s,i) violated: k_p = {kp}, k = {k}"
            )));
        }
    }
    Ok(())
}

/// Reduced single-integral amplitude of a relative-mode-number class under
/// the matched geometry (equal Rayleigh lengths, k_p = 2 k_s):
///
///   integral dz e^{i z DeltaOmega} (i 2z + k_p w_p^2)^m / (-i 2z + k_p w_p^2)^{m+1},
///
/// with m = -N_R/2. The class exponent follows from reducing the closed form;
/// N_R must be even (OAM-allowed triplets always are) and the value is
/// dimensionless. Classes with N_R > 0 have identically vanishing amplitudes
/// in this geometry; the reduced integral still characterizes the shared
/// spectral shape of N_R <= 0 classes.
pub fn gouy_reduced_amplitude(
    n_r: i32,
    omega_s: f64,
    omega_i: f64,
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
) -> Result<Complex, AmplitudeError> {
    check_gouy_geometry(geometry, crystal)?;
    if n_r % 2 != 0 {
        return Err(AmplitudeError::Precondition(format!(
            "relative mode number must be even for OAM-conserving triplets, got {n_r}"
        )));
    }
    let m = -n_r / 2;
    let dom = delta_omega(omega_s, omega_i, crystal);
    // work in pump-waist units; the integral is scale invariant
    let wp = geometry.waist_pump;
    let kw2 = crystal.pump.k * wp; // k' * w'^2 with w' = 1
    let half_len = crystal.length / (2.0 * wp);
    let dom_s = dom * wp;
    let oscillation = (dom_s.abs() * 2.0 * half_len / std::f64::consts::PI).ceil() as usize;
    let panels = (4 * oscillation).max(8);
    let kernel = |z: f64| -> Complex {
        let plus = Complex::new(kw2, 2.0 * z);
        let minus = Complex::new(kw2, -2.0 * z);
        Complex::from_polar(1.0, z * dom_s) * plus.powi(m) * minus.powi(-m - 1)
    };
    let quad = |np: usize| -> Complex {
        let (zs, ws) = panel_rule(np, panels, -half_len, half_len);
        zs.iter().zip(&ws).map(|(&z, &w)| w * kernel(z)).sum()
    };
    let coarse = quad(NODES_PER_PANEL);
    let fine = quad(2 * NODES_PER_PANEL);
    let err = (coarse - fine).norm() / fine.norm().max(f64::MIN_POSITIVE);
    if err > QUAD_BUDGET {
        return Err(AmplitudeError::Accuracy { budget: QUAD_BUDGET, attained: err });
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::BeamDispersion;
    use approx::assert_relative_eq;

    fn matched_crystal() -> CrystalSpec {
        CrystalSpec {
            length: 15e-3,
            pump: BeamDispersion { k: 2.8e7, group_velocity: 1.42e8, gvd: 0.0 },
            signal: BeamDispersion { k: 1.4e7, group_velocity: 1.66e8, gvd: 0.0 },
            idler: BeamDispersion { k: 1.4e7, group_velocity: 1.57e8, gvd: 0.0 },
            poling_period: None,
        }
    }

    fn matched_geometry() -> BeamGeometry {
        let wp = 25e-6;
        BeamGeometry {
            waist_pump: wp,
            waist_signal: std::f64::consts::SQRT_2 * wp,
            waist_idler: std::f64::consts::SQRT_2 * wp,
        }
    }

    fn req<'a>(
        pump: (u32, i32),
        signal: (u32, i32),
        idler: (u32, i32),
        geometry: &'a BeamGeometry,
        crystal: &'a CrystalSpec,
    ) -> AmplitudeRequest<'a> {
        AmplitudeRequest {
            pump_mode: ModeIndex::new(pump.0, pump.1),
            signal_mode: ModeIndex::new(signal.0, signal.1),
            idler_mode: ModeIndex::new(idler.0, idler.1),
            omega_s: 0.0,
            omega_i: 0.0,
            geometry,
            crystal,
            spectral_model: SpectralModel::Cw,
            truncation: Truncation::default(),
        }
    }

    #[test]
    fn oam_violation_returns_exact_zero() {
        let g = matched_geometry();
        let c = matched_crystal();
        let r = req((0, 0), (0, 1), (0, 0), &g, &c);
        assert_eq!(coincidence_amplitude(&r).unwrap(), Complex::new(0.0, 0.0));
    }

    #[test]
    fn conjugation_rule_is_applied() {
        let g = matched_geometry();
        let c = matched_crystal();
        let plus = coincidence_amplitude(&req((0, 1), (0, 1), (0, 0), &g, &c)).unwrap();
        let minus = coincidence_amplitude(&req((0, -1), (0, -1), (0, 0), &g, &c)).unwrap();
        assert_eq!(minus, plus.conj());
    }

    #[test]
    fn truncation_bounds_are_enforced() {
        let g = matched_geometry();
        let c = matched_crystal();
        let mut r = req((0, 11), (0, 11), (0, 0), &g, &c);
        assert!(matches!(
            coincidence_amplitude(&r),
            Err(AmplitudeError::Truncation { .. })
        ));
        r = req((12, 0), (0, 0), (0, 0), &g, &c);
        r.truncation = Truncation { p_max: 11, l_max: 10 };
        assert!(matches!(
            coincidence_amplitude(&r),
            Err(AmplitudeError::Truncation { .. })
        ));
    }

    #[test]
    fn z_integrand_is_real_at_crystal_center_for_degenerate_geometry() {
        let g = matched_geometry();
        let c = matched_crystal();
        let r = req((1, 1), (0, 1), (0, 0), &g, &c);
        let idx = SummationIndices { u: 1, s: 0, i: 0, n: 0, m: 1, f: 0, v: 1 };
        let v = z_integrand(0.0, &r, idx).unwrap();
        assert!(v.im.abs() <= 1e-15 * v.re.abs(), "integrand {v} not real");
    }

    #[test]
    fn z_integrand_rejects_out_of_range_indices() {
        let g = matched_geometry();
        let c = matched_crystal();
        let r = req((1, 1), (0, 1), (0, 0), &g, &c);
        let idx = SummationIndices { u: 2, s: 0, i: 0, n: 0, m: 0, f: 0, v: 0 };
        assert!(matches!(
            z_integrand(0.0, &r, idx),
            Err(AmplitudeError::IndexBound { name: "u", .. })
        ));
    }

    #[test]
    fn pulsed_envelope_scales_cw_amplitude() {
        let g = matched_geometry();
        let c = matched_crystal();
        let mut r = req((0, 2), (0, 1), (0, 1), &g, &c);
        let cw = coincidence_amplitude(&r).unwrap();
        let t0 = 1e-12;
        r.spectral_model = SpectralModel::Pulsed { duration: t0 };
        r.omega_s = 2.0e11;
        r.omega_i = -0.5e11;
        let pulsed = coincidence_amplitude(&r).unwrap();
        r.spectral_model = SpectralModel::Cw;
        let cw_detuned = coincidence_amplitude(&r).unwrap();
        let env = t0 / std::f64::consts::PI.sqrt()
            * (-t0 * t0 * (r.omega_s + r.omega_i).powi(2) / 4.0).exp();
        assert_relative_eq!(pulsed.re, (cw_detuned * env).re, max_relative = 1e-12);
        assert_relative_eq!(pulsed.im, (cw_detuned * env).im, max_relative = 1e-12);
        assert!((cw - cw_detuned).norm() > 0.0);
    }

    #[test]
    fn single_component_pump_equals_direct_amplitude() {
        let g = matched_geometry();
        let c = matched_crystal();
        let pump = PumpSpec {
            components: vec![(ModeIndex::new(0, 2), Complex::new(1.0, 0.0))],
            spectral_model: SpectralModel::Cw,
            central_wavelength: 405e-9,
        };
        let direct = coincidence_amplitude(&req((0, 2), (0, 1), (0, 1), &g, &c)).unwrap();
        let via_pump =
            amplitude_for_pump(&pump, ModeIndex::new(0, 1), ModeIndex::new(0, 1), 0.0, 0.0, &g, &c)
                .unwrap();
        assert_relative_eq!(via_pump.re, direct.re, max_relative = 1e-13);
        assert_relative_eq!(via_pump.im, direct.im, epsilon = 1e-18);
    }

    #[test]
    fn two_component_pump_keeps_only_conserving_component() {
        let g = matched_geometry();
        let c = matched_crystal();
        let a1 = Complex::new(0.6, 0.0);
        let a5 = Complex::new(0.0, 0.8);
        let pump = PumpSpec {
            components: vec![(ModeIndex::new(0, 1), a1), (ModeIndex::new(0, 5), a5)],
            spectral_model: SpectralModel::Cw,
            central_wavelength: 405e-9,
        };
        let single = coincidence_amplitude(&req((0, 1), (0, 1), (0, 0), &g, &c)).unwrap();
        let combined =
            amplitude_for_pump(&pump, ModeIndex::new(0, 1), ModeIndex::new(0, 0), 0.0, 0.0, &g, &c)
                .unwrap();
        assert_relative_eq!((a1 * single).re, combined.re, max_relative = 1e-12);
        assert_relative_eq!((a1 * single).im, combined.im, max_relative = 1e-12);
    }

    #[test]
    fn pump_with_no_conserving_component_yields_zero() {
        let g = matched_geometry();
        let c = matched_crystal();
        let pump = PumpSpec {
            components: vec![(ModeIndex::new(0, 3), Complex::new(1.0, 0.0))],
            spectral_model: SpectralModel::Cw,
            central_wavelength: 405e-9,
        };
        let v = amplitude_for_pump(&pump, ModeIndex::new(0, 1), ModeIndex::new(0, 0), 0.0, 0.0, &g, &c)
            .unwrap();
        assert_eq!(v, Complex::new(0.0, 0.0));
    }

    #[test]
    fn gouy_reduced_matches_arctan_at_zero_detuning() {
        let g = matched_geometry();
        let c = matched_crystal();
        let v = gouy_reduced_amplitude(0, 0.0, 0.0, &g, &c).unwrap();
        let kw2 = c.pump.k * g.waist_pump * g.waist_pump;
        let want = (c.length / kw2).atan();
        assert_relative_eq!(v.re, want, max_relative = 1e-10);
        assert!(v.im.abs() < 1e-12 * v.re.abs());
    }

    #[test]
    fn gouy_reduced_thin_crystal_limit_is_length_over_kw2() {
        let g = matched_geometry();
        let mut c = matched_crystal();
        c.length = 1e-7;
        let kw2 = c.pump.k * g.waist_pump * g.waist_pump;
        for n_r in [0, -2, -4, 2] {
            let v = gouy_reduced_amplitude(n_r, 0.0, 0.0, &g, &c).unwrap();
            assert_relative_eq!(v.re, c.length / kw2, max_relative = 1e-6);
        }
    }

    #[test]
    fn gouy_preconditions_are_enforced() {
        let mut g = matched_geometry();
        let c = matched_crystal();
        g.waist_signal *= 1.05;
        assert!(matches!(
            gouy_reduced_amplitude(0, 0.0, 0.0, &g, &c),
            Err(AmplitudeError::Precondition(_))
        ));
        let g = matched_geometry();
        assert!(matches!(
            gouy_reduced_amplitude(3, 0.0, 0.0, &g, &c),
            Err(AmplitudeError::Precondition(_))
        ));
    }

    #[test]
    fn batch_evaluator_matches_single_amplitudes() {
        let g = matched_geometry();
        let c = matched_crystal();
        let tasks = [
            PairTask {
                pump_mode: ModeIndex::new(0, 2),
                weight: Complex::new(1.0, 0.0),
                signal_mode: ModeIndex::new(0, 1),
                idler_mode: ModeIndex::new(0, 1),
            },
            PairTask {
                pump_mode: ModeIndex::new(1, 0),
                weight: Complex::new(0.5, -0.5),
                signal_mode: ModeIndex::new(0, 1),
                idler_mode: ModeIndex::new(0, -1),
            },
            PairTask {
                pump_mode: ModeIndex::new(0, 1),
                weight: Complex::new(1.0, 0.0),
                signal_mode: ModeIndex::new(0, 1),
                idler_mode: ModeIndex::new(0, 1),
            },
        ];
        let batch =
            evaluate_pair_tasks(&g, &c, SpectralModel::Cw, 1.0e11, -2.0e11, &tasks).unwrap();
        assert_eq!(batch[2], Complex::new(0.0, 0.0));
        for (task, got) in tasks.iter().zip(&batch).take(2) {
            let r = AmplitudeRequest {
                pump_mode: task.pump_mode,
                signal_mode: task.signal_mode,
                idler_mode: task.idler_mode,
                omega_s: 1.0e11,
                omega_i: -2.0e11,
                geometry: &g,
                crystal: &c,
                spectral_model: SpectralModel::Cw,
                truncation: Truncation::default(),
            };
            let single = coincidence_amplitude(&r).unwrap() * task.weight;
            assert_relative_eq!(single.re, got.re, max_relative = 1e-10);
            assert_relative_eq!(single.im, got.im, max_relative = 1e-10);
        }
    }
}
