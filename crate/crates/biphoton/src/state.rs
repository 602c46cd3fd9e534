//! Assembly of the truncated biphoton state over a spectral grid and the
//! analysis operations on it: reduced spatial density matrices, purity,
//! Schmidt numbers and spectral filtering.
//!
//! Under a continuous-wave pump the idler detuning mirrors the signal one,
//! Omega_i = -Omega, so the state is a tensor C[mode_s, mode_i, Omega] over a
//! single detuning grid. Only OAM-allowed (signal, idler) pairs are populated;
//! all other tensor entries are exact zeros and are not stored.

use crate::amplitude::{
    evaluate_prepared, prepare_pair_tasks, AmplitudeError, PairTask, PumpSpec, Truncation,
};
use crate::dispersion::{BeamGeometry, CrystalSpec, DispersionError, PHASE_MATCH_TOL};
use crate::lgmodes::ModeIndex;
use crate::quadrature::gauss_legendre_on;
use crate::{Complex, C_LIGHT};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Amplitude(#[from] AmplitudeError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("spectral grid does not cover the state: {0}")]
    Grid(String),
    #[error("filter removed the whole state (residual norm^2 = {norm2:.3e})")]
    DegenerateFilter { norm2: f64 },
    #[error("subspace selects no populated mode pairs")]
    EmptySubspace,
    #[error("binary state dump is invalid: {0}")]
    BadDump(String),
}

/// Detuning grid with quadrature weights (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl OmegaGrid {
    /// Symmetric Gauss-Legendre grid on [-omega_max, omega_max]. An odd node
    /// count places a node at zero detuning.
    pub fn symmetric_gauss_legendre(n: usize, omega_max: f64) -> Self {
        let (nodes, weights) = gauss_legendre_on(n, -omega_max, omega_max);
        OmegaGrid { nodes, weights }
    }

    /// Single node at zero detuning with unit weight (monochromatic slice).
    pub fn central_frequency() -> Self {
        OmegaGrid { nodes: vec![0.0], weights: vec![1.0] }
    }

    /// Detuning equivalent of a wavelength offset `delta_lambda` below the
    /// central wavelength: Omega = 2 pi c (1/(l0-dl) - 1/l0), exact.
    pub fn omega_of_wavelength_offset(lambda0: f64, delta_lambda: f64) -> f64 {
        2.0 * std::f64::consts::PI * C_LIGHT * (1.0 / (lambda0 - delta_lambda) - 1.0 / lambda0)
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}

/// Truncated biphoton state under the CW pairing Omega_i = -Omega_s.
#[derive(Debug, Clone)]
pub struct BiphotonState {
    pub mode_basis_s: Vec<ModeIndex>,
    pub mode_basis_i: Vec<ModeIndex>,
    pub omega_grid: OmegaGrid,
    /// Populated (signal, idler) index pairs into the bases; everything else
    /// is an exact zero by OAM conservation.
    pub pairs: Vec<(usize, usize)>,
    /// Amplitudes, pair-major: `amplitudes[pair * n_omega + j]`.
    pub amplitudes: Vec<Complex>,
    /// Squared norm before normalization (the N0 constant divided out).
    pub norm: f64,
    /// Central angular frequencies of the two arms (rad/s), for
    /// wavelength <-> detuning conversion in filters and exports.
    pub omega0_signal: f64,
    pub omega0_idler: f64,
}

impl BiphotonState {
    pub fn n_omega(&self) -> usize {
        self.omega_grid.len()
    }

    pub fn pair_amplitudes(&self, pair: usize) -> &[Complex] {
        let n = self.n_omega();
        &self.amplitudes[pair * n..(pair + 1) * n]
    }

    /// Tensor accessor; zero for non-populated entries.
    pub fn amplitude(&self, s_idx: usize, i_idx: usize, omega_idx: usize) -> Complex {
        match self.pairs.iter().position(|&(s, i)| (s, i) == (s_idx, i_idx)) {
            Some(p) => self.amplitudes[p * self.n_omega() + omega_idx],
            None => Complex::new(0.0, 0.0),
        }
    }

    pub fn pair_modes(&self, pair: usize) -> (ModeIndex, ModeIndex) {
        let (s, i) = self.pairs[pair];
        (self.mode_basis_s[s], self.mode_basis_i[i])
    }

    /// Total squared norm under the grid weights (1 after normalization).
    pub fn weighted_norm_sqr(&self) -> f64 {
        let n = self.n_omega();
        let mut total = 0.0;
        for p in 0..self.pairs.len() {
            for (j, &w) in self.omega_grid.weights.iter().enumerate() {
                total += w * self.amplitudes[p * n + j].norm_sqr();
            }
        }
        total
    }

    fn renormalize(&mut self) -> f64 {
        let total = self.weighted_norm_sqr();
        if total > 0.0 {
            let s = total.sqrt();
            for a in &mut self.amplitudes {
                *a /= s;
            }
        }
        total
    }
}

/// Relative weight above which leakage at the grid edge is considered
/// non-negligible.
pub const GRID_EDGE_TOL: f64 = 1e-4;

/// Builds the normalized biphoton state of `pump` over `omega_grid`.
///
/// The mode bases run over p <= p_max, |l| <= l_max per arm; pairs that
/// violate OAM conservation for every pump component are skipped. Errors with
/// `Grid` when the weighted spectral density at the grid edge exceeds
/// [`GRID_EDGE_TOL`] of its peak (the grid is too narrow for the state).
pub fn build_state(
    pump: &PumpSpec,
    truncation: Truncation,
    omega_grid: OmegaGrid,
    geometry: &BeamGeometry,
    crystal: &CrystalSpec,
) -> Result<BiphotonState, StateError> {
    pump.validate()?;
    crystal.validate(PHASE_MATCH_TOL)?;
    geometry.validate()?;
    if omega_grid.nodes.is_empty() {
        return Err(StateError::Grid("empty detuning grid".into()));
    }
    let mut basis = Vec::new();
    for p in 0..=truncation.p_max {
        for l in -(truncation.l_max as i32)..=(truncation.l_max as i32) {
            basis.push(ModeIndex::new(p, l));
        }
    }
    let mode_basis_s = basis.clone();
    let mode_basis_i = basis;

    // populated pairs: OAM-conserving with at least one pump component
    let mut pairs = Vec::new();
    let mut tasks = Vec::new();
    let mut task_pair = Vec::new();
    for (si, sm) in mode_basis_s.iter().enumerate() {
        for (ii, im) in mode_basis_i.iter().enumerate() {
            let mut populated = false;
            for &(pm, a) in &pump.components {
                if pm.l == sm.l + im.l {
                    if !populated {
                        pairs.push((si, ii));
                        populated = true;
                    }
                    tasks.push(PairTask {
                        pump_mode: pm,
                        weight: a,
                        signal_mode: *sm,
                        idler_mode: *im,
                    });
                    task_pair.push(pairs.len() - 1);
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(StateError::Grid(
            "no OAM-conserving mode pairs inside the truncation".into(),
        ));
    }

    let prepared = prepare_pair_tasks(geometry, &tasks)?;
    let n_omega = omega_grid.len();
    let spectral = pump.spectral_model;
    let columns: Result<Vec<Vec<Complex>>, AmplitudeError> = omega_grid
        .nodes
        .par_iter()
        .map(|&om| {
            let vals = evaluate_prepared(&prepared, geometry, crystal, spectral, om, -om)?;
            // fold the per-component tasks into per-pair sums
            let mut col = vec![Complex::new(0.0, 0.0); pairs.len()];
            for (v, &p) in vals.iter().zip(&task_pair) {
                col[p] += v;
            }
            Ok(col)
        })
        .collect();
    let columns = columns?;

    let mut amplitudes = vec![Complex::new(0.0, 0.0); pairs.len() * n_omega];
    for (j, col) in columns.iter().enumerate() {
        for (p, &v) in col.iter().enumerate() {
            amplitudes[p * n_omega + j] = v;
        }
    }

    let omega0_pump = 2.0 * std::f64::consts::PI * C_LIGHT / pump.central_wavelength;
    let mut state = BiphotonState {
        mode_basis_s,
        mode_basis_i,
        omega_grid,
        pairs,
        amplitudes,
        norm: 0.0,
        omega0_signal: omega0_pump / 2.0,
        omega0_idler: omega0_pump / 2.0,
    };
    state.norm = state.renormalize();

    if n_omega > 2 {
        let density: Vec<f64> = (0..n_omega)
            .map(|j| {
                let w = state.omega_grid.weights[j];
                (0..state.pairs.len())
                    .map(|p| w * state.amplitudes[p * n_omega + j].norm_sqr())
                    .sum()
            })
            .collect();
        let peak = density.iter().cloned().fold(0.0f64, f64::max);
        let edge = density[0].max(density[n_omega - 1]);
        if edge > GRID_EDGE_TOL * peak {
            return Err(StateError::Grid(format!(
                "weighted spectral density at the grid edge is {:.3e} of the peak (> {GRID_EDGE_TOL:.0e}); widen the grid",
                edge / peak
            )));
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Spatial density matrix and derived quantities
// ---------------------------------------------------------------------------

/// Frequency-traced joint spatial density matrix over the populated pairs.
#[derive(Debug, Clone)]
pub struct SpatialDensityMatrix {
    pub basis: Vec<(ModeIndex, ModeIndex)>,
    pub matrix: DMatrix<Complex>,
}

impl SpatialDensityMatrix {
    pub fn trace(&self) -> f64 {
        (0..self.matrix.nrows()).map(|k| self.matrix[(k, k)].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut err = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                err = err.max((self.matrix[(r, c)] - self.matrix[(c, r)].conj()).norm());
            }
        }
        err
    }

    /// Smallest eigenvalue of the (Hermitian) matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig = self.matrix.clone().symmetric_eigenvalues();
        eig.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, tol: f64) -> Result<(), StateError> {
        if self.hermiticity_error() > tol {
            return Err(StateError::Grid(format!(
                "density matrix not Hermitian: {:.3e}",
                self.hermiticity_error()
            )));
        }
        if (self.trace() - 1.0).abs() > tol {
            return Err(StateError::Grid(format!("density matrix trace {} != 1", self.trace())));
        }
        if self.min_eigenvalue() < -1e-10 {
            return Err(StateError::Grid(format!(
                "density matrix not PSD: min eigenvalue {:.3e}",
                self.min_eigenvalue()
            )));
        }
        Ok(())
    }
}

/// rho_q = Tr_Omega |psi><psi|: entries A[a,b] = sum_j w_j C_a(j) conj(C_b(j)).
pub fn spatial_overlap_matrix(state: &BiphotonState) -> SpatialDensityMatrix {
    let np = state.pairs.len();
    let n = state.n_omega();
    let mut m = DMatrix::from_element(np, np, Complex::new(0.0, 0.0));
    for a in 0..np {
        for b in 0..np {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                acc += state.omega_grid.weights[j]
                    * state.amplitudes[a * n + j]
                    * state.amplitudes[b * n + j].conj();
            }
            m[(a, b)] = acc;
        }
    }
    SpatialDensityMatrix {
        basis: (0..np).map(|p| state.pair_modes(p)).collect(),
        matrix: m,
    }
}

/// Tr(rho^2) of the trace-normalized matrix.
pub fn purity(dm: &SpatialDensityMatrix) -> f64 {
    let tr = dm.trace();
    let mut sum = 0.0;
    for v in dm.matrix.iter() {
        sum += v.norm_sqr();
    }
    sum / (tr * tr)
}

/// How the subspace Schmidt number treats the spectral axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceSpectralMode {
    /// Singular values of the coincidence matrix at the grid node closest to
    /// zero detuning (azimuthal Schmidt number of the pure state).
    CentralFrequency,
    /// 1/Tr(rho_signal^2) of the spectrally traced, renormalized subspace
    /// state.
    SpectrallyTraced,
}

/// Schmidt number of the renormalized state projected onto `subspace`
/// (a list of (signal, idler) mode pairs).
pub fn schmidt_number_subspace(
    state: &BiphotonState,
    subspace: &[(ModeIndex, ModeIndex)],
    mode: SubspaceSpectralMode,
) -> Result<f64, StateError> {
    let mut sel: Vec<usize> = Vec::new();
    for (p, &(si, ii)) in state.pairs.iter().enumerate() {
        let key = (state.mode_basis_s[si], state.mode_basis_i[ii]);
        if subspace.contains(&key) {
            sel.push(p);
        }
    }
    if sel.is_empty() {
        return Err(StateError::EmptySubspace);
    }
    let n = state.n_omega();
    let mut s_modes: Vec<ModeIndex> = sel.iter().map(|&p| state.pair_modes(p).0).collect();
    let mut i_modes: Vec<ModeIndex> = sel.iter().map(|&p| state.pair_modes(p).1).collect();
    s_modes.sort_unstable();
    s_modes.dedup();
    i_modes.sort_unstable();
    i_modes.dedup();

    match mode {
        SubspaceSpectralMode::CentralFrequency => {
            let j0 = (0..n)
                .min_by(|&a, &b| {
                    state.omega_grid.nodes[a].abs().total_cmp(&state.omega_grid.nodes[b].abs())
                })
                .unwrap();
            let mut m =
                DMatrix::from_element(s_modes.len(), i_modes.len(), Complex::new(0.0, 0.0));
            for &p in &sel {
                let (sm, im) = state.pair_modes(p);
                let r = s_modes.iter().position(|&x| x == sm).unwrap();
                let c = i_modes.iter().position(|&x| x == im).unwrap();
                m[(r, c)] = state.amplitudes[p * n + j0];
            }
            let norm2: f64 = m.iter().map(|v| v.norm_sqr()).sum();
            if norm2 <= 0.0 {
                return Err(StateError::EmptySubspace);
            }
            let g = &m * m.adjoint();
            let tr2: f64 = g.iter().map(|v| v.norm_sqr()).sum();
            Ok(norm2 * norm2 / tr2)
        }
        SubspaceSpectralMode::SpectrallyTraced => {
            let mut norm2 = 0.0;
            for &p in &sel {
                for j in 0..n {
                    norm2 += state.omega_grid.weights[j] * state.amplitudes[p * n + j].norm_sqr();
                }
            }
            if norm2 <= 0.0 {
                return Err(StateError::EmptySubspace);
            }
            let ns = s_modes.len();
            let mut rho = DMatrix::from_element(ns, ns, Complex::new(0.0, 0.0));
            // rho_signal is block diagonal in Omega and diagonal in the
            // traced idler label
            for &pa in &sel {
                let (sa, ia) = state.pair_modes(pa);
                for &pb in &sel {
                    let (sb, ib) = state.pair_modes(pb);
                    if ia != ib {
                        continue;
                    }
                    let r = s_modes.iter().position(|&x| x == sa).unwrap();
                    let c = s_modes.iter().position(|&x| x == sb).unwrap();
                    let mut acc = Complex::new(0.0, 0.0);
                    for j in 0..n {
                        acc += state.omega_grid.weights[j]
                            * state.amplitudes[pa * n + j]
                            * state.amplitudes[pb * n + j].conj();
                    }
                    rho[(r, c)] += acc / norm2;
                }
            }
            let tr2: f64 = (&rho * &rho).diagonal().iter().map(|v| v.re).sum();
            Ok(1.0 / tr2)
        }
    }
}

/// Schmidt number of the full spatio-spectral state, K = 1/Tr(rho_signal^2)
/// with the idler (modes and frequency) traced out.
///
/// The CW pairing makes rho_signal block diagonal in Omega, so the trace
/// reduces to per-node Gram matrices.
pub fn schmidt_number_full(state: &BiphotonState) -> f64 {
    let n = state.n_omega();
    let mut s_index = vec![usize::MAX; state.mode_basis_s.len()];
    let mut i_index = vec![usize::MAX; state.mode_basis_i.len()];
    let mut ns = 0;
    let mut ni = 0;
    for &(si, ii) in &state.pairs {
        if s_index[si] == usize::MAX {
            s_index[si] = ns;
            ns += 1;
        }
        if i_index[ii] == usize::MAX {
            i_index[ii] = ni;
            ni += 1;
        }
    }
    let mut tr = 0.0;
    let mut tr2 = 0.0;
    for j in 0..n {
        let w = state.omega_grid.weights[j];
        let mut m = DMatrix::from_element(ns, ni, Complex::new(0.0, 0.0));
        for (p, &(si, ii)) in state.pairs.iter().enumerate() {
            m[(s_index[si], i_index[ii])] = state.amplitudes[p * n + j];
        }
        let g = &m * m.adjoint();
        tr += w * g.diagonal().iter().map(|v| v.re).sum::<f64>();
        tr2 += w * w * g.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    tr * tr / tr2
}

/// Spectral filter shape; the bandwidth is the full width (rectangular) or
/// the intensity FWHM (gaussian), in meters of wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    Rectangular,
    Gaussian,
}

/// Applies an identical spectral filter of width `bandwidth` to both arms,
/// centered on each arm's central wavelength, and renormalizes.
pub fn apply_spectral_filter(
    state: &BiphotonState,
    bandwidth: f64,
    shape: FilterShape,
) -> Result<BiphotonState, StateError> {
    if !(bandwidth > 0.0) {
        return Err(StateError::Grid(format!("filter bandwidth must be > 0, got {bandwidth}")));
    }
    let two_pi_c = 2.0 * std::f64::consts::PI * C_LIGHT;
    let lam_s0 = two_pi_c / state.omega0_signal;
    let lam_i0 = two_pi_c / state.omega0_idler;
    let transmission = |lambda: f64, lambda0: f64| -> f64 {
        let d = lambda - lambda0;
        match shape {
            FilterShape::Rectangular => {
                if d.abs() <= bandwidth / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FilterShape::Gaussian => {
                (-4.0 * std::f64::consts::LN_2 * d * d / (bandwidth * bandwidth)).exp()
            }
        }
    };
    let mut filtered = state.clone();
    let n = state.n_omega();
    for (j, &om) in state.omega_grid.nodes.iter().enumerate() {
        let lam_s = two_pi_c / (state.omega0_signal + om);
        let lam_i = two_pi_c / (state.omega0_idler - om);
        // intensity transmissions; amplitudes carry the square root
        let t = (transmission(lam_s, lam_s0) * transmission(lam_i, lam_i0)).sqrt();
        for p in 0..state.pairs.len() {
            filtered.amplitudes[p * n + j] *= t;
        }
    }
    let norm2 = filtered.weighted_norm_sqr();
    if norm2 < 1e-12 {
        return Err(StateError::DegenerateFilter { norm2 });
    }
    filtered.renormalize();
    filtered.norm = state.norm * norm2;
    Ok(filtered)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// CSV rows `p_s,l_s,p_i,l_i,omega_rad_s,re,im` over populated pairs,
/// pair-major, deterministic order.
pub fn export_csv<W: Write>(state: &BiphotonState, mut out: W) -> std::io::Result<()> {
    writeln!(out, "p_s,l_s,p_i,l_i,omega_rad_s,re,im")?;
    let n = state.n_omega();
    for p in 0..state.pairs.len() {
        let (sm, im) = state.pair_modes(p);
        for (j, &om) in state.omega_grid.nodes.iter().enumerate() {
            let a = state.amplitudes[p * n + j];
            writeln!(out, "{},{},{},{},{},{},{}", sm.p, sm.l, im.p, im.l, om, a.re, a.im)?;
        }
    }
    Ok(())
}

const DUMP_MAGIC: &[u8; 4] = b"BPST";
const DUMP_VERSION: u32 = 1;

/// Versioned little-endian binary dump for regression fixtures.
pub fn write_binary<W: Write>(state: &BiphotonState, mut out: W) -> std::io::Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    fn write_modes<W: Write>(out: &mut W, modes: &[ModeIndex]) -> std::io::Result<()> {
        out.write_all(&(modes.len() as u64).to_le_bytes())?;
        for m in modes {
            out.write_all(&m.p.to_le_bytes())?;
            out.write_all(&m.l.to_le_bytes())?;
        }
        Ok(())
    }
    write_modes(&mut out, &state.mode_basis_s)?;
    write_modes(&mut out, &state.mode_basis_i)?;
    out.write_all(&(state.omega_grid.len() as u64).to_le_bytes())?;
    for (&x, &w) in state.omega_grid.nodes.iter().zip(&state.omega_grid.weights) {
        out.write_all(&x.to_le_bytes())?;
        out.write_all(&w.to_le_bytes())?;
    }
    out.write_all(&(state.pairs.len() as u64).to_le_bytes())?;
    for &(s, i) in &state.pairs {
        out.write_all(&(s as u64).to_le_bytes())?;
        out.write_all(&(i as u64).to_le_bytes())?;
    }
    for a in &state.amplitudes {
        out.write_all(&a.re.to_le_bytes())?;
        out.write_all(&a.im.to_le_bytes())?;
    }
    out.write_all(&state.norm.to_le_bytes())?;
    out.write_all(&state.omega0_signal.to_le_bytes())?;
    out.write_all(&state.omega0_idler.to_le_bytes())?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<BiphotonState, StateError> {
    fn bad(m: impl std::fmt::Display) -> StateError {
        StateError::BadDump(m.to_string())
    }
    fn read_u64<R: Read>(input: &mut R) -> Result<u64, StateError> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b).map_err(bad)?;
        Ok(u64::from_le_bytes(b))
    }
    fn read_f64<R: Read>(input: &mut R) -> Result<f64, StateError> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b).map_err(bad)?;
        Ok(f64::from_le_bytes(b))
    }
    fn read_modes<R: Read>(input: &mut R) -> Result<Vec<ModeIndex>, StateError> {
        let n = read_u64(input)? as usize;
        if n > 1_000_000 {
            return Err(bad("implausible basis size"));
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pb = [0u8; 4];
            let mut lb = [0u8; 4];
            input.read_exact(&mut pb).map_err(bad)?;
            input.read_exact(&mut lb).map_err(bad)?;
            v.push(ModeIndex::new(u32::from_le_bytes(pb), i32::from_le_bytes(lb)));
        }
        Ok(v)
    }
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(bad)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut vb = [0u8; 4];
    input.read_exact(&mut vb).map_err(bad)?;
    if u32::from_le_bytes(vb) != DUMP_VERSION {
        return Err(bad("unsupported version"));
    }
    let mode_basis_s = read_modes(&mut input)?;
    let mode_basis_i = read_modes(&mut input)?;
    let n_omega = read_u64(&mut input)? as usize;
    if n_omega > 100_000_000 {
        return Err(bad("implausible grid size"));
    }
    let mut nodes = Vec::with_capacity(n_omega);
    let mut weights = Vec::with_capacity(n_omega);
    for _ in 0..n_omega {
        nodes.push(read_f64(&mut input)?);
        weights.push(read_f64(&mut input)?);
    }
    let n_pairs = read_u64(&mut input)? as usize;
    if n_pairs > 100_000_000 {
        return Err(bad("implausible pair count"));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let s = read_u64(&mut input)? as usize;
        let i = read_u64(&mut input)? as usize;
        if s >= mode_basis_s.len() || i >= mode_basis_i.len() {
            return Err(bad("pair index out of range"));
        }
        pairs.push((s, i));
    }
    let mut amplitudes = Vec::with_capacity(n_pairs * n_omega);
    for _ in 0..n_pairs * n_omega {
        let re = read_f64(&mut input)?;
        let im = read_f64(&mut input)?;
        amplitudes.push(Complex::new(re, im));
    }
    let norm = read_f64(&mut input)?;
    let omega0_signal = read_f64(&mut input)?;
    let omega0_idler = read_f64(&mut input)?;
    Ok(BiphotonState {
        mode_basis_s,
        mode_basis_i,
        omega_grid: OmegaGrid { nodes, weights },
        pairs,
        amplitudes,
        norm,
        omega0_signal,
        omega0_idler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitude::SpectralModel;
    use crate::dispersion::BeamDispersion;
    use approx::assert_relative_eq;

    fn crystal() -> CrystalSpec {
        CrystalSpec {
            length: 15e-3,
            pump: BeamDispersion { k: 2.8e7, group_velocity: 1.42e8, gvd: 0.0 },
            signal: BeamDispersion { k: 1.4e7, group_velocity: 1.66e8, gvd: 1.7e-25 },
            idler: BeamDispersion { k: 1.4e7, group_velocity: 1.57e8, gvd: 2.9e-25 },
            poling_period: None,
        }
    }

    fn geometry() -> BeamGeometry {
        BeamGeometry { waist_pump: 25e-6, waist_signal: 33e-6, waist_idler: 33e-6 }
    }

    fn gauss_pump() -> PumpSpec {
        PumpSpec {
            components: vec![(ModeIndex::new(0, 0), Complex::new(1.0, 0.0))],
            spectral_model: SpectralModel::Cw,
            central_wavelength: 405e-9,
        }
    }

    #[test]
    fn single_mode_state_is_trivial() {
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 0 },
            OmegaGrid::central_frequency(),
            &geometry(),
            &crystal(),
        )
        .unwrap();
        assert_eq!(state.pairs.len(), 1);
        assert_relative_eq!(state.amplitudes[0].norm(), 1.0, max_relative = 1e-12);
        let dm = spatial_overlap_matrix(&state);
        assert_relative_eq!(purity(&dm), 1.0, max_relative = 1e-12);
        assert_relative_eq!(schmidt_number_full(&state), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn oam_forbidden_entries_are_not_populated() {
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 2 },
            OmegaGrid::central_frequency(),
            &geometry(),
            &crystal(),
        )
        .unwrap();
        for &(si, ii) in &state.pairs {
            assert_eq!(state.mode_basis_s[si].l + state.mode_basis_i[ii].l, 0);
        }
        let s_plus = state.mode_basis_s.iter().position(|m| m.l == 1).unwrap();
        let i_plus = state.mode_basis_i.iter().position(|m| m.l == 1).unwrap();
        assert_eq!(state.amplitude(s_plus, i_plus, 0), Complex::new(0.0, 0.0));
    }

    #[test]
    fn state_norm_is_one_on_a_grid() {
        let grid = OmegaGrid::symmetric_gauss_legendre(51, 2.0e13);
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 1 },
            grid,
            &geometry(),
            &crystal(),
        )
        .unwrap();
        assert_relative_eq!(state.weighted_norm_sqr(), 1.0, max_relative = 1e-12);
        let dm = spatial_overlap_matrix(&state);
        assert!(dm.hermiticity_error() < 1e-14);
        assert_relative_eq!(dm.trace(), 1.0, max_relative = 1e-12);
        assert!(dm.min_eigenvalue() > -1e-10);
        dm.validate(1e-10).unwrap();
    }

    #[test]
    fn too_narrow_grid_is_rejected() {
        // a tiny span samples only the flat top of the spectrum, so the edge
        // density is comparable to the peak
        let grid = OmegaGrid::symmetric_gauss_legendre(21, 1.0e10);
        let err = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 0 },
            grid,
            &geometry(),
            &crystal(),
        )
        .unwrap_err();
        assert!(matches!(err, StateError::Grid(_)), "{err}");
    }

    #[test]
    fn identity_filter_leaves_state_unchanged() {
        let grid = OmegaGrid::symmetric_gauss_legendre(41, 2.0e13);
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 1 },
            grid,
            &geometry(),
            &crystal(),
        )
        .unwrap();
        let filtered = apply_spectral_filter(&state, 100e-9, FilterShape::Rectangular).unwrap();
        for (a, b) in state.amplitudes.iter().zip(&filtered.amplitudes) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
        }
        let p0 = purity(&spatial_overlap_matrix(&state));
        let p1 = purity(&spatial_overlap_matrix(&filtered));
        assert_relative_eq!(p0, p1, max_relative = 1e-12);
    }

    #[test]
    fn vanishing_filter_errors_out() {
        // even node count: no node at zero detuning, so a sub-femtometer
        // filter rejects every node
        let grid = OmegaGrid::symmetric_gauss_legendre(40, 2.0e13);
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 0 },
            grid,
            &geometry(),
            &crystal(),
        )
        .unwrap();
        // sub-femtometer filter: every grid node lands outside the passband
        let err = apply_spectral_filter(&state, 1e-16, FilterShape::Rectangular).unwrap_err();
        assert!(matches!(err, StateError::DegenerateFilter { .. }));
    }

    #[test]
    fn subspace_schmidt_number_of_product_state_is_one() {
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 1 },
            OmegaGrid::central_frequency(),
            &geometry(),
            &crystal(),
        )
        .unwrap();
        let sub = vec![(ModeIndex::new(0, 0), ModeIndex::new(0, 0))];
        let k =
            schmidt_number_subspace(&state, &sub, SubspaceSpectralMode::CentralFrequency).unwrap();
        assert_relative_eq!(k, 1.0, max_relative = 1e-12);
        let none = schmidt_number_subspace(
            &state,
            &[(ModeIndex::new(0, 3), ModeIndex::new(0, 2))],
            SubspaceSpectralMode::CentralFrequency,
        );
        assert!(matches!(none, Err(StateError::EmptySubspace)));
    }

    #[test]
    fn binary_dump_round_trips() {
        let grid = OmegaGrid::symmetric_gauss_legendre(31, 4.0e13);
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 1, l_max: 1 },
            grid,
            &geometry(),
            &crystal(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_binary(&state, &mut buf).unwrap();
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(state.pairs, back.pairs);
        assert_eq!(state.amplitudes, back.amplitudes);
        assert_eq!(state.omega_grid.nodes, back.omega_grid.nodes);
        assert_eq!(state.norm, back.norm);
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let state = build_state(
            &gauss_pump(),
            Truncation { p_max: 0, l_max: 1 },
            OmegaGrid::central_frequency(),
            &geometry(),
            &crystal(),
        )
        .unwrap();
        let mut buf = Vec::new();
        export_csv(&state, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p_s,l_s,p_i,l_i,omega_rad_s,re,im");
        assert_eq!(lines.len(), 1 + state.pairs.len());
    }
}
