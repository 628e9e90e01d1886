//! The truncated transmon: Duffing-ladder spectrum, instantaneous SFQ kicks and
//! exact interval propagation with relaxation, dephasing and a frequency shift.
//!
//! All propagation happens in the lab frame. Between kicks the generator is
//!
//! ```text
//! dρ/dt = −i[H, ρ] + γ₁ D[a]ρ + 2γ_φ D[n]ρ,   H = Σ_k (E_k + k·δω) |k⟩⟨k|
//! ```
//!
//! which couples `ρ_{j,k}` only to `ρ_{j+1,k+1}`. Each diagonal band of ρ is
//! therefore an independent upper-bidiagonal linear system and is propagated
//! with its closed-form exponential.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{DensityMatrix, C64};
use crate::units::{HBAR, PHI0};

/// Duffing-ladder transmon truncated to `dim` levels. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    pub omega10: f64,
    pub alpha: f64,
    pub dim: usize,
}

impl TransmonParams {
    pub fn new(omega10: f64, alpha: f64, dim: usize) -> Result<Self> {
        let p = Self { omega10, alpha, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega10 > 0.0) || !self.omega10.is_finite() {
            return Err(Error::invalid("omega10", format!("must be positive and finite, got {}", self.omega10)));
        }
        if !self.alpha.is_finite() || self.alpha.abs() >= self.omega10 {
            return Err(Error::invalid("alpha", format!("|alpha| must be below omega10, got {}", self.alpha)));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim", format!("need at least 2 levels, got {}", self.dim)));
        }
        Ok(())
    }

    /// Angular frequency of level k relative to the ground state.
    #[inline]
    pub fn level_energy(&self, k: usize) -> f64 {
        let k = k as f64;
        k * self.omega10 + self.alpha * k * (k - 1.0) / 2.0
    }

    /// Qubit period 2π/ω₁₀.
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega10
    }
}

/// `E_k/ħ = k·ω₁₀ + α·k(k−1)/2` for every level.
pub fn level_energies(params: &TransmonParams) -> Vec<f64> {
    (0..params.dim).map(|k| params.level_energy(k)).collect()
}

/// Capacitive coupling of the SFQ driver to the qubit, in farads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub coupling_capacitance: f64,
    pub qubit_capacitance: f64,
}

impl CouplingParams {
    pub fn new(coupling_capacitance: f64, qubit_capacitance: f64) -> Result<Self> {
        let c = Self { coupling_capacitance, qubit_capacitance };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coupling_capacitance >= 0.0) || !self.coupling_capacitance.is_finite() {
            return Err(Error::invalid("coupling_capacitance", "must be finite and non-negative"));
        }
        if !(self.qubit_capacitance > 0.0) || !self.qubit_capacitance.is_finite() {
            return Err(Error::invalid("qubit_capacitance", "must be positive and finite"));
        }
        if self.coupling_capacitance / self.qubit_capacitance > 0.1 {
            log::warn!(
                "C_c/C = {:.3} exceeds 0.1; the weak-coupling kick model is questionable",
                self.coupling_capacitance / self.qubit_capacitance
            );
        }
        Ok(())
    }

    /// Flux quantum used for the pulse area.
    pub const PHI0: f64 = PHI0;

    /// Qubit self-capacitance that yields a per-pulse tip angle `delta_theta`.
    pub fn invert_capacitance(coupling_capacitance: f64, omega10: f64, delta_theta: f64) -> f64 {
        let area = coupling_capacitance * PHI0;
        2.0 * omega10 * area * area / (HBAR * delta_theta * delta_theta)
    }
}

/// Per-pulse tip angle `C_c Φ₀ √(2ω₁₀ / ħC)`.
pub fn delta_theta(coupling: &CouplingParams, omega10: f64) -> f64 {
    coupling.coupling_capacitance * PHI0 * (2.0 * omega10 / (HBAR * coupling.qubit_capacitance)).sqrt()
}

/// Coherence budget of the qubit and its sensitivity to quasiparticles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    pub t1_residual: f64,
    pub t2_star_residual: f64,
    /// Lifetime per unit ⟨n_QP⟩.
    pub t1_per_qp: f64,
    /// Extra multiplier on the QP dispersion ratio.
    pub qp_dispersion_factor: f64,
}

impl DecoherenceParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        match errs.into_iter().next() {
            Some((name, reason)) => Err(Error::invalid(name, reason)),
            None => Ok(()),
        }
    }

    pub(crate) fn collect_errors(&self, out: &mut Vec<(&'static str, String)>) {
        if !(self.t1_residual > 0.0) || !self.t1_residual.is_finite() {
            out.push(("t1_residual", "must be positive and finite".into()));
        }
        if !(self.t2_star_residual > 0.0) || !self.t2_star_residual.is_finite() {
            out.push(("t2_star_residual", "must be positive and finite".into()));
        } else if self.t2_star_residual > 2.0 * self.t1_residual {
            out.push((
                "t2_star_residual",
                format!("T2* = {:e} s exceeds 2·T1 = {:e} s", self.t2_star_residual, 2.0 * self.t1_residual),
            ));
        }
        if !(self.t1_per_qp > 0.0) {
            out.push(("t1_per_qp", "must be positive".into()));
        }
        if !(self.qp_dispersion_factor > 0.0) || !self.qp_dispersion_factor.is_finite() {
            out.push(("qp_dispersion_factor", "must be positive and finite".into()));
        }
    }

    /// Pure dephasing rate `1/T₂* − 1/(2T₁)`, clamped at zero.
    pub fn dephasing_rate(&self) -> f64 {
        let g = 1.0 / self.t2_star_residual - 0.5 / self.t1_residual;
        if g < 0.0 {
            log::warn!("computed pure dephasing rate {g:e} 1/s is negative; clamping to 0");
            0.0
        } else {
            g
        }
    }
}

/// Piecewise-constant rates for one propagation interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    /// Relaxation rate of the 1→0 transition (level k decays at k·gamma1).
    pub gamma1: f64,
    /// Pure dephasing rate on nearest-neighbour coherences.
    pub gamma_phi: f64,
    /// Shift added to ω₁₀, rad/s.
    pub freq_shift: f64,
}

impl Rates {
    pub const NONE: Rates = Rates { gamma1: 0.0, gamma_phi: 0.0, freq_shift: 0.0 };

    fn validate(&self) -> Result<()> {
        if !(self.gamma1 >= 0.0) || !self.gamma1.is_finite() {
            return Err(Error::invalid("gamma1", format!("must be non-negative, got {}", self.gamma1)));
        }
        if !(self.gamma_phi >= 0.0) || !self.gamma_phi.is_finite() {
            return Err(Error::invalid("gamma_phi", format!("must be non-negative, got {}", self.gamma_phi)));
        }
        if !self.freq_shift.is_finite() {
            return Err(Error::invalid("freq_shift", "must be finite"));
        }
        Ok(())
    }
}

/// Unitary of one instantaneous SFQ pulse: `exp((δθ/2)(a† − a))` on `dim` levels.
#[derive(Debug, Clone)]
pub struct KickOperator {
    delta_theta: f64,
    real: DMatrix<f64>,
    complex: DMatrix<C64>,
    complex_t: DMatrix<C64>,
}

impl KickOperator {
    pub fn new(delta_theta: f64, dim: usize) -> Self {
        let mut generator = DMatrix::<f64>::zeros(dim, dim);
        for k in 1..dim {
            let amp = 0.5 * delta_theta * (k as f64).sqrt();
            generator[(k, k - 1)] = amp;
            generator[(k - 1, k)] = -amp;
        }
        let real = if delta_theta == 0.0 { DMatrix::identity(dim, dim) } else { generator.exp() };
        let complex = real.map(|x| C64::new(x, 0.0));
        let complex_t = complex.transpose();
        Self { delta_theta, real, complex, complex_t }
    }

    pub fn delta_theta(&self) -> f64 {
        self.delta_theta
    }

    pub fn dim(&self) -> usize {
        self.real.nrows()
    }

    /// Real orthogonal matrix of the kick.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.real
    }

    pub fn unitary(&self) -> &DMatrix<C64> {
        &self.complex
    }

    /// ρ ← K ρ Kᵀ using a caller-owned scratch buffer of the same shape.
    pub(crate) fn apply_in_place(&self, rho: &mut DMatrix<C64>, scratch: &mut DMatrix<C64>) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        scratch.gemm(one, &self.complex, rho, zero);
        rho.gemm(one, scratch, &self.complex_t, zero);
    }
}

/// Free precession by `dt` under the bare Duffing Hamiltonian.
pub fn free_evolve(state: &DensityMatrix, params: &TransmonParams, dt: f64) -> Result<DensityMatrix> {
    check_dt(dt)?;
    check_dim(state, params)?;
    let mut out = state.clone();
    let freqs = level_energies(params);
    propagate_bands(out.matrix_mut(), &freqs, dt, 0.0, 0.0);
    Ok(out)
}

/// One instantaneous SFQ pulse.
pub fn sfq_kick(state: &DensityMatrix, delta_theta: f64, params: &TransmonParams) -> Result<DensityMatrix> {
    check_dim(state, params)?;
    let kick = KickOperator::new(delta_theta, params.dim);
    let mut out = state.clone();
    let mut scratch = DMatrix::zeros(params.dim, params.dim);
    kick.apply_in_place(out.matrix_mut(), &mut scratch);
    Ok(out)
}

/// Amplitude damping, pure dephasing and a coherent shift `dphase` of ω₁₀ over
/// `dt`, without the bare precession (see [`free_evolve`]).
pub fn apply_decoherence(
    state: &DensityMatrix,
    dt: f64,
    gamma1: f64,
    gamma_phi: f64,
    dphase: f64,
) -> Result<DensityMatrix> {
    check_dt(dt)?;
    Rates { gamma1, gamma_phi, freq_shift: dphase }.validate()?;
    let mut out = state.clone();
    let freqs: Vec<f64> = (0..state.dim()).map(|k| k as f64 * dphase).collect();
    propagate_bands(out.matrix_mut(), &freqs, dt, gamma1, gamma_phi);
    Ok(out)
}

/// Exact propagation over `dt` under precession, decoherence and shift together.
pub fn evolve_interval(
    state: &DensityMatrix,
    params: &TransmonParams,
    dt: f64,
    rates: &Rates,
) -> Result<DensityMatrix> {
    check_dt(dt)?;
    check_dim(state, params)?;
    rates.validate()?;
    let mut out = state.clone();
    let mut freqs = vec![0.0; params.dim];
    shifted_levels(params, rates.freq_shift, &mut freqs);
    propagate_bands(out.matrix_mut(), &freqs, dt, rates.gamma1, rates.gamma_phi);
    Ok(out)
}

pub(crate) fn shifted_levels(params: &TransmonParams, shift: f64, out: &mut [f64]) {
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = params.level_energy(k) + k as f64 * shift;
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", format!("must be finite and non-negative, got {dt}")));
    }
    Ok(())
}

fn check_dim(state: &DensityMatrix, params: &TransmonParams) -> Result<()> {
    if state.dim() != params.dim {
        return Err(Error::InvalidState(format!(
            "state dimension {} does not match transmon dimension {}",
            state.dim(),
            params.dim
        )));
    }
    Ok(())
}

/// Propagates every diagonal band of `rho` over `dt`.
///
/// `freqs[k]` is the angular frequency of level k (including any shift).
pub(crate) fn propagate_bands(rho: &mut DMatrix<C64>, freqs: &[f64], dt: f64, gamma1: f64, gamma_phi: f64) {
    let d = rho.nrows();
    if dt == 0.0 {
        return;
    }
    let mut lambda = [C64::new(0.0, 0.0); MAX_BAND];
    let mut coupling = [0.0_f64; MAX_BAND];
    let mut v = [C64::new(0.0, 0.0); MAX_BAND];
    assert!(d <= MAX_BAND, "dimension {d} exceeds supported maximum {MAX_BAND}");
    for q in 0..d {
        let len = d - q;
        let qf = q as f64;
        for k in 0..len {
            let kf = k as f64;
            let re = -(gamma1 * (2.0 * kf + qf) / 2.0 + gamma_phi * qf * qf) * dt;
            let im = -(freqs[k + q] - freqs[k]) * dt;
            lambda[k] = C64::new(re, im);
            v[k] = rho[(k + q, k)];
            if k + 1 < len {
                coupling[k] = gamma1 * (((k + q + 1) * (k + 1)) as f64).sqrt() * dt;
            }
        }
        if gamma1 == 0.0 || len == 1 {
            for k in 0..len {
                v[k] *= lambda[k].exp();
            }
        } else {
            bidiagonal_exp_apply(&lambda[..len], &coupling[..len.saturating_sub(1)], &mut v[..len]);
        }
        for k in 0..len {
            rho[(k + q, k)] = v[k];
            if q > 0 {
                rho[(k, k + q)] = v[k].conj();
            }
        }
    }
}

pub(crate) const MAX_BAND: usize = 16;

/// v ← exp(M) v for upper-bidiagonal M with diagonal `lambda` and
/// superdiagonal `coupling`, via its unit-triangular eigenvector matrix.
///
/// Requires the diagonal entries to be pairwise distinct, which holds whenever
/// the relaxation rate is positive (their real parts differ by multiples of γ₁dt).
fn bidiagonal_exp_apply(lambda: &[C64], coupling: &[f64], v: &mut [C64]) {
    let n = lambda.len();
    // eig[k][l] for k ≤ l, unit diagonal.
    let mut eig = [[C64::new(0.0, 0.0); MAX_BAND]; MAX_BAND];
    for l in 0..n {
        eig[l][l] = C64::new(1.0, 0.0);
        for k in (0..l).rev() {
            eig[k][l] = eig[k + 1][l] * coupling[k] / (lambda[l] - lambda[k]);
        }
    }
    // w = eig⁻¹ v
    let mut w = [C64::new(0.0, 0.0); MAX_BAND];
    for k in (0..n).rev() {
        let mut acc = v[k];
        for l in (k + 1)..n {
            acc -= eig[k][l] * w[l];
        }
        w[k] = acc;
    }
    for k in 0..n {
        w[k] *= lambda[k].exp();
    }
    for k in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for l in k..n {
            acc += eig[k][l] * w[l];
        }
        v[k] = acc;
    }
}
