//! Density-matrix state carrier for the truncated transmon.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// A d×d Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: DMatrix<C64>,
}

impl DensityMatrix {
    /// `|0⟩⟨0|` in a `dim`-level space.
    pub fn ground(dim: usize) -> Self {
        Self::basis(dim, 0)
    }

    /// `|k⟩⟨k|` in a `dim`-level space.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "level {k} outside dimension {dim}");
        let mut rho = DMatrix::zeros(dim, dim);
        rho[(k, k)] = C64::new(1.0, 0.0);
        Self { rho }
    }

    /// Builds `|ψ⟩⟨ψ|` from (not necessarily normalized) amplitudes.
    pub fn from_pure(amplitudes: &[C64]) -> Result<Self> {
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if amplitudes.len() < 2 || !(norm2 > 0.0) || !norm2.is_finite() {
            return Err(Error::InvalidState("pure state needs ≥2 finite, non-zero amplitudes".into()));
        }
        let scale = norm2.sqrt().recip();
        let d = amplitudes.len();
        let rho = DMatrix::from_fn(d, d, |j, k| amplitudes[j] * amplitudes[k].conj() * scale * scale);
        Ok(Self { rho })
    }

    /// Wraps a matrix after checking every density-matrix invariant.
    pub fn from_matrix(rho: DMatrix<C64>) -> Result<Self> {
        if !rho.is_square() || rho.nrows() < 2 {
            return Err(Error::InvalidState("density matrix must be square with dim ≥ 2".into()));
        }
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(rho: DMatrix<C64>) -> Self {
        Self { rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.rho
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.rho
    }

    pub fn population(&self, k: usize) -> f64 {
        self.rho[(k, k)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.population(k)).collect()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_jk|² for Hermitian ρ.
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Population outside the {|0⟩, |1⟩} subspace.
    pub fn leakage(&self) -> f64 {
        (2..self.dim()).map(|k| self.population(k)).sum()
    }

    /// max |ρ − ρ†|.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..d {
            for k in j..d {
                worst = worst.max((self.rho[(j, k)] - self.rho[(k, j)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalized ψ of the same dimension.
    pub fn overlap_pure(&self, psi: &[C64]) -> f64 {
        let d = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..d {
            for k in 0..d {
                acc += psi[j].conj() * self.rho[(j, k)] * psi[k];
            }
        }
        acc.re
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite matrix entry".into()));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("not Hermitian: max|ρ−ρ†| = {herm:e}")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    /// Symmetrizes and rescales the trace. Returns the trace drift that was removed.
    pub(crate) fn renormalize(&mut self) -> f64 {
        let d = self.dim();
        for j in 0..d {
            self.rho[(j, j)].im = 0.0;
            for k in (j + 1)..d {
                let avg = (self.rho[(j, k)] + self.rho[(k, j)].conj()) * 0.5;
                self.rho[(j, k)] = avg;
                self.rho[(k, j)] = avg.conj();
            }
        }
        let tr = self.rho.trace().re;
        let drift = (tr - 1.0).abs();
        if tr > 0.0 {
            self.rho /= C64::new(tr, 0.0);
        }
        drift
    }
}
