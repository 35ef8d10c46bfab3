//! Operator algebra on finite-dimensional Hilbert spaces: Hermitian
//! operators with cached spectral data, Gibbs states, the logarithmic and
//! arithmetic matrix means, and the skew covariance.
//!
//! All mean kernels are evaluated as eigenvalue functions in the eigenbasis
//! of the state; fractional powers of the state are never formed. Gibbs
//! populations are carried in log space so kernels stay exact at low
//! temperature.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Norm, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Relative tolerance under which a near-Hermitian input is symmetrized
/// instead of rejected.
const HERMITICITY_TOL: f64 = 1e-12;

/// Below this log-ratio the logarithmic mean switches to its Taylor form.
const LOG_MEAN_TAYLOR_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Real eigenvalues, ascending.
    pub values: Array1<f64>,
    /// Orthonormal eigenvectors as columns, aligned with `values`.
    pub vectors: Array2<C64>,
}

/// A dense d x d complex Hermitian matrix with a lazily computed spectral
/// decomposition.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    entries: Array2<C64>,
    spectrum: OnceLock<Spectrum>,
}

impl HermitianOperator {
    /// Validates squareness, finiteness and Hermiticity. Asymmetry below
    /// tolerance is symmetrized away; larger asymmetry is rejected.
    pub fn new(entries: Array2<C64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = entries.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
        let mut asym = 0.0f64;
        for i in 0..rows {
            for j in i..cols {
                asym = asym.max((entries[[i, j]] - entries[[j, i]].conj()).norm());
            }
        }
        if asym > HERMITICITY_TOL * scale {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        let mut sym = entries.clone();
        for i in 0..rows {
            for j in 0..cols {
                sym[[i, j]] = 0.5 * (entries[[i, j]] + entries[[j, i]].conj());
            }
        }
        Ok(Self { entries: sym, spectrum: OnceLock::new() })
    }

    /// Wraps a matrix already known to be exactly Hermitian.
    pub(crate) fn from_hermitian_unchecked(entries: Array2<C64>) -> Self {
        Self { entries, spectrum: OnceLock::new() }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Array2::zeros((d, d));
        for (i, &x) in diag.iter().enumerate() {
            m[[i, i]] = C64::new(x, 0.0);
        }
        Self::from_hermitian_unchecked(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_hermitian_unchecked(Array2::eye(dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_hermitian_unchecked(Array2::zeros((dim, dim)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm_l2()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_hermitian_unchecked(self.entries.mapv(|z| z * factor))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self::from_hermitian_unchecked(&self.entries + &other.entries))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self::from_hermitian_unchecked(&self.entries - &other.entries))
    }

    /// Lazy eigendecomposition with single-initialization semantics.
    /// Diagonal matrices short-circuit to a sort of the diagonal.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            if let Some(s) = self.diagonal_spectrum() {
                return s;
            }
            let (values, vectors) = self
                .entries
                .eigh(UPLO::Lower)
                .expect("eigh failed on validated Hermitian matrix");
            // The LAPACK result comes back conjugated through the row-major
            // round trip; columns of the conjugate are the eigenvectors
            // (H v = lambda v checked in tests).
            Spectrum { values, vectors: vectors.mapv(|z| z.conj()) }
        })
    }

    fn diagonal_spectrum(&self) -> Option<Spectrum> {
        let d = self.dim();
        let scale = self.entries.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
        for i in 0..d {
            for j in 0..d {
                if i != j && self.entries[[i, j]].norm() > 1e-15 * scale {
                    return None;
                }
            }
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            self.entries[[a, a]].re.partial_cmp(&self.entries[[b, b]].re).unwrap()
        });
        let values = Array1::from_iter(order.iter().map(|&i| self.entries[[i, i]].re));
        let mut vectors = Array2::zeros((d, d));
        for (col, &i) in order.iter().enumerate() {
            vectors[[i, col]] = C64::new(1.0, 0.0);
        }
        Some(Spectrum { values, vectors })
    }

    /// tr(rho * self) for a Hermitian rho, returned as a real number.
    pub fn real_trace_product(&self, rho: &Array2<C64>) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += rho[[i, j]] * self.entries[[j, i]];
            }
        }
        acc.re
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// U^dagger A U.
pub(crate) fn to_basis(a: &Array2<C64>, u: &Array2<C64>) -> Array2<C64> {
    let ud = dagger(u);
    ud.dot(a).dot(u)
}

/// U A U^dagger.
pub(crate) fn from_basis(a: &Array2<C64>, u: &Array2<C64>) -> Array2<C64> {
    u.dot(a).dot(&dagger(u))
}

pub(crate) fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// A Gibbs state pi = e^{-beta H}/Z together with its generating eigenbasis.
///
/// Populations are stored both as plain values and in log space; the log
/// representation is the source of truth for mean kernels.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pi: HermitianOperator,
    beta: f64,
    log_z: f64,
    /// Columns: eigenvectors of the generating Hamiltonian, ascending energy.
    basis: Array2<C64>,
    energies: Array1<f64>,
    populations: Array1<f64>,
    log_populations: Array1<f64>,
    /// True when `basis` is exactly the identity (diagonal Hamiltonian with
    /// ascending entries), making basis changes no-ops.
    identity_basis: bool,
}

impl GibbsState {
    pub fn dim(&self) -> usize {
        self.populations.len()
    }

    pub fn pi(&self) -> &HermitianOperator {
        &self.pi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn free_energy(&self) -> f64 {
        -self.log_z / self.beta
    }

    pub fn basis(&self) -> &Array2<C64> {
        &self.basis
    }

    pub fn energies(&self) -> &Array1<f64> {
        &self.energies
    }

    pub fn populations(&self) -> &Array1<f64> {
        &self.populations
    }

    pub fn log_populations(&self) -> &Array1<f64> {
        &self.log_populations
    }

    /// Populations as plain f64, rejecting any that underflowed the
    /// faithfulness floor. Operations that must invert or reweight by the
    /// populations directly go through this accessor.
    pub fn faithful_populations(&self) -> Result<&Array1<f64>> {
        let min_lp = self.log_populations.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_lp < (1e-300f64).ln() {
            return Err(Error::NotFaithful { min_log_population: min_lp });
        }
        Ok(&self.populations)
    }

    pub fn to_eigenbasis(&self, a: &HermitianOperator) -> Array2<C64> {
        if self.identity_basis {
            return a.entries().clone();
        }
        to_basis(a.entries(), &self.basis)
    }

    pub fn from_eigenbasis(&self, a: &Array2<C64>) -> Array2<C64> {
        if self.identity_basis {
            return a.clone();
        }
        from_basis(a, &self.basis)
    }

    /// tr(pi A).
    pub fn expectation(&self, a: &HermitianOperator) -> Result<f64> {
        check_dims(self.dim(), a.dim())?;
        let ae = self.to_eigenbasis(a);
        let terms: Vec<f64> =
            (0..self.dim()).map(|i| self.populations[i] * ae[[i, i]].re).collect();
        Ok(crate::quad::pairwise_sum(&terms))
    }
}

/// pi = e^{-beta H}/Z, computed in H's eigenbasis with the extremal
/// eigenvalue shifted out before exponentiation. log Z carries the shift.
pub fn gibbs_state(h: &HermitianOperator, beta: f64) -> Result<GibbsState> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Domain(format!("beta must be finite and positive, got {beta}")));
    }
    let spec = h.spectrum().clone();
    let e_min = spec.values[0];
    let log_weights: Array1<f64> = spec.values.mapv(|e| -beta * (e - e_min));
    let z_shifted: f64 = log_weights.iter().map(|lw| lw.exp()).sum();
    let log_z = z_shifted.ln() - beta * e_min;
    let log_populations = log_weights.mapv(|lw| lw - z_shifted.ln());
    let populations = log_populations.mapv(f64::exp);

    let d = h.dim();
    let mut pi_e = Array2::zeros((d, d));
    for i in 0..d {
        pi_e[[i, i]] = C64::new(populations[i], 0.0);
    }
    let identity_basis = spec
        .vectors
        .indexed_iter()
        .all(|((i, j), z)| *z == C64::new(if i == j { 1.0 } else { 0.0 }, 0.0));
    let pi = if identity_basis {
        HermitianOperator::from_hermitian_unchecked(pi_e)
    } else {
        HermitianOperator::from_hermitian_unchecked(from_basis(&pi_e, &spec.vectors))
    };
    Ok(GibbsState {
        pi,
        beta,
        log_z,
        basis: spec.vectors,
        energies: spec.values,
        populations,
        log_populations,
        identity_basis,
    })
}

/// Logarithmic mean of two populations given in log space:
/// L(x, y) = (x - y)/(ln x - ln y), L(x, x) = x.
fn log_mean(lp_i: f64, lp_j: f64) -> f64 {
    let u = lp_i - lp_j;
    if u.abs() < LOG_MEAN_TAYLOR_CUTOFF {
        // sinh(u/2)/(u/2) around the geometric midpoint, 3 terms.
        let g = (0.5 * (lp_i + lp_j)).exp();
        let u2 = u * u;
        g * (1.0 + u2 / 24.0 + u2 * u2 / 1920.0)
    } else {
        (lp_i.exp() - lp_j.exp()) / u
    }
}

fn arith_mean(lp_i: f64, lp_j: f64) -> f64 {
    0.5 * (lp_i.exp() + lp_j.exp())
}

fn apply_kernel(
    pi: &GibbsState,
    a: &HermitianOperator,
    kernel: impl Fn(f64, f64) -> f64,
) -> Result<HermitianOperator> {
    check_dims(pi.dim(), a.dim())?;
    let d = pi.dim();
    let lp = pi.log_populations();
    let mut ae = pi.to_eigenbasis(a);
    for i in 0..d {
        for j in 0..d {
            ae[[i, j]] *= kernel(lp[i], lp[j]);
        }
    }
    Ok(HermitianOperator::from_hermitian_unchecked(pi.from_eigenbasis(&ae)))
}

/// J_pi(A): entrywise logarithmic-mean kernel in pi's eigenbasis,
/// equal to the integral of pi^s A pi^{1-s} over s in [0, 1].
pub fn log_mean_apply(pi: &GibbsState, a: &HermitianOperator) -> Result<HermitianOperator> {
    apply_kernel(pi, a, log_mean)
}

/// S_pi(A) = (pi A + A pi)/2: entrywise arithmetic-mean kernel.
pub fn arith_mean_apply(pi: &GibbsState, a: &HermitianOperator) -> Result<HermitianOperator> {
    apply_kernel(pi, a, arith_mean)
}

/// Skew covariance I_pi(A, B): difference of the arithmetic- and
/// logarithmic-mean quadratic kernels. Vanishes when [A, pi] = 0.
pub fn skew_covariance(
    pi: &GibbsState,
    a: &HermitianOperator,
    b: &HermitianOperator,
) -> Result<f64> {
    check_dims(pi.dim(), a.dim())?;
    check_dims(pi.dim(), b.dim())?;
    let d = pi.dim();
    let lp = pi.log_populations();
    let ae = pi.to_eigenbasis(a);
    let be = pi.to_eigenbasis(b);
    let mut terms = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let overlap = (ae[[i, j]] * be[[i, j]].conj()).re;
            terms.push(overlap * (arith_mean(lp[i], lp[j]) - log_mean(lp[i], lp[j])));
        }
    }
    Ok(crate::quad::pairwise_sum(&terms))
}

/// A - tr(pi A) * I.
pub fn delta_centered(pi: &GibbsState, a: &HermitianOperator) -> Result<HermitianOperator> {
    let mean = pi.expectation(a)?;
    let mut out = a.entries().clone();
    for i in 0..a.dim() {
        out[[i, i]] -= C64::new(mean, 0.0);
    }
    Ok(HermitianOperator::from_hermitian_unchecked(out))
}
