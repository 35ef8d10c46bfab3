//! Detailed-balanced GKLS generators: the damped-oscillator builder, a
//! generic eigenoperator builder, Heisenberg-picture propagation, the
//! theta-integral via a Drazin-type pseudoinverse, spectral gaps and
//! detailed-balance residuals.
//!
//! Vectorization convention is column-stacking: vec(X A Y) = (Y^T (x) X) vec(A).
//! All vectorized representations live in the eigenbasis of the Hamiltonian,
//! where the stationary Gibbs state is diagonal.
//!
//! When every jump operator is a single-Bohr-frequency eigenoperator of H
//! (both builders guarantee this), the Heisenberg generator preserves the
//! Bohr-frequency sectors of the element basis |i><j|. The theta-integral
//! then reduces to one small linear solve per sector touched by the input,
//! which is what keeps the slow-driving pipeline tractable at large Fock
//! dimensions.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Norm, Solve};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::opalg::{self, gibbs_state, GibbsState, HermitianOperator};

const STATIONARITY_TOL: f64 = 1e-10;
const CENTERING_TOL: f64 = 1e-10;
const THETA_RESIDUAL_TOL: f64 = 1e-8;

/// One thermally paired transition between two eigenlevels of H.
///
/// `lower`/`upper` index eigenlevels in ascending-energy order; `gamma_up`
/// is the bare excitation rate. The decay rate is fixed by the KMS ratio
/// gamma_down/gamma_up = e^{beta omega} at construction.
#[derive(Debug, Clone, Copy)]
pub struct JumpSpec {
    pub lower: usize,
    pub upper: usize,
    pub gamma_up: f64,
}

#[derive(Debug, Clone)]
struct EigenRep {
    /// Jump operators rotated into H's eigenbasis, with their rates.
    jumps: Vec<(Array2<C64>, f64)>,
    /// Bohr-frequency sectors: groups of element-basis pairs (i, j) with a
    /// common frequency E_i - E_j. `None` when a jump operator mixes
    /// frequencies, in which case only the dense path is available.
    sectors: Option<Vec<Sector>>,
}

#[derive(Debug, Clone)]
struct Sector {
    pairs: Vec<(usize, usize)>,
    /// True for the sector containing the diagonal (zero Bohr frequency),
    /// which hosts the kernel of the Heisenberg generator.
    has_kernel: bool,
    matrix: OnceLock<Array2<C64>>,
}

/// A GKLS generator with faithful Gibbs stationary state.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    dim: usize,
    hamiltonian: HermitianOperator,
    jumps: Vec<(Array2<C64>, f64)>,
    stationary: GibbsState,
    eigen: OnceLock<EigenRep>,
    dense: OnceLock<Array2<C64>>,
    dense_eig: OnceLock<(Array1<C64>, Array2<C64>, Array2<C64>)>,
    spectrum: OnceLock<Array1<C64>>,
}

impl Lindbladian {
    /// Assembles a generator from explicit parts and validates stationarity
    /// of the Gibbs state at `beta`.
    pub fn new(
        hamiltonian: HermitianOperator,
        jumps: Vec<(Array2<C64>, f64)>,
        beta: f64,
    ) -> Result<Self> {
        let l = Self::from_raw_parts(hamiltonian, jumps, beta)?;
        let residual = l.stationarity_residual();
        if residual > STATIONARITY_TOL {
            return Err(Error::Domain(format!(
                "Gibbs state is not stationary: residual {residual:.3e}"
            )));
        }
        Ok(l)
    }

    /// Assembles a generator without the stationarity check. Intended for
    /// diagnostics such as deliberately non-detailed-balanced fixtures; the
    /// attached Gibbs state is then only a reference state.
    pub fn from_raw_parts(
        hamiltonian: HermitianOperator,
        jumps: Vec<(Array2<C64>, f64)>,
        beta: f64,
    ) -> Result<Self> {
        let dim = hamiltonian.dim();
        for (op, rate) in &jumps {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: op.nrows() });
            }
            if !rate.is_finite() || *rate < 0.0 {
                return Err(Error::Domain(format!("jump rate must be >= 0, got {rate}")));
            }
        }
        let stationary = gibbs_state(&hamiltonian, beta)?;
        Ok(Self {
            dim,
            hamiltonian,
            jumps,
            stationary,
            eigen: OnceLock::new(),
            dense: OnceLock::new(),
            dense_eig: OnceLock::new(),
            spectrum: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[(Array2<C64>, f64)] {
        &self.jumps
    }

    pub fn stationary(&self) -> &GibbsState {
        &self.stationary
    }

    /// ||L(pi)||_F / ||pi||_F for the Schroedinger-picture generator.
    pub fn stationarity_residual(&self) -> f64 {
        let pi = self.stationary.pi().entries();
        let h = self.hamiltonian.entries();
        let i = C64::new(0.0, 1.0);
        let mut out = (h.dot(pi) - pi.dot(h)).mapv(|z| -i * z);
        for (l, rate) in &self.jumps {
            if *rate == 0.0 {
                continue;
            }
            let ld = opalg::dagger(l);
            let ldl = ld.dot(l);
            let sandwich = l.dot(pi).dot(&ld);
            let anti = ldl.dot(pi) + pi.dot(&ldl);
            out = out + (sandwich - anti.mapv(|z| 0.5 * z)).mapv(|z| *rate * z);
        }
        out.norm_l2() / pi.norm_l2().max(1e-300)
    }

    /// Heisenberg generator applied to an operator given in the ORIGINAL
    /// basis: L*(A) = i[H, A] + sum_x gamma (L^dag A L - {L^dag L, A}/2).
    pub fn apply_heisenberg(&self, a: &Array2<C64>) -> Array2<C64> {
        let h = self.hamiltonian.entries();
        let i = C64::new(0.0, 1.0);
        let mut out = (h.dot(a) - a.dot(h)).mapv(|z| i * z);
        for (l, rate) in &self.jumps {
            if *rate == 0.0 {
                continue;
            }
            let ld = opalg::dagger(l);
            let ldl = ld.dot(l);
            let sandwich = ld.dot(a).dot(l);
            let anti = ldl.dot(a) + a.dot(&ldl);
            out = out + (sandwich - anti.mapv(|z| 0.5 * z)).mapv(|z| *rate * z);
        }
        out
    }

    /// Trace-preservation residual ||L*(I)||_F.
    pub fn unitality_residual(&self) -> f64 {
        self.apply_heisenberg(&Array2::eye(self.dim)).norm_l2()
    }

    fn eigen_rep(&self) -> &EigenRep {
        self.eigen.get_or_init(|| {
            let u = self.stationary.basis();
            let energies = self.stationary.energies();
            let jumps: Vec<(Array2<C64>, f64)> = self
                .jumps
                .iter()
                .filter(|(_, r)| *r > 0.0)
                .map(|(l, r)| (opalg::to_basis(l, u), *r))
                .collect();
            let sectors = build_sectors(energies, &jumps);
            EigenRep { jumps, sectors }
        })
    }

    /// True when the Bohr-sector fast path is available.
    pub fn is_eigenoperator_structured(&self) -> bool {
        self.eigen_rep().sectors.is_some()
    }

    /// L*(E_kl) for an element-basis matrix in H's eigenbasis, exploiting
    /// rank-1 structure. O(d^2) per call.
    fn apply_heisenberg_eigen_rank1(&self, k: usize, l: usize) -> Array2<C64> {
        let d = self.dim;
        let rep = self.eigen_rep();
        let energies = self.stationary.energies();
        let mut out = Array2::<C64>::zeros((d, d));
        out[[k, l]] = C64::new(0.0, energies[k] - energies[l]);
        for (le, rate) in &rep.jumps {
            // L^dag E_kl L: outer product of conj(row k of L) and row l of L.
            for p in 0..d {
                let lkp = le[[k, p]].conj();
                if lkp.norm_sqr() == 0.0 {
                    continue;
                }
                for q in 0..d {
                    out[[p, q]] += *rate * lkp * le[[l, q]];
                }
            }
            // -(1/2){L^dag L, E_kl}: L^dag L column k and row l contributions.
            for p in 0..d {
                let mut ldl_pk = C64::new(0.0, 0.0);
                let mut ldl_lp = C64::new(0.0, 0.0);
                for m in 0..d {
                    ldl_pk += le[[m, p]].conj() * le[[m, k]];
                    ldl_lp += le[[m, l]].conj() * le[[m, p]];
                }
                out[[p, l]] -= 0.5 * *rate * ldl_pk;
                out[[k, p]] -= 0.5 * *rate * ldl_lp;
            }
        }
        out
    }

    fn sector_matrix(&self, sector_idx: usize) -> &Array2<C64> {
        let rep = self.eigen_rep();
        let sectors = rep.sectors.as_ref().expect("sector path unavailable");
        let sector = &sectors[sector_idx];
        sector.matrix.get_or_init(|| {
            let s = sector.pairs.len();
            let mut m = Array2::<C64>::zeros((s, s));
            for (col, &(k, l)) in sector.pairs.iter().enumerate() {
                let image = self.apply_heisenberg_eigen_rank1(k, l);
                for (row, &(i, j)) in sector.pairs.iter().enumerate() {
                    m[[row, col]] = image[[i, j]];
                }
            }
            m
        })
    }

    /// Dense d^2 x d^2 matrix of the Heisenberg generator in H's eigenbasis,
    /// column-stacking convention.
    pub fn dense_heisenberg(&self) -> &Array2<C64> {
        self.dense.get_or_init(|| {
            let d = self.dim;
            let mut m = Array2::<C64>::zeros((d * d, d * d));
            for l in 0..d {
                for k in 0..d {
                    let col = vec_index(k, l, d);
                    let image = self.apply_heisenberg_eigen_rank1(k, l);
                    for j in 0..d {
                        for i in 0..d {
                            m[[vec_index(i, j, d), col]] = image[[i, j]];
                        }
                    }
                }
            }
            m
        })
    }

    fn dense_eig(&self) -> Result<&(Array1<C64>, Array2<C64>, Array2<C64>)> {
        if let Some(cached) = self.dense_eig.get() {
            return Ok(cached);
        }
        let m = self.dense_heisenberg();
        let (values, vectors) = m.eig()?;
        use ndarray_linalg::Inverse;
        let inv = vectors.inv()?;
        let _ = self.dense_eig.set((values, vectors, inv));
        Ok(self.dense_eig.get().unwrap())
    }

    /// All d^2 eigenvalues of the vectorized Heisenberg generator.
    pub fn spectrum(&self) -> Result<&Array1<C64>> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let values = if self.is_eigenoperator_structured() {
            let sectors_len = self.eigen_rep().sectors.as_ref().unwrap().len();
            let mut all = Vec::with_capacity(self.dim * self.dim);
            for idx in 0..sectors_len {
                let m = self.sector_matrix(idx);
                let (vals, _) = m.eig()?;
                all.extend(vals.iter().cloned());
            }
            Array1::from_vec(all)
        } else {
            self.dense_eig()?.0.clone()
        };
        let _ = self.spectrum.set(values);
        Ok(self.spectrum.get().unwrap())
    }

    /// Minimum decay rate |Re lambda| over the nonzero spectrum. Errors if
    /// the kernel is not one-dimensional.
    pub fn spectral_gap(&self) -> Result<f64> {
        let spec = self.spectrum()?;
        let scale = spec.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-300);
        let kernel_count = spec.iter().filter(|z| z.norm() <= 1e-9 * scale).count();
        if kernel_count != 1 {
            return Err(Error::DegenerateKernel);
        }
        let gap = spec
            .iter()
            .filter(|z| z.norm() > 1e-9 * scale)
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min);
        if !gap.is_finite() || gap < 1e-12 {
            return Err(Error::Conditioning(format!("near-zero spectral gap {gap:.3e}")));
        }
        Ok(gap)
    }

    /// e^{theta L*}(A), computed through the eigendecomposition of the
    /// vectorized generator. Hermiticity of the input is preserved.
    pub fn heisenberg_propagate(
        &self,
        a: &HermitianOperator,
        theta: f64,
    ) -> Result<HermitianOperator> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim() });
        }
        if !theta.is_finite() || theta < 0.0 {
            return Err(Error::Domain(format!("theta must be finite and >= 0, got {theta}")));
        }
        let d = self.dim;
        let ae = self.stationary.to_eigenbasis(a);
        let v = vectorize(&ae);
        let (values, vectors, inv) = self.dense_eig()?;
        let mut coeffs = inv.dot(&v);
        for (c, lam) in coeffs.iter_mut().zip(values.iter()) {
            *c *= (*lam * theta).exp();
        }
        let out_vec = vectors.dot(&coeffs);
        let out = unvectorize(&out_vec, d);
        let back = self.stationary.from_eigenbasis(&out);
        let herm = hermitize(&back);
        Ok(HermitianOperator::from_hermitian_unchecked(herm))
    }

    /// int_0^infty e^{theta L*}(dA) dtheta for a centered dA, computed as the
    /// negated inverse of the generator off its stationary kernel. The
    /// returned R satisfies L*(R) = -dA.
    pub fn theta_integral(&self, da: &HermitianOperator) -> Result<HermitianOperator> {
        if da.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: da.dim() });
        }
        let scale = da.frobenius_norm().max(1e-300);
        let mean = self.stationary.expectation(da)?;
        if mean.abs() > CENTERING_TOL * scale.max(1.0) {
            return Err(Error::Uncentered { mean });
        }
        if scale <= 1e-300 {
            return Ok(HermitianOperator::zeros(self.dim));
        }

        let ae = self.stationary.to_eigenbasis(da);
        let re = if self.is_eigenoperator_structured() {
            self.theta_integral_sectored(&ae)?
        } else {
            self.theta_integral_dense(&ae)?
        };
        // Residual identity check: L*(R) = -dA.
        let r_orig = self.stationary.from_eigenbasis(&re);
        let resid = (self.apply_heisenberg(&r_orig) + da.entries()).norm_l2() / scale;
        if resid > THETA_RESIDUAL_TOL {
            return Err(Error::Conditioning(format!(
                "theta-integral residual {resid:.3e} exceeds {THETA_RESIDUAL_TOL:.1e}"
            )));
        }
        Ok(HermitianOperator::from_hermitian_unchecked(hermitize(&r_orig)))
    }

    fn theta_integral_sectored(&self, ae: &Array2<C64>) -> Result<Array2<C64>> {
        let d = self.dim;
        let rep = self.eigen_rep();
        let sectors = rep.sectors.as_ref().unwrap();
        let norm = ae.norm_l2().max(1e-300);
        let mut out = Array2::<C64>::zeros((d, d));
        let p = self.stationary.populations();
        for (idx, sector) in sectors.iter().enumerate() {
            let s = sector.pairs.len();
            let mut rhs = Array1::<C64>::zeros(s);
            let mut support = false;
            for (row, &(i, j)) in sector.pairs.iter().enumerate() {
                rhs[row] = -ae[[i, j]];
                if ae[[i, j]].norm() > 1e-15 * norm {
                    support = true;
                }
            }
            if !support {
                continue;
            }
            let solution = if sector.has_kernel {
                // Border out the kernel: M = B - u w^T with u the identity
                // direction and w the stationary weights; on centered input
                // the solve stays in the tr(pi X) = 0 subspace.
                let base = self.sector_matrix(idx);
                let mut m = base.clone();
                for (row, &(i, j)) in sector.pairs.iter().enumerate() {
                    if i != j {
                        continue;
                    }
                    for (col, &(k, l)) in sector.pairs.iter().enumerate() {
                        if k == l {
                            m[[row, col]] -= C64::new(p[k], 0.0);
                        }
                    }
                }
                m.solve(&rhs)?
            } else {
                self.sector_matrix(idx).solve(&rhs)?
            };
            for (row, &(i, j)) in sector.pairs.iter().enumerate() {
                out[[i, j]] = solution[row];
            }
        }
        Ok(out)
    }

    fn theta_integral_dense(&self, ae: &Array2<C64>) -> Result<Array2<C64>> {
        let d = self.dim;
        let base = self.dense_heisenberg();
        let p = self.stationary.populations();
        let mut m = base.clone();
        // Same bordering as the sector path, on the full d^2 space.
        for i in 0..d {
            let row = vec_index(i, i, d);
            for k in 0..d {
                m[[row, vec_index(k, k, d)]] -= C64::new(p[k], 0.0);
            }
        }
        let rhs = vectorize(ae).mapv(|z| -z);
        let sol = m.solve(&rhs)?;
        Ok(unvectorize(&sol, d))
    }
}

fn vec_index(row: usize, col: usize, d: usize) -> usize {
    col * d + row
}

fn vectorize(a: &Array2<C64>) -> Array1<C64> {
    let d = a.nrows();
    Array1::from_shape_fn(d * d, |n| a[[n % d, n / d]])
}

fn unvectorize(v: &Array1<C64>, d: usize) -> Array2<C64> {
    Array2::from_shape_fn((d, d), |(i, j)| v[vec_index(i, j, d)])
}

fn hermitize(a: &Array2<C64>) -> Array2<C64> {
    let d = a.nrows();
    Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (a[[i, j]] + a[[j, i]].conj()))
}

/// Groups element-basis pairs by Bohr frequency, provided every jump is a
/// single-frequency eigenoperator of H.
fn build_sectors(energies: &Array1<f64>, jumps: &[(Array2<C64>, f64)]) -> Option<Vec<Sector>> {
    let d = energies.len();
    let scale = energies.iter().map(|e| e.abs()).fold(1.0f64, f64::max);
    let freq_tol = 1e-9 * scale;

    for (le, _) in jumps {
        let max = le.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if max == 0.0 {
            continue;
        }
        let mut freq: Option<f64> = None;
        for i in 0..d {
            for j in 0..d {
                if le[[i, j]].norm() > 1e-12 * max {
                    let w = energies[j] - energies[i];
                    match freq {
                        None => freq = Some(w),
                        Some(f) if (f - w).abs() > freq_tol => return None,
                        _ => {}
                    }
                }
            }
        }
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            pairs.push((energies[i] - energies[j], i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut sectors: Vec<Sector> = Vec::new();
    let mut current: Vec<(usize, usize)> = Vec::new();
    let mut current_freq = f64::NAN;
    for (w, i, j) in pairs {
        if current.is_empty() || (w - current_freq).abs() <= freq_tol {
            if current.is_empty() {
                current_freq = w;
            }
            current.push((i, j));
        } else {
            sectors.push(finish_sector(std::mem::take(&mut current)));
            current_freq = w;
            current.push((i, j));
        }
    }
    if !current.is_empty() {
        sectors.push(finish_sector(current));
    }
    Some(sectors)
}

fn finish_sector(pairs: Vec<(usize, usize)>) -> Sector {
    let has_kernel = pairs.iter().any(|&(i, j)| i == j);
    Sector { pairs, has_kernel, matrix: OnceLock::new() }
}

/// Annihilation operator on a truncated Fock space.
pub fn annihilation(dim: usize) -> Array2<C64> {
    let mut a = Array2::<C64>::zeros((dim, dim));
    for n in 1..dim {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Default tail-population tolerance for direct oscillator construction.
/// The slow-driving pipeline escalates the dimension against a tighter
/// target of its own.
pub const OSCILLATOR_TAIL_TOL_DEFAULT: f64 = 1e-6;

/// Damped harmonic oscillator: H = omega (a^dag a + 1/2) on `dim` Fock
/// levels, jump `a` at rate Gamma (N_beta + 1) and `a^dag` at rate
/// Gamma N_beta.
pub fn build_oscillator(omega: f64, temperature: f64, gamma: f64, dim: usize) -> Result<Lindbladian> {
    build_oscillator_with_tail_tol(omega, temperature, gamma, dim, OSCILLATOR_TAIL_TOL_DEFAULT)
}

pub fn build_oscillator_with_tail_tol(
    omega: f64,
    temperature: f64,
    gamma: f64,
    dim: usize,
    tail_tol: f64,
) -> Result<Lindbladian> {
    if omega <= 0.0 || temperature <= 0.0 || gamma <= 0.0 {
        return Err(Error::Domain(format!(
            "oscillator parameters must be positive: omega={omega}, T={temperature}, Gamma={gamma}"
        )));
    }
    if dim < 2 {
        return Err(Error::Domain(format!("oscillator needs dim >= 2, got {dim}")));
    }
    let x = omega / temperature;
    // Population of levels >= dim in the untruncated Gibbs state.
    let tail = (-x * dim as f64).exp();
    if tail >= tail_tol {
        let suggested = ((tail_tol.ln() / -x).ceil() as usize).max(dim) + 2;
        return Err(Error::Truncation { dim, tail, suggested });
    }
    let n_beta = 1.0 / x.exp_m1();
    let diag: Vec<f64> = (0..dim).map(|n| omega * (n as f64 + 0.5)).collect();
    let h = HermitianOperator::from_real_diag(&diag);
    let a = annihilation(dim);
    let a_dag = opalg::dagger(&a);
    let mut jumps = vec![(a, gamma * (n_beta + 1.0))];
    if n_beta > 0.0 {
        jumps.push((a_dag, gamma * n_beta));
    }
    Lindbladian::new(h, jumps, 1.0 / temperature)
}

/// Detailed-balanced generator from eigenbasis transition pairs with
/// KMS-ratio rates. Requires a nondegenerate spectrum and a connected
/// transition graph.
pub fn build_detailed_balanced(
    h: &HermitianOperator,
    beta: f64,
    specs: &[JumpSpec],
) -> Result<Lindbladian> {
    let d = h.dim();
    let spec_data = h.spectrum().clone();
    let energies = &spec_data.values;
    let scale = energies.iter().map(|e| e.abs()).fold(1.0f64, f64::max);
    let mut min_gap = f64::INFINITY;
    for i in 1..d {
        min_gap = min_gap.min(energies[i] - energies[i - 1]);
    }
    if min_gap < 1e-10 * scale {
        return Err(Error::DegenerateSpectrum { min_gap });
    }

    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }

    let mut jumps = Vec::with_capacity(2 * specs.len());
    for spec in specs {
        if spec.lower >= d || spec.upper >= d || spec.lower == spec.upper {
            return Err(Error::Domain(format!(
                "invalid transition pair ({}, {}) for dim {d}",
                spec.lower, spec.upper
            )));
        }
        if !spec.gamma_up.is_finite() || spec.gamma_up < 0.0 {
            return Err(Error::Domain(format!("bare rate must be >= 0, got {}", spec.gamma_up)));
        }
        let (lo, hi) =
            if energies[spec.lower] <= energies[spec.upper] { (spec.lower, spec.upper) } else {
                (spec.upper, spec.lower)
            };
        let omega = energies[hi] - energies[lo];
        let log_ratio = beta * omega;
        if log_ratio > 700.0 {
            return Err(Error::Domain(format!(
                "KMS ratio e^{{beta omega}} overflows for beta*omega = {log_ratio:.3e}"
            )));
        }
        let gamma_down = spec.gamma_up * log_ratio.exp();
        // |hi><lo| excites, |lo><hi| decays; built in the eigenbasis and
        // rotated back to the original basis.
        let mut up = Array2::<C64>::zeros((d, d));
        up[[hi, lo]] = C64::new(1.0, 0.0);
        let mut down = Array2::<C64>::zeros((d, d));
        down[[lo, hi]] = C64::new(1.0, 0.0);
        let u = &spec_data.vectors;
        jumps.push((opalg::from_basis(&up, u), spec.gamma_up));
        jumps.push((opalg::from_basis(&down, u), gamma_down));

        if spec.gamma_up > 0.0 {
            let (ra, rb) = (find(&mut parent, lo), find(&mut parent, hi));
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    if (0..d).any(|i| find(&mut parent, i) != root) {
        return Err(Error::DisconnectedTransitions);
    }
    Lindbladian::new(h.clone(), jumps, beta)
}

/// Residual of the detailed-balance identity: constructs the s-dual from
/// its defining relation (entrywise in pi's eigenbasis) and returns
/// ||Ltilde - (L* - 2H)||_F / ||L*||_F.
pub fn detailed_balance_residual(l: &Lindbladian, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("s must lie in [0, 1], got {s}")));
    }
    let d = l.dim();
    l.stationary().faithful_populations()?;
    let lp = l.stationary().log_populations();
    let lmat = l.dense_heisenberg();
    let energies = l.stationary().energies();

    let mut tilde = Array2::<C64>::zeros((d * d, d * d));
    for a in 0..d {
        for b in 0..d {
            let col = vec_index(a, b, d);
            for c in 0..d {
                for dd in 0..d {
                    let exponent = (1.0 - s) * (lp[a] - lp[dd]) + s * (lp[b] - lp[c]);
                    if exponent.abs() > 700.0 {
                        return Err(Error::Conditioning(format!(
                            "s-dual weight overflows: exponent {exponent:.3e}"
                        )));
                    }
                    tilde[[vec_index(dd, c, d), col]] =
                        exponent.exp() * lmat[[vec_index(b, a, d), vec_index(c, dd, d)]];
                }
            }
        }
    }

    // L* - 2H with H the vectorized commutator superoperator i[H, .],
    // diagonal in the element basis of the eigenbasis.
    let mut target = lmat.clone();
    for i in 0..d {
        for j in 0..d {
            let n = vec_index(i, j, d);
            target[[n, n]] -= 2.0 * C64::new(0.0, energies[i] - energies[j]);
        }
    }
    let denom = lmat.norm_l2().max(1e-300);
    Ok((&tilde - &target).norm_l2() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vectorization_identity() {
        // vec(X A Y) = (Y^T (x) X) vec(A) under column stacking.
        let x = array![[C64::new(1.0, 0.5), C64::new(0.0, -1.0)], [C64::new(2.0, 0.0), C64::new(0.3, 0.2)]];
        let a = array![[C64::new(0.4, 0.0), C64::new(1.0, 1.0)], [C64::new(-0.2, 0.3), C64::new(0.0, 0.9)]];
        let y = array![[C64::new(0.7, -0.1), C64::new(0.2, 0.0)], [C64::new(0.0, 0.4), C64::new(1.1, 0.0)]];
        let direct = vectorize(&x.dot(&a).dot(&y));
        let d = 2;
        let mut kron = Array2::<C64>::zeros((d * d, d * d));
        let yt = y.t();
        for bi in 0..d {
            for bj in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        kron[[bi * d + i, bj * d + j]] = yt[[bi, bj]] * x[[i, j]];
                    }
                }
            }
        }
        let via_kron = kron.dot(&vectorize(&a));
        let diff: f64 = direct.iter().zip(via_kron.iter()).map(|(a, b)| (a - b).norm()).sum();
        assert!(diff < 1e-13);
    }

    #[test]
    fn oscillator_construction_and_stationarity() {
        let l = build_oscillator(1.0, 2.0, 0.5, 30).unwrap();
        let n_beta = 1.0 / 0.5f64.exp_m1();
        assert!((n_beta - 1.5414940825367982).abs() < 1e-12);
        assert!((l.jumps()[0].1 - 0.5 * (n_beta + 1.0)).abs() < 1e-12);
        assert!((l.jumps()[1].1 - 0.5 * n_beta).abs() < 1e-12);
        assert!(l.stationarity_residual() < 1e-10);
        assert!(l.unitality_residual() < 1e-11);
        assert!(l.is_eigenoperator_structured());
    }

    #[test]
    fn oscillator_truncation_refused() {
        let err = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 30, 1e-12).unwrap_err();
        match err {
            Error::Truncation { suggested, .. } => assert!(suggested >= 56),
            other => panic!("expected truncation error, got {other}"),
        }
        // The suggested dimension is accepted.
        if let Error::Truncation { suggested, .. } =
            build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 30, 1e-12).unwrap_err()
        {
            assert!(build_oscillator_with_tail_tol(1.0, 2.0, 0.5, suggested, 1e-12).is_ok());
        }
    }

    #[test]
    fn oscillator_zero_temperature_limit() {
        let l = build_oscillator(1.0, 1e-3, 0.5, 4).unwrap();
        let n_beta = 1.0 / (1.0f64 / 1e-3).exp_m1();
        assert!(n_beta < 1e-200);
        // Only the decay channel is active.
        assert_eq!(l.jumps().len(), 1);
        // Stationary state is (numerically) the ground state.
        assert!((l.stationary().populations()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillator_spectral_gap_is_half_gamma() {
        let l = build_oscillator(1.0, 2.0, 0.5, 30).unwrap();
        let gap = l.spectral_gap().unwrap();
        // Within truncation error of the infinite-dimensional value Gamma/2.
        assert!((gap - 0.25).abs() < 1e-4, "gap {gap}");
    }

    #[test]
    fn gap_scales_linearly_with_rates() {
        let l1 = build_oscillator_with_tail_tol(1.0, 2.0, 0.4, 25, 1e-4).unwrap();
        let l2 = build_oscillator_with_tail_tol(1.0, 2.0, 0.8, 25, 1e-4).unwrap();
        let g1 = l1.spectral_gap().unwrap();
        let g2 = l2.spectral_gap().unwrap();
        assert!((g2 - 2.0 * g1).abs() < 1e-10 * g2);
    }

    #[test]
    fn qubit_detailed_balanced_builder() {
        let h = HermitianOperator::from_real_diag(&[0.0, 1.0]);
        let l = build_detailed_balanced(&h, 1.0, &[JumpSpec { lower: 0, upper: 1, gamma_up: 0.3 }])
            .unwrap();
        let gamma_down = l.jumps()[1].1;
        assert!((gamma_down - 0.3 * 1.0f64.exp()).abs() < 1e-12);
        assert!(l.stationarity_residual() < 1e-12);
        // Gap determined numerically from the spectrum scan.
        let gap = l.spectral_gap().unwrap();
        let population_rate = 0.3 * (1.0 + 1.0f64.exp());
        let coherence_rate = 0.5 * population_rate;
        assert!((gap - coherence_rate.min(population_rate)).abs() < 1e-9, "gap {gap}");
    }

    #[test]
    fn infinite_temperature_symmetry() {
        let h = HermitianOperator::from_real_diag(&[0.0, 1.0]);
        let l = build_detailed_balanced(&h, 1e-9, &[JumpSpec { lower: 0, upper: 1, gamma_up: 0.3 }])
            .unwrap();
        let (g_up, g_down) = (l.jumps()[0].1, l.jumps()[1].1);
        assert!((g_down - g_up).abs() < 1e-8);
        assert!((l.stationary().populations()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn three_level_ladder_unique_steady_state() {
        let h = HermitianOperator::from_real_diag(&[0.0, 0.9, 2.1]);
        let specs = [
            JumpSpec { lower: 0, upper: 1, gamma_up: 0.2 },
            JumpSpec { lower: 1, upper: 2, gamma_up: 0.4 },
        ];
        let l = build_detailed_balanced(&h, 0.7, &specs).unwrap();
        assert!(l.spectral_gap().unwrap() > 0.0);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let h = HermitianOperator::from_real_diag(&[0.0, 0.9, 2.1]);
        let specs = [JumpSpec { lower: 0, upper: 1, gamma_up: 0.2 }];
        assert!(matches!(
            build_detailed_balanced(&h, 0.7, &specs),
            Err(Error::DisconnectedTransitions)
        ));
    }

    #[test]
    fn degenerate_spectrum_rejected() {
        let h = HermitianOperator::from_real_diag(&[0.0, 0.0, 1.0]);
        let specs = [JumpSpec { lower: 0, upper: 2, gamma_up: 0.2 }];
        assert!(matches!(
            build_detailed_balanced(&h, 0.7, &specs),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn propagate_identity_and_unitality() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 8, 1e-1).unwrap();
        let a = HermitianOperator::from_real_diag(&[0.3, -0.1, 0.5, 0.0, 0.2, -0.4, 0.1, 0.6]);
        let same = l.heisenberg_propagate(&a, 0.0).unwrap();
        assert!((same.entries() - a.entries()).norm_l2() < 1e-10);
        let id = HermitianOperator::identity(8);
        let still_id = l.heisenberg_propagate(&id, 3.7).unwrap();
        assert!((still_id.entries() - id.entries()).norm_l2() < 1e-9);
    }

    #[test]
    fn propagate_decays_to_stationary_mean() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 12, 1e-2).unwrap();
        let h = l.hamiltonian().clone();
        let gap = l.spectral_gap().unwrap();
        let theta = 60.0 / gap;
        let far = l.heisenberg_propagate(&h, theta).unwrap();
        let mean = l.stationary().expectation(&h).unwrap();
        let mut expected = Array2::<C64>::eye(12);
        expected.mapv_inplace(|z| z * mean);
        assert!((far.entries() - &expected).norm_l2() < 1e-8 * mean.abs());
    }

    #[test]
    fn semigroup_property() {
        let l = build_oscillator_with_tail_tol(1.2, 1.5, 0.7, 6, 1e-1).unwrap();
        let a = crate::opalg::HermitianOperator::new(Array2::from_shape_fn((6, 6), |(i, j)| {
            let v = C64::new(
                0.1 * ((i * 7 + j * 3) % 5) as f64 - 0.2,
                0.05 * (i as f64 - j as f64),
            );
            if i == j { C64::new(v.re, 0.0) } else { v }
        }) + &crate::opalg::dagger(&Array2::from_shape_fn((6, 6), |(i, j)| {
            C64::new(0.1 * ((i * 7 + j * 3) % 5) as f64 - 0.2, 0.05 * (i as f64 - j as f64))
        })))
        .unwrap();
        let one = l.heisenberg_propagate(&l.heisenberg_propagate(&a, 0.4).unwrap(), 0.9).unwrap();
        let two = l.heisenberg_propagate(&a, 1.3).unwrap();
        assert!((one.entries() - two.entries()).norm_l2() < 1e-9 * a.frobenius_norm().max(1.0));
    }

    #[test]
    fn theta_integral_zero_and_residual() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 20, 1e-3).unwrap();
        let zero = HermitianOperator::zeros(20);
        let r = l.theta_integral(&zero).unwrap();
        assert!(r.frobenius_norm() < 1e-14);

        // Centered occupation observable: classical population sector.
        let number = HermitianOperator::from_real_diag(
            &(0..20).map(|n| n as f64).collect::<Vec<_>>(),
        );
        let centered = crate::opalg::delta_centered(l.stationary(), &number).unwrap();
        let r = l.theta_integral(&centered).unwrap();
        let resid = (l.apply_heisenberg(r.entries()) + centered.entries()).norm_l2()
            / centered.frobenius_norm();
        assert!(resid < 1e-9, "residual {resid}");
    }

    #[test]
    fn theta_integral_rejects_uncentered() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 10, 1e-2).unwrap();
        let number =
            HermitianOperator::from_real_diag(&(0..10).map(|n| n as f64).collect::<Vec<_>>());
        assert!(matches!(l.theta_integral(&number), Err(Error::Uncentered { .. })));
    }

    #[test]
    fn theta_integral_linearity() {
        let l = build_oscillator_with_tail_tol(1.0, 1.4, 0.6, 10, 1e-2).unwrap();
        let pi = l.stationary();
        let a = crate::opalg::delta_centered(
            pi,
            &HermitianOperator::from_real_diag(&(0..10).map(|n| (n * n) as f64).collect::<Vec<_>>()),
        )
        .unwrap();
        let b = {
            let mut m = Array2::<C64>::zeros((10, 10));
            for n in 0..8 {
                m[[n, n + 2]] = C64::new(0.4 * (n as f64 + 1.0), 0.0);
                m[[n + 2, n]] = C64::new(0.4 * (n as f64 + 1.0), 0.0);
            }
            crate::opalg::delta_centered(pi, &HermitianOperator::new(m).unwrap()).unwrap()
        };
        let combo = a.scaled(2.5).add(&b).unwrap();
        let r_combo = l.theta_integral(&combo).unwrap();
        let r_sep =
            l.theta_integral(&a).unwrap().scaled(2.5).add(&l.theta_integral(&b).unwrap()).unwrap();
        let scale = r_combo.frobenius_norm().max(1.0);
        assert!((r_combo.entries() - r_sep.entries()).norm_l2() < 1e-10 * scale);
    }

    #[test]
    fn theta_integral_matches_quadrature_oracle() {
        // Truncated integral of the semigroup against the pseudoinverse path.
        let l = build_oscillator_with_tail_tol(1.0, 1.8, 0.8, 8, 1e-1).unwrap();
        let pi = l.stationary();
        let number =
            HermitianOperator::from_real_diag(&(0..8).map(|n| n as f64).collect::<Vec<_>>());
        let da = crate::opalg::delta_centered(pi, &number).unwrap();
        let r = l.theta_integral(&da).unwrap();

        let gap = l.spectral_gap().unwrap();
        let theta_max = 40.0 / gap;
        let n = 8001;
        let mut samples: Vec<Array2<C64>> = Vec::with_capacity(n);
        for k in 0..n {
            let theta = theta_max * k as f64 / (n - 1) as f64;
            samples.push(l.heisenberg_propagate(&da, theta).unwrap().entries().clone());
        }
        let h = theta_max / (n - 1) as f64;
        let w = crate::quad::simpson_weights(n, h);
        let mut acc = Array2::<C64>::zeros((8, 8));
        for (sample, wk) in samples.iter().zip(w.iter()) {
            acc = acc + sample.mapv(|z| z * *wk);
        }
        let rel = (&acc - r.entries()).norm_l2() / r.frobenius_norm();
        assert!(rel < 1e-7, "quadrature mismatch {rel}");
    }

    #[test]
    fn detailed_balance_residual_small_for_builders() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 12, 1e-2).unwrap();
        let r = detailed_balance_residual(&l, 0.5).unwrap();
        assert!(r < 1e-9, "residual {r}");
        let h = HermitianOperator::from_real_diag(&[0.0, 0.9, 2.1]);
        let specs = [
            JumpSpec { lower: 0, upper: 1, gamma_up: 0.2 },
            JumpSpec { lower: 1, upper: 2, gamma_up: 0.4 },
        ];
        let l = build_detailed_balanced(&h, 0.7, &specs).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert!(detailed_balance_residual(&l, s).unwrap() < 1e-9);
        }
    }

    #[test]
    fn detailed_balance_violation_witness() {
        // Extra dephasing jump in a rotated basis breaks detailed balance.
        let h = HermitianOperator::from_real_diag(&[0.0, 1.0]);
        let mut jumps = vec![];
        {
            let l = build_detailed_balanced(
                &h,
                1.0,
                &[JumpSpec { lower: 0, upper: 1, gamma_up: 0.3 }],
            )
            .unwrap();
            jumps.extend(l.jumps().iter().cloned());
        }
        let rotated_dephasing = array![
            [C64::new(0.5, 0.0), C64::new(0.5, 0.0)],
            [C64::new(0.5, 0.0), C64::new(-0.5, 0.0)]
        ];
        jumps.push((rotated_dephasing, 0.8));
        let witness = Lindbladian::from_raw_parts(h, jumps, 1.0).unwrap();
        let r = detailed_balance_residual(&witness, 0.5).unwrap();
        assert!(r > 1e-3, "witness residual {r}");
    }

    #[test]
    fn unitary_only_generator_s_dual() {
        let h = HermitianOperator::from_real_diag(&[0.0, 0.7]);
        let l = Lindbladian::from_raw_parts(h, vec![], 1.0).unwrap();
        let r = detailed_balance_residual(&l, 0.5).unwrap();
        assert!(r < 1e-12, "unitary-only residual {r}");
        // No dissipation: theta-integral must refuse (no spectral gap).
        assert!(l.spectral_gap().is_err());
    }

    #[test]
    fn kernel_uniqueness_invariant() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 10, 1e-2).unwrap();
        let spec = l.spectrum().unwrap();
        let scale = spec.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let near_zero = spec.iter().filter(|z| z.norm() < 1e-9 * scale).count();
        assert_eq!(near_zero, 1);
        assert!(spec.iter().filter(|z| z.norm() >= 1e-9 * scale).all(|z| z.re < 0.0));
    }
}
