//! Slow-driving thermodynamic functionals for periodically driven engines:
//! protocol representation, the two generalized inner products, entropy
//! production rate, power, heat flux, work fluctuations, the quantum
//! correction, relaxation timescale, efficiency bounds and the
//! uncertainty-relation residual.
//!
//! Every cycle functional is a time average over [0, tau] of quantities built
//! from the instantaneous stationary state pi(t) and the theta-integral of a
//! centered observable. Time integration uses composite Simpson with automatic
//! node doubling; integrand evaluations at distinct nodes are independent and
//! run in parallel with a deterministic pairwise reduction.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lindblad::Lindbladian;
use crate::opalg::{
    arith_mean_apply, delta_centered, log_mean_apply, skew_covariance, HermitianOperator,
};
use crate::quad::{pairwise_sum, simpson_from_samples};

/// Relative finite-difference step (in units of tau) for curves without an
/// analytic derivative.
pub const FD_STEP_REL: f64 = 1e-6;

/// Scalar control curve with optional analytic derivative. Without one,
/// derivatives fall back to central finite differences and the report is
/// flagged accordingly.
#[derive(Clone)]
pub struct Curve {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for Curve {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt.debug_struct("Curve").field("analytic_derivative", &self.df.is_some()).finish()
    }
}

impl Curve {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), df: None }
    }

    pub fn with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), df: Some(Arc::new(df)) }
    }

    pub fn constant(value: f64) -> Self {
        Self::with_derivative(move |_| value, |_| 0.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn derivative(&self, t: f64, fd_step: f64) -> f64 {
        match &self.df {
            Some(df) => df(t),
            None => ((self.f)(t + fd_step) - (self.f)(t - fd_step)) / (2.0 * fd_step),
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.df.is_some()
    }
}

/// Temperature schedule T(t) = T_c T_h / (T_h + (T_c - T_h) alpha(t))
/// interpolating between the cold bath at alpha = 0 and the hot bath at
/// alpha = 1. Equivalently, beta is affine in alpha.
#[derive(Clone, Debug)]
pub struct TemperatureProfile {
    t_c: f64,
    t_h: f64,
    alpha: Curve,
}

pub fn temperature_profile(t_c: f64, t_h: f64, alpha: Curve) -> Result<TemperatureProfile> {
    TemperatureProfile::new(t_c, t_h, alpha)
}

impl TemperatureProfile {
    pub fn new(t_c: f64, t_h: f64, alpha: Curve) -> Result<Self> {
        if !(t_c > 0.0) || !(t_h > t_c) {
            return Err(Error::Domain(format!(
                "temperature endpoints need 0 < T_c < T_h, got T_c={t_c}, T_h={t_h}"
            )));
        }
        Ok(Self { t_c, t_h, alpha })
    }

    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn t_h(&self) -> f64 {
        self.t_h
    }

    pub fn alpha(&self) -> &Curve {
        &self.alpha
    }

    pub fn temperature(&self, t: f64) -> Result<f64> {
        let a = self.alpha.value(t);
        if !(-1e-12..=1.0 + 1e-12).contains(&a) {
            return Err(Error::Protocol(format!("alpha({t}) = {a} outside [0, 1]")));
        }
        Ok(self.t_c * self.t_h / (self.t_h + (self.t_c - self.t_h) * a.clamp(0.0, 1.0)))
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        Ok(1.0 / self.temperature(t)?)
    }

    /// d(beta)/dt; beta is affine in alpha so only alpha's derivative enters.
    pub fn beta_dot(&self, t: f64, fd_step: f64) -> f64 {
        (1.0 / self.t_h - 1.0 / self.t_c) * self.alpha.derivative(t, fd_step)
    }
}

/// Closed driving cycle: duration plus the temperature schedule. The
/// mechanical part H(t) lives in the model implementing [`DrivenSystem`];
/// construction validates the thermal boundary conditions, models validate
/// the mechanical ones.
#[derive(Clone, Debug)]
pub struct Protocol {
    tau: f64,
    temperature: TemperatureProfile,
}

impl Protocol {
    pub fn new(tau: f64, temperature: TemperatureProfile) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("cycle duration must be positive, got {tau}")));
        }
        let p = Self { tau, temperature };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let alpha = &self.temperature.alpha;
        let a0 = alpha.value(0.0);
        let a1 = alpha.value(self.tau);
        if a0.abs() > 1e-10 || a1.abs() > 1e-10 {
            return Err(Error::Protocol(format!(
                "alpha must vanish at cycle endpoints, got alpha(0)={a0:.3e}, alpha(tau)={a1:.3e}"
            )));
        }
        let step = self.fd_step();
        let d0 = alpha.derivative(0.0 + step, step);
        let d1 = alpha.derivative(self.tau - step, step);
        if d0.abs() > 1e-6 || d1.abs() > 1e-6 {
            return Err(Error::Protocol(format!(
                "slow-driving boundary needs vanishing endpoint rates, got {d0:.3e}, {d1:.3e}"
            )));
        }
        for k in 0..=64 {
            let t = self.tau * k as f64 / 64.0;
            let a = alpha.value(t);
            if !(-1e-12..=1.0 + 1e-12).contains(&a) {
                return Err(Error::Protocol(format!("alpha({t}) = {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn temperature(&self) -> &TemperatureProfile {
        &self.temperature
    }

    pub fn t_c(&self) -> f64 {
        self.temperature.t_c
    }

    pub fn t_h(&self) -> f64 {
        self.temperature.t_h
    }

    pub fn carnot_efficiency(&self) -> f64 {
        1.0 - self.temperature.t_c / self.temperature.t_h
    }

    pub fn fd_step(&self) -> f64 {
        self.tau * FD_STEP_REL
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        self.temperature.beta(t)
    }

    pub fn beta_dot(&self, t: f64) -> f64 {
        self.temperature.beta_dot(t, self.fd_step())
    }
}

/// Time-grid policy for the cycle quadrature.
#[derive(Clone, Copy, Debug)]
pub struct GridPolicy {
    /// Starting Simpson node count (odd).
    pub initial_nodes: usize,
    /// Hard cap; exceeding it without convergence is an error.
    pub max_nodes: usize,
    /// Relative change threshold between successive grid doublings.
    pub rel_tol: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { initial_nodes: 257, max_nodes: 4097, rel_tol: 1e-7 }
    }
}

impl GridPolicy {
    fn normalized(&self) -> Result<Self> {
        if self.initial_nodes < 3 || self.max_nodes < self.initial_nodes || self.rel_tol <= 0.0 {
            return Err(Error::Domain(format!("invalid grid policy {self:?}")));
        }
        let mut g = *self;
        if g.initial_nodes % 2 == 0 {
            g.initial_nodes += 1;
        }
        Ok(g)
    }
}

/// A slowly driven open system: a closed protocol together with the
/// instantaneous Hamiltonian, its time derivative, and the attached thermal
/// generator. Implementations must be cheap to evaluate pointwise; the cycle
/// evaluator calls each method once per quadrature node.
pub trait DrivenSystem: Sync {
    fn dim(&self) -> usize;
    fn protocol(&self) -> &Protocol;
    fn hamiltonian(&self, t: f64) -> Result<HermitianOperator>;
    fn hamiltonian_dot(&self, t: f64) -> Result<HermitianOperator>;
    fn lindbladian(&self, t: f64) -> Result<Lindbladian>;
    /// True when any control derivative uses the finite-difference fallback.
    fn uses_fd_derivatives(&self) -> bool {
        false
    }
}

/// Vector-valued Simpson quadrature with node-reusing grid doubling.
/// Evaluations at new nodes run in parallel; sums are pairwise for a
/// reduction order independent of thread scheduling.
fn integrate_vec<F>(
    f: &F,
    a: f64,
    b: f64,
    width: usize,
    grid: &GridPolicy,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let grid = grid.normalized()?;
    let eval_at = |nodes: usize, indices: Vec<usize>| -> Result<Vec<Vec<f64>>> {
        indices
            .into_par_iter()
            .map(|i| {
                let t = a + (b - a) * i as f64 / (nodes - 1) as f64;
                let v = f(t)?;
                if v.len() != width {
                    return Err(Error::Domain(format!(
                        "integrand returned {} components, expected {width}",
                        v.len()
                    )));
                }
                Ok(v)
            })
            .collect()
    };
    let integrals_of = |samples: &[Vec<f64>]| -> Vec<f64> {
        (0..width)
            .map(|k| {
                let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
                simpson_from_samples(&col, a, b)
            })
            .collect()
    };

    let mut nodes = grid.initial_nodes;
    let mut samples = eval_at(nodes, (0..nodes).collect())?;
    let mut integrals = integrals_of(&samples);
    loop {
        let new_nodes = 2 * nodes - 1;
        if new_nodes > grid.max_nodes {
            return Err(Error::NonConvergence(format!(
                "cycle quadrature not converged to {:.1e} within {} nodes",
                grid.rel_tol, grid.max_nodes
            )));
        }
        let fresh = eval_at(new_nodes, (1..new_nodes).step_by(2).collect())?;
        let mut merged = Vec::with_capacity(new_nodes);
        for (old, new) in samples.iter().zip(fresh.iter()) {
            merged.push(old.clone());
            merged.push(new.clone());
        }
        merged.push(samples[nodes - 1].clone());
        let new_integrals = integrals_of(&merged);
        let scale = new_integrals.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let converged = integrals.iter().zip(new_integrals.iter()).all(|(old, new)| {
            // Components that integrate to ~0 by symmetry only need absolute
            // accuracy on the scale of the dominant integral; demanding
            // relative accuracy of a cancellation would never converge.
            let denom = new.abs().max(1e-3 * scale).max(1e-14);
            (new - old).abs() <= grid.rel_tol * denom
        });
        samples = merged;
        nodes = new_nodes;
        integrals = new_integrals;
        if converged {
            return Ok((integrals, nodes));
        }
    }
}

/// The five cycle integrals every report is assembled from. All but `w_ad`
/// are raw time integrals of the pointwise pairings; divide by tau for the
/// corresponding rates.
#[derive(Clone, Copy, Debug)]
pub struct CycleIntegrals {
    /// integral of tr(R_Phidot J(Phidot)); sigma_dot = sigma / tau.
    pub sigma: f64,
    /// symmetrized integral pairing delta-Hdot with Phidot.
    pub cross: f64,
    /// integral of tr(R_dH J(dH)) (unprimed quadratic form).
    pub dd: f64,
    /// integral of tr(R_dH S(dH)) (primed quadratic form).
    pub dd_prime: f64,
    /// adiabatic work W = integral of tr(pi Hdot).
    pub w_ad: f64,
    /// Simpson nodes used at convergence.
    pub nodes: usize,
}

pub(crate) fn node_values<S: DrivenSystem + ?Sized>(sys: &S, t: f64) -> Result<Vec<f64>> {
    let l = sys.lindbladian(t)?;
    let pi = l.stationary();
    let h = sys.hamiltonian(t)?;
    let hdot = sys.hamiltonian_dot(t)?;
    let beta = sys.protocol().beta(t)?;
    let beta_dot = sys.protocol().beta_dot(t);

    let dh = delta_centered(pi, &hdot)?;
    // Phidot = d(beta H)/dt - d(ln Z)/dt; the scalar term is removed by
    // centering, so build the operator part and center it.
    let phi_raw = h.scaled(beta_dot).add(&hdot.scaled(beta))?;
    let phi = delta_centered(pi, &phi_raw)?;

    let r_dh = l.theta_integral(&dh)?;
    let r_phi = l.theta_integral(&phi)?;
    let j_dh = log_mean_apply(pi, &dh)?;
    let j_phi = log_mean_apply(pi, &phi)?;
    let s_dh = arith_mean_apply(pi, &dh)?;

    let sigma = r_phi.real_trace_product(j_phi.entries());
    let cross =
        0.5 * (r_dh.real_trace_product(j_phi.entries()) + r_phi.real_trace_product(j_dh.entries()));
    let dd = r_dh.real_trace_product(j_dh.entries());
    let dd_prime = r_dh.real_trace_product(s_dh.entries());
    let w = pi.expectation(&hdot)?;
    Ok(vec![sigma, cross, dd, dd_prime, w])
}

/// One pass over the cycle producing every integral a report needs.
pub fn cycle_integrals<S: DrivenSystem + ?Sized>(
    sys: &S,
    grid: &GridPolicy,
) -> Result<CycleIntegrals> {
    let tau = sys.protocol().tau();
    let (v, nodes) = integrate_vec(&|t| node_values(sys, t), 0.0, tau, 5, grid)?;
    Ok(CycleIntegrals { sigma: v[0], cross: v[1], dd: v[2], dd_prime: v[3], w_ad: v[4], nodes })
}

fn inner_product_with<L, A, B, K>(
    l_curve: &L,
    a: &A,
    b: &B,
    tau: f64,
    grid: &GridPolicy,
    kernel: K,
) -> Result<f64>
where
    L: Fn(f64) -> Result<Lindbladian> + Sync,
    A: Fn(f64) -> Result<HermitianOperator> + Sync,
    B: Fn(f64) -> Result<HermitianOperator> + Sync,
    K: Fn(&crate::opalg::GibbsState, &HermitianOperator) -> Result<HermitianOperator> + Sync,
{
    let node = |t: f64| -> Result<Vec<f64>> {
        let l = l_curve(t)?;
        let pi = l.stationary();
        let at = a(t)?;
        let bt = b(t)?;
        let r_a = l.theta_integral(&at)?;
        let r_b = l.theta_integral(&bt)?;
        let ka = kernel(pi, &at)?;
        let kb = kernel(pi, &bt)?;
        Ok(vec![0.5 * (r_a.real_trace_product(kb.entries()) + r_b.real_trace_product(ka.entries()))])
    };
    let (v, _) = integrate_vec(&node, 0.0, tau, 1, grid)?;
    Ok(v[0] / tau)
}

/// Generalized inner product <<A, B>> over a cycle: the time average of the
/// symmetrized pairing of the theta-integrals against the logarithmic-mean
/// kernel. Curves must be centered pointwise.
pub fn inner_product<L, A, B>(l_curve: &L, a: &A, b: &B, tau: f64, grid: &GridPolicy) -> Result<f64>
where
    L: Fn(f64) -> Result<Lindbladian> + Sync,
    A: Fn(f64) -> Result<HermitianOperator> + Sync,
    B: Fn(f64) -> Result<HermitianOperator> + Sync,
{
    inner_product_with(l_curve, a, b, tau, grid, |pi, x| log_mean_apply(pi, x))
}

/// Primed variant <<A, B>>': arithmetic-mean kernel in place of the
/// logarithmic mean. Dominates the unprimed form on diagonal pairs.
pub fn inner_product_prime<L, A, B>(
    l_curve: &L,
    a: &A,
    b: &B,
    tau: f64,
    grid: &GridPolicy,
) -> Result<f64>
where
    L: Fn(f64) -> Result<Lindbladian> + Sync,
    A: Fn(f64) -> Result<HermitianOperator> + Sync,
    B: Fn(f64) -> Result<HermitianOperator> + Sync,
{
    inner_product_with(l_curve, a, b, tau, grid, |pi, x| arith_mean_apply(pi, x))
}

/// <sigma_dot> = <<Phidot, Phidot>> >= 0: the non-adiabatic entropy
/// production rate of the cycle.
pub fn entropy_production_rate<S: DrivenSystem + ?Sized>(
    sys: &S,
    grid: &GridPolicy,
) -> Result<f64> {
    Ok(cycle_integrals(sys, grid)?.sigma / sys.protocol().tau())
}

/// P_w = -W/tau - <<dHdot, Phidot>>; positive means work is extracted.
pub fn average_power<S: DrivenSystem + ?Sized>(sys: &S, grid: &GridPolicy) -> Result<f64> {
    let c = cycle_integrals(sys, grid)?;
    let tau = sys.protocol().tau();
    Ok(-(c.w_ad + c.cross) / tau)
}

/// Adiabatic (quasi-static) work W = integral of tr(pi Hdot) over the cycle.
pub fn adiabatic_work<S: DrivenSystem + ?Sized>(sys: &S, grid: &GridPolicy) -> Result<f64> {
    Ok(cycle_integrals(sys, grid)?.w_ad)
}

/// (DeltaP_w, DeltaI_w): time-averaged work-variance rate and its quantum
/// (coherence-borne) part, DeltaI_w = <<dH,dH>>' - <<dH,dH>>.
pub fn power_fluctuations<S: DrivenSystem + ?Sized>(
    sys: &S,
    grid: &GridPolicy,
) -> Result<(f64, f64)> {
    let c = cycle_integrals(sys, grid)?;
    let tau = sys.protocol().tau();
    Ok((2.0 * c.dd_prime / tau, (c.dd_prime - c.dd) / tau))
}

/// The quantum correction DeltaI_w alone.
pub fn quantum_correction<S: DrivenSystem + ?Sized>(sys: &S, grid: &GridPolicy) -> Result<f64> {
    Ok(power_fluctuations(sys, grid)?.1)
}

/// Integral relaxation timescale tau_eq at one protocol point: the
/// theta-integrated skew cross-covariance of Hdot normalized by its
/// instantaneous value. `None` when quantum friction is absent (the
/// normalizing skew information vanishes).
pub fn relaxation_timescale(l: &Lindbladian, hdot: &HermitianOperator) -> Result<Option<f64>> {
    let pi = l.stationary();
    let denom = skew_covariance(pi, hdot, hdot)?;
    let scale = hdot.frobenius_norm().powi(2);
    if denom <= 1e-14 * scale.max(1e-300) {
        return Ok(None);
    }
    let dh = delta_centered(pi, hdot)?;
    let r = l.theta_integral(&dh)?;
    let num = skew_covariance(pi, &r, hdot)?;
    Ok(Some(num / denom))
}

/// Heat flux from the first-law/entropy-balance identity
/// eta = eta_C P_w / (T_c sigma_dot + P_w), i.e. J_q = (T_c sigma_dot + P_w) / eta_C.
pub fn heat_flux(t_c: f64, t_h: f64, p_w: f64, sigma_dot: f64) -> Result<f64> {
    let eta_c = 1.0 - t_c / t_h;
    if eta_c <= 0.0 {
        return Err(Error::Domain(format!("Carnot efficiency must be positive, got {eta_c}")));
    }
    Ok((t_c * sigma_dot + p_w) / eta_c)
}

/// Power-and-fluctuation efficiency bound: eta_C / (1 + 2 T_c P_w / DeltaP_w).
pub fn bound_ps(t_c: f64, eta_c: f64, p_w: f64, delta_p_w: f64) -> Option<f64> {
    if delta_p_w <= 0.0 {
        return None;
    }
    let v = eta_c / (1.0 + 2.0 * t_c * p_w / delta_p_w);
    v.is_finite().then_some(v)
}

/// Quantum-corrected bound: eta_C / (1 + 2 T_c f P_w / (DeltaP_w - 2 DeltaI_w)).
pub fn bound_q(t_c: f64, eta_c: f64, p_w: f64, delta_p_w: f64, delta_i_w: f64, f: f64) -> Option<f64> {
    let classical_part = delta_p_w - 2.0 * delta_i_w;
    if classical_part <= 0.0 {
        return None;
    }
    let v = eta_c / (1.0 + 2.0 * t_c * f * p_w / classical_part);
    v.is_finite().then_some(v)
}

/// Uncertainty-relation residual (DeltaP_w - 2 DeltaI_w) sigma_dot - 2 f P_w^2;
/// nonnegative for valid slow-driving protocols.
pub fn tur_residual(delta_p_w: f64, delta_i_w: f64, sigma_dot: f64, f: f64, p_w: f64) -> f64 {
    (delta_p_w - 2.0 * delta_i_w) * sigma_dot - 2.0 * f * p_w * p_w
}

/// Full set of cycle-level scalars reported for one engine evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct EngineReport {
    /// Finite-time output power P_w (positive = engine).
    pub p_w: f64,
    /// Adiabatic power P_W = -W/tau.
    pub p_w_adiabatic: f64,
    /// Heat flux from the hot reservoir via the entropy-balance identity.
    pub j_q: f64,
    /// Time-averaged work variance rate.
    pub delta_p_w: f64,
    /// Quantum (skew-information) part of the variance rate.
    pub delta_i_w: f64,
    /// Entropy production rate.
    pub sigma_dot: f64,
    /// Adiabatic work over the cycle.
    pub w_ad: f64,
    /// Average extracted work -P_w tau (sign: negative work done on system).
    pub w_avg: f64,
    pub eta: f64,
    pub eta_c: f64,
    pub eta_ps: Option<f64>,
    pub eta_q: Option<f64>,
    /// eta_q with the quantum correction forced to zero.
    pub eta_cl: Option<f64>,
    /// f(|W / <w>|) with f(x) = (1 - x)^2; absent for non-operating engines.
    pub f_value: Option<f64>,
    pub tur_residual: Option<f64>,
    /// P_w >= 0.
    pub engine_flag: bool,
    /// Simpson nodes at quadrature convergence.
    pub time_nodes: usize,
    /// True when any control derivative used the finite-difference fallback.
    pub fd_derivatives: bool,
}

impl EngineReport {
    pub fn ratio_2diw_over_dpw(&self) -> f64 {
        if self.delta_p_w.abs() < 1e-300 {
            return f64::NAN;
        }
        2.0 * self.delta_i_w / self.delta_p_w
    }

    /// Invariant violations, empty for a physically consistent report.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.sigma_dot < -1e-12 {
            v.push(format!("second law violated: sigma_dot = {:.6e}", self.sigma_dot));
        }
        if self.delta_i_w < -1e-12 {
            v.push(format!("negative quantum correction: DeltaI_w = {:.6e}", self.delta_i_w));
        }
        let scale = self.delta_p_w.abs().max(1.0);
        if 2.0 * self.delta_i_w > self.delta_p_w + 1e-12 * scale {
            v.push(format!(
                "ordering violated: 2 DeltaI_w = {:.6e} > DeltaP_w = {:.6e}",
                2.0 * self.delta_i_w,
                self.delta_p_w
            ));
        }
        if self.engine_flag {
            if self.eta > self.eta_c + 1e-12 {
                v.push(format!("eta = {:.6e} exceeds Carnot {:.6e}", self.eta, self.eta_c));
            }
            if let Some(eta_q) = self.eta_q {
                if self.eta > eta_q + 1e-12 {
                    v.push(format!("eta = {:.6e} exceeds eta_Q = {eta_q:.6e}", self.eta));
                }
            }
            if let (Some(eta_q), Some(eta_cl)) = (self.eta_q, self.eta_cl) {
                if eta_q > eta_cl + 1e-12 {
                    v.push(format!("eta_Q = {eta_q:.6e} exceeds eta_cl = {eta_cl:.6e}"));
                }
            }
            if let (Some(t), Some(f)) = (self.tur_residual, self.f_value) {
                let scale =
                    self.delta_p_w * self.sigma_dot + 2.0 * f * self.p_w * self.p_w;
                if t < -1e-9 * scale.max(1e-300) {
                    v.push(format!("uncertainty relation violated: residual {t:.6e}"));
                }
            }
        }
        v
    }
}

/// Assembles efficiency, bounds, f and the uncertainty residual from the
/// cycle integrals. `energy_scale` (max_t ||H||) guards the f division for
/// non-operating engines.
pub fn efficiency_and_bounds(
    protocol: &Protocol,
    integrals: &CycleIntegrals,
    energy_scale: f64,
    fd_derivatives: bool,
) -> EngineReport {
    let tau = protocol.tau();
    let t_c = protocol.t_c();
    let eta_c = protocol.carnot_efficiency();
    let sigma_dot = integrals.sigma / tau;
    let p_w_adiabatic = -integrals.w_ad / tau;
    let p_w = p_w_adiabatic - integrals.cross / tau;
    let delta_p_w = 2.0 * integrals.dd_prime / tau;
    let delta_i_w = (integrals.dd_prime - integrals.dd) / tau;
    let w_avg = -p_w * tau;
    let denom = t_c * sigma_dot + p_w;
    let eta = if denom.abs() < 1e-300 { 0.0 } else { eta_c * p_w / denom };
    let j_q = denom / eta_c;
    let f_value = if w_avg.abs() < 1e-14 * energy_scale.max(1e-300) {
        None
    } else {
        let x = (integrals.w_ad / w_avg).abs();
        Some((1.0 - x).powi(2))
    };
    let eta_ps = bound_ps(t_c, eta_c, p_w, delta_p_w);
    let eta_q = f_value.and_then(|f| bound_q(t_c, eta_c, p_w, delta_p_w, delta_i_w, f));
    let eta_cl = f_value.and_then(|f| bound_q(t_c, eta_c, p_w, delta_p_w, 0.0, f));
    let tur = f_value.map(|f| tur_residual(delta_p_w, delta_i_w, sigma_dot, f, p_w));
    EngineReport {
        p_w,
        p_w_adiabatic,
        j_q,
        delta_p_w,
        delta_i_w,
        sigma_dot,
        w_ad: integrals.w_ad,
        w_avg,
        eta,
        eta_c,
        eta_ps,
        eta_q,
        eta_cl,
        f_value,
        tur_residual: tur,
        engine_flag: p_w >= 0.0,
        time_nodes: integrals.nodes,
        fd_derivatives,
    }
}

/// Evaluates the whole report for a driven system in one cycle pass.
pub fn complete_report<S: DrivenSystem + ?Sized>(sys: &S, grid: &GridPolicy) -> Result<EngineReport> {
    let integrals = cycle_integrals(sys, grid)?;
    let tau = sys.protocol().tau();
    let mut energy_scale = 0.0f64;
    for k in 0..=8 {
        let t = tau * k as f64 / 8.0;
        energy_scale = energy_scale.max(sys.hamiltonian(t)?.frobenius_norm());
    }
    Ok(efficiency_and_bounds(sys.protocol(), &integrals, energy_scale, sys.uses_fd_derivatives()))
}

/// First-order coefficients of the slow-driving expansion in eps = t_eq/tau.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExpansionCoefficients {
    pub a_p: f64,
    pub a_delta_p: f64,
    pub epsilon: f64,
    /// eta_C (1 - eps 2 T_c a_P^2 / (P_W a_DeltaP)); absent outside the
    /// adiabatic-engine regime (P_W <= 0 or vanishing fluctuation slope).
    pub eta_firstorder: Option<f64>,
}

/// Extracts the eps-linear coefficients of power and fluctuations. `t_eq`
/// overrides the relaxation time; by default it is the inverse of the
/// smallest spectral gap sampled along the cycle.
pub fn expansion_coefficients<S: DrivenSystem + ?Sized>(
    sys: &S,
    grid: &GridPolicy,
    t_eq: Option<f64>,
) -> Result<ExpansionCoefficients> {
    let tau = sys.protocol().tau();
    let t_eq = match t_eq {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::Domain(format!("t_eq must be positive, got {v}"))),
        None => {
            let mut min_gap = f64::INFINITY;
            for k in 0..=8 {
                let t = tau * k as f64 / 8.0;
                min_gap = min_gap.min(sys.lindbladian(t)?.spectral_gap()?);
            }
            1.0 / min_gap
        }
    };
    let c = cycle_integrals(sys, grid)?;
    let eps = t_eq / tau;
    // The inner-product terms are exactly the eps-linear parts: the
    // theta-integral contributes one power of the relaxation time.
    let a_p = -(c.cross / tau) / eps;
    let a_delta_p = 2.0 * (c.dd / tau) / eps;
    let p_w_adiabatic = -c.w_ad / tau;
    let eta_firstorder = if p_w_adiabatic > 0.0 && a_delta_p > 0.0 {
        let t_c = sys.protocol().t_c();
        let eta_c = sys.protocol().carnot_efficiency();
        Some(eta_c * (1.0 - eps * 2.0 * t_c * a_p * a_p / (p_w_adiabatic * a_delta_p)))
    } else {
        None
    };
    Ok(ExpansionCoefficients { a_p, a_delta_p, epsilon: eps, eta_firstorder })
}

/// Averages a scalar point function over the cycle with the report grid;
/// exposed for diagnostics built on [`relaxation_timescale`].
pub fn cycle_average<F>(f: &F, tau: f64, grid: &GridPolicy) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let (v, _) = integrate_vec(&|t| Ok(vec![f(t)?]), 0.0, tau, 1, grid)?;
    Ok(v[0] / tau)
}

#[allow(dead_code)]
fn _pairwise_reexport_guard(values: &[f64]) -> f64 {
    pairwise_sum(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{
        build_detailed_balanced, build_oscillator_with_tail_tol, JumpSpec, Lindbladian,
    };
    use ndarray::Array2;
    use num_complex::Complex64 as C64;

    fn sin2_alpha(tau: f64) -> Curve {
        let pi = std::f64::consts::PI;
        Curve::with_derivative(
            move |t| (pi * t / tau).sin().powi(2),
            move |t| 2.0 * (pi / tau) * (pi * t / tau).sin() * (pi * t / tau).cos(),
        )
    }

    /// Two-level system with H(t) = [[0, x(t)], [x(t), g(t)]] and one
    /// thermally paired transition.
    struct TestQubit {
        protocol: Protocol,
        gap: Curve,
        transverse: Curve,
        gamma: f64,
    }

    impl TestQubit {
        fn h_of(&self, g: f64, x: f64) -> HermitianOperator {
            let m = ndarray::array![
                [C64::new(0.0, 0.0), C64::new(x, 0.0)],
                [C64::new(x, 0.0), C64::new(g, 0.0)]
            ];
            HermitianOperator::new(m).unwrap()
        }
    }

    impl DrivenSystem for TestQubit {
        fn dim(&self) -> usize {
            2
        }
        fn protocol(&self) -> &Protocol {
            &self.protocol
        }
        fn hamiltonian(&self, t: f64) -> Result<HermitianOperator> {
            Ok(self.h_of(self.gap.value(t), self.transverse.value(t)))
        }
        fn hamiltonian_dot(&self, t: f64) -> Result<HermitianOperator> {
            let step = self.protocol.fd_step();
            Ok(self.h_of(self.gap.derivative(t, step), self.transverse.derivative(t, step)))
        }
        fn lindbladian(&self, t: f64) -> Result<Lindbladian> {
            build_detailed_balanced(
                &self.hamiltonian(t)?,
                self.protocol.beta(t)?,
                &[JumpSpec { lower: 0, upper: 1, gamma_up: self.gamma }],
            )
        }
    }

    fn coarse_grid() -> GridPolicy {
        GridPolicy { initial_nodes: 65, max_nodes: 1025, rel_tol: 1e-7 }
    }

    #[test]
    fn temperature_profile_examples() {
        let tau = 10.0;
        let prof = TemperatureProfile::new(0.2, 2.0, Curve::constant(0.0)).unwrap();
        assert_eq!(prof.temperature(3.0).unwrap(), 0.2);
        let prof = TemperatureProfile::new(0.2, 2.0, sin2_alpha(tau)).unwrap();
        assert!((prof.temperature(tau / 2.0).unwrap() - 2.0).abs() < 1e-12);
        let prof = TemperatureProfile::new(1.0, 3.0, Curve::constant(0.5)).unwrap();
        assert!((prof.temperature(0.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn protocol_rejects_bad_alpha() {
        let tau = 10.0;
        let open = Curve::constant(0.3);
        let prof = TemperatureProfile::new(0.5, 1.0, open).unwrap();
        assert!(Protocol::new(tau, prof).is_err());
        let fast = Curve::with_derivative(
            move |t| (t / tau) * (1.0 - t / tau) * 4.0 * 0.999,
            move |t| 4.0 * 0.999 / tau * (1.0 - 2.0 * t / tau),
        );
        let prof = TemperatureProfile::new(0.5, 1.0, fast).unwrap();
        // Endpoint rate does not vanish.
        assert!(Protocol::new(tau, prof).is_err());
    }

    #[test]
    fn fd_derivative_fallback() {
        let c = Curve::new(|t: f64| t.sin());
        assert!(!c.has_analytic_derivative());
        assert!((c.derivative(0.7, 1e-6) - 0.7f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn static_protocol_gives_zero_rates() {
        let tau = 20.0;
        let prof = TemperatureProfile::new(0.5, 1.0, Curve::constant(0.0)).unwrap();
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::constant(1.0),
            transverse: Curve::constant(0.2),
            gamma: 0.3,
        };
        let r = complete_report(&sys, &coarse_grid()).unwrap();
        assert!(r.sigma_dot.abs() < 1e-14);
        assert!(r.p_w.abs() < 1e-14);
        assert!(r.w_ad.abs() < 1e-14);
        assert_eq!(r.eta, 0.0);
        let e = expansion_coefficients(&sys, &coarse_grid(), None).unwrap();
        assert_eq!(e.a_p, 0.0);
        assert_eq!(e.a_delta_p, 0.0);
        assert!(e.eta_firstorder.is_none());
    }

    #[test]
    fn temperature_only_driving_matches_reduced_form() {
        let tau = 40.0;
        let prof = TemperatureProfile::new(0.5, 1.2, sin2_alpha(tau)).unwrap();
        let protocol = Protocol::new(tau, prof).unwrap();
        let sys = TestQubit {
            protocol: protocol.clone(),
            gap: Curve::constant(1.0),
            transverse: Curve::constant(0.3),
            gamma: 0.4,
        };
        let grid = coarse_grid();
        let sigma = entropy_production_rate(&sys, &grid).unwrap();
        assert!(sigma > 0.0);
        // Hdot = 0, so Phidot reduces to beta_dot * deltaH.
        let l_curve = |t: f64| sys.lindbladian(t);
        let a_curve = |t: f64| {
            let l = sys.lindbladian(t)?;
            let h = sys.hamiltonian(t)?;
            Ok(delta_centered(l.stationary(), &h)?.scaled(protocol.beta_dot(t)))
        };
        let reduced = inner_product(&l_curve, &a_curve, &a_curve, tau, &grid).unwrap();
        assert!((sigma - reduced).abs() < 1e-10 * sigma, "{sigma} vs {reduced}");
    }

    #[test]
    fn commuting_driving_has_no_quantum_correction() {
        let tau = 30.0;
        let prof = TemperatureProfile::new(0.5, 1.0, sin2_alpha(tau)).unwrap();
        let pi_ = std::f64::consts::PI;
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::with_derivative(
                move |t| 1.0 + 0.4 * (pi_ * t / tau).sin().powi(2),
                move |t| 0.8 * (pi_ / tau) * (pi_ * t / tau).sin() * (pi_ * t / tau).cos(),
            ),
            transverse: Curve::constant(0.0),
            gamma: 0.3,
        };
        let (dp, di) = power_fluctuations(&sys, &coarse_grid()).unwrap();
        assert!(dp > 0.0);
        assert!(di.abs() < 1e-13 * dp, "DeltaI_w = {di}");
    }

    #[test]
    fn inner_product_symmetry_and_ordering() {
        let tau = 25.0;
        let prof = TemperatureProfile::new(0.4, 1.1, sin2_alpha(tau)).unwrap();
        let protocol = Protocol::new(tau, prof).unwrap();
        let sys = TestQubit {
            protocol,
            gap: Curve::constant(1.0),
            transverse: Curve::constant(0.25),
            gamma: 0.5,
        };
        let grid = coarse_grid();
        let l_curve = |t: f64| sys.lindbladian(t);
        let a = |t: f64| {
            let l = sys.lindbladian(t)?;
            let mut m = Array2::<C64>::zeros((2, 2));
            m[[0, 1]] = C64::new(0.3, 0.1 * (t / tau));
            m[[1, 0]] = m[[0, 1]].conj();
            m[[1, 1]] = C64::new(0.2, 0.0);
            delta_centered(l.stationary(), &HermitianOperator::new(m).unwrap())
        };
        let b = |t: f64| {
            let l = sys.lindbladian(t)?;
            let mut m = Array2::<C64>::zeros((2, 2));
            m[[0, 0]] = C64::new(0.7, 0.0);
            m[[0, 1]] = C64::new(-0.1, 0.2);
            m[[1, 0]] = m[[0, 1]].conj();
            delta_centered(l.stationary(), &HermitianOperator::new(m).unwrap())
        };
        let ab = inner_product(&l_curve, &a, &b, tau, &grid).unwrap();
        let ba = inner_product(&l_curve, &b, &a, tau, &grid).unwrap();
        assert!((ab - ba).abs() < 1e-12 * ab.abs().max(1.0));
        let aa = inner_product(&l_curve, &a, &a, tau, &grid).unwrap();
        let aa_p = inner_product_prime(&l_curve, &a, &a, tau, &grid).unwrap();
        assert!(aa >= -1e-14);
        assert!(aa_p >= aa - 1e-12 * aa_p.abs().max(1.0));
    }

    #[test]
    fn isothermal_closed_cycle_has_zero_adiabatic_work() {
        let tau = 30.0;
        let prof = TemperatureProfile::new(0.8, 1.6, Curve::constant(0.0)).unwrap();
        let pi_ = std::f64::consts::PI;
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::with_derivative(
                move |t| 1.0 + 0.3 * (pi_ * t / tau).sin().powi(2),
                move |t| 0.6 * (pi_ / tau) * (pi_ * t / tau).sin() * (pi_ * t / tau).cos(),
            ),
            transverse: Curve::constant(0.0),
            gamma: 0.3,
        };
        let w = adiabatic_work(&sys, &coarse_grid()).unwrap();
        assert!(w.abs() < 1e-9, "W = {w}");
    }

    #[test]
    fn zero_adiabatic_work_implies_f_one_and_bound_reduction() {
        let tau = 30.0;
        let prof = TemperatureProfile::new(0.8, 1.6, Curve::constant(0.0)).unwrap();
        let pi_ = std::f64::consts::PI;
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::with_derivative(
                move |t| 1.0 + 0.3 * (pi_ * t / tau).sin().powi(2),
                move |t| 0.6 * (pi_ / tau) * (pi_ * t / tau).sin() * (pi_ * t / tau).cos(),
            ),
            transverse: Curve::constant(0.15),
            gamma: 0.3,
        };
        let r = complete_report(&sys, &coarse_grid()).unwrap();
        // W = 0 up to quadrature noise, so |W/<w>| ~ 0 and f ~ 1.
        let f = r.f_value.unwrap();
        assert!((f - 1.0).abs() < 1e-6, "f = {f}");
        // With f = 1 the quantum bound must agree with the PS-form built from
        // the classical fluctuation part DeltaP_w - 2 DeltaI_w. For an
        // isothermal cycle T_c * beta = 1 makes both denominators vanish
        // simultaneously, so agreement includes the jointly-undefined case.
        let reduced = bound_ps(0.8, r.eta_c, r.p_w, r.delta_p_w - 2.0 * r.delta_i_w);
        match (r.eta_q, reduced) {
            (None, None) => {}
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            other => panic!("bound paths disagree: {other:?}"),
        }
        assert!(r.violations().is_empty(), "{:?}", r.violations());
    }

    #[test]
    fn relaxation_timescale_absent_for_commuting_drive() {
        let l = build_oscillator_with_tail_tol(1.0, 2.0, 0.5, 25, 1e-4).unwrap();
        let diag = HermitianOperator::from_real_diag(
            &(0..25).map(|n| n as f64 + 0.5).collect::<Vec<_>>(),
        );
        assert!(relaxation_timescale(&l, &diag).unwrap().is_none());
    }

    #[test]
    fn relaxation_timescale_halves_when_rates_double() {
        let hdot = {
            let d = 12;
            let a = crate::lindblad::annihilation(d);
            let a2 = a.dot(&a);
            let sym = &a2 + &crate::opalg::dagger(&a2);
            let mut m = sym.mapv(|z| 0.5 * z);
            for n in 0..d {
                m[[n, n]] += C64::new(n as f64 + 0.5, 0.0);
            }
            HermitianOperator::new(m).unwrap()
        };
        // Doubling (omega, T, Gamma) together doubles the whole generator
        // (the Hamiltonian part scales with omega, the rates with Gamma at
        // fixed beta*omega), which must exactly halve tau_eq. Scaling Gamma
        // alone does not halve it: the commutator part of the generator is
        // Gamma-independent.
        let l1 = build_oscillator_with_tail_tol(1.0, 2.0, 0.4, 12, 1e-2).unwrap();
        let l2 = build_oscillator_with_tail_tol(2.0, 4.0, 0.8, 12, 1e-2).unwrap();
        let t1 = relaxation_timescale(&l1, &hdot).unwrap().unwrap();
        let t2 = relaxation_timescale(&l2, &hdot).unwrap().unwrap();
        assert!(t1 > 0.0);
        assert!((t1 - 2.0 * t2).abs() < 1e-8 * t1, "{t1} vs {t2}");
    }

    #[test]
    fn pointwise_quantum_correction_identity() {
        // tau_eq * I(Hdot, Hdot) equals the primed-minus-unprimed difference
        // of quadratic forms at a fixed protocol point.
        let d = 10;
        let hdot = {
            let a = crate::lindblad::annihilation(d);
            let a2 = a.dot(&a);
            let sym = &a2 + &crate::opalg::dagger(&a2);
            let mut m = sym.mapv(|z| 0.5 * z);
            for n in 0..d {
                m[[n, n]] += C64::new(n as f64 + 0.5, 0.0);
            }
            HermitianOperator::new(m).unwrap()
        };
        let l = build_oscillator_with_tail_tol(1.0, 1.6, 0.6, d, 1e-2).unwrap();
        let pi = l.stationary();
        let tau_eq = relaxation_timescale(&l, &hdot).unwrap().unwrap();
        let skew = skew_covariance(pi, &hdot, &hdot).unwrap();
        let dh = delta_centered(pi, &hdot).unwrap();
        let r = l.theta_integral(&dh).unwrap();
        let primed = r.real_trace_product(arith_mean_apply(pi, &dh).unwrap().entries());
        let unprimed = r.real_trace_product(log_mean_apply(pi, &dh).unwrap().entries());
        let direct = primed - unprimed;
        assert!((tau_eq * skew - direct).abs() < 1e-10 * direct.abs().max(1e-12));
    }

    #[test]
    fn engine_report_consistency_on_driven_qubit() {
        let tau = 60.0;
        let prof = TemperatureProfile::new(0.5, 1.5, sin2_alpha(tau)).unwrap();
        let pi_ = std::f64::consts::PI;
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::with_derivative(
                move |t| 1.0 + 0.5 * (pi_ * t / tau).sin().powi(2),
                move |t| 1.0 * (pi_ / tau) * (pi_ * t / tau).sin() * (pi_ * t / tau).cos(),
            ),
            transverse: Curve::with_derivative(
                move |t| 0.2 * (pi_ * t / tau).sin().powi(2),
                move |t| 0.4 * (pi_ / tau) * (pi_ * t / tau).sin() * (pi_ * t / tau).cos(),
            ),
            gamma: 0.5,
        };
        let r = complete_report(&sys, &coarse_grid()).unwrap();
        assert!(r.sigma_dot > 0.0);
        assert!(r.delta_p_w > 0.0);
        assert!(r.delta_i_w >= 0.0);
        assert!(2.0 * r.delta_i_w <= r.delta_p_w + 1e-12);
        // Entropy-balance identity: sigma_dot = (eta_C J_q - P_w) / T_c.
        let recomputed = (r.eta_c * r.j_q - r.p_w) / 0.5;
        assert!((r.sigma_dot - recomputed).abs() < 1e-9 * r.sigma_dot.abs().max(1e-12));
        assert!(r.violations().is_empty(), "{:?}", r.violations());
    }

    #[test]
    fn quadrature_cap_reports_nonconvergence() {
        let tau = 30.0;
        let prof = TemperatureProfile::new(0.5, 1.5, sin2_alpha(tau)).unwrap();
        let sys = TestQubit {
            protocol: Protocol::new(tau, prof).unwrap(),
            gap: Curve::constant(1.0),
            transverse: Curve::constant(0.2),
            gamma: 0.4,
        };
        let grid = GridPolicy { initial_nodes: 5, max_nodes: 9, rel_tol: 1e-14 };
        assert!(matches!(cycle_integrals(&sys, &grid), Err(Error::NonConvergence(_))));
    }
}
