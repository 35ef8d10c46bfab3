//! Scalar quadrature: pairwise summation, composite Simpson on refinable
//! uniform grids, and a recursive adaptive Simpson rule.

use crate::error::{Error, Result};

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// better conditioned than a running sum on long grids.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Composite Simpson weights for an odd number of uniformly spaced nodes.
pub fn simpson_weights(nodes: usize, h: f64) -> Vec<f64> {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count >= 3");
    let mut w = vec![0.0; nodes];
    w[0] = h / 3.0;
    w[nodes - 1] = h / 3.0;
    for (i, wi) in w.iter_mut().enumerate().take(nodes - 1).skip(1) {
        *wi = if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    w
}

/// Composite Simpson of sampled values on [a, b] (values.len() odd).
pub fn simpson_from_samples(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len();
    let h = (b - a) / (n - 1) as f64;
    let w = simpson_weights(n, h);
    let terms: Vec<f64> = values.iter().zip(w.iter()).map(|(v, w)| v * w).collect();
    pairwise_sum(&terms)
}

/// Composite Simpson with grid doubling until the estimate changes by less
/// than `rel_tol` (relative, floored at `rel_tol` absolute), starting from
/// `initial_nodes` and capped at `max_nodes`.
pub fn simpson_converged<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    initial_nodes: usize,
    max_nodes: usize,
    rel_tol: f64,
) -> Result<f64> {
    let mut nodes = initial_nodes;
    let mut values: Vec<f64> = (0..nodes)
        .map(|i| f(a + (b - a) * i as f64 / (nodes - 1) as f64))
        .collect();
    let mut estimate = simpson_from_samples(&values, a, b);
    loop {
        let refined = 2 * nodes - 1;
        if refined > max_nodes {
            return Err(Error::NonConvergence(format!(
                "Simpson estimate not stable at {nodes} nodes (cap {max_nodes})"
            )));
        }
        let mut next = Vec::with_capacity(refined);
        for i in 0..nodes - 1 {
            let t_mid = a + (b - a) * (2 * i + 1) as f64 / (refined - 1) as f64;
            next.push(values[i]);
            next.push(f(t_mid));
        }
        next.push(values[nodes - 1]);
        let refined_estimate = simpson_from_samples(&next, a, b);
        let scale = refined_estimate.abs().max(1e-300);
        let done = (refined_estimate - estimate).abs() <= rel_tol * scale.max(rel_tol);
        values = next;
        nodes = refined;
        estimate = refined_estimate;
        if done {
            return Ok(estimate);
        }
    }
}

/// Recursive adaptive Simpson with absolute+relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut depth_exceeded = false;
    let result = adaptive_step(f, a, b, fa, fm, fb, whole, tol, 48, &mut depth_exceeded);
    if depth_exceeded {
        return Err(Error::NonConvergence("adaptive Simpson hit max recursion depth".into()));
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64 + Copy>(
    f: F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    exceeded: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let local_tol = tol * (1.0 + left.abs() + right.abs());
    if delta.abs() <= 15.0 * local_tol || (b - a) < 1e-14 {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *exceeded = true;
        return left + right;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, exceeded)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, exceeded)
}
