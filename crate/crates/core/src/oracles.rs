//! Exact references: harmonic closed forms, the harmonic coarse-graining recursion
//! and brute-force nested quadrature for very short chains.

use crate::coarse_grain::ChainSpec;
use crate::error::{Error, Result};
use crate::potentials::{check_assumptions, DefectSpec};
use crate::quadrature::{log_integral_exp, QuadratureConfig};

/// Load data entering the harmonic thermodynamic limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicForces {
    pub h1: f64,
    /// `Σ_{i≥2} h_i`
    pub h_sum: f64,
    /// `Σ_{i≥2} h_i²`
    pub h_sq_sum: f64,
}

/// Harmonic chain `ψ(y) = αy²` with defect `P(y) = βy²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub n: usize,
    pub forces: Option<HarmonicForces>,
}

impl HarmonicParams {
    pub fn new(alpha: f64, beta: f64, a: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", "must be non-negative"));
        }
        if !a.is_finite() {
            return Err(Error::invalid("A", "must be finite"));
        }
        if n < 2 {
            return Err(Error::invalid("N", "must be at least 2"));
        }
        Ok(HarmonicParams {
            alpha,
            beta,
            a,
            n,
            forces: None,
        })
    }

    pub fn with_forces(self, forces: HarmonicForces) -> Self {
        HarmonicParams {
            forces: Some(forces),
            ..self
        }
    }
}

/// Exact `G_N` of the unloaded harmonic chain.
pub fn harmonic_g_n(p: &HarmonicParams) -> Result<f64> {
    if p.forces.is_some() {
        return Err(Error::invalid("forces", "the finite-chain closed form has no load terms"));
    }
    let HarmonicParams { alpha, beta, a, .. } = *p;
    let n = p.n as f64;
    let s = alpha + beta;
    let q = n * s - beta;
    let a2 = a * a;
    Ok(0.5 * (s / alpha).ln() + alpha * beta * a2 / s - n * alpha * beta * beta * a2 / (q * q)
        + alpha * beta * a2 / s * (2.0 * beta / q + beta * beta / (q * q))
        + 0.5 * (1.0 - beta / (n * s)).ln())
}

/// Exact `G_∞` of the harmonic chain, including load terms when present.
pub fn harmonic_g_inf(p: &HarmonicParams) -> f64 {
    let HarmonicParams { alpha, beta, a, .. } = *p;
    let s = alpha + beta;
    let base = alpha * beta * a * a / s + 0.5 * (s / alpha).ln();
    match p.forces {
        None => base,
        Some(f) => {
            base + alpha * a * f.h1 / s - f.h1 * f.h1 / (4.0 * s) + a * f.h_sum - f.h_sq_sum / (4.0 * alpha)
        }
    }
}

/// Coefficients `(i, c_i, d_i, f_i)` for `i = M−1` down to `2`.
pub fn cg_recursion_coefficients(m: usize) -> Vec<(usize, f64, f64, f64)> {
    let mut out = Vec::new();
    if m < 3 {
        return out;
    }
    let (mut c, mut d, mut f) = (2.0, 1.0, 1.0);
    out.push((m - 1, c, d, f));
    for i in (2..m - 1).rev() {
        let (cn, dn, fn_) = (2.0 - 1.0 / c, d / c, f - d * d / c);
        c = cn;
        d = dn;
        f = fn_;
        out.push((i, c, d, f));
    }
    out
}

/// Number of coarse nodes `M` with `N = p(M−1) + 1`, if the pair is consistent.
pub fn coarse_node_count(n: usize, p: usize) -> Result<usize> {
    if p == 0 || n < 2 || (n - 1) % p != 0 {
        return Err(Error::invalid(
            "p",
            format!("coarsening factor {p} does not divide N − 1 for N = {n}"),
        ));
    }
    Ok((n - 1) / p + 1)
}

/// Free-energy difference of the uniformly coarsened harmonic chain that keeps the
/// first bond resolved, computed by successive completion of squares.
///
/// Stiffnesses `k1` (bond) and `k2` (defect), strain `x`, `M` coarse nodes with
/// coarsening factor `p`; `n` must equal `p(M−1) + 1`.
pub fn harmonic_cg_recursion(n: usize, m: usize, p: usize, k1: f64, k2: f64, x: f64) -> Result<f64> {
    if m < 2 || p == 0 || n != p * (m - 1) + 1 {
        return Err(Error::invalid(
            "M",
            format!("inconsistent coarsening: N = {n}, M = {m}, p = {p} (need N = p(M−1)+1)"),
        ));
    }
    if !(k1 > 0.0) || !(k2 >= 0.0) {
        return Err(Error::invalid("K1", "stiffnesses must be positive (defect non-negative)"));
    }
    let k = k1 / p as f64;
    let big_x = n as f64 * x;
    // After eliminating w_{M-1}..w_2 the remainder in w_1 is −k·g·w_1² − 2k·e·X·w_1 + ...
    let (g, e) = match cg_recursion_coefficients(m).last() {
        Some(&(_, c2, d2, _)) => (1.0 / c2, d2 / c2),
        None => (0.0, 1.0),
    };
    let a0 = k1 + k - k * g;
    let ap = a0 + k2;
    let b = k * e * big_x;
    Ok(b * b / a0 - b * b / ap + 0.5 * (ap / a0).ln())
}

const DENSE_MAX_N: usize = 4;

/// `G_N` by nested one-dimensional quadrature over the bond lengths, for `N ≤ 4`.
pub fn dense_g_n(spec: &ChainSpec) -> Result<f64> {
    if spec.n > DENSE_MAX_N {
        return Err(Error::ChainTooLong(spec.n));
    }
    if spec.defect.is_zero() && !spec.has_forces() {
        return Ok(0.0);
    }
    let window = (spec.a - 10.0, spec.a + 10.0);
    let report = check_assumptions(&spec.psi, &spec.defect, window, 2001)?;
    if !(report.kappa1 > 0.0 && report.varsigma1 > 0.0) {
        return Err(Error::invalid("potential", "not strictly convex on the oracle window"));
    }
    let loaded = log_partition(spec, spec.forces.entries(), &spec.defect, report.kappa1, report.varsigma1)?;
    let zeros = vec![0.0; spec.n];
    let perfect = log_partition(spec, &zeros, &DefectSpec::none(), report.kappa1, report.kappa1)?;
    Ok(-(loaded - perfect))
}

/// `log ∫ exp(−Σ e_k(y_k)) δ(Σ y_k − NA) dy` by recursive log-convolution.
fn log_partition(spec: &ChainSpec, loads: &[f64], defect: &DefectSpec, kappa: f64, kappa_first: f64) -> Result<f64> {
    let energy = |k: usize, y: f64| {
        let base = spec.psi.value(y) + loads[k] * y;
        if k == 0 {
            base + defect.potential.value(y)
        } else {
            base
        }
    };
    // C_k(s): log-integral over bonds k..N−1 (0-based) whose lengths sum to s.
    fn level(
        k: usize,
        s: f64,
        n: usize,
        energy: &dyn Fn(usize, f64) -> f64,
        kappa: f64,
        kappa_first: f64,
    ) -> Result<f64> {
        if k == n - 1 {
            return Ok(-energy(k, s));
        }
        // The outermost integral may be looser than the nested ones.
        let cfg = if k == 0 {
            QuadratureConfig {
                rel_tol: 1e-11,
                abs_tol: 1e-14,
                ..QuadratureConfig::default()
            }
        } else {
            QuadratureConfig::tight()
        };
        let failure = std::cell::Cell::new(None);
        let curvature = if k == 0 { kappa_first } else { kappa };
        let hint = s / (n - k) as f64;
        let v = log_integral_exp(
            |y| match level(k + 1, s - y, n, energy, kappa, kappa_first) {
                Ok(c) => -energy(k, y) + c,
                Err(e) => {
                    failure.set(Some(e));
                    f64::NEG_INFINITY
                }
            },
            curvature,
            hint,
            &cfg,
        );
        match failure.take() {
            Some(e) => Err(e),
            None => v,
        }
    }
    level(0, spec.n as f64 * spec.a, spec.n, &energy, kappa, kappa_first)
}
