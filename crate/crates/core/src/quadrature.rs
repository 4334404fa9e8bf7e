//! Log-space integration of `exp(g)` over the real line.
//!
//! Every partition function in the crate has the form `∫ exp(g(y)) dy` with `g`
//! strictly concave away from a bounded set. The integrand is shifted by its
//! maximum before exponentiation, truncated to `y* ± m/√κ_lo` (pulled in to where
//! `g` has dropped by `m²/2`), and integrated by globally adaptive 15-point
//! Gauss–Kronrod.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Truncation half-width in units of `1/√κ_lo`.
    pub m: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            m: 12.0,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureConfig {
    /// Configuration for integrals nested inside other integrals or root solves,
    /// where adaptive jitter in the inner result would spoil the outer convergence.
    pub fn tight() -> Self {
        QuadratureConfig {
            rel_tol: 1e-13,
            abs_tol: 1e-15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid("rel_tol", "must be positive"));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::invalid("abs_tol", "must be positive"));
        }
        if !(self.m >= 4.0 && self.m.is_finite()) {
            return Err(Error::invalid("m", format!("truncation multiplier must be at least 4, got {}", self.m)));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::invalid("max_subdivisions", "must be at least 1"));
        }
        Ok(())
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Panel<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: [f64; K],
    abs: [f64; K],
    priority: f64,
}

impl<const K: usize> PartialEq for Panel<K> {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl<const K: usize> Eq for Panel<K> {}
impl<const K: usize> PartialOrd for Panel<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const K: usize> Ord for Panel<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gk15<const K: usize>(f: &impl Fn(f64) -> [f64; K], a: f64, b: f64) -> ([f64; K], [f64; K], [f64; K]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let mut abs = [0.0; K];
    let fc = f(c);
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
        abs[k] = WGK[7] * fc[k].abs();
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            kron[k] += WGK[j] * (f1[k] + f2[k]);
            abs[k] += WGK[j] * (f1[k].abs() + f2[k].abs());
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * (f1[k] + f2[k]);
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        kron[k] *= h;
        abs[k] *= h.abs();
        err[k] = (kron[k] - gauss[k] * h).abs();
    }
    (kron, err, abs)
}

/// Relative accuracy below which panel sums are dominated by rounding.
pub const ROUNDOFF_REL: f64 = 1000.0 * f64::EPSILON;

/// Globally adaptive vector-valued Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Every component must satisfy `err_k ≤ max(abs_tol, rel·∫|f_k|)`, where `rel` is
/// `rel_tol` floored at [`ROUNDOFF_REL`].
pub fn integrate<const K: usize>(
    f: impl Fn(f64) -> [f64; K],
    a: f64,
    b: f64,
    initial_panels: usize,
    cfg: &QuadratureConfig,
) -> Result<[f64; K]> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::EmptyWindow { lo: a, hi: b });
    }
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut raw = Vec::with_capacity(n0);
    for i in 0..n0 {
        let lo = a + width * i as f64;
        let hi = if i + 1 == n0 { b } else { lo + width };
        let (value, error, abs) = gk15(&f, lo, hi);
        raw.push((lo, hi, value, error, abs));
    }
    let mut abs_total = [0.0; K];
    for (.., abs) in &raw {
        for k in 0..K {
            abs_total[k] += abs[k];
        }
    }
    if abs_total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integrand"));
    }
    // Fixed per-component error scale, used only to rank panels.
    let rel = cfg.rel_tol.max(ROUNDOFF_REL);
    let scale: [f64; K] = std::array::from_fn(|k| cfg.abs_tol.max(rel * abs_total[k]));
    let priority = |e: &[f64; K]| (0..K).map(|k| e[k] / scale[k]).fold(0.0, f64::max);

    let mut heap: BinaryHeap<Panel<K>> = raw
        .into_iter()
        .map(|(a, b, value, error, abs)| Panel {
            a,
            b,
            value,
            error,
            abs,
            priority: priority(&error),
        })
        .collect();

    let mut subdivisions = 0;
    loop {
        let mut value = [0.0; K];
        let mut error = [0.0; K];
        let mut abs = [0.0; K];
        for p in heap.iter() {
            for k in 0..K {
                value[k] += p.value[k];
                error[k] += p.error[k];
                abs[k] += p.abs[k];
            }
        }
        let mut worst = 0.0f64;
        let mut worst_target = 0.0f64;
        let mut ok = true;
        for k in 0..K {
            let target = cfg.abs_tol.max(rel * abs[k]);
            if error[k] > target {
                ok = false;
                if error[k] / target > worst / worst_target.max(f64::MIN_POSITIVE) {
                    worst = error[k];
                    worst_target = target;
                }
            }
        }
        if ok {
            return Ok(value);
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(Error::SubdivisionLimit {
                limit: cfg.max_subdivisions,
                estimate: worst,
                target: worst_target,
            });
        }
        let panel = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (panel.a + panel.b);
        if !(panel.a < mid && mid < panel.b) {
            // Cannot split further in floating point.
            return Err(Error::SubdivisionLimit {
                limit: subdivisions,
                estimate: worst,
                target: worst_target,
            });
        }
        for (lo, hi) in [(panel.a, mid), (mid, panel.b)] {
            let (value, error, abs) = gk15(&f, lo, hi);
            heap.push(Panel {
                a: lo,
                b: hi,
                value,
                error,
                abs,
                priority: priority(&error),
            });
        }
        subdivisions += 1;
    }
}

const MAX_UPHILL_STEPS: usize = 200;

/// Locates a local maximiser of `g`, starting from `hint` and walking uphill with
/// step doubling before a golden-section refinement. Returns `(y*, g(y*))`.
pub fn locate_maximum(g: impl Fn(f64) -> f64, kappa_lo: f64, hint: f64) -> Result<(f64, f64)> {
    if !(kappa_lo > 0.0 && kappa_lo.is_finite()) {
        return Err(Error::invalid("curvature_bound", "must be positive and finite"));
    }
    if !hint.is_finite() {
        return Err(Error::MaximizerDiverged { hint });
    }
    let step0 = 1.0 / kappa_lo.sqrt();
    let g0 = g(hint);
    if !g0.is_finite() {
        return Err(Error::MaximizerDiverged { hint });
    }
    let (gl, gr) = (g(hint - step0), g(hint + step0));
    let (mut lo, mut hi) = if gl <= g0 && gr <= g0 {
        (hint - step0, hint + step0)
    } else {
        let dir = if gr > gl { 1.0 } else { -1.0 };
        let mut step = step0;
        let mut prev = hint;
        let mut cur = hint + dir * step;
        let mut g_cur = gr.max(gl);
        let mut bracket = None;
        for _ in 0..MAX_UPHILL_STEPS {
            step *= 2.0;
            let next = cur + dir * step;
            let g_next = g(next);
            if !(g_next > g_cur) {
                bracket = Some((prev.min(next), prev.max(next)));
                break;
            }
            prev = cur;
            cur = next;
            g_cur = g_next;
        }
        bracket.ok_or(Error::MaximizerDiverged { hint })?
    };
    // Golden-section search on [lo, hi].
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    let tol = 1e-9 * step0;
    while hi - lo > tol * (1.0 + lo.abs().max(hi.abs()) / step0.max(1.0)) {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = g(x2);
        }
    }
    let (y, gy) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    if !gy.is_finite() {
        return Err(Error::MaximizerDiverged { hint });
    }
    Ok((y, gy))
}

const INITIAL_PANELS: usize = 8;

/// Shifted, truncated integration of `[f_k(y)·exp(g(y) − g*)]` around the maximiser.
/// Returns `(y*, g*, integrals)`.
/// `cfg` with its relative tolerance raised to the rounding noise of `exp(g − g*)`.
///
/// Evaluating `g` near its peak value `g*` loses about `ε·|g*|` absolutely, which is
/// the relative noise of every shifted integrand sample.
fn noise_limited(cfg: &QuadratureConfig, g_star: f64) -> QuadratureConfig {
    QuadratureConfig {
        rel_tol: cfg.rel_tol.max(16.0 * f64::EPSILON * g_star.abs()),
        ..*cfg
    }
}

/// Pulls `edge` toward the maximiser to where the concave `g` has fallen by `drop`.
///
/// The curvature-based edge lies at least `drop` below the peak, so the trimmed
/// window loses no more mass than the original one, while sharply peaked
/// integrands no longer spend the subdivision budget locating their support.
fn trim_edge(g: &impl Fn(f64) -> f64, y_star: f64, g_star: f64, edge: f64, drop: f64) -> f64 {
    let below = |y: f64| !(g(y) - g_star > -drop);
    if !below(edge) {
        return edge;
    }
    let (mut inside, mut outside) = (y_star, edge);
    for _ in 0..60 {
        let mid = 0.5 * (inside + outside);
        if below(mid) {
            outside = mid;
        } else {
            inside = mid;
        }
        if (outside - inside).abs() <= 1e-3 * (edge - y_star).abs() {
            break;
        }
    }
    outside
}

fn shifted_integrals<const K: usize>(
    g: &impl Fn(f64) -> f64,
    f: impl Fn(f64) -> [f64; K],
    kappa_lo: f64,
    center_hint: f64,
    cfg: &QuadratureConfig,
) -> Result<(f64, f64, [f64; K])> {
    cfg.validate()?;
    let (y_star, g_star) = locate_maximum(g, kappa_lo, center_hint)?;
    let half = cfg.m / kappa_lo.sqrt();
    let drop = 0.5 * cfg.m * cfg.m;
    let lo = trim_edge(g, y_star, g_star, y_star - half, drop);
    let hi = trim_edge(g, y_star, g_star, y_star + half, drop);
    let vals = integrate(
        |y| {
            let w = (g(y) - g_star).exp();
            let fv = f(y);
            std::array::from_fn(|k| if w == 0.0 { 0.0 } else { fv[k] * w })
        },
        lo,
        hi,
        INITIAL_PANELS,
        &noise_limited(cfg, g_star),
    )?;
    Ok((y_star, g_star, vals))
}

/// `log ∫ exp(g(y)) dy`.
pub fn log_integral_exp(
    g: impl Fn(f64) -> f64,
    curvature_bound: f64,
    center_hint: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let (_, g_star, [z]) = shifted_integrals(&g, |_| [1.0], curvature_bound, center_hint, cfg)?;
    if !(z > 0.0) {
        return Err(Error::NonFinite("partition integral"));
    }
    Ok(g_star + z.ln())
}

/// `∫ f·exp(g) / ∫ exp(g)` with both integrals on one truncation interval.
pub fn weighted_mean(
    g: impl Fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
    curvature_bound: f64,
    center_hint: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let (_, _, [z, fz]) = shifted_integrals(&g, |y| [1.0, f(y)], curvature_bound, center_hint, cfg)?;
    if !(z > 0.0) {
        return Err(Error::NonFinite("partition integral"));
    }
    Ok(fz / z)
}

/// Log-normaliser and first three central moments of the density `∝ exp(g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub log_z: f64,
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
}

pub fn tilted_moments(
    g: impl Fn(f64) -> f64,
    curvature_bound: f64,
    center_hint: f64,
    cfg: &QuadratureConfig,
) -> Result<Moments> {
    cfg.validate()?;
    let (c, g_star) = locate_maximum(&g, curvature_bound, center_hint)?;
    let half = cfg.m / curvature_bound.sqrt();
    let drop = 0.5 * cfg.m * cfg.m;
    let lo = trim_edge(&g, c, g_star, c - half, drop);
    let hi = trim_edge(&g, c, g_star, c + half, drop);
    let [m0, m1, m2, m3] = integrate(
        |y| {
            let w = (g(y) - g_star).exp();
            let d = y - c;
            if w == 0.0 {
                [0.0; 4]
            } else {
                [w, d * w, d * d * w, d * d * d * w]
            }
        },
        lo,
        hi,
        INITIAL_PANELS,
        &noise_limited(cfg, g_star),
    )?;
    if !(m0 > 0.0) {
        return Err(Error::NonFinite("partition integral"));
    }
    let e1 = m1 / m0;
    let e2 = m2 / m0;
    let e3 = m3 / m0;
    Ok(Moments {
        log_z: g_star + m0.ln(),
        mean: c + e1,
        variance: e2 - e1 * e1,
        third: e3 - 3.0 * e1 * e2 + 2.0 * e1 * e1 * e1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn gaussian_examples() {
        let half_log_pi = 0.5 * PI.ln();
        let v = log_integral_exp(|y| -y * y, 2.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(v, half_log_pi, epsilon = 1e-12);
        assert_relative_eq!(v, 0.5723649, epsilon = 1e-7);
        let v = log_integral_exp(|y| -y * y + 2.0 * y, 2.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(v, 1.0 + half_log_pi, epsilon = 1e-12);
        let v = log_integral_exp(|y| -(y - 10.0).powi(2), 2.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(v, half_log_pi, epsilon = 1e-12);
    }

    #[test]
    fn weighted_mean_examples() {
        let m = weighted_mean(|y| -y * y, |y| y, 2.0, 0.0, &cfg()).unwrap();
        assert!(m.abs() < 1e-12);
        let m = weighted_mean(|y| -y * y + 2.0 * y, |y| y, 2.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(m, 1.0, epsilon = 1e-11);
        let m = weighted_mean(|y| -y * y, |y| y * y, 2.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(m, 0.5, epsilon = 1e-11);
    }

    #[test]
    fn quadratic_family_closed_forms() {
        for a in [0.5, 1.0, 4.0] {
            for b in [-3.0, 0.0, 3.0] {
                let v = log_integral_exp(|y| -a * y * y + b * y, 2.0 * a, 0.0, &cfg()).unwrap();
                let exact = b * b / (4.0 * a) + 0.5 * (PI / a).ln();
                assert!((v - exact).abs() <= 1e-10, "a={a} b={b}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn moments_of_a_gaussian() {
        // exp(-(y-1)²/(2·0.25)) has mean 1 and variance 0.25
        let m = tilted_moments(|y| -2.0 * (y - 1.0).powi(2), 4.0, -3.0, &cfg()).unwrap();
        assert_relative_eq!(m.mean, 1.0, epsilon = 1e-11);
        assert_relative_eq!(m.variance, 0.25, epsilon = 1e-11);
        assert!(m.third.abs() < 1e-11);
        assert_relative_eq!(m.log_z, 0.5 * (PI / 2.0).ln(), epsilon = 1e-11);
    }

    #[test]
    fn moments_of_a_skewed_density() {
        // Gamma(k=3, θ=1): exp((k-1) ln y - y) on y > 0; mean 3, variance 3, third moment 6
        let g = |y: f64| if y > 0.0 { 2.0 * y.ln() - y } else { f64::NEG_INFINITY };
        let c = QuadratureConfig { m: 60.0, ..cfg() };
        let m = tilted_moments(g, 0.5, 2.0, &c).unwrap();
        assert_relative_eq!(m.log_z, 2f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(m.mean, 3.0, epsilon = 1e-9);
        assert_relative_eq!(m.variance, 3.0, epsilon = 1e-8);
        assert_relative_eq!(m.third, 6.0, epsilon = 1e-7);
    }

    #[test]
    fn maximiser_far_from_hint() {
        let (y, gy) = locate_maximum(|y| -(y - 250.0).powi(2), 2.0, 0.0).unwrap();
        assert!((y - 250.0).abs() < 1e-6);
        assert!(gy.abs() < 1e-10);
    }

    #[test]
    fn maximiser_diverges_on_unbounded_exponent() {
        let r = locate_maximum(|y| y, 1.0, 0.0);
        assert!(matches!(r, Err(Error::MaximizerDiverged { .. })));
    }

    #[test]
    fn subdivision_limit_is_reported() {
        let c = QuadratureConfig {
            max_subdivisions: 1,
            rel_tol: 1e-15,
            abs_tol: 1e-300,
            ..cfg()
        };
        let r = log_integral_exp(|y| -y.abs().sqrt() - y * y, 2.0, 0.0, &c);
        assert!(matches!(r, Err(Error::SubdivisionLimit { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = QuadratureConfig { m: 3.0, ..cfg() };
        assert!(log_integral_exp(|y| -y * y, 2.0, 0.0, &c).is_err());
        let c = QuadratureConfig { rel_tol: 0.0, ..cfg() };
        assert!(log_integral_exp(|y| -y * y, 2.0, 0.0, &c).is_err());
    }

    #[test]
    fn integrate_polynomial_exactly() {
        let [v] = integrate(|x| [x.powi(5) - 3.0 * x * x], -1.0, 2.0, 1, &cfg()).unwrap();
        assert_relative_eq!(v, 63.0 / 6.0 - 9.0, epsilon = 1e-13);
    }

    #[test]
    fn truncation_soundness() {
        let g = |y: f64| -0.5 * (y - 1.0).powi(4) - 0.5 * y * y + 2.0 * y;
        let a = log_integral_exp(g, 1.0, 0.0, &cfg()).unwrap();
        let b = log_integral_exp(g, 1.0, 0.0, &QuadratureConfig { m: 24.0, ..cfg() }).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn shift_invariance(c in -1000.0f64..1000.0, s in -3.0f64..3.0) {
            let g = |y: f64| -0.5 * (y - 1.0).powi(4) - 0.5 * y * y + s * y;
            let base = log_integral_exp(g, 1.0, 0.0, &cfg()).unwrap();
            let shifted = log_integral_exp(|y| g(y) + c, 1.0, 0.0, &cfg()).unwrap();
            prop_assert!((shifted - base - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}
