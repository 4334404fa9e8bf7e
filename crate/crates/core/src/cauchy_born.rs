//! Finite-temperature Cauchy–Born strain energy.
//!
//! `φ(σ) = log ∫ exp(−ψ(y) + σy) dy` is the log-partition function of a single
//! tilted bond, `Ψ = φ'` its mean and `Ψ' = φ''` its variance. The strain energy
//! `W` is the Legendre transform of `φ`: `W(A) = σA − φ(σ)` with `Ψ(σ) = A`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::{check_assumptions, DefectSpec, Potential};
use crate::quadrature::{log_integral_exp, tilted_moments, weighted_mean, Moments, QuadratureConfig};

const MAX_BRACKET_GROWTH: usize = 60;
const MAX_ROOT_ITERATIONS: usize = 200;

/// Root of an increasing function by Newton's method safeguarded with bisection.
///
/// `f` returns the value and derivative. The slope bounds seed the bracket, which
/// is then grown geometrically if they turn out to be too optimistic.
pub(crate) fn solve_increasing(
    what: &'static str,
    mut f: impl FnMut(f64) -> Result<(f64, f64)>,
    x0: f64,
    slope_lo: f64,
    tol: f64,
) -> Result<f64> {
    let (f0, d0) = f(x0)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if f0.abs() <= tol {
        return Ok(x0);
    }
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut width = 2.0 * f0.abs() / slope_lo + 1e-12 * (1.0 + x0.abs());
    let mut far = x0 + dir * width;
    let mut f_far = f(far)?;
    let mut grown = 0;
    while f_far.0 * f0 > 0.0 {
        grown += 1;
        if grown > MAX_BRACKET_GROWTH || !f_far.0.is_finite() {
            return Err(Error::BracketNotFound {
                what,
                lo: x0.min(far),
                hi: x0.max(far),
            });
        }
        width *= 2.0;
        far = x0 + dir * width;
        f_far = f(far)?;
    }
    if f_far.0.abs() <= tol {
        return Ok(far);
    }
    let (mut lo, mut hi) = if dir > 0.0 { (x0, far) } else { (far, x0) };
    let (mut x, mut fx, mut dx) = if f0.abs() < f_far.0.abs() {
        (x0, f0, d0)
    } else {
        (far, f_far.0, f_far.1)
    };
    for _ in 0..MAX_ROOT_ITERATIONS {
        let newton = x - fx / dx;
        let next = if dx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let (fn_, dn) = f(next)?;
        if !fn_.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if fn_ < 0.0 {
            lo = next;
        } else {
            hi = next;
        }
        x = next;
        fx = fn_;
        dx = dn;
        if fx.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Dense grid of `W, W', W''` with a quintic Hermite interpolant on each cell.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    lo: f64,
    hi: f64,
    step: f64,
    w: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl Table {
    fn eval(&self, a: f64) -> Result<(f64, f64, f64)> {
        if !(a >= self.lo && a <= self.hi) {
            return Err(Error::OutOfRange {
                a,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let cells = self.w.len() - 1;
        let j = (((a - self.lo) / self.step).floor() as usize).min(cells - 1);
        let h = self.step;
        let t = (a - (self.lo + h * j as f64)) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let basis = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * (t3 - 2.0 * t4 + t5),
        ];
        let d_basis = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
        ];
        let dd_basis = [
            -60.0 * t + 180.0 * t2 - 120.0 * t3,
            -36.0 * t + 96.0 * t2 - 60.0 * t3,
            0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3),
            60.0 * t - 180.0 * t2 + 120.0 * t3,
            -24.0 * t + 84.0 * t2 - 60.0 * t3,
            0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3),
        ];
        let coeffs = [
            self.w[j],
            h * self.w1[j],
            h * h * self.w2[j],
            self.w[j + 1],
            h * self.w1[j + 1],
            h * h * self.w2[j + 1],
        ];
        let dot = |b: &[f64; 6]| b.iter().zip(&coeffs).map(|(b, c)| b * c).sum::<f64>();
        Ok((dot(&basis), dot(&d_basis) / h, dot(&dd_basis) / (h * h)))
    }
}

/// Evaluates `φ`, `Ψ`, `Ψ'` and the strain energy `W` for one bond potential.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyBornEvaluator {
    psi: Potential,
    kappa_lo: f64,
    kappa_hi: f64,
    quad: QuadratureConfig,
    table: Option<Table>,
}

const CERTIFY_WINDOW: (f64, f64) = (-10.0, 10.0);
const CERTIFY_POINTS: usize = 2001;

impl CauchyBornEvaluator {
    /// Builds a direct (untabulated) evaluator. Curvature bounds are certified on a
    /// fixed window around the origin; the lower bound drives quadrature truncation.
    pub fn new(psi: Potential, quad: QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let report = check_assumptions(&psi, &DefectSpec::none(), CERTIFY_WINDOW, CERTIFY_POINTS)?;
        if !report.pass {
            return Err(Error::invalid(
                "potential",
                format!("second derivative reaches {} on the certification window", report.kappa1),
            ));
        }
        Ok(CauchyBornEvaluator {
            psi,
            kappa_lo: report.kappa1,
            kappa_hi: report.kappa2,
            quad,
            table: None,
        })
    }

    /// Direct evaluator with the tight inner tolerances needed when its output feeds
    /// further quadrature or root finding.
    pub fn with_tight_quadrature(psi: Potential) -> Result<Self> {
        Self::new(psi, QuadratureConfig::tight())
    }

    pub fn potential(&self) -> &Potential {
        &self.psi
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    /// Lower and upper curvature bounds of `ψ` on the certification window.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        (self.kappa_lo, self.kappa_hi)
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    pub fn table_range(&self) -> Option<(f64, f64)> {
        self.table.as_ref().map(|t| (t.lo, t.hi))
    }

    /// Solves `ψ'(y) = σ`, the mode of the tilted measure.
    pub fn tilted_mode(&self, sigma: f64) -> Result<f64> {
        let psi = &self.psi;
        solve_increasing(
            "tilted mode",
            |y| Ok((psi.d1(y) - sigma, psi.d2(y))),
            0.0,
            self.kappa_lo,
            1e-9 * (1.0 + sigma.abs()),
        )
    }

    /// `log ∫ exp(−ψ(y) − extra(y) + σy) dy` for an extra potential whose curvature
    /// lower bound (added to `ψ`'s) is `kappa_extra`.
    fn log_partition_with(&self, extra: &Potential, kappa: f64, sigma: f64) -> Result<f64> {
        let hint = self.tilted_mode(sigma)?;
        log_integral_exp(
            |y| -self.psi.value(y) - extra.value(y) + sigma * y,
            kappa,
            hint,
            &self.quad,
        )
    }

    pub fn phi(&self, sigma: f64) -> Result<f64> {
        self.log_partition_with(&Potential::zero(), self.kappa_lo, sigma)
    }

    /// Normaliser and central moments of the tilted bond measure `∝ exp(−ψ(y) + σy)`.
    pub fn moments(&self, sigma: f64) -> Result<Moments> {
        let hint = self.tilted_mode(sigma)?;
        tilted_moments(|y| -self.psi.value(y) + sigma * y, self.kappa_lo, hint, &self.quad)
    }

    /// `(Ψ(σ), Ψ'(σ))`: the tilted mean and variance.
    pub fn psi_map(&self, sigma: f64) -> Result<(f64, f64)> {
        let m = self.moments(sigma)?;
        Ok((m.mean, m.variance))
    }

    /// `σ` with `Ψ(σ) = A`.
    pub fn solve_sigma(&self, a: f64) -> Result<f64> {
        if !a.is_finite() {
            return Err(Error::invalid("A", "strain must be finite"));
        }
        self.solve_sigma_moments(a).map(|(s, _)| s)
    }

    fn solve_sigma_moments(&self, a: f64) -> Result<(f64, Moments)> {
        let mut last = None;
        let sigma = solve_increasing(
            "sigma",
            |s| {
                let m = self.moments(s)?;
                last = Some((s, m));
                Ok((m.mean - a, m.variance))
            },
            self.psi.d1(a),
            1.0 / self.kappa_hi,
            1e-12 * (1.0 + a.abs()),
        )?;
        let m = match last {
            Some((s, m)) if s == sigma => m,
            _ => self.moments(sigma)?,
        };
        Ok((sigma, m))
    }

    /// `(W, W', W'')` at strain `A`, interpolated when the evaluator is tabulated.
    pub fn w_eval(&self, a: f64) -> Result<(f64, f64, f64)> {
        match &self.table {
            Some(t) => t.eval(a),
            None => self.w_direct(a),
        }
    }

    /// `(W, W', W'')` from the Legendre transform, ignoring any table.
    pub fn w_direct(&self, a: f64) -> Result<(f64, f64, f64)> {
        if !a.is_finite() {
            return Err(Error::invalid("A", "strain must be finite"));
        }
        let (sigma, m) = self.solve_sigma_moments(a)?;
        Ok((sigma * a - m.log_z, sigma, 1.0 / m.variance))
    }

    /// A copy of this evaluator backed by a table of `n` nodes spanning `[lo, hi]`.
    pub fn tabulate(&self, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::invalid("n", format!("tabulation needs at least 8 nodes, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::EmptyWindow { lo, hi });
        }
        let step = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let a = if j + 1 == n { hi } else { lo + step * j as f64 };
                self.w_direct(a)
            })
            .collect::<Result<_>>()?;
        let table = Table {
            lo,
            hi,
            step,
            w: nodes.iter().map(|v| v.0).collect(),
            w1: nodes.iter().map(|v| v.1).collect(),
            w2: nodes.iter().map(|v| v.2).collect(),
        };
        Ok(CauchyBornEvaluator {
            table: Some(table),
            ..self.clone()
        })
    }

    /// Writes the tabulated nodes as CSV with header `A,W,W_prime,W_second`.
    pub fn write_table_csv(&self, mut out: impl Write) -> Result<()> {
        let t = self.table.as_ref().ok_or_else(|| Error::invalid("table", "evaluator is not tabulated"))?;
        writeln!(out, "A,W,W_prime,W_second")?;
        let n = t.w.len();
        for j in 0..n {
            let a = if j + 1 == n { t.hi } else { t.lo + t.step * j as f64 };
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", a, t.w[j], t.w1[j], t.w2[j])?;
        }
        Ok(())
    }

    /// `Φ(σ)`: tilted mean under `ψ + P` minus the tilted mean under `ψ`.
    pub fn phi_defect_gap(&self, defect: &DefectSpec, sigma: f64) -> Result<f64> {
        if defect.is_zero() {
            return Ok(0.0);
        }
        let report = check_assumptions(&self.psi, defect, CERTIFY_WINDOW, CERTIFY_POINTS)?;
        if !report.pass {
            return Err(Error::invalid("defect", "ψ + P is not strictly convex on the certification window"));
        }
        let p = &defect.potential;
        let hint = self.tilted_mode(sigma)?;
        let with_defect = weighted_mean(
            |y| -self.psi.value(y) - p.value(y) + sigma * y,
            |y| y,
            report.varsigma1,
            hint,
            &self.quad,
        )?;
        Ok(with_defect - self.psi_map(sigma)?.0)
    }

    /// `log ∫ exp(−ψ(y) − P(y) + σy) dy`.
    pub fn phi_with_defect(&self, defect: &DefectSpec, sigma: f64) -> Result<f64> {
        if defect.is_zero() {
            return self.phi(sigma);
        }
        let report = check_assumptions(&self.psi, defect, CERTIFY_WINDOW, CERTIFY_POINTS)?;
        if !report.pass {
            return Err(Error::invalid("defect", "ψ + P is not strictly convex on the certification window"));
        }
        self.log_partition_with(&defect.potential, report.varsigma1, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn harmonic(alpha: f64) -> CauchyBornEvaluator {
        CauchyBornEvaluator::new(Potential::harmonic(alpha).unwrap(), QuadratureConfig::default()).unwrap()
    }

    fn quartic() -> CauchyBornEvaluator {
        CauchyBornEvaluator::with_tight_quadrature(Potential::quartic()).unwrap()
    }

    #[test]
    fn phi_examples() {
        let e = harmonic(1.0);
        assert_relative_eq!(e.phi(0.0).unwrap(), 0.5 * PI.ln(), epsilon = 1e-10);
        assert_relative_eq!(e.phi(2.0).unwrap(), 1.0 + 0.5 * PI.ln(), epsilon = 1e-10);
        assert_relative_eq!(harmonic(4.0).phi(0.0).unwrap(), 0.5 * (PI / 4.0).ln(), epsilon = 1e-10);
        assert_relative_eq!(harmonic(4.0).phi(0.0).unwrap(), -0.1207822, epsilon = 1e-7);
    }

    #[test]
    fn psi_map_examples() {
        let e = harmonic(1.0);
        let (m, _) = e.psi_map(0.0).unwrap();
        assert!(m.abs() < 1e-12);
        let (m, v) = e.psi_map(2.0).unwrap();
        assert_relative_eq!(m, 1.0, epsilon = 1e-10);
        assert_relative_eq!(v, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn solve_sigma_examples() {
        let e = harmonic(1.0);
        assert_relative_eq!(e.solve_sigma(1.0).unwrap(), 2.0, epsilon = 1e-10);
        assert!(e.solve_sigma(0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn solve_sigma_quartic_matches_bisection() {
        let e = quartic();
        let s = e.solve_sigma(2.0).unwrap();
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if e.psi_map(mid).unwrap().0 < 2.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        assert!((s - 0.5 * (lo + hi)).abs() < 1e-10, "{s} vs {}", 0.5 * (lo + hi));
        assert!((e.psi_map(s).unwrap().0 - 2.0).abs() <= 1e-10 * 3.0);
    }

    #[test]
    fn w_eval_harmonic() {
        let e = harmonic(1.0);
        let (w, w1, w2) = e.w_eval(1.0).unwrap();
        assert_relative_eq!(w, 1.0 - 0.5 * PI.ln(), epsilon = 1e-10);
        assert_relative_eq!(w, 0.4276351, epsilon = 1e-7);
        assert_relative_eq!(w1, 2.0, epsilon = 1e-10);
        assert_relative_eq!(w2, 2.0, epsilon = 1e-9);
        let (w, w1, _) = e.w_eval(0.0).unwrap();
        assert_relative_eq!(w, -0.5 * PI.ln(), epsilon = 1e-10);
        assert!(w1.abs() < 1e-10);
    }

    #[test]
    fn w_derivative_matches_difference_quotient() {
        let e = quartic();
        for a in [-1.0, 0.3, 2.0, 3.5] {
            let eps = 1e-5;
            let fd = (e.w_eval(a + eps).unwrap().0 - e.w_eval(a - eps).unwrap().0) / (2.0 * eps);
            let (_, w1, w2) = e.w_eval(a).unwrap();
            assert!((fd - w1).abs() <= 1e-6 * (1.0 + w1.abs()), "A={a}: {fd} vs {w1}");
            let fd2 = (e.w_eval(a + eps).unwrap().1 - e.w_eval(a - eps).unwrap().1) / (2.0 * eps);
            assert!((fd2 - w2).abs() <= 1e-5 * (1.0 + w2.abs()), "A={a}: {fd2} vs {w2}");
        }
    }

    #[test]
    fn tabulated_harmonic_accuracy() {
        let e = harmonic(1.0);
        let t = e.tabulate(-2.0, 2.0, 65).unwrap();
        let mut worst = 0.0f64;
        for k in 0..50 {
            let a = -2.0 + 4.0 * (k as f64 + 0.37) / 50.0;
            let direct = e.w_eval(a).unwrap();
            let interp = t.w_eval(a).unwrap();
            worst = worst.max((direct.0 - interp.0).abs());
            assert!((direct.1 - interp.1).abs() < 1e-7);
            assert!((direct.2 - interp.2).abs() < 1e-5);
        }
        assert!(worst <= 1e-8, "worst {worst}");
    }

    #[test]
    fn tabulation_refinement_improves_quartic() {
        let e = quartic();
        let coarse = e.tabulate(0.0, 4.0, 8).unwrap();
        let fine = e.tabulate(0.0, 4.0, 64).unwrap();
        let probes: Vec<f64> = (0..20).map(|k| 0.1 + 0.19 * k as f64).collect();
        let err = |t: &CauchyBornEvaluator| {
            probes
                .iter()
                .map(|&a| (t.w_eval(a).unwrap().0 - e.w_eval(a).unwrap().0).abs())
                .fold(0.0, f64::max)
        };
        let (ec, ef) = (err(&coarse), err(&fine));
        assert!(ef < ec, "fine {ef} coarse {ec}");
        assert!(ef < 1e-8);
    }

    #[test]
    fn tabulation_contract() {
        let e = harmonic(1.0);
        let t = e.tabulate(-1.0, 1.0, 16).unwrap();
        assert!(matches!(t.w_eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(e.tabulate(-1.0, 1.0, 7).is_err());
        assert!(e.tabulate(1.0, 1.0, 16).is_err());
        let mut buf = Vec::new();
        t.write_table_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("A,W,W_prime,W_second"));
        assert_eq!(lines.count(), 16);
        assert!(e.write_table_csv(Vec::new()).is_err());
    }

    #[test]
    fn defect_gap_examples() {
        let e = harmonic(1.0);
        assert_eq!(e.phi_defect_gap(&DefectSpec::none(), 1.7).unwrap(), 0.0);
        let p = DefectSpec::new(Potential::harmonic(1.0).unwrap());
        assert_relative_eq!(e.phi_defect_gap(&p, 2.0).unwrap(), -0.5, epsilon = 1e-10);
        assert!(e.phi_defect_gap(&p, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn lemma_bounds_on_quartic() {
        let e = quartic();
        let kappa2 = check_assumptions(e.potential(), &DefectSpec::none(), (-3.0, 5.0), 1000)
            .unwrap()
            .kappa2;
        for k in 0..50 {
            let sigma = -10.0 + 20.0 * k as f64 / 49.0;
            let (_, v) = e.psi_map(sigma).unwrap();
            assert!(v >= 1.0 / kappa2 - 1e-8 && v <= 1.0 + 1e-8, "σ={sigma}: Ψ'={v}");
        }
    }

    #[test]
    fn rejects_non_convex_potential() {
        let p = Potential::polynomial(vec![0.0, 0.0, -1.0, 0.0, 0.1]).unwrap();
        assert!(CauchyBornEvaluator::new(p, QuadratureConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn legendre_round_trip(a in -3.0f64..5.0) {
            let e = quartic();
            let s = e.solve_sigma(a).unwrap();
            let (m, v) = e.psi_map(s).unwrap();
            prop_assert!((m - a).abs() <= 1e-10 * (1.0 + a.abs()));
            let (_, w1, w2) = e.w_eval(a).unwrap();
            prop_assert!((w1 - s).abs() <= 1e-12 * (1.0 + s.abs()));
            prop_assert!((w2 * v - 1.0).abs() <= 1e-8);
            // W'' lies in the certified curvature range
            prop_assert!(w2 >= 1.0 - 1e-8 && w2 <= 97.0 + 1e-8);
        }
    }
}
