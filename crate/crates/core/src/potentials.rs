//! Bond potentials, the first-bond defect and external force sequences.
//!
//! A [`Potential`] is a scalar function of a bond length `y` with analytic first
//! and second derivatives. The chain energy is built from one potential `ψ`
//! shared by every bond, a defect `P` acting on the first bond only, and loads
//! `h_i` that tilt bond `i` by `h_i y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative description of a potential, as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `α y²`
    Harmonic { stiffness: f64 },
    /// `½ (y − 1)⁴ + ½ y²`
    Quartic,
    /// `Σ c_k y^k`, lowest degree first.
    Polynomial { coefficients: Vec<f64> },
    /// Identically zero; used for "no defect".
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Harmonic(f64),
    Quartic,
    Polynomial(Vec<f64>),
}

/// A twice-differentiable bond energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    kind: Kind,
}

/// Value, first and second derivative at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn make_potential(spec: &PotentialSpec) -> Result<Potential> {
    let kind = match spec {
        PotentialSpec::Harmonic { stiffness } => {
            if !(stiffness.is_finite() && *stiffness > 0.0) {
                return Err(Error::invalid(
                    "stiffness",
                    format!("harmonic stiffness must be positive, got {stiffness}"),
                ));
            }
            Kind::Harmonic(*stiffness)
        }
        PotentialSpec::Quartic => Kind::Quartic,
        PotentialSpec::Polynomial { coefficients } => {
            if coefficients.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("coefficients", "non-finite coefficient"));
            }
            let mut c = coefficients.clone();
            while c.last() == Some(&0.0) {
                c.pop();
            }
            Kind::Polynomial(c)
        }
        PotentialSpec::Zero => Kind::Polynomial(Vec::new()),
    };
    Ok(Potential { kind })
}

impl Potential {
    pub fn harmonic(stiffness: f64) -> Result<Self> {
        make_potential(&PotentialSpec::Harmonic { stiffness })
    }

    pub fn quartic() -> Self {
        Potential { kind: Kind::Quartic }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        make_potential(&PotentialSpec::Polynomial { coefficients })
    }

    pub fn zero() -> Self {
        Potential {
            kind: Kind::Polynomial(Vec::new()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, Kind::Polynomial(c) if c.is_empty())
    }

    /// Stiffness `α` if this is a harmonic potential.
    pub fn harmonic_stiffness(&self) -> Option<f64> {
        match self.kind {
            Kind::Harmonic(a) => Some(a),
            _ => None,
        }
    }

    pub fn spec(&self) -> PotentialSpec {
        match &self.kind {
            Kind::Harmonic(a) => PotentialSpec::Harmonic { stiffness: *a },
            Kind::Quartic => PotentialSpec::Quartic,
            Kind::Polynomial(c) if c.is_empty() => PotentialSpec::Zero,
            Kind::Polynomial(c) => PotentialSpec::Polynomial {
                coefficients: c.clone(),
            },
        }
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Harmonic(a) => a * y * y,
            Kind::Quartic => {
                let r = y - 1.0;
                let r2 = r * r;
                0.5 * r2 * r2 + 0.5 * y * y
            }
            Kind::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * y + ck),
        }
    }

    #[inline]
    pub fn d1(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Harmonic(a) => 2.0 * a * y,
            Kind::Quartic => {
                let r = y - 1.0;
                2.0 * r * r * r + y
            }
            Kind::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * y + k as f64 * ck),
        }
    }

    #[inline]
    pub fn d2(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Harmonic(a) => 2.0 * a,
            Kind::Quartic => {
                let r = y - 1.0;
                6.0 * r * r + 1.0
            }
            Kind::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * y + (k * (k - 1)) as f64 * ck),
        }
    }

    pub fn eval(&self, y: f64) -> Eval {
        Eval {
            value: self.value(y),
            d1: self.d1(y),
            d2: self.d2(y),
        }
    }

    /// Points where `ψ''` attains an interior extremum, for kinds where that is known in closed form.
    fn curvature_critical_points(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Quartic => vec![1.0],
            _ => Vec::new(),
        }
    }

    /// Default window on which curvature bounds are certified, centred on strain `a`.
    pub fn default_window(a: f64) -> (f64, f64) {
        (a - 8.0, a + 8.0)
    }
}

/// Defect potential `P`, acting on the first bond only.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectSpec {
    pub potential: Potential,
}

impl DefectSpec {
    pub fn new(potential: Potential) -> Self {
        DefectSpec { potential }
    }

    pub fn none() -> Self {
        DefectSpec {
            potential: Potential::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.potential.is_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub kappa1: f64,
    pub kappa2: f64,
    pub varsigma1: f64,
    pub varsigma2: f64,
    pub pass: bool,
}

fn curvature_range(
    pots: &[&Potential],
    (lo, hi): (f64, f64),
    grid_points: usize,
) -> (f64, f64) {
    let d2 = |y: f64| pots.iter().map(|p| p.d2(y)).sum::<f64>();
    let step = (hi - lo) / (grid_points - 1) as f64;
    let extra = pots
        .iter()
        .flat_map(|p| p.curvature_critical_points())
        .filter(|y| (lo..=hi).contains(y));
    (0..grid_points)
        .map(|k| if k + 1 == grid_points { hi } else { lo + step * k as f64 })
        .chain(extra)
        .map(d2)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), v| {
            (mn.min(v), mx.max(v))
        })
}

/// Second-derivative bounds of `ψ` and `ψ + P` sampled on a grid over `window`.
///
/// Fails (with `pass = false`) when either curvature is non-positive somewhere.
pub fn check_assumptions(
    psi: &Potential,
    defect: &DefectSpec,
    window: (f64, f64),
    grid_points: usize,
) -> Result<AssumptionReport> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::EmptyWindow { lo, hi });
    }
    if grid_points < 2 {
        return Err(Error::invalid("grid_points", "need at least 2 grid points"));
    }
    let (kappa1, kappa2) = curvature_range(&[psi], window, grid_points);
    let (varsigma1, varsigma2) = curvature_range(&[psi, &defect.potential], window, grid_points);
    Ok(AssumptionReport {
        kappa1,
        kappa2,
        varsigma1,
        varsigma2,
        pass: kappa1 > 0.0 && varsigma1 > 0.0,
    })
}

/// Declarative description of the external loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForceSpec {
    None,
    /// `h_1, h_2, ...`; entries past the list are zero.
    Explicit { entries: Vec<f64> },
    /// Node forces `f_j = j^{-p}`, giving bond loads `h_i = -Σ_{j=i}^{N-1} f_j`.
    PowerLaw { p: f64 },
}

/// Tail sums `H = Σ_{i≥2} h_i`, `H̄ = Σ_{i≥2} h_i²` of the limiting load sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSums {
    pub h_sum: f64,
    pub h_sq_sum: f64,
    pub h_cube_abs_sum: f64,
    /// Bound on the error of the three sums above (zero for explicit lists).
    pub remainder_bound: f64,
}

const PREFIX_LEN: usize = 64;
const PARTIAL_SUM_CUTOFF: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
enum Limit {
    Explicit(Vec<f64>),
    PowerLaw { p: f64, prefix: Vec<f64> },
}

/// Loads on the bonds of one finite chain, together with the `N → ∞` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceSequence {
    entries: Vec<f64>,
    limit: Limit,
    tails: TailSums,
}

/// `Σ_{j>m} j^{-s}` by Euler–Maclaurin; returns (estimate, error bound).
fn zeta_tail(s: f64, m: usize) -> (f64, f64) {
    let m = m as f64;
    let f = m.powf(-s);
    let integral = m.powf(1.0 - s) / (s - 1.0);
    let d1 = -s * m.powf(-s - 1.0);
    let d3 = -s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0);
    let d5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * m.powf(-s - 5.0);
    let est = integral - 0.5 * f - d1 / 12.0 + d3 / 720.0;
    (est, (d5 / 30240.0).abs())
}

/// Riemann zeta for `s > 1` via partial sums plus an Euler–Maclaurin tail.
fn zeta(s: f64) -> (f64, f64) {
    const M: usize = 1000;
    let head: f64 = (1..=M).rev().map(|j| (j as f64).powf(-s)).sum();
    let (tail, err) = zeta_tail(s, M);
    (head + tail, err)
}

impl ForceSequence {
    pub fn zero(n: usize) -> Self {
        ForceSequence {
            entries: vec![0.0; n],
            limit: Limit::Explicit(Vec::new()),
            tails: TailSums {
                h_sum: 0.0,
                h_sq_sum: 0.0,
                h_cube_abs_sum: 0.0,
                remainder_bound: 0.0,
            },
        }
    }

    pub fn explicit(entries: &[f64], n: usize) -> Result<Self> {
        if entries.iter().any(|h| !h.is_finite()) {
            return Err(Error::invalid("entries", "non-finite load"));
        }
        let finite = (0..n).map(|i| entries.get(i).copied().unwrap_or(0.0)).collect();
        let tail = entries.iter().skip(1);
        let tails = TailSums {
            h_sum: tail.clone().sum(),
            h_sq_sum: tail.clone().map(|h| h * h).sum(),
            h_cube_abs_sum: tail.map(|h| h.abs().powi(3)).sum(),
            remainder_bound: 0.0,
        };
        let mut limit = entries.to_vec();
        while limit.last() == Some(&0.0) {
            limit.pop();
        }
        Ok(ForceSequence {
            entries: finite,
            limit: Limit::Explicit(limit),
            tails,
        })
    }

    pub fn power_law(p: f64, n: usize) -> Result<Self> {
        if !(p.is_finite() && p > 2.0) {
            return Err(Error::invalid(
                "p",
                format!("power-law exponent must exceed 2 for summable loads, got {p}"),
            ));
        }
        // h_i = -Σ_{j=i}^{N-1} j^{-p}; accumulate from the far end.
        let mut entries = vec![0.0; n];
        let mut acc = 0.0;
        for i in (1..n).rev() {
            acc += (i as f64).powf(-p);
            entries[i - 1] = -acc;
        }

        // Limit sequence: h_i = -T(i), T(i) = Σ_{j≥i} j^{-p}.
        let (zeta_p, zeta_p_err) = zeta(p);
        let (zeta_pm1, zeta_pm1_err) = zeta(p - 1.0);
        let h_sum = zeta_p - zeta_pm1;

        let m = PARTIAL_SUM_CUTOFF;
        let (mut t, t_err) = zeta_tail(p, m);
        let mut sq = 0.0;
        let mut cube = 0.0;
        let mut prefix = vec![0.0; PREFIX_LEN];
        for i in (2..=m).rev() {
            t += (i as f64).powf(-p);
            sq += t * t;
            cube += t * t * t;
            if i <= PREFIX_LEN {
                prefix[i - 1] = -t;
            }
        }
        prefix[0] = -(t + 1.0);
        // Σ_{i>M} T(i)^k with T(i) ≈ i^{1-p}/(p-1).
        let mf = m as f64;
        let sq_tail = mf.powf(3.0 - 2.0 * p) / ((p - 1.0).powi(2) * (2.0 * p - 3.0));
        let cube_tail = mf.powf(4.0 - 3.0 * p) / ((p - 1.0).powi(3) * (3.0 * p - 4.0));
        let tails = TailSums {
            h_sum,
            h_sq_sum: sq + sq_tail,
            h_cube_abs_sum: cube + cube_tail,
            remainder_bound: zeta_p_err
                + zeta_pm1_err
                + 2.0 * sq_tail
                + cube_tail
                + 2.0 * (m as f64) * t_err,
        };
        Ok(ForceSequence {
            entries,
            limit: Limit::PowerLaw { p, prefix },
            tails,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    /// `h_1..h_N` for the finite chain (index 0 holds `h_1`).
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `h_i` of the finite chain, 1-based.
    pub fn h(&self, i: usize) -> f64 {
        self.entries[i - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&h| h == 0.0)
            && match &self.limit {
                Limit::Explicit(l) => l.is_empty(),
                Limit::PowerLaw { .. } => false,
            }
    }

    /// `h_i` of the limiting (N → ∞) load sequence, 1-based.
    pub fn limit_h(&self, i: usize) -> f64 {
        match &self.limit {
            Limit::Explicit(l) => l.get(i - 1).copied().unwrap_or(0.0),
            Limit::PowerLaw { p, prefix } => {
                if i <= prefix.len() {
                    prefix[i - 1]
                } else {
                    // T(i) = ζ-tail from i
                    -(zeta_tail(*p, i - 1).0)
                }
            }
        }
    }

    pub fn tails(&self) -> TailSums {
        self.tails
    }

    /// `Σ_{i=k+1}^{∞} h_i²` of the limiting sequence.
    pub fn sq_sum_after(&self, k: usize) -> f64 {
        let head: f64 = (2..=k).map(|i| self.limit_h(i).powi(2)).sum();
        (self.tails.h_sq_sum - head).max(0.0)
    }

    /// `Σ_{i=k+1}^{∞} |h_i|³` of the limiting sequence.
    pub fn cube_sum_after(&self, k: usize) -> f64 {
        let head: f64 = (2..=k).map(|i| self.limit_h(i).abs().powi(3)).sum();
        (self.tails.h_cube_abs_sum - head).max(0.0)
    }

    /// Upper bound on `Σ_{i>k} |h_i|` for the limiting sequence.
    pub fn tail_remainder_bound(&self, k: usize) -> f64 {
        match &self.limit {
            Limit::Explicit(l) => l.iter().skip(k).map(|h| h.abs()).sum(),
            Limit::PowerLaw { p, .. } => {
                let k = k as f64;
                k.powf(1.0 - p) / (p - 1.0) + k.powf(2.0 - p) / ((p - 1.0) * (p - 2.0))
            }
        }
    }
}

pub fn build_force_sequence(spec: &ForceSpec, n: usize) -> Result<ForceSequence> {
    if n < 2 {
        return Err(Error::invalid("N", format!("chain length must be at least 2, got {n}")));
    }
    match spec {
        ForceSpec::None => Ok(ForceSequence::zero(n)),
        ForceSpec::Explicit { entries } => ForceSequence::explicit(entries, n),
        ForceSpec::PowerLaw { p } => ForceSequence::power_law(*p, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fd_check(p: &Potential, y: f64) {
        let step = 1e-5;
        let e = p.eval(y);
        let d1 = (p.value(y + step) - p.value(y - step)) / (2.0 * step);
        let d2 = (p.d1(y + step) - p.d1(y - step)) / (2.0 * step);
        assert!((d1 - e.d1).abs() <= 1e-6 * (1.0 + e.d1.abs()), "d1 at {y}: {d1} vs {}", e.d1);
        assert!((d2 - e.d2).abs() <= 1e-6 * (1.0 + e.d2.abs()), "d2 at {y}: {d2} vs {}", e.d2);
    }

    #[test]
    fn harmonic_values() {
        let p = Potential::harmonic(1.0).unwrap();
        assert_eq!(p.eval(2.0), Eval { value: 4.0, d1: 4.0, d2: 2.0 });
        assert_eq!(p.eval(0.0), Eval { value: 0.0, d1: 0.0, d2: 2.0 });
    }

    #[test]
    fn quartic_at_one() {
        let p = Potential::quartic();
        assert_eq!(p.eval(1.0), Eval { value: 0.5, d1: 1.0, d2: 1.0 });
    }

    #[test]
    fn polynomial_matches_quartic_expansion() {
        // ½(y-1)^4 + ½y² = ½ - 2y + 3.5y² - 2y³ + ½y⁴
        let poly = Potential::polynomial(vec![0.5, -2.0, 3.5, -2.0, 0.5]).unwrap();
        let q = Potential::quartic();
        for y in [-2.0, -0.3, 0.0, 1.0, 2.5] {
            assert_relative_eq!(poly.value(y), q.value(y), epsilon = 1e-12);
            assert_relative_eq!(poly.d1(y), q.d1(y), epsilon = 1e-12);
            assert_relative_eq!(poly.d2(y), q.d2(y), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_stiffness() {
        assert!(Potential::harmonic(0.0).is_err());
        assert!(Potential::harmonic(-1.0).is_err());
        assert!(Potential::harmonic(f64::NAN).is_err());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let r: Result<PotentialSpec, _> = toml::from_str("kind = \"morse\"\n");
        assert!(r.is_err());
    }

    #[test]
    fn zero_potential() {
        let z = Potential::zero();
        assert!(z.is_zero());
        assert_eq!(z.eval(3.0), Eval { value: 0.0, d1: 0.0, d2: 0.0 });
        assert_eq!(z.spec(), PotentialSpec::Zero);
    }

    #[test]
    fn assumptions_harmonic() {
        let psi = Potential::harmonic(1.0).unwrap();
        let defect = DefectSpec::new(Potential::harmonic(1.0).unwrap());
        let r = check_assumptions(&psi, &defect, (-5.0, 7.0), 50).unwrap();
        assert_eq!((r.kappa1, r.kappa2, r.varsigma1, r.varsigma2), (2.0, 2.0, 4.0, 4.0));
        assert!(r.pass);
    }

    #[test]
    fn assumptions_quartic_window() {
        let psi = Potential::quartic();
        let r = check_assumptions(&psi, &DefectSpec::none(), (-3.0, 5.0), 1000).unwrap();
        assert_eq!(r.kappa1, 1.0);
        assert_eq!(r.kappa2, 97.0);
        assert!(r.pass);
    }

    #[test]
    fn assumptions_fail_on_concave_region() {
        // y⁴ - 3y²: second derivative 12y² - 6 < 0 near 0
        let psi = Potential::polynomial(vec![0.0, 0.0, -3.0, 0.0, 1.0]).unwrap();
        let r = check_assumptions(&psi, &DefectSpec::none(), (-2.0, 2.0), 101).unwrap();
        assert!(!r.pass);
        assert!(r.kappa1 < 0.0);
    }

    #[test]
    fn assumptions_errors() {
        let psi = Potential::quartic();
        assert!(matches!(
            check_assumptions(&psi, &DefectSpec::none(), (1.0, 1.0), 10),
            Err(Error::EmptyWindow { .. })
        ));
        assert!(check_assumptions(&psi, &DefectSpec::none(), (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn explicit_forces() {
        let f = build_force_sequence(&ForceSpec::Explicit { entries: vec![0.0, 1.0, 0.0] }, 3).unwrap();
        assert_eq!(f.tails().h_sum, 1.0);
        assert_eq!(f.tails().h_sq_sum, 1.0);
        assert_eq!(f.entries(), &[0.0, 1.0, 0.0]);
        assert!(!f.is_zero());
    }

    #[test]
    fn power_law_entries() {
        let f = build_force_sequence(&ForceSpec::PowerLaw { p: 3.0 }, 4).unwrap();
        assert_relative_eq!(f.h(2), -(1.0 / 8.0 + 1.0 / 27.0), epsilon = 1e-15);
        assert_relative_eq!(f.h(2), -0.162037, epsilon = 1e-6);
        assert_eq!(f.h(4), 0.0);
        // h_i - h_{i+1} = -f_i reproduces the node forces
        for i in 1..3 {
            assert_relative_eq!(f.h(i) - f.h(i + 1), -(i as f64).powf(-3.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_forces() {
        for n in [2, 5, 40] {
            let f = build_force_sequence(&ForceSpec::None, n).unwrap();
            assert_eq!(f.tails().h_sum, 0.0);
            assert_eq!(f.tails().h_sq_sum, 0.0);
            assert!(f.is_zero());
        }
    }

    #[test]
    fn power_law_requires_summable_exponent() {
        assert!(build_force_sequence(&ForceSpec::PowerLaw { p: 2.0 }, 8).is_err());
        assert!(build_force_sequence(&ForceSpec::PowerLaw { p: 1.5 }, 8).is_err());
        assert!(build_force_sequence(&ForceSpec::None, 1).is_err());
    }

    #[test]
    fn zeta_known_values() {
        assert_relative_eq!(zeta(2.0).0, std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-14);
        assert_relative_eq!(zeta(4.0).0, std::f64::consts::PI.powi(4) / 90.0, epsilon = 1e-14);
    }

    #[test]
    fn power_law_limit_matches_finite_entries_far_from_the_end() {
        let f = ForceSequence::power_law(3.5, 20_000).unwrap();
        for i in [1, 2, 5, 30, 100] {
            let gap = f.limit_h(i) - f.h(i);
            // the finite chain drops Σ_{j≥N} j^{-p}
            assert!(gap.abs() < 2.0 * 20_000f64.powf(-2.5), "i={i} gap={gap}");
        }
        // beyond the cached prefix the closed-form tail takes over
        let direct: f64 = -(100..2_000_000).map(|j| (j as f64).powf(-3.5)).sum::<f64>();
        assert_relative_eq!(f.limit_h(100), direct, max_relative = 1e-6);
    }

    #[test]
    fn power_law_tail_sum_bound_holds_tenfold() {
        for p in [3.0, 3.5, 4.0] {
            let f = ForceSequence::power_law(p, 8).unwrap();
            let h_sum = f.tails().h_sum;
            for k in [100usize, 1000] {
                let partial: f64 = (2..=k).map(|i| f.limit_h(i)).sum();
                let bound = f.tail_remainder_bound(k);
                assert!((h_sum - partial).abs() <= bound, "p={p} k={k}");
            }
            // H = Σ_{j≥2} (1-j) j^{-p} checked against brute force with its own bound
            let brute: f64 = (2..200_000).map(|j| (1.0 - j as f64) * (j as f64).powf(-p)).sum();
            let brute_tail = 199_999f64.powf(2.0 - p) / (p - 2.0) + 1e-13;
            assert!((h_sum - brute).abs() <= brute_tail, "p={p} h={h_sum} brute={brute} tail={brute_tail}");
        }
    }

    #[test]
    fn power_law_square_sum_matches_brute_force() {
        let f = ForceSequence::power_law(4.0, 8).unwrap();
        let brute: f64 = (2..5000).map(|i| f.limit_h(i).powi(2)).sum();
        assert_relative_eq!(f.tails().h_sq_sum, brute, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(y in -3.0f64..5.0, alpha in 0.1f64..5.0) {
            fd_check(&Potential::harmonic(alpha).unwrap(), y);
            fd_check(&Potential::quartic(), y);
            fd_check(&Potential::polynomial(vec![0.3, -1.0, 2.0, 0.1, 0.25]).unwrap(), y);
        }

        #[test]
        fn explicit_lists_are_l1(entries in proptest::collection::vec(-2.0f64..2.0, 1..20)) {
            let f = ForceSequence::explicit(&entries, 5).unwrap();
            let l1: f64 = entries.iter().skip(1).map(|h| h.abs()).sum();
            prop_assert!(f.tails().h_sum.abs() <= l1 + 1e-12);
            prop_assert!(f.tail_remainder_bound(1) <= l1 + 1e-12);
        }
    }
}
