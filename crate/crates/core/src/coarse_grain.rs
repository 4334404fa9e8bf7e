//! Coarse-grained energies and the resulting free-energy differences.
//!
//! With the first atom held at `y`, the rest of the chain is replaced by
//! Cauchy–Born bonds relaxed to their minimum. `E_N^cg` is that minimum for a chain
//! of `N` bonds and `E^cg` its `N → ∞` limit. `G_N^cg` and `G_∞` are one-dimensional
//! log-ratios over `y` built from these effective potentials.

use crate::cauchy_born::{solve_increasing, CauchyBornEvaluator};
use crate::error::{Error, Result};
use crate::potentials::{check_assumptions, DefectSpec, ForceSequence, Potential};
use crate::quadrature::{log_integral_exp, QuadratureConfig};

/// One instance of the chain model: `N` bonds at strain `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub n: usize,
    pub a: f64,
    pub psi: Potential,
    pub defect: DefectSpec,
    pub forces: ForceSequence,
}

impl ChainSpec {
    pub fn new(n: usize, a: f64, psi: Potential, defect: DefectSpec, forces: ForceSequence) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("N", format!("chain length must be at least 2, got {n}")));
        }
        if !a.is_finite() {
            return Err(Error::invalid("A", "strain must be finite"));
        }
        if forces.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: forces.n(),
            });
        }
        Ok(ChainSpec {
            n,
            a,
            psi,
            defect,
            forces,
        })
    }

    /// A chain with no external loads.
    pub fn unloaded(n: usize, a: f64, psi: Potential, defect: DefectSpec) -> Result<Self> {
        Self::new(n, a, psi, defect, ForceSequence::zero(n.max(2)))
    }

    pub fn has_forces(&self) -> bool {
        !self.forces.is_zero()
    }
}

/// Relaxed exterior of a chain whose first atom sits at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationResult {
    pub lambda: f64,
    /// Bond strains `u_i − u_{i−1}` for `i = 2..N`.
    pub strains: Vec<f64>,
    pub energy: f64,
    /// `NA − y − Σ_{i≥2} Ψ(λ − h_i)`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseGrainConfig {
    /// Bonds of the infinite chain relaxed exactly before switching to the quadratic tail.
    pub n_exact: usize,
    /// Largest tolerated error bound of the quadratic tail.
    pub tail_budget: f64,
}

impl Default for CoarseGrainConfig {
    fn default() -> Self {
        CoarseGrainConfig {
            n_exact: 4,
            tail_budget: 1e-6,
        }
    }
}

/// Quantities at the reference strain shared by every evaluation for one chain.
#[derive(Debug, Clone, Copy)]
struct Reference {
    sigma0: f64,
    w_a: f64,
    phi0: f64,
    w2_a: f64,
    third: f64,
}

const CERTIFY_WINDOW: (f64, f64) = (-10.0, 10.0);
const CERTIFY_POINTS: usize = 2001;

/// Evaluator of the coarse-grained energies for one bond potential.
#[derive(Debug, Clone)]
pub struct CoarseGrainer {
    cb: CauchyBornEvaluator,
    quad: QuadratureConfig,
    cfg: CoarseGrainConfig,
}

impl CoarseGrainer {
    /// `quad` controls the outer integrals over `y`; the inner Cauchy–Born work
    /// always runs at tight tolerance so the outer integrands stay smooth.
    pub fn new(psi: Potential, quad: QuadratureConfig, cfg: CoarseGrainConfig) -> Result<Self> {
        quad.validate()?;
        if cfg.n_exact == 0 {
            return Err(Error::invalid("n_exact", "at least one bond must be relaxed exactly"));
        }
        if !(cfg.tail_budget > 0.0) {
            return Err(Error::invalid("tail_budget", "must be positive"));
        }
        let inner = QuadratureConfig {
            m: quad.m,
            ..QuadratureConfig::tight()
        };
        Ok(CoarseGrainer {
            cb: CauchyBornEvaluator::new(psi, inner)?,
            quad,
            cfg,
        })
    }

    pub fn with_defaults(psi: Potential) -> Result<Self> {
        Self::new(psi, QuadratureConfig::default(), CoarseGrainConfig::default())
    }

    pub fn evaluator(&self) -> &CauchyBornEvaluator {
        &self.cb
    }

    fn check_spec(&self, spec: &ChainSpec) -> Result<()> {
        if &spec.psi != self.cb.potential() {
            return Err(Error::invalid("psi", "chain potential differs from the coarse-grainer's"));
        }
        Ok(())
    }

    fn reference(&self, a: f64) -> Result<Reference> {
        let sigma0 = self.cb.solve_sigma(a)?;
        let m = self.cb.moments(sigma0)?;
        Ok(Reference {
            sigma0,
            w_a: sigma0 * a - m.log_z,
            phi0: m.log_z,
            w2_a: 1.0 / m.variance,
            third: m.third,
        })
    }

    /// Root of `Σ_{i=2}^N Ψ(λ − h_i) = NA − y`.
    fn lambda(&self, spec: &ChainSpec, y: f64) -> Result<f64> {
        let n = spec.n;
        let target = n as f64 * spec.a - y;
        let loads = &spec.forces.entries()[1..];
        let (_, kappa_hi) = self.cb.curvature_bounds();
        let mean_h = loads.iter().sum::<f64>() / loads.len() as f64;
        let guess = spec.psi.d1(target / (n - 1) as f64) + mean_h;
        solve_increasing(
            "lambda",
            |lambda| {
                let mut sum = 0.0;
                let mut slope = 0.0;
                for h in loads {
                    let m = self.cb.moments(lambda - h)?;
                    sum += m.mean;
                    slope += m.variance;
                }
                Ok((sum - target, slope))
            },
            guess,
            (n - 1) as f64 / kappa_hi,
            1e-12 * (1.0 + n as f64 * spec.a.abs() + y.abs()),
        )
    }

    pub fn solve_lambda(&self, spec: &ChainSpec, y: f64) -> Result<RelaxationResult> {
        self.check_spec(spec)?;
        let reference = self.reference(spec.a)?;
        let lambda = self.lambda(spec, y)?;
        let strains = spec.forces.entries()[1..]
            .iter()
            .map(|h| self.cb.psi_map(lambda - h).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        let residual = spec.n as f64 * spec.a - y - strains.iter().sum::<f64>();
        let energy = self.e_n_forces(spec, &reference, y, lambda)?;
        Ok(RelaxationResult {
            lambda,
            strains,
            energy,
            residual,
        })
    }

    fn e_n_forces(&self, spec: &ChainSpec, r: &Reference, y: f64, lambda: f64) -> Result<f64> {
        let mut sum = 0.0;
        for h in &spec.forces.entries()[1..] {
            sum += self.cb.phi(lambda - h)? - r.phi0;
        }
        let bonds = (spec.n - 1) as f64;
        Ok(lambda * (spec.a - y) + bonds * (lambda - r.sigma0) * spec.a - sum)
    }

    fn e_n_with(&self, spec: &ChainSpec, r: &Reference, y: f64) -> Result<f64> {
        if spec.has_forces() {
            let lambda = self.lambda(spec, y)?;
            self.e_n_forces(spec, r, y, lambda)
        } else {
            let bonds = (spec.n - 1) as f64;
            let (w, _, _) = self.cb.w_direct(spec.a + (spec.a - y) / bonds)?;
            Ok(bonds * (w - r.w_a))
        }
    }

    /// `E_N^cg(A, y)`.
    pub fn e_n_cg(&self, spec: &ChainSpec, y: f64) -> Result<f64> {
        self.check_spec(spec)?;
        let r = self.reference(spec.a)?;
        self.e_n_with(spec, &r, y)
    }

    /// `A·H + Σ_{i≥2} min_z J_i(z)` for the limiting loads, with the error bound of the tail.
    fn relaxation_limit(&self, spec: &ChainSpec, r: &Reference) -> Result<(f64, f64)> {
        let f = &spec.forces;
        if f.is_zero() {
            return Ok((0.0, 0.0));
        }
        let last_exact = self.cfg.n_exact + 1;
        let mut theta = 0.0;
        for i in 2..=last_exact {
            let h = f.limit_h(i);
            if h != 0.0 {
                theta += r.phi0 - self.cb.phi(r.sigma0 - h)? - h * spec.a;
            }
        }
        let tail_sq = f.sq_sum_after(last_exact);
        theta -= tail_sq / (2.0 * r.w2_a);
        let bound = 2.0 * r.third.abs() / 6.0 * f.cube_sum_after(last_exact) + f.tails().remainder_bound * (spec.a.abs() + 1.0);
        if bound > self.cfg.tail_budget {
            return Err(Error::TailBudgetExceeded {
                bound,
                budget: self.cfg.tail_budget,
            });
        }
        Ok((spec.a * f.tails().h_sum + theta, bound))
    }

    /// `E^cg(A, y) = (A − y)W'(A) + AH + inf J_∞`.
    pub fn e_cg_limit(&self, spec: &ChainSpec, y: f64) -> Result<f64> {
        self.check_spec(spec)?;
        let r = self.reference(spec.a)?;
        let (relax, _) = self.relaxation_limit(spec, &r)?;
        Ok((spec.a - y) * r.sigma0 + relax)
    }

    fn defect_curvature(&self, spec: &ChainSpec) -> Result<f64> {
        let report = check_assumptions(&spec.psi, &spec.defect, CERTIFY_WINDOW, CERTIFY_POINTS)?;
        if !(report.varsigma1 > 0.0) {
            return Err(Error::invalid("defect", "ψ + P is not strictly convex on the certification window"));
        }
        Ok(report.varsigma1)
    }

    /// `G_N^cg`: the coarse-grained defect free energy of an `N`-bond chain.
    pub fn g_n_cg(&self, spec: &ChainSpec) -> Result<f64> {
        self.check_spec(spec)?;
        if spec.defect.is_zero() && !spec.has_forces() {
            return Ok(0.0);
        }
        let r = self.reference(spec.a)?;
        let (kappa_lo, _) = self.cb.curvature_bounds();
        let varsigma = self.defect_curvature(spec)?;
        let h1 = spec.forces.h(1);
        let p = &spec.defect.potential;
        let hint = self.cb.psi_map(r.sigma0 - h1)?.0;
        let failure = std::cell::Cell::new(None);
        let num = log_integral_exp(
            |y| match self.e_n_with(spec, &r, y) {
                Ok(e) => -p.value(y) - spec.psi.value(y) - h1 * y - e,
                Err(err) => {
                    failure.set(Some(err));
                    f64::NEG_INFINITY
                }
            },
            varsigma,
            hint,
            &self.quad,
        );
        if let Some(err) = failure.take() {
            return Err(err);
        }
        let unloaded = ChainSpec::unloaded(spec.n, spec.a, spec.psi.clone(), DefectSpec::none())?;
        let den = log_integral_exp(
            |y| match self.e_n_with(&unloaded, &r, y) {
                Ok(e) => -spec.psi.value(y) - e,
                Err(err) => {
                    failure.set(Some(err));
                    f64::NEG_INFINITY
                }
            },
            kappa_lo,
            spec.a,
            &self.quad,
        );
        if let Some(err) = failure.take() {
            return Err(err);
        }
        Ok(-(num? - den?))
    }

    /// `G_∞`, the thermodynamic-limit defect free energy.
    ///
    /// `E^cg` is affine in `y`, so both integrals reduce to tilted log-partition
    /// functions at `W'(A)`.
    pub fn g_inf(&self, spec: &ChainSpec) -> Result<f64> {
        self.check_spec(spec)?;
        if spec.defect.is_zero() && !spec.has_forces() {
            return Ok(0.0);
        }
        let r = self.reference(spec.a)?;
        let (relax, _) = self.relaxation_limit(spec, &r)?;
        let h1 = spec.forces.limit_h(1);
        let varsigma = self.defect_curvature(spec)?;
        let sigma = r.sigma0 - h1;
        let hint = self.cb.tilted_mode(sigma)?;
        let p = &spec.defect.potential;
        let num = log_integral_exp(
            |y| -spec.psi.value(y) - p.value(y) + sigma * y,
            varsigma,
            hint,
            &self.quad,
        )?;
        Ok(relax - (num - r.phi0))
    }

    /// Error bound of the quadratic tail used for the infinite chain's relaxation.
    pub fn tail_error_bound(&self, spec: &ChainSpec) -> Result<f64> {
        let r = self.reference(spec.a)?;
        Ok(self.relaxation_limit(spec, &r)?.1)
    }
}
