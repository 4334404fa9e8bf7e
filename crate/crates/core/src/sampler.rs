//! Monte Carlo estimation of `G_N` by staged free-energy perturbation.
//!
//! Each stage samples `exp(−V_λ)` with `V_λ = Σ ψ(y_i) + λ ΔV`, where the perturbation
//! `ΔV = P(y_1) + Σ h_i y_i` carries both the defect and the loads, using the
//! Metropolis-adjusted Langevin algorithm. Replicas run on independent streams of
//! one master seed and are reduced in replica order, so results are reproducible
//! regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::coarse_grain::ChainSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaConfig {
    pub step_size: f64,
    pub steps_per_stage: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub replicas: usize,
    pub stages: usize,
    /// Tune the step size towards 50–70 % acceptance during burn-in.
    pub adapt: bool,
}

impl Default for MalaConfig {
    fn default() -> Self {
        MalaConfig {
            step_size: 0.05,
            steps_per_stage: 100_000,
            burn_in_fraction: 0.2,
            seed: 0,
            replicas: 100,
            stages: 100,
            adapt: true,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size", "must be positive"));
        }
        if self.replicas < 2 {
            return Err(Error::invalid("replicas", "need at least 2 replicas for an error bar"));
        }
        if self.stages < 1 {
            return Err(Error::invalid("stages", "need at least one stage"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn_in_fraction", "must lie in [0, 1)"));
        }
        if self.production_steps() == 0 {
            return Err(Error::NoSamples);
        }
        Ok(())
    }

    fn burn_in_steps(&self) -> usize {
        (self.burn_in_fraction * self.steps_per_stage as f64).floor() as usize
    }

    fn production_steps(&self) -> usize {
        self.steps_per_stage - self.burn_in_steps()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    /// Sample standard deviation of the replica estimates over `√replicas`.
    pub stderr: f64,
    pub replicas: usize,
    /// Mean production acceptance rate of each stage, averaged over replicas.
    pub acceptance: Vec<f64>,
    pub total_samples: u64,
    /// Proposals rejected because the energy was not finite.
    pub nonfinite_rejections: u64,
    pub seed: u64,
    /// Hex SHA-256 of the chain and sampler configuration.
    pub config_hash: String,
}

/// A differentiable energy to be sampled.
pub trait Target {
    fn dim(&self) -> usize;
    /// Energy at `q`, writing its gradient into `grad`.
    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// `V_λ` for a chain, over the interior positions `u_1..u_{N−1}`.
#[derive(Debug, Clone, Copy)]
pub struct ChainTarget<'a> {
    pub spec: &'a ChainSpec,
    pub lambda: f64,
}

impl ChainTarget<'_> {
    fn bond(&self, u: &[f64], i: usize) -> f64 {
        let n = self.spec.n;
        let right = if i == n { n as f64 * self.spec.a } else { u[i - 1] };
        let left = if i == 1 { 0.0 } else { u[i - 2] };
        right - left
    }

    /// `ΔV(u) = P(y_1) + Σ h_i y_i`.
    pub fn perturbation(&self, u: &[f64]) -> f64 {
        let h = self.spec.forces.entries();
        let mut dv = self.spec.defect.potential.value(self.bond(u, 1));
        for i in 1..=self.spec.n {
            if h[i - 1] != 0.0 {
                dv += h[i - 1] * self.bond(u, i);
            }
        }
        dv
    }
}

impl Target for ChainTarget<'_> {
    fn dim(&self) -> usize {
        self.spec.n - 1
    }

    fn energy_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let spec = self.spec;
        let h = spec.forces.entries();
        let mut energy = 0.0;
        // dV/dy_i, then dV/du_k = g_k − g_{k+1}
        let mut prev_slope = 0.0;
        for i in 1..=spec.n {
            let y = self.bond(u, i);
            let mut e = spec.psi.value(y) + self.lambda * h[i - 1] * y;
            let mut slope = spec.psi.d1(y) + self.lambda * h[i - 1];
            if i == 1 {
                let p = &spec.defect.potential;
                e += self.lambda * p.value(y);
                slope += self.lambda * p.d1(y);
            }
            energy += e;
            if i > 1 {
                grad[i - 2] = prev_slope - slope;
            }
            prev_slope = slope;
        }
        energy
    }
}

/// `V_λ(u)` and its gradient for the interior positions `u`.
pub fn chain_energy_and_gradient(spec: &ChainSpec, u: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if u.len() != spec.n - 1 {
        return Err(Error::DimensionMismatch {
            expected: spec.n - 1,
            got: u.len(),
        });
    }
    let target = ChainTarget { spec, lambda };
    let mut grad = vec![0.0; u.len()];
    let e = target.energy_and_gradient(u, &mut grad);
    Ok((e, grad))
}

/// Current position with cached energy and gradient, plus proposal buffers.
#[derive(Debug, Clone)]
pub struct MalaState {
    pub q: Vec<f64>,
    pub energy: f64,
    pub grad: Vec<f64>,
    proposal: Vec<f64>,
    proposal_grad: Vec<f64>,
}

impl MalaState {
    pub fn new(target: &impl Target, q: Vec<f64>) -> Result<Self> {
        if q.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: q.len(),
            });
        }
        let mut grad = vec![0.0; q.len()];
        let energy = target.energy_and_gradient(&q, &mut grad);
        if !energy.is_finite() {
            return Err(Error::NonFinite("initial energy"));
        }
        let d = q.len();
        Ok(MalaState {
            q,
            energy,
            grad,
            proposal: vec![0.0; d],
            proposal_grad: vec![0.0; d],
        })
    }

    /// Re-evaluates the cached energy after the target changed.
    pub fn refresh(&mut self, target: &impl Target) {
        self.energy = target.energy_and_gradient(&self.q, &mut self.grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    NonFinite,
}

impl StepOutcome {
    pub fn accepted(self) -> bool {
        self == StepOutcome::Accepted
    }
}

/// One MALA step with the Gaussian increment `noise` and `log_u = ln U` supplied.
///
/// Proposal `q* = q − h∇V(q) + √(2h) ξ`, accepted when
/// `log_u < V(q) − V(q*) − |q − q* + h∇V(q*)|²/4h + |q* − q + h∇V(q)|²/4h`.
pub fn mala_step_with_noise(
    target: &impl Target,
    state: &mut MalaState,
    h: f64,
    noise: &[f64],
    log_u: f64,
) -> StepOutcome {
    let scale = (2.0 * h).sqrt();
    for k in 0..state.q.len() {
        state.proposal[k] = state.q[k] - h * state.grad[k] + scale * noise[k];
    }
    let v_new = target.energy_and_gradient(&state.proposal, &mut state.proposal_grad);
    if !v_new.is_finite() || state.proposal_grad.iter().any(|g| !g.is_finite()) {
        return StepOutcome::NonFinite;
    }
    let mut forward = 0.0;
    let mut backward = 0.0;
    for k in 0..state.q.len() {
        let f = state.proposal[k] - state.q[k] + h * state.grad[k];
        let b = state.q[k] - state.proposal[k] + h * state.proposal_grad[k];
        forward += f * f;
        backward += b * b;
    }
    let log_alpha = state.energy - v_new + (forward - backward) / (4.0 * h);
    if log_u < log_alpha {
        std::mem::swap(&mut state.q, &mut state.proposal);
        std::mem::swap(&mut state.grad, &mut state.proposal_grad);
        state.energy = v_new;
        StepOutcome::Accepted
    } else {
        StepOutcome::Rejected
    }
}

/// One MALA step drawing its randomness from `rng`.
pub fn mala_step(target: &impl Target, state: &mut MalaState, h: f64, rng: &mut impl Rng, noise: &mut Vec<f64>) -> StepOutcome {
    noise.clear();
    noise.extend((0..state.q.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let log_u = rng.random::<f64>().ln();
    mala_step_with_noise(target, state, h, noise, log_u)
}

/// The random stream used by replica `replica` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

const ADAPT_WINDOW: usize = 50;
const ADAPT_LOW: f64 = 0.5;
const ADAPT_HIGH: f64 = 0.7;

#[derive(Debug, Clone)]
struct ReplicaResult {
    estimate: f64,
    acceptance: Vec<f64>,
    nonfinite: u64,
}

fn run_replica(spec: &ChainSpec, cfg: &MalaConfig, replica: usize) -> Result<ReplicaResult> {
    let mut rng = replica_rng(cfg.seed, replica);
    let burn = cfg.burn_in_steps();
    let production = cfg.production_steps();
    let initial: Vec<f64> = (1..spec.n).map(|i| i as f64 * spec.a).collect();
    let mut state = MalaState::new(&ChainTarget { spec, lambda: 0.0 }, initial)?;
    let mut h = cfg.step_size;
    let mut noise = Vec::with_capacity(spec.n);
    let mut samples = vec![0.0; production];
    let mut acceptance = Vec::with_capacity(cfg.stages);
    let mut nonfinite = 0;
    let mut estimate = 0.0;
    let stages = cfg.stages as f64;

    for stage in 1..=cfg.stages {
        let lambda_prev = (stage - 1) as f64 / stages;
        let dlambda = stage as f64 / stages - lambda_prev;
        let target = ChainTarget { spec, lambda: lambda_prev };
        state.refresh(&target);

        let mut window_accepts = 0;
        for step in 0..burn {
            let outcome = mala_step(&target, &mut state, h, &mut rng, &mut noise);
            nonfinite += u64::from(outcome == StepOutcome::NonFinite);
            window_accepts += usize::from(outcome.accepted());
            if cfg.adapt && (step + 1) % ADAPT_WINDOW == 0 {
                let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                if rate < ADAPT_LOW {
                    h *= 0.8;
                } else if rate > ADAPT_HIGH {
                    h *= 1.25;
                }
                window_accepts = 0;
            }
        }

        let mut accepts = 0;
        for sample in samples.iter_mut() {
            let outcome = mala_step(&target, &mut state, h, &mut rng, &mut noise);
            nonfinite += u64::from(outcome == StepOutcome::NonFinite);
            accepts += usize::from(outcome.accepted());
            *sample = -dlambda * target.perturbation(&state.q);
        }
        estimate -= log_mean_exp(&samples);
        acceptance.push(accepts as f64 / production as f64);
    }
    if !estimate.is_finite() {
        return Err(Error::NonFinite("stage estimate"));
    }
    Ok(ReplicaResult {
        estimate,
        acceptance,
        nonfinite,
    })
}

/// Hex SHA-256 over the debug representation of the chain and sampler settings.
pub fn config_hash(spec: &ChainSpec, cfg: &MalaConfig) -> String {
    let digest = Sha256::digest(format!("{spec:?}|{cfg:?}").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Staged free-energy perturbation from the perfect chain to the perturbed one.
pub fn staged_fep(spec: &ChainSpec, cfg: &MalaConfig) -> Result<FreeEnergyEstimate> {
    cfg.validate()?;
    let hash = config_hash(spec, cfg);
    if spec.defect.is_zero() && !spec.has_forces() {
        return Ok(FreeEnergyEstimate {
            value: 0.0,
            stderr: 0.0,
            replicas: cfg.replicas,
            acceptance: Vec::new(),
            total_samples: 0,
            nonfinite_rejections: 0,
            seed: cfg.seed,
            config_hash: hash,
        });
    }
    let results: Vec<ReplicaResult> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(spec, cfg, r))
        .collect::<Result<_>>()?;
    let r = results.len() as f64;
    let mean = results.iter().map(|x| x.estimate).sum::<f64>() / r;
    let var = results.iter().map(|x| (x.estimate - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let acceptance = (0..cfg.stages)
        .map(|s| results.iter().map(|x| x.acceptance[s]).sum::<f64>() / r)
        .collect();
    Ok(FreeEnergyEstimate {
        value: mean,
        stderr: (var / r).sqrt(),
        replicas: cfg.replicas,
        acceptance,
        total_samples: (cfg.replicas * cfg.stages * cfg.production_steps()) as u64,
        nonfinite_rejections: results.iter().map(|x| x.nonfinite).sum(),
        seed: cfg.seed,
        config_hash: hash,
    })
}

/// Sampled `G_N` with provenance.
pub fn estimate_g_n(spec: &ChainSpec, cfg: &MalaConfig) -> Result<FreeEnergyEstimate> {
    staged_fep(spec, cfg)
}
