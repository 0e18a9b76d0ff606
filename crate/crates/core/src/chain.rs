//! Seeded Markov chains built from the transition kernels.

use std::cell::Cell;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::integrator::StepConfig;
use crate::parallel::{map_indexed, Execution};
use crate::phase::HamiltonianSystem;
use crate::targets::random_on_shell;
use crate::trajectory::{
    dynamic_trajectory, static_metropolis_from, static_uniform_from, DynamicOptions, Transition,
    TransitionRecord,
};

pub const DEFAULT_TARGET_ACCEPT: f64 = 0.8;
pub const STEP_SEARCH_MIN: f64 = 1e-8;
pub const STEP_SEARCH_MAX: f64 = 10.0;
const MAX_PILOTS: usize = 20;
const PILOT_WARMUP: usize = 10;
const PILOT_DRAWS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    StaticMetropolis { steps: usize },
    StaticUniform { steps: usize },
    Dynamic(DynamicOptions),
}

impl Algorithm {
    pub fn validate(&self) -> Result<()> {
        match self {
            Algorithm::StaticMetropolis { steps: 0 } => {
                Err(Error::config("static_metropolis needs L >= 1"))
            }
            Algorithm::StaticMetropolis { .. } | Algorithm::StaticUniform { .. } => Ok(()),
            Algorithm::Dynamic(opts) => opts.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    Given(Vec<f64>),
    /// Uniform on the sphere of this radius.
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub step: StepConfig,
    pub num_draws: usize,
    pub num_warmup: usize,
    pub seed: u64,
    pub init: Init,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, step: StepConfig, num_draws: usize, seed: u64) -> Self {
        Self {
            algorithm,
            step,
            num_draws,
            num_warmup: 0,
            seed,
            init: Init::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        self.step.validate()?;
        if self.num_draws == 0 {
            return Err(Error::config("num_draws must be >= 1"));
        }
        if let Init::Radius(r) = self.init {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::config(format!(
                    "init radius must be non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub config: SamplerConfig,
    pub draws: Vec<Vec<f64>>,
    pub records: Vec<TransitionRecord>,
    /// Over recorded transitions only.
    pub total_gradient_evals: u64,
    pub warmup_gradient_evals: u64,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn total_leapfrog(&self) -> u64 {
        self.records
            .iter()
            .map(|r| r.n_leapfrog + r.wasted_leapfrog)
            .sum()
    }

    /// Column `i` of the draws.
    pub fn parameter(&self, i: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[i]).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }
}

/// The random stream of chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

pub fn transition(
    sys: &HamiltonianSystem,
    algorithm: &Algorithm,
    step: &StepConfig,
    q: &[f64],
    rng: &mut ChaCha8Rng,
) -> Transition {
    let z0 = sys.lift(q, rng);
    match algorithm {
        Algorithm::StaticMetropolis { steps } => static_metropolis_from(sys, z0, *steps, step, rng),
        Algorithm::StaticUniform { steps } => static_uniform_from(sys, z0, *steps, step, rng),
        Algorithm::Dynamic(opts) => dynamic_trajectory(sys, z0, opts, step, rng),
    }
}

fn initial_point(sys: &HamiltonianSystem, init: &Init, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let q = match init {
        Init::Zero => vec![0.0; sys.dim()],
        Init::Given(q) => {
            check_dim(sys.dim(), q.len())?;
            q.clone()
        }
        Init::Radius(r) => random_on_shell(sys.dim(), *r, rng),
    };
    if !sys.model().value(&q).is_finite() {
        return Err(Error::NonFiniteInit);
    }
    Ok(q)
}

/// Runs chain `chain`, handing each recorded draw to `sink` as it is produced.
///
/// The sink may stop the chain early by returning `ControlFlow::Break`.
/// Returns the gradient evaluations spent in warmup and in recorded transitions.
pub fn stream_chain<F>(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    chain: usize,
    mut sink: F,
) -> Result<(u64, u64)>
where
    F: FnMut(usize, &Transition) -> ControlFlow<()>,
{
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed, chain);
    let mut q = initial_point(sys, &cfg.init, &mut rng)?;
    let mut warmup_grads = 0;
    for _ in 0..cfg.num_warmup {
        let t = transition(sys, &cfg.algorithm, &cfg.step, &q, &mut rng);
        warmup_grads += t.record.gradient_evals;
        q = t.proposal.z.q;
    }
    let mut grads = 0;
    for draw in 0..cfg.num_draws {
        let t = transition(sys, &cfg.algorithm, &cfg.step, &q, &mut rng);
        grads += t.record.gradient_evals;
        let flow = sink(draw, &t);
        q = t.proposal.z.q;
        if flow.is_break() {
            break;
        }
    }
    Ok((warmup_grads, grads))
}

pub fn run_chain(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    run_chain_with(sys, cfg, chain, |_, _| ControlFlow::Continue(()))
}

/// [`run_chain`] that also hands each draw to `on_draw` as it is produced.
pub fn run_chain_with<F>(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    chain: usize,
    mut on_draw: F,
) -> Result<ChainOutput>
where
    F: FnMut(usize, &Transition) -> ControlFlow<()>,
{
    let mut draws = Vec::with_capacity(cfg.num_draws);
    let mut records = Vec::with_capacity(cfg.num_draws);
    let (warmup, total) = stream_chain(sys, cfg, chain, |i, t| {
        draws.push(t.position().to_vec());
        records.push(t.record.clone());
        on_draw(i, t)
    })?;
    Ok(ChainOutput {
        chain,
        config: cfg.clone(),
        draws,
        records,
        total_gradient_evals: total,
        warmup_gradient_evals: warmup,
    })
}

/// Runs chains `0..n_chains`; the output does not depend on `exec`.
pub fn run_chains(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    n_chains: usize,
    exec: Execution,
) -> Result<Vec<ChainOutput>> {
    map_indexed(n_chains, exec, |k| run_chain(sys, cfg, k))
        .into_iter()
        .collect()
}

/// Mean acceptance statistic of a short pilot chain at step size `epsilon`.
fn pilot_accept(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    epsilon: f64,
    pilot: usize,
) -> Result<f64> {
    let pilot_cfg = SamplerConfig {
        step: StepConfig {
            epsilon,
            ..cfg.step
        },
        num_warmup: PILOT_WARMUP,
        num_draws: PILOT_DRAWS,
        seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..cfg.clone()
    };
    let mut sum = 0.0;
    let mut n = 0;
    stream_chain(sys, &pilot_cfg, pilot, |_, t| {
        sum += t.record.accept_stat;
        n += 1;
        ControlFlow::Continue(())
    })?;
    Ok(sum / n as f64)
}

/// Coarse search for the largest step size whose pilot runs reach a mean
/// acceptance statistic of `target_accept`.
///
/// Starts at 1, doubles up to 10 or divides by 4 down to 1e-8 until the target
/// is bracketed, then bisects geometrically. At most 20 pilot chains are run.
pub fn coarse_step_search(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    target_accept: f64,
) -> Result<f64> {
    if !(target_accept > 0.0 && target_accept < 1.0) {
        return Err(Error::config(format!(
            "target acceptance must be in (0, 1), got {target_accept}"
        )));
    }
    cfg.validate()?;
    let pilots = Cell::new(0);
    let ok = |eps: f64| -> Result<bool> {
        let accept = pilot_accept(sys, cfg, eps, pilots.get())?;
        pilots.set(pilots.get() + 1);
        Ok(accept >= target_accept)
    };

    let (mut lo, mut hi);
    if ok(1.0)? {
        lo = 1.0;
        loop {
            if lo >= STEP_SEARCH_MAX {
                return Ok(STEP_SEARCH_MAX);
            }
            let next = (lo * 2.0).min(STEP_SEARCH_MAX);
            if ok(next)? {
                lo = next;
            } else {
                hi = next;
                break;
            }
        }
    } else {
        hi = 1.0;
        loop {
            if hi <= STEP_SEARCH_MIN {
                return Err(Error::StepSearchFailed {
                    lo: STEP_SEARCH_MIN,
                    hi: STEP_SEARCH_MAX,
                    target: target_accept,
                });
            }
            let next = (hi / 4.0).max(STEP_SEARCH_MIN);
            if ok(next)? {
                lo = next;
                break;
            }
            hi = next;
        }
    }
    while pilots.get() < MAX_PILOTS && hi / lo > 1.05 {
        let mid = (lo * hi).sqrt();
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
