//! Transition kernels over numerical trajectories.
//!
//! * [`static_metropolis_transition`]: integrate `L` steps and accept the
//!   momentum-flipped endpoint with the Metropolis probability.
//! * [`static_uniform_transition`]: place the initial state uniformly inside an
//!   `L`-step trajectory and draw a state with probability `∝ e^{-H}`.
//! * [`dynamic_transition`]: multiplicative doubling in random time directions.
//!   Each new subtree is rejected if any of its internal balanced subtrees already
//!   satisfies the termination criterion; growth stops once the full trajectory
//!   does.

use serde::{Deserialize, Serialize};

use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::integrator::{check_divergence, leapfrog, StepConfig};
use crate::phase::{HamiltonianSystem, PhaseState};
use crate::termination::{segment_stats_single, SegmentStats, TerminationCriterion};

pub const DEFAULT_MAX_DEPTH: u32 = 10;

/// Source of the random decisions a transition makes.
///
/// Every [`RngCore`] is a `Choices`; tests substitute scripted decisions to
/// enumerate all outcomes exactly.
pub trait Choices {
    fn forward(&mut self) -> bool;
    fn bernoulli(&mut self, p: f64) -> bool;
    /// Uniform on `[0, 1)`.
    fn unit(&mut self) -> f64;
    /// Uniform on `0..n`.
    fn index(&mut self, n: usize) -> usize;
}

impl<R: RngCore + ?Sized> Choices for R {
    fn forward(&mut self) -> bool {
        self.random::<bool>()
    }

    fn bernoulli(&mut self, p: f64) -> bool {
        self.random::<f64>() < p
    }

    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// How a state is drawn from the final dynamic trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSampler {
    Multinomial,
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicOptions {
    pub criterion: TerminationCriterion,
    pub max_depth: u32,
    pub sampler: StateSampler,
}

impl DynamicOptions {
    pub fn new(criterion: TerminationCriterion) -> Self {
        Self {
            criterion,
            max_depth: DEFAULT_MAX_DEPTH,
            sampler: StateSampler::Multinomial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.criterion.validate()?;
        if self.max_depth == 0 {
            return Err(Error::config("max_depth must be >= 1"));
        }
        if self.max_depth > 30 {
            return Err(Error::config("max_depth above 30 is not supported"));
        }
        Ok(())
    }
}

/// Per-transition summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    /// `H` at the lift point.
    pub energy: f64,
    /// Mean of `min(1, e^{-ΔH})` over every integrated state.
    pub accept_stat: f64,
    /// Steps spanned by the final trajectory.
    pub n_leapfrog: u64,
    /// Steps spent on rejected expansions or discarded trajectories.
    pub wasted_leapfrog: u64,
    pub tree_depth: u32,
    pub divergent: bool,
    pub max_depth_hit: bool,
    /// `ε ×` steps between the boundary states.
    pub termination_time: f64,
    /// Includes the gradient at the lift point.
    pub gradient_evals: u64,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub record: TransitionRecord,
    pub proposal: PhaseState,
}

impl Transition {
    /// The next draw: the proposal projected to position space.
    pub fn position(&self) -> &[f64] {
        &self.proposal.z.q
    }
}

/// A balanced subtree of a doubling trajectory.
#[derive(Debug, Clone)]
pub struct TreeSegment {
    /// Earliest state in time.
    pub minus: PhaseState,
    /// Latest state in time.
    pub plus: PhaseState,
    pub proposal: PhaseState,
    pub stats: SegmentStats,
    pub depth: u32,
}

impl TreeSegment {
    fn leaf(state: PhaseState) -> Self {
        Self {
            stats: segment_stats_single(&state),
            minus: state.clone(),
            plus: state.clone(),
            proposal: state,
            depth: 0,
        }
    }

    fn boundary(&self, dir: Direction) -> &PhaseState {
        match dir {
            Direction::Forward => &self.plus,
            Direction::Backward => &self.minus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    CriterionHit,
    Divergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidTree {
    pub reason: InvalidReason,
    /// Leapfrog steps taken before the subtree was abandoned.
    pub steps: u64,
}

struct TreeBuilder<'a, C: Choices + ?Sized> {
    sys: &'a HamiltonianSystem,
    step: &'a StepConfig,
    criterion: &'a TerminationCriterion,
    h0: f64,
    choices: &'a mut C,
    steps: u64,
    accept_sum: f64,
    // Every state of every accepted subtree, for slice sampling.
    collected: Option<Vec<PhaseState>>,
}

impl<C: Choices + ?Sized> TreeBuilder<'_, C> {
    fn step_from(
        &mut self,
        from: &PhaseState,
        dir: Direction,
    ) -> Result<PhaseState, InvalidReason> {
        let next = leapfrog(self.sys, from, dir.sign() * self.step.epsilon);
        self.steps += 1;
        let h = next.hamiltonian();
        if h.is_finite() {
            self.accept_sum += (self.h0 - h).exp().min(1.0);
        }
        if check_divergence(self.h0, h, self.step) {
            return Err(InvalidReason::Divergence);
        }
        Ok(next)
    }

    fn build(
        &mut self,
        seed: &PhaseState,
        dir: Direction,
        depth: u32,
    ) -> Result<TreeSegment, InvalidReason> {
        if depth == 0 {
            let next = self.step_from(seed, dir)?;
            if let Some(states) = self.collected.as_mut() {
                states.push(next.clone());
            }
            return Ok(TreeSegment::leaf(next));
        }
        let first = self.build(seed, dir, depth - 1)?;
        let second = self.build(first.boundary(dir), dir, depth - 1)?;
        let stats = first.stats.merge(&second.stats);
        let take_second = (second.stats.log_weight - stats.log_weight).exp();
        let proposal = if self.choices.bernoulli(take_second) {
            second.proposal
        } else {
            first.proposal
        };
        let (minus, plus) = match dir {
            Direction::Forward => (first.minus, second.plus),
            Direction::Backward => (second.minus, first.plus),
        };
        if self
            .criterion
            .terminates(&stats, &minus.z, &plus.z, self.sys.metric())
        {
            return Err(InvalidReason::CriterionHit);
        }
        Ok(TreeSegment {
            minus,
            plus,
            proposal,
            stats,
            depth,
        })
    }

    /// Builds a subtree, rolling back collected states if it turns out invalid.
    fn try_build(
        &mut self,
        seed: &PhaseState,
        dir: Direction,
        depth: u32,
    ) -> Result<TreeSegment, InvalidTree> {
        let steps_before = self.steps;
        let collected_before = self.collected.as_ref().map_or(0, Vec::len);
        self.build(seed, dir, depth).map_err(|reason| {
            if let Some(states) = self.collected.as_mut() {
                states.truncate(collected_before);
            }
            InvalidTree {
                reason,
                steps: self.steps - steps_before,
            }
        })
    }
}

/// Integrates `2^depth` new states from `seed` (exclusive) in direction `dir`.
///
/// Every internal merge is checked against the criterion; singletons are not.
/// `h0` is the energy of the lift point, used for divergence detection.
#[allow(clippy::too_many_arguments)]
pub fn build_tree<C: Choices + ?Sized>(
    sys: &HamiltonianSystem,
    seed: &PhaseState,
    dir: Direction,
    depth: u32,
    criterion: &TerminationCriterion,
    step: &StepConfig,
    h0: f64,
    choices: &mut C,
) -> Result<TreeSegment, InvalidTree> {
    let mut builder = TreeBuilder {
        sys,
        step,
        criterion,
        h0,
        choices,
        steps: 0,
        accept_sum: 0.0,
        collected: None,
    };
    builder.try_build(seed, dir, depth)
}

/// Dynamic transition from an already lifted state.
pub fn dynamic_trajectory<C: Choices + ?Sized>(
    sys: &HamiltonianSystem,
    z0: PhaseState,
    opts: &DynamicOptions,
    step: &StepConfig,
    choices: &mut C,
) -> Transition {
    let h0 = z0.hamiltonian();
    let slice = opts.sampler == StateSampler::Slice;
    let mut builder = TreeBuilder {
        sys,
        step,
        criterion: &opts.criterion,
        h0,
        choices,
        steps: 0,
        accept_sum: 0.0,
        collected: slice.then(|| vec![z0.clone()]),
    };
    let mut tree = TreeSegment::leaf(z0);
    let mut depth = 0;
    let mut wasted = 0;
    let mut divergent = false;
    let mut max_depth_hit = false;
    loop {
        if depth >= opts.max_depth {
            max_depth_hit = true;
            break;
        }
        let dir = if builder.choices.forward() {
            Direction::Forward
        } else {
            Direction::Backward
        };
        let new = match builder.try_build(tree.boundary(dir), dir, depth) {
            Ok(new) => new,
            Err(invalid) => {
                wasted = invalid.steps;
                divergent = invalid.reason == InvalidReason::Divergence;
                break;
            }
        };
        let stats = tree.stats.merge(&new.stats);
        let take_new = (new.stats.log_weight - stats.log_weight).exp();
        if builder.choices.bernoulli(take_new) {
            tree.proposal = new.proposal;
        }
        match dir {
            Direction::Forward => tree.plus = new.plus,
            Direction::Backward => tree.minus = new.minus,
        }
        tree.stats = stats;
        depth += 1;
        tree.depth = depth;
        if opts
            .criterion
            .terminates(&tree.stats, &tree.minus.z, &tree.plus.z, sys.metric())
        {
            break;
        }
    }

    let proposal = match builder.collected.take() {
        Some(states) => {
            let energies: Vec<f64> = states.iter().map(PhaseState::hamiltonian).collect();
            let pick = slice_sample_trajectory(&energies, 0, builder.choices);
            states.into_iter().nth(pick).expect("slice index in range")
        }
        None => tree.proposal,
    };
    let n_leapfrog = tree.stats.n_states - 1;
    let steps = builder.steps;
    Transition {
        record: TransitionRecord {
            energy: h0,
            accept_stat: if steps > 0 {
                builder.accept_sum / steps as f64
            } else {
                1.0
            },
            n_leapfrog,
            wasted_leapfrog: wasted,
            tree_depth: depth,
            divergent,
            max_depth_hit,
            termination_time: n_leapfrog as f64 * step.epsilon,
            gradient_evals: steps + 1,
        },
        proposal,
    }
}

/// Lifts `q` with fresh momentum and runs a dynamic transition.
pub fn dynamic_transition<R: Rng + ?Sized>(
    sys: &HamiltonianSystem,
    q: &[f64],
    opts: &DynamicOptions,
    step: &StepConfig,
    rng: &mut R,
) -> Result<Transition> {
    check_dim(sys.dim(), q.len())?;
    opts.validate()?;
    step.validate()?;
    let z0 = sys.lift(q, rng);
    Ok(dynamic_trajectory(sys, z0, opts, step, rng))
}

/// Draws `u ~ U(0, 1)` and returns a uniform pick among the states with
/// `e^{-H} > u e^{-H_lift}`. The lift state always qualifies.
pub fn slice_sample_trajectory<C: Choices + ?Sized>(
    energies: &[f64],
    lift_index: usize,
    choices: &mut C,
) -> usize {
    assert!(lift_index < energies.len(), "lift index out of range");
    let u = choices.unit();
    let bound = energies[lift_index] - u.ln();
    let candidates: Vec<usize> = energies
        .iter()
        .enumerate()
        .filter(|(i, &h)| *i == lift_index || h < bound)
        .map(|(i, _)| i)
        .collect();
    candidates[choices.index(candidates.len())]
}

/// Static Metropolis transition from a lifted state.
pub fn static_metropolis_from<C: Choices + ?Sized>(
    sys: &HamiltonianSystem,
    z0: PhaseState,
    n_steps: usize,
    step: &StepConfig,
    choices: &mut C,
) -> Transition {
    let h0 = z0.hamiltonian();
    let mut state = z0.clone();
    let mut taken = 0u64;
    let mut divergent = false;
    for _ in 0..n_steps {
        state = leapfrog(sys, &state, step.epsilon);
        taken += 1;
        if check_divergence(h0, state.hamiltonian(), step) {
            divergent = true;
            break;
        }
    }
    let (accept_prob, accepted) = if divergent {
        (0.0, false)
    } else {
        let p = (h0 - state.hamiltonian()).exp().min(1.0);
        (p, choices.bernoulli(p))
    };
    // The flipped endpoint projects to the same position.
    let proposal = if accepted { state } else { z0 };
    Transition {
        record: TransitionRecord {
            energy: h0,
            accept_stat: accept_prob,
            n_leapfrog: if divergent { 0 } else { taken },
            wasted_leapfrog: if divergent { taken } else { 0 },
            tree_depth: 0,
            divergent,
            max_depth_hit: false,
            termination_time: n_steps as f64 * step.epsilon,
            gradient_evals: taken + 1,
        },
        proposal,
    }
}

pub fn static_metropolis_transition<R: Rng + ?Sized>(
    sys: &HamiltonianSystem,
    q: &[f64],
    n_steps: usize,
    step: &StepConfig,
    rng: &mut R,
) -> Result<Transition> {
    check_dim(sys.dim(), q.len())?;
    step.validate()?;
    if n_steps == 0 {
        return Err(Error::config("static Metropolis needs at least one step"));
    }
    let z0 = sys.lift(q, rng);
    Ok(static_metropolis_from(sys, z0, n_steps, step, rng))
}

/// Uniform static trajectory from a lifted state: `L' ~ U{0..=L}` steps backwards,
/// `L - L'` forwards, then a multinomial draw over the `L + 1` states.
pub fn static_uniform_from<C: Choices + ?Sized>(
    sys: &HamiltonianSystem,
    z0: PhaseState,
    n_steps: usize,
    step: &StepConfig,
    choices: &mut C,
) -> Transition {
    let h0 = z0.hamiltonian();
    let back = choices.index(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut taken = 0u64;
    let mut accept_sum = 0.0;
    let mut divergent = false;
    for (dir, count) in [(-1.0, back), (1.0, n_steps - back)] {
        let mut cur = z0.clone();
        for _ in 0..count {
            cur = leapfrog(sys, &cur, dir * step.epsilon);
            taken += 1;
            let h = cur.hamiltonian();
            if h.is_finite() {
                accept_sum += (h0 - h).exp().min(1.0);
            }
            if check_divergence(h0, h, step) {
                divergent = true;
                break;
            }
            states.push(cur.clone());
        }
        if divergent {
            break;
        }
    }
    let accept_stat = if taken > 0 {
        accept_sum / taken as f64
    } else {
        1.0
    };
    let record = |n_leapfrog, wasted| TransitionRecord {
        energy: h0,
        accept_stat,
        n_leapfrog,
        wasted_leapfrog: wasted,
        tree_depth: 0,
        divergent,
        max_depth_hit: false,
        termination_time: n_steps as f64 * step.epsilon,
        gradient_evals: taken + 1,
    };
    if divergent {
        return Transition {
            record: record(0, taken),
            proposal: z0,
        };
    }
    states.push(z0);
    let weights: Vec<f64> = states.iter().map(|s| -s.hamiltonian()).collect();
    let pick = sample_log_weights(&weights, choices);
    let proposal = states.swap_remove(pick);
    Transition {
        record: record(taken, 0),
        proposal,
    }
}

pub fn static_uniform_transition<R: Rng + ?Sized>(
    sys: &HamiltonianSystem,
    q: &[f64],
    n_steps: usize,
    step: &StepConfig,
    rng: &mut R,
) -> Result<Transition> {
    check_dim(sys.dim(), q.len())?;
    step.validate()?;
    let z0 = sys.lift(q, rng);
    Ok(static_uniform_from(sys, z0, n_steps, step, rng))
}

/// Categorical draw with probabilities `∝ exp(log_weights)`.
fn sample_log_weights<C: Choices + ?Sized>(log_weights: &[f64], choices: &mut C) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = choices.unit() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
