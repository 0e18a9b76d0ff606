//! Termination statistics over trajectory segments.
//!
//! A [`SegmentStats`] summarises a contiguous run of states: the summed momenta
//! `rho`, the log of the total canonical weight `Σ e^{-H}`, and the weighted sum of
//! the virial rate `Σ e^{-H} dG/dt`. Summaries merge associatively, so a doubling
//! tree only needs one summary per level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{check_divergence, leapfrog, StepConfig};
use crate::phase::{EuclideanMetric, HamiltonianSystem, PhasePoint, PhaseState};

/// How the weighted virial rate is normalised before comparing with `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionNorm {
    /// `|Σ w dG/dt| / Σ w`, the weighted time average.
    #[default]
    WeightedMean,
    /// The weighted mean further divided by the number of states.
    #[serde(alias = "paper_literal")]
    PerState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminationCriterion {
    /// Stop when a boundary momentum opposes the summed momentum.
    NoUTurn,
    /// Stop when the weighted mean virial rate drops below `delta`.
    Exhaustion {
        delta: f64,
        #[serde(default)]
        norm: ExhaustionNorm,
    },
    /// Never stop; trajectories grow to the maximum depth.
    StaticOnly,
}

impl TerminationCriterion {
    pub fn exhaustion(delta: f64) -> Self {
        TerminationCriterion::Exhaustion {
            delta,
            norm: ExhaustionNorm::WeightedMean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TerminationCriterion::Exhaustion { delta, .. } if delta.is_nan() || delta <= 0.0 => {
                Err(Error::config(format!(
                    "exhaustion delta must be positive, got {delta}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates the criterion on the segment bounded by `minus` and `plus`.
    pub fn terminates(
        &self,
        stats: &SegmentStats,
        minus: &PhasePoint,
        plus: &PhasePoint,
        metric: &EuclideanMetric,
    ) -> bool {
        match *self {
            TerminationCriterion::NoUTurn => check_nuts(stats, minus, plus, metric),
            TerminationCriterion::Exhaustion { delta, norm } => {
                check_exhaustion(stats, delta, norm)
            }
            TerminationCriterion::StaticOnly => false,
        }
    }
}

/// A real number stored as `sign · exp(ln_abs)`, closed under addition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLogSum {
    pub ln_abs: f64,
    pub sign: f64,
}

impl SignedLogSum {
    pub const ZERO: Self = Self {
        ln_abs: f64::NEG_INFINITY,
        sign: 0.0,
    };

    /// `value · exp(log_scale)` without forming the exponential.
    pub fn scaled(value: f64, log_scale: f64) -> Self {
        if value == 0.0 {
            Self::ZERO
        } else {
            Self {
                ln_abs: value.abs().ln() + log_scale,
                sign: value.signum(),
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0.0 || self.ln_abs == f64::NEG_INFINITY
    }

    pub fn plus(self, other: Self) -> Self {
        if other.is_zero() {
            return self;
        }
        if self.is_zero() {
            return other;
        }
        let (big, small) = if self.ln_abs >= other.ln_abs {
            (self, other)
        } else {
            (other, self)
        };
        let ratio = (small.ln_abs - big.ln_abs).exp();
        let factor = if big.sign == small.sign {
            1.0 + ratio
        } else {
            1.0 - ratio
        };
        if factor <= 0.0 {
            return Self::ZERO;
        }
        Self {
            ln_abs: big.ln_abs + factor.ln(),
            sign: big.sign,
        }
    }

    /// `self / exp(log_denominator)`.
    pub fn ratio(&self, log_denominator: f64) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.sign * (self.ln_abs - log_denominator).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    /// Sum of the momenta of every state in the segment.
    pub rho: Vec<f64>,
    /// `log Σ e^{-H(z)}`.
    pub log_weight: f64,
    /// `Σ e^{-H(z)} dG/dt(z)`.
    pub weighted_virial_rate: SignedLogSum,
    pub n_states: u64,
}

impl SegmentStats {
    /// The merge identity: no states, zero weight.
    pub fn empty(dim: usize) -> Self {
        Self {
            rho: vec![0.0; dim],
            log_weight: f64::NEG_INFINITY,
            weighted_virial_rate: SignedLogSum::ZERO,
            n_states: 0,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.merge_in(other);
        out
    }

    pub fn merge_in(&mut self, other: &Self) {
        for (a, b) in self.rho.iter_mut().zip(&other.rho) {
            *a += b;
        }
        self.log_weight = log_add_exp(self.log_weight, other.log_weight);
        self.weighted_virial_rate = self.weighted_virial_rate.plus(other.weighted_virial_rate);
        self.n_states += other.n_states;
    }

    /// `Σ w dG/dt / Σ w`, signed.
    pub fn mean_virial_rate(&self) -> f64 {
        self.weighted_virial_rate.ratio(self.log_weight)
    }
}

/// Statistics of a single state: `rho = p`, `log_weight = -H`.
pub fn segment_stats_single(state: &PhaseState) -> SegmentStats {
    let log_weight = -state.hamiltonian();
    SegmentStats {
        rho: state.z.p.clone(),
        log_weight,
        weighted_virial_rate: SignedLogSum::scaled(state.virial_rate(), log_weight),
        n_states: 1,
    }
}

pub fn merge_stats(a: &SegmentStats, b: &SegmentStats) -> SegmentStats {
    a.merge(b)
}

/// No-U-Turn check against both boundary momenta; `true` means terminate.
pub fn check_nuts(
    stats: &SegmentStats,
    minus: &PhasePoint,
    plus: &PhasePoint,
    metric: &EuclideanMetric,
) -> bool {
    nuts_statistic(stats, minus, plus, metric) < 0.0
}

/// `min(p₋ᵀM⁻¹ρ, p₊ᵀM⁻¹ρ)`; negative once the segment has turned.
pub fn nuts_statistic(
    stats: &SegmentStats,
    minus: &PhasePoint,
    plus: &PhasePoint,
    metric: &EuclideanMetric,
) -> f64 {
    metric
        .inner(&minus.p, &stats.rho)
        .min(metric.inner(&plus.p, &stats.rho))
}

pub fn exhaustion_statistic(stats: &SegmentStats, norm: ExhaustionNorm) -> f64 {
    let mean = stats.mean_virial_rate().abs();
    match norm {
        ExhaustionNorm::WeightedMean => mean,
        ExhaustionNorm::PerState => mean / stats.n_states.max(1) as f64,
    }
}

/// `true` means terminate.
pub fn check_exhaustion(stats: &SegmentStats, delta: f64, norm: ExhaustionNorm) -> bool {
    exhaustion_statistic(stats, norm) < delta
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One row of a forward criterion trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub time: f64,
    pub hamiltonian: f64,
    pub virial: f64,
    /// `min(p₋ᵀM⁻¹ρ, p₊ᵀM⁻¹ρ)` over states `0..=step`.
    pub nuts: f64,
    pub exhaustion_weighted: f64,
    pub exhaustion_per_state: f64,
    /// `(K(z_t) - K(z_0)) / t`.
    pub kappa_kinetic: f64,
    /// `(V(z_t) - V(z_0)) / t`.
    pub kappa_potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustionCrossing {
    pub delta: f64,
    pub step: Option<usize>,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstCrossings {
    pub nuts_step: Option<usize>,
    pub nuts_time: Option<f64>,
    pub exhaustion: Vec<ExhaustionCrossing>,
    pub kinetic_kappa_step: Option<usize>,
    pub kinetic_kappa_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    /// Thresholds whose first crossing is reported.
    pub deltas: Vec<f64>,
    pub norm: ExhaustionNorm,
    /// `κ_K` counts as vanished when its magnitude falls below this, or it changes sign.
    pub kappa_tolerance: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            deltas: vec![0.1, 0.01],
            norm: ExhaustionNorm::WeightedMean,
            kappa_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaTrace {
    pub records: Vec<TraceRecord>,
    pub divergent: bool,
    pub crossings: FirstCrossings,
}

/// Integrates forward from `z0` and records the termination statistics of the
/// growing segment `z_0..=z_k` for `k = 1..=n_steps`.
///
/// Divergence truncates the trace and sets `divergent`.
pub fn trace_kappa(
    sys: &HamiltonianSystem,
    z0: &PhasePoint,
    step: &StepConfig,
    n_steps: usize,
    opts: &TraceOptions,
) -> Result<KappaTrace> {
    sys.check_point(z0)?;
    step.validate()?;
    if n_steps == 0 {
        return Err(Error::config("trace needs at least one step"));
    }
    let first = PhaseState::new(sys, z0.clone());
    let h0 = first.hamiltonian();
    if !h0.is_finite() {
        return Err(Error::NonFiniteInit);
    }
    let (k0, v0) = (first.kinetic, first.potential);
    let mut stats = segment_stats_single(&first);
    let mut state = first.clone();
    let mut records = Vec::with_capacity(n_steps);
    let mut divergent = false;
    let mut crossings = FirstCrossings {
        nuts_step: None,
        nuts_time: None,
        exhaustion: opts
            .deltas
            .iter()
            .map(|&delta| ExhaustionCrossing {
                delta,
                step: None,
                time: None,
            })
            .collect(),
        kinetic_kappa_step: None,
        kinetic_kappa_time: None,
    };
    let mut prev_kappa: Option<f64> = None;
    for k in 1..=n_steps {
        state = leapfrog(sys, &state, step.epsilon);
        let h = state.hamiltonian();
        if check_divergence(h0, h, step) {
            divergent = true;
            break;
        }
        stats.merge_in(&segment_stats_single(&state));
        let t = k as f64 * step.epsilon;
        let rec = TraceRecord {
            step: k,
            time: t,
            hamiltonian: h,
            virial: state.z.virial(),
            nuts: nuts_statistic(&stats, &first.z, &state.z, sys.metric()),
            exhaustion_weighted: exhaustion_statistic(&stats, ExhaustionNorm::WeightedMean),
            exhaustion_per_state: exhaustion_statistic(&stats, ExhaustionNorm::PerState),
            kappa_kinetic: (state.kinetic - k0) / t,
            kappa_potential: (state.potential - v0) / t,
        };
        if crossings.nuts_step.is_none() && rec.nuts < 0.0 {
            crossings.nuts_step = Some(k);
            crossings.nuts_time = Some(t);
        }
        let exh = match opts.norm {
            ExhaustionNorm::WeightedMean => rec.exhaustion_weighted,
            ExhaustionNorm::PerState => rec.exhaustion_per_state,
        };
        for c in crossings.exhaustion.iter_mut().filter(|c| c.step.is_none()) {
            if exh < c.delta {
                c.step = Some(k);
                c.time = Some(t);
            }
        }
        if crossings.kinetic_kappa_step.is_none() {
            let vanished = rec.kappa_kinetic.abs() < opts.kappa_tolerance
                || prev_kappa.is_some_and(|prev| prev * rec.kappa_kinetic < 0.0);
            if vanished {
                crossings.kinetic_kappa_step = Some(k);
                crossings.kinetic_kappa_time = Some(t);
            }
        }
        prev_kappa = Some(rec.kappa_kinetic);
        records.push(rec);
    }
    Ok(KappaTrace {
        records,
        divergent,
        crossings,
    })
}
