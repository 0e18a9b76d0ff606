//! Effective sample size, autocorrelation and energy diagnostics.

use serde::{Deserialize, Serialize};

use crate::chain::ChainOutput;

pub const ESS_METHOD: &str = "geyer_initial_monotone";
pub const MIN_ESS_DRAWS: usize = 10;
pub const DEFAULT_MAX_LAG: usize = 50;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

struct Autocov {
    centered: Vec<f64>,
    c0: f64,
}

impl Autocov {
    fn new(x: &[f64]) -> Option<Self> {
        let m = mean(x);
        let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
        let c0 = centered.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        if !(c0 > 0.0 && c0.is_finite()) {
            return None;
        }
        Some(Self { centered, c0 })
    }

    fn rho(&self, lag: usize) -> f64 {
        if lag == 0 {
            return 1.0;
        }
        let n = self.centered.len();
        if lag >= n {
            return 0.0;
        }
        let c: f64 = self.centered[..n - lag]
            .iter()
            .zip(&self.centered[lag..])
            .map(|(a, b)| a * b)
            .sum();
        c / n as f64 / self.c0
    }
}

/// Autocorrelations at lags `0..=max_lag`, or `None` for a constant series.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let ac = Autocov::new(x)?;
    Some(
        (0..=max_lag.min(x.len().saturating_sub(1)))
            .map(|k| ac.rho(k))
            .collect(),
    )
}

/// Single-chain effective sample size with Geyer's initial monotone sequence.
///
/// `None` for series shorter than 10 or with zero variance. The result is
/// capped at `n`.
pub fn ess(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < MIN_ESS_DRAWS || x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ac = Autocov::new(x)?;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = ac.rho(2 * k) + ac.rho(2 * k + 1);
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let ess = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Some(ess.min(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostics {
    pub var_e: f64,
    pub var_de: f64,
    pub ratio: f64,
}

/// `None` when there are fewer than two energies or they do not vary.
pub fn energy_diagnostics(energies: &[f64]) -> Option<EnergyDiagnostics> {
    if energies.len() < 2 {
        return None;
    }
    let var_e = variance(energies);
    if !(var_e > 0.0 && var_e.is_finite()) {
        return None;
    }
    let var_de = energies
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum::<f64>()
        / (energies.len() - 1) as f64;
    Some(EnergyDiagnostics {
        var_e,
        var_de,
        ratio: var_de / var_e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub variance: f64,
    pub ess: Option<f64>,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ESS)`.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub num_transitions: u64,
    pub total_leapfrog: u64,
    pub total_gradient_evals: u64,
    pub mean_tree_depth: f64,
    pub n_divergent: u64,
    pub n_max_depth_hit: u64,
    /// Median ESS over parameters divided by transitions.
    pub ess_per_transition: Option<f64>,
    /// Median ESS over parameters divided by gradient evaluations.
    pub ess_per_gradient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub num_draws: usize,
    pub dim: usize,
    pub ess_method: String,
    pub parameters: Vec<ParameterSummary>,
    pub ess_min: Option<f64>,
    pub ess_median: Option<f64>,
    pub ess_max: Option<f64>,
    pub energy: Option<EnergyDiagnostics>,
    pub cost: CostSummary,
    /// Per parameter, lags `0..=max_lag`; empty for constant parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub autocorrelation: Vec<Vec<f64>>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn ess_range(parameters: &[ParameterSummary]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let mut values: Vec<f64> = parameters.iter().filter_map(|p| p.ess).collect();
    if values.is_empty() {
        return (None, None, None);
    }
    values.sort_by(f64::total_cmp);
    (
        values.first().copied(),
        Some(median(&values)),
        values.last().copied(),
    )
}

pub fn summarize(output: &ChainOutput) -> DiagnosticsSummary {
    summarize_with_lag(output, DEFAULT_MAX_LAG)
}

pub fn summarize_with_lag(output: &ChainOutput, max_lag: usize) -> DiagnosticsSummary {
    let dim = output.dim();
    let columns: Vec<Vec<f64>> = (0..dim).map(|i| output.parameter(i)).collect();
    let parameters: Vec<ParameterSummary> = columns
        .iter()
        .map(|x| {
            let variance = variance(x);
            let ess = ess(x);
            ParameterSummary {
                mean: mean(x),
                variance,
                ess,
                se: ess.map(|e| (variance / e).sqrt()),
            }
        })
        .collect();
    let autocorrelation = columns
        .iter()
        .map(|x| autocorrelation(x, max_lag).unwrap_or_default())
        .collect();
    let (ess_min, ess_median, ess_max) = ess_range(&parameters);
    let records = &output.records;
    let n = records.len() as u64;
    let total_gradient_evals = output.total_gradient_evals;
    DiagnosticsSummary {
        num_draws: output.draws.len(),
        dim,
        ess_method: ESS_METHOD.to_string(),
        parameters,
        ess_min,
        ess_median,
        ess_max,
        energy: energy_diagnostics(&output.energies()),
        cost: CostSummary {
            num_transitions: n,
            total_leapfrog: output.total_leapfrog(),
            total_gradient_evals,
            mean_tree_depth: records.iter().map(|r| r.tree_depth as f64).sum::<f64>()
                / n.max(1) as f64,
            n_divergent: records.iter().filter(|r| r.divergent).count() as u64,
            n_max_depth_hit: records.iter().filter(|r| r.max_depth_hit).count() as u64,
            ess_per_transition: ess_median.map(|e| e / n as f64),
            ess_per_gradient: ess_median.map(|e| e / total_gradient_evals as f64),
        },
        autocorrelation,
    }
}

/// Pools independent chains: ESS and costs add, means and variances are pooled.
pub fn combine(summaries: &[DiagnosticsSummary]) -> Option<DiagnosticsSummary> {
    let first = summaries.first()?;
    if summaries.len() == 1 {
        return Some(first.clone());
    }
    let dim = first.dim;
    let total_draws: usize = summaries.iter().map(|s| s.num_draws).sum();
    let parameters: Vec<ParameterSummary> = (0..dim)
        .map(|i| {
            let weight = |s: &DiagnosticsSummary| s.num_draws as f64 / total_draws as f64;
            let mean: f64 = summaries
                .iter()
                .map(|s| weight(s) * s.parameters[i].mean)
                .sum();
            // Law of total variance over chains.
            let variance: f64 = summaries
                .iter()
                .map(|s| {
                    let p = &s.parameters[i];
                    weight(s) * (p.variance + (p.mean - mean).powi(2))
                })
                .sum();
            let ess: Option<f64> = summaries.iter().map(|s| s.parameters[i].ess).sum();
            ParameterSummary {
                mean,
                variance,
                ess,
                se: ess.map(|e| (variance / e).sqrt()),
            }
        })
        .collect();
    let (ess_min, ess_median, ess_max) = ess_range(&parameters);
    let sum_u64 = |f: fn(&CostSummary) -> u64| summaries.iter().map(|s| f(&s.cost)).sum::<u64>();
    let num_transitions = sum_u64(|c| c.num_transitions);
    let total_gradient_evals = sum_u64(|c| c.total_gradient_evals);
    Some(DiagnosticsSummary {
        num_draws: total_draws,
        dim,
        ess_method: first.ess_method.clone(),
        parameters,
        ess_min,
        ess_median,
        ess_max,
        // Energy transitions are only meaningful within a chain.
        energy: None,
        cost: CostSummary {
            num_transitions,
            total_leapfrog: sum_u64(|c| c.total_leapfrog),
            total_gradient_evals,
            mean_tree_depth: summaries
                .iter()
                .map(|s| s.cost.mean_tree_depth * s.cost.num_transitions as f64)
                .sum::<f64>()
                / num_transitions.max(1) as f64,
            n_divergent: sum_u64(|c| c.n_divergent),
            n_max_depth_hit: sum_u64(|c| c.n_max_depth_hit),
            ess_per_transition: ess_median.map(|e| e / num_transitions as f64),
            ess_per_gradient: ess_median.map(|e| e / total_gradient_evals as f64),
        },
        autocorrelation: Vec::new(),
    })
}
