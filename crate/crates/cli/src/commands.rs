//! The `sample`, `scan`, `trace` and `benchmark` subcommands.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use xhmc_core::chain::{coarse_step_search, run_chains};
use xhmc_core::diagnostics::{combine, summarize, DiagnosticsSummary};
use xhmc_core::parallel::{map_indexed, Execution};
use xhmc_core::termination::{trace_kappa, FirstCrossings, TraceOptions};
use xhmc_core::{
    run_chain_with, ChainOutput, HamiltonianSystem, IrtModel, PhasePoint, SamplerConfig,
};

use crate::config::{
    build_system, AlgorithmConfig, AlgorithmKind, BuiltTarget, LoadedConfig, RunConfig, StepSize,
    SuiteConfig, SuiteTarget, TerminationConfig,
};
use crate::output::{
    chain_file, csv_writer, fmt_f64, fmt_opt, write_autocorr, write_json, write_text, DrawWriter,
};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

struct Prepared {
    config: RunConfig,
    sys: HamiltonianSystem,
    out_dir: PathBuf,
}

fn prepare(loaded: &LoadedConfig, ov: &Overrides) -> Result<Prepared> {
    let mut config = loaded.config.clone();
    if let Some(seed) = ov.seed {
        config.run.seed = seed;
    }
    let out_dir = match &ov.out_dir {
        Some(dir) => dir.clone(),
        None => loaded.base.join(&config.output.directory),
    };
    config.output.directory = out_dir.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let built = config.target.build(&loaded.base)?;
    if let BuiltTarget::Irt(m) = &built {
        write_responses(&out_dir.join("irt_responses.csv"), m)?;
    }
    let sys = build_system(built.into_arc(), &config.metric)?;
    Ok(Prepared {
        config,
        sys,
        out_dir,
    })
}

fn write_responses(path: &Path, model: &IrtModel) -> Result<()> {
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    model.write_responses_csv(&mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

/// Resolves `step_size`, searching when it is `"auto"`.
fn resolve_step(config: &mut RunConfig, sys: &HamiltonianSystem) -> Result<(f64, &'static str)> {
    match config.run.step_size {
        StepSize::Value(eps) => Ok((eps, "config")),
        StepSize::Auto(_) => {
            let pilot = config.sampler_config(1.0)?;
            let eps = coarse_step_search(sys, &pilot, config.run.target_accept)?;
            config.run.step_size = StepSize::Value(eps);
            Ok((eps, "search"))
        }
    }
}

fn write_resolved(dir: &Path, config: &RunConfig) -> Result<()> {
    let text = toml::to_string(config).context("serializing resolved config")?;
    write_text(&dir.join("config.resolved.toml"), &text)
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    target: String,
    algorithm: String,
    step_size: f64,
    step_size_source: &'a str,
    seed: u64,
    chains: usize,
    ess_method: &'a str,
    combined: &'a DiagnosticsSummary,
    per_chain: Vec<DiagnosticsSummary>,
}

#[derive(Debug)]
pub struct SampleReport {
    pub out_dir: PathBuf,
    pub step_size: f64,
    pub outputs: Vec<ChainOutput>,
    pub summary: DiagnosticsSummary,
}

/// Runs every chain, streaming each to its own draws file.
fn run_streaming(
    sys: &HamiltonianSystem,
    cfg: &SamplerConfig,
    n_chains: usize,
    dir: Option<&Path>,
) -> Result<Vec<ChainOutput>> {
    map_indexed(n_chains, Execution::Parallel, |k| -> Result<ChainOutput> {
        let mut writer = match dir {
            Some(dir) => Some(DrawWriter::create(
                &dir.join(chain_file("draws.csv", k, n_chains)),
                sys.dim(),
            )?),
            None => None,
        };
        let mut io_error = None;
        let out = run_chain_with(sys, cfg, k, |i, t| {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write(i, t) {
                    io_error = Some(e);
                    return ControlFlow::Break(());
                }
            }
            ControlFlow::Continue(())
        })?;
        if let Some(e) = io_error {
            return Err(e);
        }
        if let Some(w) = writer {
            w.finish()?;
        }
        Ok(out)
    })
    .into_iter()
    .collect()
}

pub fn cmd_sample(loaded: &LoadedConfig, ov: &Overrides) -> Result<SampleReport> {
    let Prepared {
        mut config,
        sys,
        out_dir,
    } = prepare(loaded, ov)?;
    let (eps, source) = resolve_step(&mut config, &sys)?;
    let cfg = config.sampler_config(eps)?;
    let n_chains = config.run.chains;
    let csv_dir = config.output.csv().then_some(out_dir.as_path());
    let outputs = run_streaming(&sys, &cfg, n_chains, csv_dir)?;

    let per_chain: Vec<DiagnosticsSummary> = outputs.iter().map(summarize).collect();
    if config.output.csv() {
        for (k, s) in per_chain.iter().enumerate() {
            write_autocorr(
                &out_dir.join(chain_file("autocorr.csv", k, n_chains)),
                &s.autocorrelation,
            )?;
        }
    }
    let summary = combine(&per_chain).context("no chains were run")?;
    if config.output.json() {
        let per_chain_json = per_chain
            .iter()
            .map(|s| DiagnosticsSummary {
                autocorrelation: Vec::new(),
                ..s.clone()
            })
            .collect();
        let combined = DiagnosticsSummary {
            autocorrelation: Vec::new(),
            ..summary.clone()
        };
        write_json(
            &out_dir.join("summary.json"),
            &SummaryFile {
                target: sys.model().name().to_string(),
                algorithm: config.algorithm.label(&config.termination),
                step_size: eps,
                step_size_source: source,
                seed: config.run.seed,
                chains: n_chains,
                ess_method: xhmc_core::diagnostics::ESS_METHOD,
                combined: &combined,
                per_chain: per_chain_json,
            },
        )?;
    }
    write_resolved(&out_dir, &config)?;
    Ok(SampleReport {
        out_dir,
        step_size: eps,
        outputs,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub l: usize,
    pub min_ess: Option<f64>,
    pub median_ess: Option<f64>,
    pub ess_per_transition: Option<f64>,
    pub ess_per_gradient: Option<f64>,
    pub total_gradient_evals: u64,
    pub mean_accept_stat: f64,
    pub n_divergent: u64,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ScanReport {
    pub out_dir: PathBuf,
    pub step_size: f64,
    pub rows: Vec<ScanRow>,
}

impl ScanReport {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }
}

/// Static uniform chains at `L = 2^k` for `k` in `l_min_exp..=l_max_exp`.
///
/// The configured algorithm is used only for an automatic step-size search.
pub fn cmd_scan(
    loaded: &LoadedConfig,
    l_min_exp: Option<u32>,
    l_max_exp: Option<u32>,
    ov: &Overrides,
) -> Result<ScanReport> {
    let Prepared {
        mut config,
        sys,
        out_dir,
    } = prepare(loaded, ov)?;
    let lo = l_min_exp.unwrap_or(config.scan.l_min_exp);
    let hi = l_max_exp.unwrap_or(config.scan.l_max_exp);
    if lo > hi || hi > 20 {
        bail!("invalid exponent range {lo}..={hi} (need min <= max <= 20)");
    }
    config.scan.l_min_exp = lo;
    config.scan.l_max_exp = hi;
    let (eps, _) = resolve_step(&mut config, &sys)?;
    let n_chains = config.run.chains;

    let rows = map_indexed((hi - lo + 1) as usize, Execution::Parallel, |i| {
        let l = 1usize << (lo as usize + i);
        let run = || -> Result<ScanRow> {
            let mut algorithm = config.algorithm.clone();
            algorithm.kind = AlgorithmKind::StaticUniform;
            algorithm.steps = Some(l);
            let cell = RunConfig {
                algorithm,
                ..config.clone()
            };
            let cfg = cell.sampler_config(eps)?;
            let outputs = run_chains(&sys, &cfg, n_chains, Execution::Parallel)?;
            let per_chain: Vec<_> = outputs.iter().map(summarize).collect();
            let s = combine(&per_chain).context("no chains were run")?;
            let n = s.cost.num_transitions as f64;
            let accept: f64 = outputs
                .iter()
                .flat_map(|o| o.records.iter().map(|r| r.accept_stat))
                .sum();
            Ok(ScanRow {
                l,
                min_ess: s.ess_min,
                median_ess: s.ess_median,
                ess_per_transition: s.cost.ess_per_transition,
                ess_per_gradient: s.cost.ess_per_gradient,
                total_gradient_evals: s.cost.total_gradient_evals,
                mean_accept_stat: accept / n,
                n_divergent: s.cost.n_divergent,
                error: None,
            })
        };
        run().unwrap_or_else(|e| ScanRow {
            l,
            min_ess: None,
            median_ess: None,
            ess_per_transition: None,
            ess_per_gradient: None,
            total_gradient_evals: 0,
            mean_accept_stat: f64::NAN,
            n_divergent: 0,
            error: Some(format!("{e:#}")),
        })
    });

    let mut w = csv_writer(&out_dir.join("scan.csv"))?;
    w.write_record([
        "L",
        "min_ess",
        "median_ess",
        "ess_per_transition",
        "ess_per_gradient",
        "total_gradient_evals",
        "mean_accept_stat",
        "n_divergent",
        "error",
    ])?;
    for r in &rows {
        w.write_record([
            r.l.to_string(),
            fmt_opt(r.min_ess),
            fmt_opt(r.median_ess),
            fmt_opt(r.ess_per_transition),
            fmt_opt(r.ess_per_gradient),
            r.total_gradient_evals.to_string(),
            fmt_f64(r.mean_accept_stat),
            r.n_divergent.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_resolved(&out_dir, &config)?;
    Ok(ScanReport {
        out_dir,
        step_size: eps,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub step_size: f64,
    pub n_steps: usize,
    pub n_records: usize,
    pub divergent: bool,
    #[serde(flatten)]
    pub crossings: FirstCrossings,
}

#[derive(Debug)]
pub struct TraceReport {
    pub out_dir: PathBuf,
    pub summary: TraceSummary,
}

/// `init` lists `q` then `p`; it overrides `trace.init_q` and `trace.init_p`.
pub fn cmd_trace(
    loaded: &LoadedConfig,
    init: Option<&[f64]>,
    n_steps: Option<usize>,
    ov: &Overrides,
) -> Result<TraceReport> {
    let Prepared {
        mut config,
        sys,
        out_dir,
    } = prepare(loaded, ov)?;
    let dim = sys.dim();
    let (q, p) = match init {
        Some(z) => {
            if z.len() != 2 * dim {
                bail!(
                    "--init needs {} values (q then p), got {}",
                    2 * dim,
                    z.len()
                );
            }
            (z[..dim].to_vec(), z[dim..].to_vec())
        }
        None => match (&config.trace.init_q, &config.trace.init_p) {
            (Some(q), Some(p)) => (q.clone(), p.clone()),
            _ => bail!("trace needs --init or both trace.init_q and trace.init_p"),
        },
    };
    if q.len() != dim || p.len() != dim {
        bail!("trace initial point must have dimension {dim}");
    }
    config.trace.init_q = Some(q.clone());
    config.trace.init_p = Some(p.clone());
    if let Some(n) = n_steps {
        config.trace.n_steps = n;
    }
    let (eps, _) = resolve_step(&mut config, &sys)?;
    let step = config.step_config(eps)?;
    let opts = TraceOptions {
        deltas: config.trace.deltas.clone(),
        norm: config.termination.norm,
        kappa_tolerance: config.trace.kappa_tolerance,
    };
    let z0 = PhasePoint::new(q, p)?;
    let trace = trace_kappa(&sys, &z0, &step, config.trace.n_steps, &opts)?;

    let mut w = csv_writer(&out_dir.join("trace.csv"))?;
    w.write_record([
        "step",
        "time",
        "hamiltonian",
        "virial",
        "nuts",
        "exhaustion_weighted",
        "exhaustion_per_state",
        "kappa_kinetic",
        "kappa_potential",
    ])?;
    for r in &trace.records {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.time),
            fmt_f64(r.hamiltonian),
            fmt_f64(r.virial),
            fmt_f64(r.nuts),
            fmt_f64(r.exhaustion_weighted),
            fmt_f64(r.exhaustion_per_state),
            fmt_f64(r.kappa_kinetic),
            fmt_f64(r.kappa_potential),
        ])?;
    }
    w.flush()?;
    let summary = TraceSummary {
        step_size: eps,
        n_steps: config.trace.n_steps,
        n_records: trace.records.len(),
        divergent: trace.divergent,
        crossings: trace.crossings,
    };
    write_json(&out_dir.join("first-crossings.json"), &summary)?;
    write_resolved(&out_dir, &config)?;
    Ok(TraceReport { out_dir, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub target: String,
    pub algorithm: String,
    pub step_size: f64,
    pub max_depth: u32,
    pub total_leapfrog: u64,
    pub total_gradient_evals: u64,
    pub min_ess: Option<f64>,
    pub median_ess: Option<f64>,
    pub ess_per_gradient: Option<f64>,
    pub mean_tree_depth: f64,
    pub n_max_depth_hit: u64,
    pub n_divergent: u64,
    /// Against the first NUTS row of the same target.
    pub leapfrog_ratio: Option<f64>,
    pub ess_ratio: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct BenchmarkReport {
    pub out_dir: PathBuf,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn row(&self, target: &str, algorithm: &str) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.algorithm == algorithm)
    }
}

fn run_cell(
    suite: &SuiteConfig,
    base: &Path,
    target: &SuiteTarget,
    algorithm: &AlgorithmConfig,
    termination: &TerminationConfig,
    seed: u64,
) -> Result<DiagnosticsSummary> {
    let sys = build_system(target.target.build(base)?.into_arc(), &target.metric)?;
    let config = RunConfig {
        target: target.target.clone(),
        metric: target.metric.clone(),
        algorithm: algorithm.clone(),
        termination: termination.clone(),
        divergence: suite.divergence.clone(),
        run: crate::config::RunSection {
            num_draws: suite.run.num_draws,
            num_warmup: suite.run.num_warmup,
            seed,
            chains: suite.run.chains,
            step_size: StepSize::Value(target.step_size),
            target_accept: xhmc_core::chain::DEFAULT_TARGET_ACCEPT,
            init: Some(
                target
                    .init
                    .clone()
                    .unwrap_or_else(|| target.target.default_init()),
            ),
        },
        output: Default::default(),
        trace: Default::default(),
        scan: Default::default(),
    };
    let cfg = config.sampler_config(target.step_size)?;
    let outputs = run_chains(&sys, &cfg, suite.run.chains, Execution::Parallel)?;
    let per_chain: Vec<_> = outputs.iter().map(summarize).collect();
    combine(&per_chain).context("no chains were run")
}

/// Runs every target × algorithm cell of a suite.
pub fn cmd_benchmark(suite: &SuiteConfig, base: &Path, ov: &Overrides) -> Result<BenchmarkReport> {
    let seed = ov.seed.unwrap_or(suite.run.seed);
    let out_dir = match &ov.out_dir {
        Some(dir) => dir.clone(),
        None => base.join(&suite.output.directory),
    };
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let n_alg = suite.algorithms.len();
    let mut rows = map_indexed(suite.targets.len() * n_alg, Execution::Parallel, |i| {
        let target = &suite.targets[i / n_alg];
        let (algorithm, termination) = suite.algorithms[i % n_alg].resolve(target);
        let label = algorithm.label(&termination);
        let mut row = BenchmarkRow {
            target: target.name.clone(),
            algorithm: label,
            step_size: target.step_size,
            max_depth: algorithm.max_depth,
            total_leapfrog: 0,
            total_gradient_evals: 0,
            min_ess: None,
            median_ess: None,
            ess_per_gradient: None,
            mean_tree_depth: f64::NAN,
            n_max_depth_hit: 0,
            n_divergent: 0,
            leapfrog_ratio: None,
            ess_ratio: None,
            error: None,
        };
        match run_cell(suite, base, target, &algorithm, &termination, seed) {
            Ok(s) => {
                row.total_leapfrog = s.cost.total_leapfrog;
                row.total_gradient_evals = s.cost.total_gradient_evals;
                row.min_ess = s.ess_min;
                row.median_ess = s.ess_median;
                row.ess_per_gradient = s.cost.ess_per_gradient;
                row.mean_tree_depth = s.cost.mean_tree_depth;
                row.n_max_depth_hit = s.cost.n_max_depth_hit;
                row.n_divergent = s.cost.n_divergent;
            }
            Err(e) => row.error = Some(format!("{e:#}")),
        }
        row
    });

    let reference: Vec<Option<(u64, Option<f64>)>> = rows
        .iter()
        .map(|r| {
            rows.iter()
                .find(|n| n.target == r.target && n.algorithm == "nuts" && n.error.is_none())
                .map(|n| (n.total_leapfrog, n.median_ess))
        })
        .collect();
    for (row, nuts) in rows.iter_mut().zip(reference) {
        if let (Some((lf, ess)), None) = (nuts, &row.error) {
            row.leapfrog_ratio = Some(row.total_leapfrog as f64 / lf as f64);
            row.ess_ratio = match (row.median_ess, ess) {
                (Some(a), Some(b)) => Some(a / b),
                _ => None,
            };
        }
    }

    let mut w = csv_writer(&out_dir.join("benchmark.csv"))?;
    w.write_record([
        "target",
        "algorithm",
        "step_size",
        "max_depth",
        "total_leapfrog",
        "total_gradient_evals",
        "min_ess",
        "median_ess",
        "ess_per_gradient",
        "mean_tree_depth",
        "n_max_depth_hit",
        "n_divergent",
        "leapfrog_ratio_vs_nuts",
        "ess_ratio_vs_nuts",
        "error",
    ])?;
    for r in &rows {
        w.write_record([
            r.target.clone(),
            r.algorithm.clone(),
            fmt_f64(r.step_size),
            r.max_depth.to_string(),
            r.total_leapfrog.to_string(),
            r.total_gradient_evals.to_string(),
            fmt_opt(r.min_ess),
            fmt_opt(r.median_ess),
            fmt_opt(r.ess_per_gradient),
            fmt_f64(r.mean_tree_depth),
            r.n_max_depth_hit.to_string(),
            r.n_divergent.to_string(),
            fmt_opt(r.leapfrog_ratio),
            fmt_opt(r.ess_ratio),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let resolved = SuiteConfig {
        run: crate::config::SuiteRun {
            seed,
            ..suite.run.clone()
        },
        output: crate::config::OutputConfig {
            directory: out_dir.clone(),
            ..suite.output.clone()
        },
        ..suite.clone()
    };
    write_text(
        &out_dir.join("suite.resolved.toml"),
        &toml::to_string(&resolved).context("serializing resolved suite")?,
    )?;
    Ok(BenchmarkReport { out_dir, rows })
}
