//! Run and benchmark-suite configuration files.
//!
//! Every table rejects unknown keys. Defaults are filled in at parse time, so
//! serializing a parsed config gives the fully resolved form.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use xhmc_core::integrator::{StepConfig, DEFAULT_DIVERGENCE_THRESHOLD};
use xhmc_core::targets::{
    Covariance, IRT_DEFAULT_ABILITY_SD, IRT_DEFAULT_PRIOR_SD, IRT_DEFAULT_TRUE_THETA,
};
use xhmc_core::termination::{ExhaustionNorm, TerminationCriterion};
use xhmc_core::trajectory::{DynamicOptions, StateSampler, DEFAULT_MAX_DEPTH};
use xhmc_core::{
    Algorithm, EuclideanMetric, FlatModel, GaussianModel, HamiltonianSystem, Init, IrtModel,
    SamplerConfig, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Flat,
    Gaussian,
    Irt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    TwoDimCorr,
    Banded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub model: ModelKind,
    /// Dimension of flat and Gaussian targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default = "default_n_students")]
    pub n_students: usize,
    #[serde(default = "default_true_theta")]
    pub true_theta: f64,
    #[serde(default = "default_ability_sd")]
    pub ability_sd: f64,
    #[serde(default = "default_prior_sd")]
    pub prior_sd: f64,
    /// Seed for synthetic IRT responses.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    /// Reads IRT responses from this CSV instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses_file: Option<PathBuf>,
}

fn default_covariance() -> CovarianceKind {
    CovarianceKind::Identity
}
fn default_n_students() -> usize {
    50
}
fn default_true_theta() -> f64 {
    IRT_DEFAULT_TRUE_THETA
}
fn default_ability_sd() -> f64 {
    IRT_DEFAULT_ABILITY_SD
}
fn default_prior_sd() -> f64 {
    IRT_DEFAULT_PRIOR_SD
}
fn default_data_seed() -> u64 {
    1
}

/// A constructed target.
pub enum BuiltTarget {
    Flat(FlatModel),
    Gaussian(GaussianModel),
    Irt(IrtModel),
}

impl BuiltTarget {
    pub fn into_arc(self) -> Arc<dyn Target> {
        match self {
            BuiltTarget::Flat(m) => Arc::new(m),
            BuiltTarget::Gaussian(m) => Arc::new(m),
            BuiltTarget::Irt(m) => Arc::new(m),
        }
    }
}

impl TargetConfig {
    pub fn gaussian(dim: usize, covariance: CovarianceKind, rho: Option<f64>) -> Self {
        Self {
            model: ModelKind::Gaussian,
            dim: Some(dim),
            covariance,
            rho,
            n_students: default_n_students(),
            true_theta: default_true_theta(),
            ability_sd: default_ability_sd(),
            prior_sd: default_prior_sd(),
            data_seed: default_data_seed(),
            responses_file: None,
        }
    }

    /// `base` resolves a relative `responses_file`.
    pub fn build(&self, base: &Path) -> Result<BuiltTarget> {
        let dim = || self.dim.context("target.dim is required for this model");
        Ok(match self.model {
            ModelKind::Flat => BuiltTarget::Flat(FlatModel::new(dim()?)?),
            ModelKind::Gaussian => {
                let rho = || {
                    self.rho
                        .context("target.rho is required for this covariance")
                };
                let cov = match self.covariance {
                    CovarianceKind::Identity => Covariance::Identity,
                    CovarianceKind::TwoDimCorr => Covariance::TwoDimCorr { rho: rho()? },
                    CovarianceKind::Banded => Covariance::Banded { rho: rho()? },
                };
                let dim = match (self.dim, cov) {
                    (None, Covariance::TwoDimCorr { .. }) => 2,
                    _ => dim()?,
                };
                BuiltTarget::Gaussian(GaussianModel::new(dim, cov)?)
            }
            ModelKind::Irt => {
                let model = match &self.responses_file {
                    Some(path) => {
                        let path = base.join(path);
                        let file = std::fs::File::open(&path)
                            .with_context(|| format!("opening {}", path.display()))?;
                        let responses = IrtModel::read_responses_csv(std::io::BufReader::new(file))
                            .with_context(|| format!("reading {}", path.display()))?;
                        IrtModel::new(responses, self.prior_sd)?
                    }
                    None => IrtModel::generate(
                        self.n_students,
                        self.true_theta,
                        self.ability_sd,
                        self.prior_sd,
                        self.data_seed,
                    )?,
                };
                BuiltTarget::Irt(model)
            }
        })
    }

    pub fn default_init(&self) -> InitConfig {
        match self.model {
            ModelKind::Gaussian => InitConfig::Radius { radius: 1.0 },
            ModelKind::Flat | ModelKind::Irt => InitConfig::Keyword(InitKeyword::Zero),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Diagonal of `M⁻¹`; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_mass: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    StaticMetropolis,
    StaticUniform,
    Nuts,
    Xhmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Leapfrog steps of the static schemes.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    /// Defaults to slice for nuts and multinomial for xhmc.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_sampler: Option<StateSampler>,
}

fn default_max_depth() -> u32 {
    DEFAULT_MAX_DEPTH
}

impl AlgorithmConfig {
    pub fn dynamic(kind: AlgorithmKind) -> Self {
        Self {
            kind,
            steps: None,
            max_depth: DEFAULT_MAX_DEPTH,
            state_sampler: None,
        }
    }

    pub fn resolve_defaults(&mut self) {
        self.state_sampler = match self.kind {
            AlgorithmKind::Nuts => Some(self.state_sampler.unwrap_or(StateSampler::Slice)),
            AlgorithmKind::Xhmc => Some(self.state_sampler.unwrap_or(StateSampler::Multinomial)),
            _ => self.state_sampler,
        };
    }

    pub fn build(&self, termination: &TerminationConfig) -> Result<Algorithm> {
        let steps = || {
            self.steps
                .context("algorithm.L is required for static algorithms")
        };
        let algorithm = match self.kind {
            AlgorithmKind::StaticMetropolis => Algorithm::StaticMetropolis { steps: steps()? },
            AlgorithmKind::StaticUniform => Algorithm::StaticUniform { steps: steps()? },
            AlgorithmKind::Nuts => Algorithm::Dynamic(DynamicOptions {
                criterion: TerminationCriterion::NoUTurn,
                max_depth: self.max_depth,
                sampler: self.state_sampler.unwrap_or(StateSampler::Slice),
            }),
            AlgorithmKind::Xhmc => {
                let sampler = self.state_sampler.unwrap_or(StateSampler::Multinomial);
                if sampler == StateSampler::Slice {
                    bail!("state_sampler = \"slice\" is only supported for nuts");
                }
                Algorithm::Dynamic(DynamicOptions {
                    criterion: TerminationCriterion::Exhaustion {
                        delta: termination.delta,
                        norm: termination.norm,
                    },
                    max_depth: self.max_depth,
                    sampler,
                })
            }
        };
        algorithm.validate()?;
        Ok(algorithm)
    }

    /// Short label such as `nuts` or `xhmc(0.1)`.
    pub fn label(&self, termination: &TerminationConfig) -> String {
        match self.kind {
            AlgorithmKind::StaticMetropolis => {
                format!("static_metropolis(L={})", self.steps.unwrap_or(0))
            }
            AlgorithmKind::StaticUniform => {
                format!("static_uniform(L={})", self.steps.unwrap_or(0))
            }
            AlgorithmKind::Nuts => "nuts".to_string(),
            AlgorithmKind::Xhmc => format!("xhmc({})", termination.delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationConfig {
    /// Exhaustion threshold for xhmc.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub norm: ExhaustionNorm,
}

fn default_delta() -> f64 {
    0.1
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            norm: ExhaustionNorm::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Flag only energy drops larger than the threshold.
    #[serde(default)]
    pub signed: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            signed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Value(f64),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKeyword {
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitConfig {
    Keyword(InitKeyword),
    Point(Vec<f64>),
    Radius { radius: f64 },
}

impl InitConfig {
    pub fn build(&self) -> Init {
        match self {
            InitConfig::Keyword(InitKeyword::Zero) => Init::Zero,
            InitConfig::Point(q) => Init::Given(q.clone()),
            InitConfig::Radius { radius } => Init::Radius(*radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub num_draws: usize,
    #[serde(default)]
    pub num_warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub step_size: StepSize,
    /// Used when `step_size = "auto"`.
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    /// Random radius-1 shell for Gaussians, zeros otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
}

fn default_chains() -> usize {
    1
}
fn default_target_accept() -> f64 {
    xhmc_core::chain::DEFAULT_TARGET_ACCEPT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.formats.contains(&OutputFormat::Csv)
    }
    pub fn json(&self) -> bool {
        self.formats.contains(&OutputFormat::Json)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_p: Option<Vec<f64>>,
    #[serde(default = "default_trace_steps")]
    pub n_steps: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_kappa_tolerance")]
    pub kappa_tolerance: f64,
}

fn default_trace_steps() -> usize {
    1000
}
fn default_deltas() -> Vec<f64> {
    vec![0.1, 0.01]
}
fn default_kappa_tolerance() -> f64 {
    1e-3
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            init_q: None,
            init_p: None,
            n_steps: default_trace_steps(),
            deltas: default_deltas(),
            kappa_tolerance: default_kappa_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_l_min_exp")]
    pub l_min_exp: u32,
    #[serde(default = "default_l_max_exp")]
    pub l_max_exp: u32,
}

fn default_l_min_exp() -> u32 {
    0
}
fn default_l_max_exp() -> u32 {
    7
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            l_min_exp: default_l_min_exp(),
            l_max_exp: default_l_max_exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub termination: TerminationConfig,
    #[serde(default)]
    pub divergence: DivergenceConfig,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub scan: ScanConfig,
}

/// A parsed config together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
    cfg.algorithm.resolve_defaults();
    if cfg.run.init.is_none() {
        cfg.run.init = Some(cfg.target.default_init());
    }
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config =
        parse_run_config(&text).with_context(|| format!("invalid config {}", path.display()))?;
    Ok(LoadedConfig {
        config,
        base: base_dir(path),
    })
}

pub fn base_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn build_system(target: Arc<dyn Target>, metric: &MetricConfig) -> Result<HamiltonianSystem> {
    let metric = match &metric.inverse_mass {
        Some(m) => EuclideanMetric::new(m.clone())?,
        None => EuclideanMetric::identity(target.dim()),
    };
    Ok(HamiltonianSystem::new(target, metric)?)
}

impl RunConfig {
    pub fn step_config(&self, epsilon: f64) -> Result<StepConfig> {
        let step = StepConfig {
            epsilon,
            divergence_threshold: self.divergence.threshold,
            signed_divergence: self.divergence.signed,
        };
        step.validate()?;
        Ok(step)
    }

    /// Sampler settings at step size `epsilon`.
    pub fn sampler_config(&self, epsilon: f64) -> Result<SamplerConfig> {
        let init = self
            .run
            .init
            .clone()
            .unwrap_or_else(|| self.target.default_init());
        let cfg = SamplerConfig {
            algorithm: self.algorithm.build(&self.termination)?,
            step: self.step_config(epsilon)?,
            num_draws: self.run.num_draws,
            num_warmup: self.run.num_warmup,
            seed: self.run.seed,
            init: init.build(),
        };
        cfg.validate()?;
        if self.run.chains == 0 {
            bail!("run.chains must be >= 1");
        }
        Ok(cfg)
    }
}

/// One algorithm entry of a benchmark suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteAlgorithm {
    pub kind: AlgorithmKind,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<ExhaustionNorm>,
    /// Overrides the target's `max_depth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_sampler: Option<StateSampler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteTarget {
    pub name: String,
    pub step_size: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    pub target: TargetConfig,
    #[serde(default)]
    pub metric: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRun {
    pub num_draws: usize,
    #[serde(default)]
    pub num_warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub run: SuiteRun,
    #[serde(default)]
    pub divergence: DivergenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(rename = "targets")]
    pub targets: Vec<SuiteTarget>,
    pub algorithms: Vec<SuiteAlgorithm>,
}

impl SuiteAlgorithm {
    pub fn resolve(&self, target: &SuiteTarget) -> (AlgorithmConfig, TerminationConfig) {
        let mut algorithm = AlgorithmConfig {
            kind: self.kind,
            steps: self.steps,
            max_depth: self.max_depth.unwrap_or(target.max_depth),
            state_sampler: self.state_sampler,
        };
        algorithm.resolve_defaults();
        let termination = TerminationConfig {
            delta: self.delta.unwrap_or_else(default_delta),
            norm: self.norm.unwrap_or_default(),
        };
        (algorithm, termination)
    }
}

pub fn parse_suite_config(text: &str) -> Result<SuiteConfig> {
    let suite: SuiteConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
    if suite.targets.is_empty() || suite.algorithms.is_empty() {
        bail!("a suite needs at least one [[targets]] and one [[algorithms]] entry");
    }
    Ok(suite)
}

pub fn load_suite_config(path: &Path) -> Result<(SuiteConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading suite {}", path.display()))?;
    let suite =
        parse_suite_config(&text).with_context(|| format!("invalid suite {}", path.display()))?;
    Ok((suite, base_dir(path)))
}
