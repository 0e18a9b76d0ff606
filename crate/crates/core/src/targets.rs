//! Differentiable target distributions.
//!
//! Every target exposes the potential energy `V(q) = -log π(q) + const` and its
//! gradient. Additive constants are dropped throughout; only differences of `V`
//! enter the samplers.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A differentiable negative log density.
///
/// Implementations must be immutable after construction so that one instance can
/// be shared by concurrently running chains.
pub trait Target: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn name(&self) -> &str;

    /// Writes `∇V(q)` into `grad` and returns `V(q)`.
    ///
    /// Lengths are not checked here; use [`Target::gradient`] for a checked call.
    fn eval(&self, q: &[f64], grad: &mut [f64]) -> f64;

    /// `V(q)` without the gradient.
    fn value(&self, q: &[f64]) -> f64 {
        let mut grad = vec![0.0; q.len()];
        self.eval(q, &mut grad)
    }

    /// Downcast hook used by the exact Gaussian flow.
    fn as_gaussian(&self) -> Option<&GaussianModel> {
        None
    }

    fn potential(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim(), q.len())?;
        Ok(self.value(q))
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), q.len())?;
        let mut grad = vec![0.0; q.len()];
        self.eval(q, &mut grad);
        Ok(grad)
    }
}

/// `V ≡ 0`. Leapfrog integrates this exactly, which makes it a handy edge case.
#[derive(Debug, Clone)]
pub struct FlatModel {
    dim: usize,
}

impl FlatModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("flat model needs dimension >= 1"));
        }
        Ok(Self { dim })
    }
}

impl Target for FlatModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "flat"
    }

    fn eval(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        0.0
    }
}

/// Covariance structure of a zero-mean Gaussian target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "covariance", rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    /// Unit variances with correlation `rho`; two dimensions only.
    TwoDimCorr {
        rho: f64,
    },
    /// `Σ_ij = rho^|i-j|`.
    Banded {
        rho: f64,
    },
}

/// Zero-mean Gaussian with potential `½ qᵀ Σ⁻¹ q`, evaluated through the
/// Cholesky factor of `Σ` with two triangular solves.
#[derive(Clone)]
pub struct GaussianModel {
    dim: usize,
    covariance: Covariance,
    name: String,
    // Row-major lower-triangular factor, `Σ = L Lᵀ`. `None` for the identity.
    chol: Option<Vec<f64>>,
}

impl fmt::Debug for GaussianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianModel")
            .field("dim", &self.dim)
            .field("covariance", &self.covariance)
            .finish()
    }
}

impl GaussianModel {
    pub fn new(dim: usize, covariance: Covariance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("gaussian model needs dimension >= 1"));
        }
        let name = match covariance {
            Covariance::Identity => format!("gaussian_iid_{dim}"),
            Covariance::TwoDimCorr { rho } => {
                check_rho(rho)?;
                if dim != 2 {
                    return Err(Error::config(format!(
                        "two_dim_corr covariance requires dimension 2, got {dim}"
                    )));
                }
                format!("gaussian_2d_rho{rho}")
            }
            Covariance::Banded { rho } => {
                check_rho(rho)?;
                format!("gaussian_banded_{dim}_rho{rho}")
            }
        };
        let mut model = Self {
            dim,
            covariance,
            name,
            chol: None,
        };
        if covariance != Covariance::Identity {
            let sigma = model.covariance_matrix();
            let chol = sigma
                .cholesky()
                .ok_or_else(|| Error::config("covariance matrix is not positive definite"))?;
            let l = chol.l();
            let mut flat = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..=i {
                    flat[i * dim + j] = l[(i, j)];
                }
            }
            model.chol = Some(flat);
        }
        Ok(model)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(dim, Covariance::Identity)
    }

    pub fn covariance(&self) -> Covariance {
        self.covariance
    }

    /// Dense `Σ`.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        match self.covariance {
            Covariance::Identity => DMatrix::identity(n, n),
            Covariance::TwoDimCorr { rho } => DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            Covariance::Banded { rho } => {
                DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()))
            }
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "correlation must lie in (-1, 1), got {rho}"
        )))
    }
}

impl Target for GaussianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let Some(l) = &self.chol else {
            grad.copy_from_slice(q);
            return 0.5 * q.iter().map(|x| x * x).sum::<f64>();
        };
        let n = self.dim;
        // Forward solve L y = q; grad holds y.
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let acc: f64 = row.iter().zip(&grad[..i]).map(|(a, b)| a * b).sum();
            grad[i] = (q[i] - acc) / l[i * n + i];
        }
        let value = 0.5 * grad.iter().map(|y| y * y).sum::<f64>();
        // Back solve Lᵀ x = y in place.
        for i in (0..n).rev() {
            grad[i] /= l[i * n + i];
            let xi = grad[i];
            let row = &l[i * n..i * n + i];
            for (g, a) in grad[..i].iter_mut().zip(row) {
                *g -= a * xi;
            }
        }
        value
    }

    fn as_gaussian(&self) -> Option<&GaussianModel> {
        Some(self)
    }
}

/// Default parameters for synthetic IRT data.
pub const IRT_DEFAULT_TRUE_THETA: f64 = 0.75;
pub const IRT_DEFAULT_ABILITY_SD: f64 = 1.0;
pub const IRT_DEFAULT_PRIOR_SD: f64 = 10.0;

/// One-parameter logistic item response model,
/// `y_i ~ Bernoulli(logistic(θ - b_i))`, with independent `Normal(0, prior_sd)`
/// priors on every `b_i` and on `θ`.
///
/// Parameters are ordered `(b_1, ..., b_n, θ)`.
#[derive(Debug, Clone)]
pub struct IrtModel {
    responses: Vec<u8>,
    prior_sd: f64,
}

impl IrtModel {
    pub fn new(responses: Vec<u8>, prior_sd: f64) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::config("IRT model needs at least one student"));
        }
        if let Some(bad) = responses.iter().find(|&&y| y > 1) {
            return Err(Error::config(format!(
                "IRT responses must be 0 or 1, got {bad}"
            )));
        }
        if !(prior_sd.is_finite() && prior_sd > 0.0) {
            return Err(Error::config(format!(
                "prior_sd must be positive, got {prior_sd}"
            )));
        }
        Ok(Self {
            responses,
            prior_sd,
        })
    }

    /// Draws `b_i ~ Normal(0, ability_sd)` then `y_i ~ Bernoulli(logistic(true_theta - b_i))`
    /// from a generator seeded with `seed`.
    pub fn generate(
        n_students: usize,
        true_theta: f64,
        ability_sd: f64,
        prior_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_students == 0 {
            return Err(Error::config("n_students must be >= 1"));
        }
        if !(ability_sd.is_finite() && ability_sd > 0.0) {
            return Err(Error::config(format!(
                "ability_sd must be positive, got {ability_sd}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, ability_sd).map_err(|e| Error::config(e.to_string()))?;
        let responses = (0..n_students)
            .map(|_| {
                let b: f64 = normal.sample(&mut rng);
                u8::from(rng.random::<f64>() < logistic(true_theta - b))
            })
            .collect();
        Self::new(responses, prior_sd)
    }

    pub fn n_students(&self) -> usize {
        self.responses.len()
    }

    pub fn responses(&self) -> &[u8] {
        &self.responses
    }

    pub fn prior_sd(&self) -> f64 {
        self.prior_sd
    }

    /// Single column with a `response` header.
    pub fn write_responses_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "response")?;
        for y in &self.responses {
            writeln!(out, "{y}")?;
        }
        Ok(())
    }

    /// Reads a single column of 0/1 values. A non-numeric first line is taken as a header.
    pub fn read_responses_csv<R: BufRead>(input: R) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::config(e.to_string()))?;
            let field = line.trim().trim_matches('"');
            if field.is_empty() {
                continue;
            }
            match field {
                "0" => out.push(0),
                "1" => out.push(1),
                _ if lineno == 0 && field.parse::<f64>().is_err() => {}
                _ => {
                    return Err(Error::config(format!(
                        "line {}: expected 0 or 1, got {field:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(out)
    }
}

impl Target for IrtModel {
    fn dim(&self) -> usize {
        self.responses.len() + 1
    }

    fn name(&self) -> &str {
        "irt_1pl"
    }

    fn eval(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.responses.len();
        let theta = q[n];
        let prec = 1.0 / (self.prior_sd * self.prior_sd);
        let mut value = 0.5 * prec * theta * theta;
        let mut d_theta = prec * theta;
        for i in 0..n {
            let b = q[i];
            let x = theta - b;
            let y = self.responses[i];
            // -log p(y | x) and its derivative in x.
            value += if y == 1 { softplus(-x) } else { softplus(x) };
            let dx = logistic(x) - f64::from(y);
            d_theta += dx;
            value += 0.5 * prec * b * b;
            grad[i] = prec * b - dx;
        }
        grad[n] = d_theta;
        value
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Random point on the sphere of radius `radius`.
pub(crate) fn random_on_shell<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}
