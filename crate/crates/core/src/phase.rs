//! Phase space: positions lifted with momenta, the Euclidean-Gaussian kinetic
//! energy, the Hamiltonian and the virial.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::targets::Target;

/// A position/momentum pair `z = (q, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_dim(q.len(), p.len())?;
        Ok(Self { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `(q, -p)`. An involution.
    pub fn flip_momentum(&self) -> Self {
        Self {
            q: self.q.clone(),
            p: self.p.iter().map(|x| -x).collect(),
        }
    }

    /// `G = q · p`.
    pub fn virial(&self) -> f64 {
        dot(&self.q, &self.p)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }
}

/// Diagonal inverse mass matrix `M⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanMetric {
    inverse_mass: Vec<f64>,
}

impl EuclideanMetric {
    pub fn new(inverse_mass: Vec<f64>) -> Result<Self> {
        if inverse_mass.is_empty() {
            return Err(Error::config("metric needs at least one component"));
        }
        if let Some(bad) = inverse_mass.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::config(format!(
                "inverse_mass components must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { inverse_mass })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inverse_mass: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.inverse_mass.len()
    }

    pub fn inverse_mass(&self) -> &[f64] {
        &self.inverse_mass
    }

    pub fn is_identity(&self) -> bool {
        self.inverse_mass.iter().all(|&m| m == 1.0)
    }

    /// `½ pᵀ M⁻¹ p`.
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * self.inner(p, p)
    }

    /// `aᵀ M⁻¹ b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.inverse_mass)
            .map(|((x, y), m)| x * y * m)
            .sum()
    }

    /// Draws `p_i ~ Normal(0, 1 / inverse_mass_i)`.
    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.inverse_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect()
    }
}

/// A target paired with a metric, i.e. `H = K + V`.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    model: Arc<dyn Target>,
    metric: EuclideanMetric,
}

impl HamiltonianSystem {
    pub fn new(model: Arc<dyn Target>, metric: EuclideanMetric) -> Result<Self> {
        check_dim(model.dim(), metric.dim())?;
        Ok(Self { model, metric })
    }

    /// Identity metric.
    pub fn euclidean(model: Arc<dyn Target>) -> Self {
        let metric = EuclideanMetric::identity(model.dim());
        Self { model, metric }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn model(&self) -> &dyn Target {
        self.model.as_ref()
    }

    pub fn metric(&self) -> &EuclideanMetric {
        &self.metric
    }

    pub fn kinetic(&self, z: &PhasePoint) -> f64 {
        self.metric.kinetic(&z.p)
    }

    /// `K(p) + V(q)`. A non-finite potential propagates.
    pub fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        self.kinetic(z) + self.model.value(&z.q)
    }

    /// `dG/dt = pᵀM⁻¹p − q·∇V(q)`.
    pub fn virial_rate(&self, z: &PhasePoint) -> f64 {
        let mut grad = vec![0.0; z.dim()];
        self.model.eval(&z.q, &mut grad);
        2.0 * self.kinetic(z) - dot(&z.q, &grad)
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.metric.sample_momentum(rng)
    }

    /// Lifts `q` to a phase state with fresh momentum.
    pub fn lift<R: Rng + ?Sized>(&self, q: &[f64], rng: &mut R) -> PhaseState {
        let p = self.sample_momentum(rng);
        PhaseState::new(self, PhasePoint { q: q.to_vec(), p })
    }

    pub fn check_point(&self, z: &PhasePoint) -> Result<()> {
        check_dim(self.dim(), z.q.len())?;
        check_dim(self.dim(), z.p.len())
    }
}

/// A phase point with its potential and gradient cached, so that chained
/// leapfrog steps cost one gradient evaluation each.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub z: PhasePoint,
    pub potential: f64,
    pub grad: Vec<f64>,
    pub kinetic: f64,
}

impl PhaseState {
    /// Evaluates the gradient once.
    pub fn new(sys: &HamiltonianSystem, z: PhasePoint) -> Self {
        let mut grad = vec![0.0; z.dim()];
        let potential = sys.model().eval(&z.q, &mut grad);
        let kinetic = sys.metric().kinetic(&z.p);
        Self {
            z,
            potential,
            grad,
            kinetic,
        }
    }

    pub fn hamiltonian(&self) -> f64 {
        self.kinetic + self.potential
    }

    /// `2K − q·∇V` from the cached gradient.
    pub fn virial_rate(&self) -> f64 {
        2.0 * self.kinetic - dot(&self.z.q, &self.grad)
    }

    pub fn is_finite(&self) -> bool {
        self.hamiltonian().is_finite() && self.z.is_finite()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws momenta for a bare metric; convenience alias of
/// [`EuclideanMetric::sample_momentum`].
pub fn sample_momentum<R: Rng + ?Sized>(metric: &EuclideanMetric, rng: &mut R) -> Vec<f64> {
    metric.sample_momentum(rng)
}
