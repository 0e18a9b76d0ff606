//! Leapfrog integration and divergence detection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{HamiltonianSystem, PhasePoint, PhaseState};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub epsilon: f64,
    pub divergence_threshold: f64,
    /// Flag only energy drops, `H(z0) - H(z) > threshold`, instead of `|ΔH|`.
    pub signed_divergence: bool,
}

impl StepConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            signed_divergence: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.divergence_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "step size must be positive, got {}",
                self.epsilon
            )));
        }
        // A zero threshold is allowed: it rejects every move.
        if self.divergence_threshold.is_nan() || self.divergence_threshold < 0.0 {
            return Err(Error::config(format!(
                "divergence threshold must be non-negative, got {}",
                self.divergence_threshold
            )));
        }
        Ok(())
    }
}

/// One leapfrog step of signed size `epsilon` from a cached state.
///
/// Costs exactly one gradient evaluation. A non-finite intermediate shows up as a
/// non-finite Hamiltonian on the returned state.
pub fn leapfrog(sys: &HamiltonianSystem, state: &PhaseState, epsilon: f64) -> PhaseState {
    let half = 0.5 * epsilon;
    let inv_mass = sys.metric().inverse_mass();
    let mut p: Vec<f64> = state
        .z
        .p
        .iter()
        .zip(&state.grad)
        .map(|(p, g)| p - half * g)
        .collect();
    let q: Vec<f64> = state
        .z
        .q
        .iter()
        .zip(&p)
        .zip(inv_mass)
        .map(|((q, p), m)| q + epsilon * m * p)
        .collect();
    let mut grad = vec![0.0; q.len()];
    let potential = sys.model().eval(&q, &mut grad);
    for (p, g) in p.iter_mut().zip(&grad) {
        *p -= half * g;
    }
    let kinetic = sys.metric().kinetic(&p);
    PhaseState {
        z: PhasePoint { q, p },
        potential,
        grad,
        kinetic,
    }
}

/// Uncached single step; evaluates the gradient at `z` and at the new point.
pub fn leapfrog_step(sys: &HamiltonianSystem, z: &PhasePoint, epsilon: f64) -> PhasePoint {
    leapfrog(sys, &PhaseState::new(sys, z.clone()), epsilon).z
}

/// True when the energy error exceeds the threshold or `h` is not finite.
pub fn check_divergence(h0: f64, h: f64, cfg: &StepConfig) -> bool {
    if !h.is_finite() {
        return true;
    }
    if cfg.signed_divergence {
        h0 - h > cfg.divergence_threshold
    } else {
        (h - h0).abs() > cfg.divergence_threshold
    }
}

/// Closed-form Hamiltonian flow of a Gaussian target under the identity metric.
///
/// In the eigenbasis of `Σ⁻¹` every coordinate pair rotates with angular
/// frequency `√λ`.
#[derive(Debug, Clone)]
pub struct GaussianFlow {
    basis: DMatrix<f64>,
    omega: Vec<f64>,
}

impl GaussianFlow {
    pub fn new(sys: &HamiltonianSystem) -> Result<Self> {
        let model = sys
            .model()
            .as_gaussian()
            .ok_or_else(|| Error::Unsupported("exact flow needs a Gaussian target".into()))?;
        if !sys.metric().is_identity() {
            return Err(Error::Unsupported(
                "exact flow needs the identity metric".into(),
            ));
        }
        let precision = model
            .covariance_matrix()
            .cholesky()
            .ok_or_else(|| Error::config("covariance is not positive definite"))?
            .inverse();
        let eig = SymmetricEigen::new(precision);
        Ok(Self {
            basis: eig.eigenvectors,
            omega: eig.eigenvalues.iter().map(|l| l.sqrt()).collect(),
        })
    }

    /// Angular frequencies of the normal modes.
    pub fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    pub fn at(&self, z: &PhasePoint, t: f64) -> PhasePoint {
        let x = self.basis.transpose() * DVector::from_column_slice(&z.q);
        let y = self.basis.transpose() * DVector::from_column_slice(&z.p);
        let mut xt = x.clone();
        let mut yt = y.clone();
        for (k, &w) in self.omega.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            xt[k] = x[k] * c + y[k] / w * s;
            yt[k] = -x[k] * w * s + y[k] * c;
        }
        let q = &self.basis * xt;
        let p = &self.basis * yt;
        PhasePoint {
            q: q.iter().copied().collect(),
            p: p.iter().copied().collect(),
        }
    }
}

pub fn exact_gaussian_flow(sys: &HamiltonianSystem, z: &PhasePoint, t: f64) -> Result<PhasePoint> {
    Ok(GaussianFlow::new(sys)?.at(z, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Covariance, FlatModel, GaussianModel, IrtModel, Target};
    use crate::EuclideanMetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn sys_of(model: impl Target + 'static) -> HamiltonianSystem {
        HamiltonianSystem::euclidean(Arc::new(model))
    }

    fn point(q: &[f64], p: &[f64]) -> PhasePoint {
        PhasePoint::new(q.to_vec(), p.to_vec()).unwrap()
    }

    fn systems() -> Vec<HamiltonianSystem> {
        vec![
            sys_of(GaussianModel::identity(3).unwrap()),
            sys_of(GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.99 }).unwrap()),
            sys_of(GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.7 }).unwrap()),
            sys_of(GaussianModel::new(5, Covariance::Banded { rho: 0.95 }).unwrap()),
            sys_of(IrtModel::generate(10, 0.75, 1.0, 10.0, 4).unwrap()),
        ]
    }

    fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> PhasePoint {
        let q = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        PhasePoint { q, p }
    }

    #[test]
    fn hand_evaluated_step() {
        let sys = sys_of(GaussianModel::identity(1).unwrap());
        let z = leapfrog_step(&sys, &point(&[1.0], &[0.0]), 0.1);
        // p½ = -0.05, q' = 0.995, p' = -0.05 - 0.05·0.995
        assert!((z.q[0] - 0.995).abs() < 1e-15);
        assert!((z.p[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn free_particle_moves_in_straight_lines() {
        let model = FlatModel::new(2).unwrap();
        let sys = HamiltonianSystem::new(
            Arc::new(model),
            EuclideanMetric::new(vec![2.0, 0.5]).unwrap(),
        )
        .unwrap();
        let z = leapfrog_step(&sys, &point(&[1.0, -1.0], &[0.3, 0.4]), 0.5);
        assert_eq!(z.q, vec![1.0 + 0.5 * 2.0 * 0.3, -1.0 + 0.5 * 0.5 * 0.4]);
        assert_eq!(z.p, vec![0.3, 0.4]);
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sys in systems() {
            for _ in 0..100 {
                let z = random_point(sys.dim(), &mut rng);
                let back = leapfrog_step(&sys, &leapfrog_step(&sys, &z, 0.1), -0.1);
                for (a, b) in back.q.iter().chain(&back.p).zip(z.q.iter().chain(&z.p)) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn cached_and_uncached_steps_agree() {
        let sys = sys_of(GaussianModel::new(4, Covariance::Banded { rho: 0.9 }).unwrap());
        let z = point(&[0.1, 0.2, 0.3, 0.4], &[1.0, -1.0, 0.5, 0.0]);
        let cached = leapfrog(&sys, &PhaseState::new(&sys, z.clone()), 0.2);
        assert_eq!(cached.z, leapfrog_step(&sys, &z, 0.2));
        assert_eq!(cached, PhaseState::new(&sys, cached.z.clone()));
    }

    #[test]
    fn divergence_examples() {
        let cfg = StepConfig::new(0.1).unwrap();
        assert!(!check_divergence(0.0, 500.0, &cfg));
        assert!(check_divergence(0.0, 1001.0, &cfg));
        assert!(check_divergence(0.0, f64::NAN, &cfg));
        assert!(check_divergence(0.0, -1001.0, &cfg));
        let signed = StepConfig {
            signed_divergence: true,
            ..cfg
        };
        assert!(!check_divergence(0.0, 1001.0, &signed));
        assert!(check_divergence(0.0, -1001.0, &signed));
    }

    #[test]
    fn step_config_validation() {
        assert!(StepConfig::new(0.0).is_err());
        assert!(StepConfig::new(-0.1).is_err());
        assert!(StepConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn exact_flow_examples() {
        let sys = sys_of(GaussianModel::identity(1).unwrap());
        let z = point(&[1.0], &[0.0]);
        let full = exact_gaussian_flow(&sys, &z, 2.0 * PI).unwrap();
        assert!((full.q[0] - 1.0).abs() < 1e-10 && full.p[0].abs() < 1e-10);
        let quarter = exact_gaussian_flow(&sys, &z, PI / 2.0).unwrap();
        assert!(quarter.q[0].abs() < 1e-10 && (quarter.p[0] + 1.0).abs() < 1e-10);

        let sys = sys_of(GaussianModel::new(4, Covariance::Banded { rho: 0.8 }).unwrap());
        let flow = GaussianFlow::new(&sys).unwrap();
        let z = point(&[0.2, -0.4, 1.0, 0.3], &[1.0, 0.0, -0.5, 0.1]);
        let back = flow.at(&flow.at(&z, 1.7), -1.7);
        for (a, b) in back.q.iter().chain(&back.p).zip(z.q.iter().chain(&z.p)) {
            assert!((a - b).abs() < 1e-10);
        }
        // Exact flow conserves H.
        let h0 = sys.hamiltonian(&z);
        assert!((sys.hamiltonian(&flow.at(&z, 3.3)) - h0).abs() < 1e-10);
    }

    #[test]
    fn exact_flow_rejects_non_gaussian() {
        let sys = sys_of(IrtModel::generate(3, 0.0, 1.0, 10.0, 1).unwrap());
        assert!(matches!(
            exact_gaussian_flow(&sys, &point(&[0.0; 4], &[0.0; 4]), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn leapfrog_tracks_exact_flow() {
        let sys = sys_of(GaussianModel::identity(1).unwrap());
        let flow = GaussianFlow::new(&sys).unwrap();
        let z0 = point(&[1.0], &[0.3]);
        let eps = 0.01;
        let mut state = PhaseState::new(&sys, z0.clone());
        let steps = (2.0 * PI / eps).ceil() as usize;
        let mut worst: f64 = 0.0;
        for k in 1..=steps {
            state = leapfrog(&sys, &state, eps);
            let exact = flow.at(&z0, k as f64 * eps);
            worst = worst
                .max((state.z.q[0] - exact.q[0]).abs())
                .max((state.z.p[0] - exact.p[0]).abs());
        }
        assert!(worst < 1e-3, "sup error {worst}");
    }

    #[test]
    fn virial_rate_matches_flow_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let eps = 1e-4;
        for sys in systems() {
            for _ in 0..100 {
                let z = random_point(sys.dim(), &mut rng);
                let fwd = leapfrog_step(&sys, &z, eps).virial();
                let bwd = leapfrog_step(&sys, &z, -eps).virial();
                let fd = (fwd - bwd) / (2.0 * eps);
                let exact = sys.virial_rate(&z);
                assert!(
                    (fd - exact).abs() < 1e-6 * (1.0 + exact.abs()),
                    "{fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn energy_error_stays_bounded() {
        let sys = sys_of(GaussianModel::identity(10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z0 = random_point(10, &mut rng);
        let mut state = PhaseState::new(&sys, z0);
        let h0 = state.hamiltonian();
        let eps = 0.1;
        let period = (2.0 * PI / eps).ceil() as usize;
        let mut first_period: f64 = 0.0;
        let mut overall: f64 = 0.0;
        for k in 1..=10_000 {
            state = leapfrog(&sys, &state, eps);
            let err = (state.hamiltonian() - h0).abs();
            if k <= period {
                first_period = first_period.max(err);
            }
            overall = overall.max(err);
        }
        assert!(
            overall <= 10.0 * first_period,
            "{overall} vs {first_period}"
        );
    }
}
