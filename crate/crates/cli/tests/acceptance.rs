//! Acceptance suite: fifteen criteria, one `PASS`/`FAIL` line each.
//!
//! Runs without the libtest harness so every line reaches stdout. Exits
//! non-zero if any criterion fails. Statistical checks use fixed seeds and the
//! configs shipped in `configs/`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xhmc_cli::commands::{cmd_benchmark, cmd_sample, cmd_scan, cmd_trace, Overrides, SampleReport};
use xhmc_cli::config::{load_run_config, load_suite_config};
use xhmc_core::chain::{run_chain, Algorithm, Init, SamplerConfig};
use xhmc_core::diagnostics::{ess, summarize};
use xhmc_core::integrator::{exact_gaussian_flow, leapfrog, leapfrog_step, StepConfig};
use xhmc_core::targets::Covariance;
use xhmc_core::termination::{
    merge_stats, segment_stats_single, SegmentStats, TerminationCriterion,
};
use xhmc_core::trajectory::{dynamic_trajectory, Choices, DynamicOptions, StateSampler};
use xhmc_core::{
    FlatModel, GaussianModel, HamiltonianSystem, IrtModel, PhasePoint, PhaseState, Target,
};

type Verdict = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Verdict);

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn models() -> Vec<Arc<dyn Target>> {
    vec![
        Arc::new(FlatModel::new(3).unwrap()),
        Arc::new(GaussianModel::identity(5).unwrap()),
        Arc::new(GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.7 }).unwrap()),
        Arc::new(GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.99 }).unwrap()),
        Arc::new(GaussianModel::new(10, Covariance::Banded { rho: 0.95 }).unwrap()),
        Arc::new(IrtModel::generate(20, 0.75, 1.0, 10.0, 3).unwrap()),
    ]
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> PhasePoint {
    PhasePoint::new(normals(dim, rng), normals(dim, rng)).unwrap()
}

fn flat(z: &PhasePoint) -> Vec<f64> {
    z.q.iter().chain(&z.p).copied().collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c01_reversibility() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for model in models() {
        let sys = HamiltonianSystem::euclidean(model);
        for _ in 0..100 {
            let z = random_point(sys.dim(), &mut rng);
            let once = leapfrog_step(&sys, &z, 0.1).flip_momentum();
            let back = leapfrog_step(&sys, &once, 0.1).flip_momentum();
            worst = worst.max(max_abs_diff(&flat(&z), &flat(&back)));
        }
    }
    Ok((worst < 1e-10, format!("max error {worst:.2e} (< 1e-10)")))
}

fn c02_symplecticity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for model in models() {
        let sys = HamiltonianSystem::euclidean(model);
        let n = sys.dim();
        for _ in 0..3 {
            let base = flat(&random_point(n, &mut rng));
            let step = |v: &[f64]| {
                let z = PhasePoint::new(v[..n].to_vec(), v[n..].to_vec()).unwrap();
                flat(&leapfrog_step(&sys, &z, 0.2))
            };
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for j in 0..2 * n {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[j] += h;
                minus[j] -= h;
                let (fp, fm) = (step(&plus), step(&minus));
                for i in 0..2 * n {
                    jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            worst = worst.max((jac.determinant() - 1.0).abs());
        }
    }
    Ok((worst < 1e-6, format!("max |det - 1| {worst:.2e} (< 1e-6)")))
}

fn max_energy_error(sys: &HamiltonianSystem, z: &PhasePoint, eps: f64, time: f64) -> f64 {
    let h0 = sys.hamiltonian(z);
    let mut cur = z.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..(time / eps).round() as usize {
        cur = leapfrog_step(sys, &cur, eps);
        worst = worst.max((sys.hamiltonian(&cur) - h0).abs());
    }
    worst
}

fn c03_second_order() -> Verdict {
    let model = GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.7 }).unwrap();
    let sys = HamiltonianSystem::euclidean(Arc::new(model));
    let z = PhasePoint::new(vec![1.0, -0.5], vec![0.3, 0.8]).unwrap();
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            max_energy_error(&sys, &z, eps, 4.0) / max_energy_error(&sys, &z, eps / 2.0, 4.0)
        })
        .collect();
    let ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    Ok((ok, format!("ratios {ratios:.3?} (in [3, 5])")))
}

fn c04_exact_flow() -> Verdict {
    let sys = HamiltonianSystem::euclidean(Arc::new(GaussianModel::identity(1).unwrap()));
    let z0 = PhasePoint::new(vec![1.0], vec![0.0]).unwrap();
    let eps = 0.01;
    let mut cur = z0.clone();
    let mut worst: f64 = 0.0;
    for k in 1..=(2.0 * std::f64::consts::PI / eps).ceil() as usize {
        cur = leapfrog_step(&sys, &cur, eps);
        let exact = exact_gaussian_flow(&sys, &z0, k as f64 * eps)?;
        worst = worst.max(max_abs_diff(&flat(&cur), &flat(&exact)));
    }
    Ok((worst < 1e-3, format!("sup error {worst:.2e} (< 1e-3)")))
}

fn c05_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for model in models() {
        for _ in 0..50 {
            let mut q: Vec<f64> = (0..model.dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let g = model.gradient(&q)?;
            for i in 0..q.len() {
                let h = 1e-5 * (1.0 + q[i].abs());
                let orig = q[i];
                q[i] = orig + h;
                let up = model.value(&q);
                q[i] = orig - h;
                let down = model.value(&q);
                q[i] = orig;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((g[i] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    Ok((
        worst < 1e-5,
        format!("max relative error {worst:.2e} (< 1e-5)"),
    ))
}

/// Replays a decision prefix, then takes `false`, logging each decision.
struct Scripted {
    prefix: Vec<bool>,
    taken: Vec<(bool, f64, bool)>, // (decision, P[true], is_direction)
}

impl Scripted {
    fn decide(&mut self, p_true: f64, is_direction: bool) -> bool {
        let d = self.prefix.get(self.taken.len()).copied().unwrap_or(false);
        self.taken.push((d, p_true, is_direction));
        d
    }
}

impl Choices for Scripted {
    fn forward(&mut self) -> bool {
        self.decide(0.5, true)
    }
    fn bernoulli(&mut self, p: f64) -> bool {
        self.decide(p, false)
    }
    fn unit(&mut self) -> f64 {
        unreachable!("multinomial transitions draw no uniforms")
    }
    fn index(&mut self, _: usize) -> usize {
        unreachable!("multinomial transitions draw no indices")
    }
}

type Law = BTreeMap<Vec<bool>, BTreeMap<Vec<u64>, f64>>;

fn bits(q: &[f64]) -> Vec<u64> {
    q.iter().map(|x| x.to_bits()).collect()
}

fn enumerate(run: &dyn Fn(&mut Scripted) -> Vec<u64>, prefix: Vec<bool>, law: &mut Law) {
    let mut s = Scripted {
        prefix: prefix.clone(),
        taken: Vec::new(),
    };
    let proposal = run(&mut s);
    let mut prob = 1.0;
    let mut directions = Vec::new();
    for &(d, p, is_dir) in &s.taken {
        if is_dir {
            directions.push(d);
        } else {
            prob *= if d { p } else { 1.0 - p };
        }
    }
    *law.entry(directions)
        .or_default()
        .entry(proposal)
        .or_default() += prob;
    for i in prefix.len()..s.taken.len() {
        let (d, p, is_dir) = s.taken[i];
        if !is_dir && (if d { 1.0 - p } else { p }) == 0.0 {
            continue;
        }
        let mut next: Vec<bool> = s.taken[..i].iter().map(|t| t.0).collect();
        next.push(!d);
        enumerate(run, next, law);
    }
}

fn c06_tree_weights() -> Verdict {
    let model = GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.7 }).unwrap();
    let sys = HamiltonianSystem::euclidean(Arc::new(model));
    let eps = 0.45;
    let step = StepConfig::new(eps)?;
    let z0 = PhaseState::new(&sys, PhasePoint::new(vec![0.8, -1.1], vec![1.3, 0.4])?);
    let mut worst: f64 = 0.0;
    let mut sequences = 0;
    for depth in 1..=4u32 {
        let opts = DynamicOptions {
            criterion: TerminationCriterion::StaticOnly,
            max_depth: depth,
            sampler: StateSampler::Multinomial,
        };
        let run = |s: &mut Scripted| {
            bits(dynamic_trajectory(&sys, z0.clone(), &opts, &step, s).position())
        };
        let mut law = Law::new();
        enumerate(&run, Vec::new(), &mut law);
        if law.len() != 1 << depth {
            return Ok((
                false,
                format!("depth {depth}: {} direction sequences", law.len()),
            ));
        }
        for (directions, proposals) in &law {
            sequences += 1;
            let (mut back, mut fwd) = (0usize, 0usize);
            for (level, &d) in directions.iter().enumerate() {
                if d {
                    fwd += 1 << level;
                } else {
                    back += 1 << level;
                }
            }
            let mut leaves = vec![z0.clone()];
            for (dir, count) in [(1.0, fwd), (-1.0, back)] {
                let mut cur = z0.clone();
                for _ in 0..count {
                    cur = leapfrog(&sys, &cur, dir * eps);
                    leaves.push(cur.clone());
                }
            }
            let h_min = leaves
                .iter()
                .map(|s| s.hamiltonian())
                .fold(f64::INFINITY, f64::min);
            let total: f64 = leaves.iter().map(|s| (h_min - s.hamiltonian()).exp()).sum();
            let mut covered = 0.0;
            for s in &leaves {
                let got = proposals.get(&bits(&s.z.q)).copied().unwrap_or(0.0);
                worst = worst.max((got - (h_min - s.hamiltonian()).exp() / total).abs());
                covered += got;
            }
            worst = worst.max((covered - 1.0).abs());
        }
    }
    Ok((
        worst < 1e-12,
        format!("{sequences} direction sequences, max error {worst:.2e} (< 1e-12)"),
    ))
}

fn stats_distance(a: &SegmentStats, b: &SegmentStats, scale: f64) -> f64 {
    let rho = a
        .rho
        .iter()
        .zip(&b.rho)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max);
    let lw = (a.log_weight - b.log_weight).abs() / (1.0 + a.log_weight.abs());
    let vr = (a.mean_virial_rate() - b.mean_virial_rate()).abs() / (1.0 + scale);
    let n = if a.n_states == b.n_states {
        0.0
    } else {
        f64::INFINITY
    };
    rho.max(lw).max(vr).max(n)
}

fn c07_merge() -> Verdict {
    let model = GaussianModel::new(3, Covariance::Banded { rho: 0.8 }).unwrap();
    let sys = HamiltonianSystem::euclidean(Arc::new(model));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let segment = |rng: &mut ChaCha8Rng| -> (SegmentStats, f64) {
        let len = rng.random_range(1..6);
        let mut stats = SegmentStats::empty(3);
        let mut abs_rate = 0.0;
        let mut weight = 0.0;
        for _ in 0..len {
            let scale = rng.random_range(0.2..3.0);
            let q: Vec<f64> = normals(3, rng).iter().map(|x| x * scale).collect();
            let s = PhaseState::new(&sys, PhasePoint::new(q, normals(3, rng)).unwrap());
            let w = (-s.hamiltonian()).exp();
            abs_rate += w * s.virial_rate().abs();
            weight += w;
            stats = merge_stats(&stats, &segment_stats_single(&s));
        }
        (stats, abs_rate / weight)
    };
    for _ in 0..500 {
        let (a, sa) = segment(&mut rng);
        let (b, sb) = segment(&mut rng);
        let (c, sc) = segment(&mut rng);
        let scale = sa.max(sb).max(sc) * 3.0;
        worst = worst.max(stats_distance(
            &merge_stats(&a, &b),
            &merge_stats(&b, &a),
            scale,
        ));
        worst = worst.max(stats_distance(
            &merge_stats(&merge_stats(&a, &b), &c),
            &merge_stats(&a, &merge_stats(&b, &c)),
            scale,
        ));
        worst = worst.max(stats_distance(
            &merge_stats(&a, &SegmentStats::empty(3)),
            &a,
            scale,
        ));
    }
    Ok((
        worst < 1e-10,
        format!("max discrepancy {worst:.2e} (< 1e-10)"),
    ))
}

fn c08_stationarity() -> Verdict {
    let model = GaussianModel::new(2, Covariance::TwoDimCorr { rho: 0.7 }).unwrap();
    let sys = HamiltonianSystem::euclidean(Arc::new(model));
    let sigma = [[1.0, 0.7], [0.7, 1.0]];
    let algorithms = [
        (
            "static_metropolis",
            Algorithm::StaticMetropolis { steps: 6 },
        ),
        ("static_uniform", Algorithm::StaticUniform { steps: 6 }),
        (
            "nuts",
            Algorithm::Dynamic(DynamicOptions {
                sampler: StateSampler::Slice,
                ..DynamicOptions::new(TerminationCriterion::NoUTurn)
            }),
        ),
        (
            "xhmc(0.1)",
            Algorithm::Dynamic(DynamicOptions::new(TerminationCriterion::exhaustion(0.1))),
        ),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, algorithm) in algorithms {
        let mut cfg = SamplerConfig::new(algorithm, StepConfig::new(0.3)?, 20_000, 8);
        cfg.num_warmup = 100;
        cfg.init = Init::Radius(1.0);
        let out = run_chain(&sys, &cfg, 0)?;
        let s = summarize(&out);
        let mut z_max: f64 = 0.0;
        for p in &s.parameters {
            let se = p.se.context("no ESS")?;
            z_max = z_max.max(p.mean.abs() / se);
        }
        let cols = [out.parameter(0), out.parameter(1)];
        let means = [s.parameters[0].mean, s.parameters[1].mean];
        let n = cols[0].len() as f64;
        let mut rel_max: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let cov = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                rel_max = rel_max.max((cov - sigma[i][j]).abs() / sigma[i][j]);
            }
        }
        ok &= z_max < 4.0 && rel_max < 0.1;
        notes.push(format!(
            "{name} |mean|/SE {z_max:.2} cov rel err {rel_max:.3}"
        ));
    }
    Ok((ok, notes.join("; ")))
}

/// One NUTS run on the 100-dimensional standard Gaussian, shared by two criteria.
fn iid100_nuts() -> &'static std::result::Result<SampleReport, String> {
    static RUN: OnceLock<std::result::Result<SampleReport, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let run = || -> Result<SampleReport> {
            let loaded = load_run_config(&configs().join("iid100_nuts.toml"))?;
            let dir = tempfile::tempdir()?;
            let ov = Overrides {
                out_dir: Some(dir.path().to_path_buf()),
                seed: None,
            };
            cmd_sample(&loaded, &ov)
        };
        run().map_err(|e| format!("{e:#}"))
    })
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

fn c09_energy_marginal() -> Verdict {
    let report = iid100_nuts().as_ref().map_err(|e| anyhow!("{e}"))?;
    // KS assumes independent samples; every 4th energy is close to that.
    let energies: Vec<f64> = report
        .outputs
        .iter()
        .flat_map(|o| o.energies().into_iter().skip(3).step_by(4))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let direct: Vec<f64> = (0..2000)
        .map(|_| 0.5 * normals(200, &mut rng).iter().map(|x| x * x).sum::<f64>())
        .collect();
    let (d, p) = ks_two_sample(energies.clone(), direct);
    Ok((
        p > 1e-3,
        format!(
            "{} thinned chain energies, KS D {d:.4}, p {p:.3} (> 0.001)",
            energies.len()
        ),
    ))
}

fn c10_ess_ar1() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut values = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let innovation = (1.0f64 - 0.25).sqrt();
        let mut x = rng.sample::<f64, _>(StandardNormal);
        let series: Vec<f64> = (0..10_000)
            .map(|_| {
                x = 0.5 * x + innovation * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let e = ess(&series).context("ESS undefined")?;
        worst = worst.max((e - 10_000.0 / 3.0).abs() / (10_000.0 / 3.0));
        values.push(e.round());
    }
    Ok((
        worst < 0.2,
        format!("ESS {values:?}, max rel err {worst:.3} (< 0.2 of 3333)"),
    ))
}

fn c11_iid_optimum() -> Verdict {
    let loaded = load_run_config(&configs().join("iid100_scan.toml"))?;
    let dir = tempfile::tempdir()?;
    let ov = Overrides {
        out_dir: Some(dir.path().to_path_buf()),
        seed: None,
    };
    let scan = cmd_scan(&loaded, None, None, &ov)?;
    let best = scan
        .rows
        .iter()
        .filter_map(|r| r.ess_per_gradient.map(|e| (r.l, e)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .context("no ESS in scan")?;
    let report = iid100_nuts().as_ref().map_err(|e| anyhow!("{e}"))?;
    let mut depths: BTreeMap<u32, usize> = BTreeMap::new();
    for r in report.outputs.iter().flat_map(|o| &o.records) {
        *depths.entry(r.tree_depth).or_default() += 1;
    }
    let modal = depths
        .iter()
        .max_by_key(|(_, c)| **c)
        .map(|(d, _)| 1u64 << d)
        .unwrap_or(0);
    let ok = [32, 64, 128].contains(&best.0) && [32, 64].contains(&modal);
    Ok((
        ok,
        format!(
            "ESS/gradient peaks at L = {} ({:.4}); NUTS modal 2^depth = {modal}",
            best.0, best.1
        ),
    ))
}

/// Least-squares slope of `log2(median ESS)` against `log2 L` over `lo..=hi`.
fn log_slope(rows: &[(usize, f64)], lo: u32, hi: u32) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(l, _)| (1usize << lo..=1usize << hi).contains(l))
        .map(|&(l, e)| ((l as f64).log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn c12_two_regimes() -> Verdict {
    let loaded = load_run_config(&configs().join("corr100_scan.toml"))?;
    let dir = tempfile::tempdir()?;
    let ov = Overrides {
        out_dir: Some(dir.path().to_path_buf()),
        seed: None,
    };
    let scan = cmd_scan(&loaded, Some(4), Some(9), &ov)?;
    let rows: Vec<(usize, f64)> = scan
        .rows
        .iter()
        .filter_map(|r| r.median_ess.map(|e| (r.l, e)))
        .collect();
    let short = log_slope(&rows, 4, 6).context("too few cells in [2^4, 2^6]")?;
    let long = log_slope(&rows, 7, 9).context("too few cells in [2^7, 2^9]")?;
    Ok((
        long * 1.5 <= short,
        format!("log2 ESS slope {short:.3} over [2^4, 2^6], {long:.3} over [2^7, 2^9]"),
    ))
}

fn crossing_times(config: &str) -> Result<(f64, f64)> {
    let loaded = load_run_config(&configs().join(config))?;
    let dir = tempfile::tempdir()?;
    let ov = Overrides {
        out_dir: Some(dir.path().to_path_buf()),
        seed: None,
    };
    let c = cmd_trace(&loaded, None, None, &ov)?.summary.crossings;
    let nuts = c.nuts_time.context("no No-U-Turn crossing")?;
    let exhaustion = c
        .exhaustion
        .iter()
        .find(|x| x.delta == 0.1)
        .and_then(|x| x.time)
        .context("no exhaustion(0.1) crossing")?;
    Ok((nuts, exhaustion))
}

fn c13_criterion_ordering() -> Verdict {
    let (high_nuts, high_x) = crossing_times("gauss_high_trace.toml")?;
    let (low_nuts, low_x) = crossing_times("gauss_low_trace.toml")?;
    Ok((
        high_nuts < high_x && low_nuts > low_x,
        format!(
            "rho 0.99: nuts {high_nuts:.3} < exhaustion {high_x:.3}; \
             rho 0.7: nuts {low_nuts:.3} > exhaustion {low_x:.3}"
        ),
    ))
}

fn benchmark(config: &str) -> Result<xhmc_cli::commands::BenchmarkReport> {
    let (suite, base) = load_suite_config(&configs().join(config))?;
    let dir = tempfile::tempdir()?;
    let ov = Overrides {
        out_dir: Some(dir.path().to_path_buf()),
        seed: None,
    };
    let report = cmd_benchmark(&suite, &base, &ov)?;
    if let Some(bad) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(anyhow!("{} failed: {:?}", bad.algorithm, bad.error));
    }
    Ok(report)
}

fn c14_cost_tradeoff() -> Verdict {
    let report = benchmark("benchmark_corr100.toml")?;
    let coarse = report
        .row("corr100", "xhmc(0.1)")
        .context("missing xhmc(0.1)")?;
    let fine = report
        .row("corr100", "xhmc(0.01)")
        .context("missing xhmc(0.01)")?;
    let cost = fine.total_leapfrog as f64 / coarse.total_leapfrog as f64;
    let gain = fine.median_ess.context("no ESS")? / coarse.median_ess.context("no ESS")?;
    Ok((
        cost >= 4.0 && gain <= cost,
        format!("leapfrog ratio {cost:.2} (>= 4), median ESS ratio {gain:.2} (<= {cost:.2})"),
    ))
}

fn c15_irt_ordering() -> Verdict {
    let report = benchmark("benchmark_irt.toml")?;
    let nuts = report
        .row("irt", "nuts")
        .and_then(|r| r.median_ess)
        .context("missing nuts")?;
    let xhmc = report
        .row("irt", "xhmc(0.1)")
        .and_then(|r| r.median_ess)
        .context("missing xhmc(0.1)")?;
    Ok((
        xhmc > nuts,
        format!("median ESS xhmc(0.1) {xhmc:.1} > nuts {nuts:.1}"),
    ))
}

fn main() {
    let criteria: [Criterion; 15] = [
        ("leapfrog reversibility", c01_reversibility),
        ("symplecticity", c02_symplecticity),
        ("second-order energy error", c03_second_order),
        ("exact-flow tracking", c04_exact_flow),
        ("gradient checks", c05_gradients),
        ("tree-weight exactness", c06_tree_weights),
        ("merge associativity and commutativity", c07_merge),
        ("stationarity", c08_stationarity),
        ("energy marginal", c09_energy_marginal),
        ("ESS estimator", c10_ess_ar1),
        ("IID optimum", c11_iid_optimum),
        ("two-regime scan", c12_two_regimes),
        ("criterion ordering", c13_criterion_ordering),
        ("cost/ESS tradeoff", c14_cost_tradeoff),
        ("IRT ordering", c15_irt_ordering),
    ];
    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        passed += usize::from(ok);
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
