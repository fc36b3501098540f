//! Built-in self-check suite: the subspace identities of the conditioned
//! basis, integrator order, particle-filter sanity against a Kalman filter,
//! and the filter's bookkeeping invariants.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditioning::{svd_condition, ConditionedBasis};
use crate::error::Result;
use crate::filter::{
    normalize_and_estimate, AugmentedModel, FilterSettings, ParticleFilter, ParticleSet, ResamplePolicy,
    WalkScaling,
};
use crate::harness::{
    offline_pipeline, run_online_scenario, scenario_filter, simulate_scenario, OfflineArtifacts, ScenarioConfig,
};
use crate::models::{rk4_step, StaticLinearSystem};
use crate::quadrature::for_each_node;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// Quadrature resolution used by the subspace checks.
pub const QUADRATURE_POINTS: usize = 20001;

/// Largest orthonormality defect of the rank-`M` bases, `M = 1..=max_rank`.
pub fn max_orthonormality_defect(art: &OfflineArtifacts, max_rank: usize, points: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for m in 1..=max_rank {
        worst = worst.max(svd_condition(&art.stack, m)?.orthonormality_defect(points)?);
    }
    Ok(worst)
}

/// Relative gap `|∫(Ξ̂ − Ξ̂^(M))² − ‖w − Z_M v‖²| / ‖w − Z_M v‖²` for one pair.
pub fn l2_equality_gap(basis: &ConditionedBasis, w: &DVector<f64>, v: &DVector<f64>, points: usize) -> Result<f64> {
    let spec = basis.spec();
    let lifted = basis.lift(v)?;
    let diff = w - &lifted;
    let exact = diff.norm_squared();
    let mut phi = vec![0.0; spec.count()];
    let mut integral = 0.0;
    for_each_node(spec.domain(), points, |x, weight| {
        spec.fill_basis_unchecked(x, &mut phi);
        let d: f64 = phi.iter().zip(diff.iter()).map(|(p, c)| p * c).sum();
        integral += weight * d * d;
    })?;
    Ok((integral - exact).abs() / exact)
}

/// Largest L² equality gap over `pairs` random `(w, v)` draws on a rank-`m` basis.
pub fn max_l2_equality_gap(art: &OfflineArtifacts, m: usize, pairs: usize, seed: u64, points: usize) -> Result<f64> {
    let basis = svd_condition(&art.stack, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = art.spec.count();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let w = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let v = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        worst = worst.max(l2_equality_gap(&basis, &w, &v, points)?);
    }
    Ok(worst)
}

/// Largest `subspace_distance(w_j, Z_Mᵀ w_j) / ‖w_j‖²` at `M = min(J, N)`.
pub fn max_recovery_gap(art: &OfflineArtifacts) -> Result<f64> {
    let m = art.stack.realizations().min(art.spec.count());
    let basis = svd_condition(&art.stack, m)?;
    let mut worst: f64 = 0.0;
    for model in &art.models {
        let w = model.w();
        let v = basis.project(w)?;
        worst = worst.max(basis.subspace_distance(w, &v)? / w.norm_squared());
    }
    Ok(worst)
}

/// Global error at `t = 1` of RK4 on `ẋ = −x`, `x(0) = 1`, for each step.
pub fn rk4_global_errors(steps: &[f64]) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|&dt| {
            let n = (1.0 / dt).round() as usize;
            let mut x = vec![1.0];
            for _ in 0..n {
                x = rk4_step(|s: &[f64]| Ok(vec![-s[0]]), &x, dt)?;
            }
            Ok((x[0] - (-1.0f64).exp()).abs())
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Settings of the static linear-Gaussian comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianSetup {
    pub np: usize,
    pub steps: usize,
    /// Measurement-noise variance.
    pub r: f64,
    /// State random-walk variance shared by filter and Kalman oracle.
    pub q: f64,
    pub prior_var: f64,
}

impl Default for LinearGaussianSetup {
    fn default() -> Self {
        Self {
            np: 500,
            steps: 500,
            r: 0.25,
            q: 1e-6,
            prior_var: 1.0,
        }
    }
}

/// Root-mean-square error of the posterior mean of the particle filter and
/// of the Kalman filter on the same data, pooled over steps and seeds.
pub fn particle_vs_kalman(setup: &LinearGaussianSetup, seeds: &[u64]) -> Result<(f64, f64)> {
    let mut pf_sq = 0.0;
    let mut kf_sq = 0.0;
    let mut count = 0.0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = setup.prior_var.sqrt() * normal(&mut rng);
        let ys: Vec<f64> = (0..setup.steps)
            .map(|_| truth + setup.r.sqrt() * normal(&mut rng))
            .collect();

        let mut pf = linear_gaussian_filter(setup, seed)?;
        let mut m = 0.0;
        let mut p = setup.prior_var;
        for y in &ys {
            let rec = pf.step(&[], &DVector::from_element(1, *y))?;
            p += setup.q;
            let gain = p / (p + setup.r);
            m += gain * (y - m);
            p *= 1.0 - gain;
            pf_sq += (rec.x_hat[0] - truth).powi(2);
            kf_sq += (m - truth).powi(2);
            count += 1.0;
        }
    }
    Ok(((pf_sq / count).sqrt(), (kf_sq / count).sqrt()))
}

/// Particle filter on the static model with noise statistics pinned near
/// the true `R`: huge `ν0`, `Λ0 = ν' R` and no forgetting.
pub fn linear_gaussian_filter(setup: &LinearGaussianSetup, seed: u64) -> Result<ParticleFilter<StaticLinearSystem>> {
    let nu0 = 1e6;
    let model = AugmentedModel::new(
        StaticLinearSystem { dim: 1 },
        Vec::new(),
        DMatrix::from_element(1, 1, setup.q),
        1.0,
        WalkScaling::default(),
    )?;
    let settings = FilterSettings {
        np: setup.np,
        lambda_f: 1.0,
        nu0,
        lambda0: DMatrix::from_element(1, 1, nu0 * setup.r),
        resample: ResamplePolicy::Always,
        parallel: false,
    };
    ParticleFilter::new(
        model,
        settings,
        &DVector::zeros(1),
        &DMatrix::from_element(1, 1, setup.prior_var),
        seed,
    )
}

/// Reduced battery configuration used by the bookkeeping checks.
pub fn short_battery_config(steps: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.schedule.steps = steps;
    cfg.schedule.switch_step = steps / 2;
    cfg.filter.np = 50;
    cfg.runs = 1;
    cfg
}

fn check_weights_and_stats(set: &ParticleSet, ny: usize) -> std::result::Result<(), String> {
    let sum: f64 = set.particles.iter().map(|p| p.weight).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(format!("weights sum to {sum} at step {}", set.step));
    }
    for p in &set.particles {
        if !(p.stats.nu > ny as f64 - 1.0) {
            return Err(format!("nu = {} at step {}", p.stats.nu, set.step));
        }
        let min_eig = p.stats.lambda.clone().symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(format!("Lambda has eigenvalue {min_eig} at step {}", set.step));
        }
    }
    Ok(())
}

fn battery_filter_run(
    cfg: &ScenarioConfig,
    art: &OfflineArtifacts,
    lambda_f: f64,
    resample: ResamplePolicy,
    parallel: bool,
    mut visit: impl FnMut(&ParticleFilter<crate::models::BatterySystem>) -> std::result::Result<(), String>,
) -> Result<std::result::Result<Vec<DVector<f64>>, String>> {
    let mut cfg = cfg.clone();
    cfg.filter.lambda_f = lambda_f;
    cfg.filter.resample = resample;
    cfg.filter.parallel = parallel;
    let (system, traj) = simulate_scenario(&cfg, cfg.seed)?;
    let mut pf = scenario_filter(&cfg, art, system, cfg.seed)?;
    let mut estimates = Vec::with_capacity(traj.len());
    for k in 1..traj.len() {
        let rec = pf.step(&traj.inputs[k - 1], &DVector::from_column_slice(&traj.outputs[k]))?;
        if let Err(msg) = visit(&pf) {
            return Ok(Err(msg));
        }
        let mut e: Vec<f64> = rec.x_hat.iter().copied().collect();
        e.extend(rec.v_hat[0].iter());
        e.push(rec.ess);
        e.push(rec.mean_nu);
        e.push(rec.log_evidence_increment);
        estimates.push(DVector::from_vec(e));
    }
    Ok(Ok(estimates))
}

type CheckFn = fn(&Context) -> Result<Check>;

/// Shared offline artifacts for the suite.
pub struct Context {
    pub sinc: OfflineArtifacts,
    pub battery_cfg: ScenarioConfig,
    pub battery: OfflineArtifacts,
}

impl Context {
    pub fn build() -> Result<Self> {
        let sinc = offline_pipeline(&ScenarioConfig::sinc())?;
        let battery_cfg = short_battery_config(300);
        let battery = offline_pipeline(&battery_cfg)?;
        Ok(Self {
            sinc,
            battery_cfg,
            battery,
        })
    }
}

fn orthonormality_check(ctx: &Context) -> Result<Check> {
    let defect = max_orthonormality_defect(&ctx.sinc, 10, QUADRATURE_POINTS)?;
    Ok(Check::new(
        "orthonormality of conditioned bases (M = 1..10)",
        defect <= 1e-6,
        format!("max defect {defect:.3e} <= 1e-6"),
    ))
}

fn l2_equality_check(ctx: &Context) -> Result<Check> {
    let gap = max_l2_equality_gap(&ctx.sinc, 6, 20, 11, QUADRATURE_POINTS)?;
    Ok(Check::new(
        "L2 error equals coefficient distance",
        gap <= 1e-4,
        format!("max relative gap {gap:.3e} <= 1e-4"),
    ))
}

fn full_rank_recovery(ctx: &Context) -> Result<Check> {
    let gap = max_recovery_gap(&ctx.sinc)?;
    Ok(Check::new(
        "full-rank projection recovers original coefficients",
        gap <= 1e-10,
        format!("max distance / |w|^2 = {gap:.3e} <= 1e-10"),
    ))
}

fn rk4_order(_: &Context) -> Result<Check> {
    let e = rk4_global_errors(&[0.04, 0.02, 0.01])?;
    let r1 = e[0] / e[1];
    let r2 = e[1] / e[2];
    let ok = [r1, r2].iter().all(|r| (8.0..=32.0).contains(r));
    Ok(Check::new(
        "RK4 fourth-order convergence",
        ok,
        format!("error ratios {r1:.2}, {r2:.2} within [8, 32]"),
    ))
}

fn pf_sanity(_: &Context) -> Result<Check> {
    let (pf, kf) = particle_vs_kalman(&LinearGaussianSetup::default(), &[1, 2, 3, 4, 5])?;
    let rel = (pf - kf).abs() / kf;
    Ok(Check::new(
        "particle filter matches Kalman filter on static linear-Gaussian model",
        rel <= 0.2,
        format!("RMSE {pf:.4e} vs Kalman {kf:.4e} (relative gap {rel:.3} <= 0.2)"),
    ))
}

fn normalization_check(_: &Context) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let template = crate::filter::Particle {
        x: DVector::zeros(1),
        v: Vec::new(),
        weight: 0.0,
        stats: crate::filter::NoiseStats::new(3.0, DMatrix::identity(1, 1))?,
    };
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let mut set = ParticleSet {
            particles: (0..100)
                .map(|_| {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    crate::filter::Particle {
                        weight: (20.0 * u).exp(),
                        ..template.clone()
                    }
                })
                .collect(),
            step: trial,
            seed: 0,
        };
        normalize_and_estimate(&mut set)?;
        let sum: f64 = set.particles.iter().map(|p| p.weight).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    Ok(Check::new(
        "weights sum to one after normalization",
        worst <= 1e-12,
        format!("max |sum - 1| = {worst:.3e} <= 1e-12"),
    ))
}

fn bookkeeping(ctx: &Context) -> Result<Check> {
    let mut steps = 0usize;
    let out = battery_filter_run(
        &ctx.battery_cfg,
        &ctx.battery,
        ctx.battery_cfg.filter.lambda_f,
        ResamplePolicy::EssBelow { threshold: 0.5 },
        false,
        |pf| {
            steps += 1;
            check_weights_and_stats(pf.particles(), 3)
        },
    )?;
    let (passed, detail) = match out {
        Ok(_) => (true, format!("{steps} steps: weights sum to 1, Lambda SPD, nu > n_y - 1")),
        Err(msg) => (false, msg),
    };
    Ok(Check::new("weights normalized and noise statistics valid every step", passed, detail))
}

fn nu_recursion(ctx: &Context) -> Result<Check> {
    let nu0 = ctx.battery_cfg.filter.nu0;
    let mut k = 0.0;
    let out = battery_filter_run(
        &ctx.battery_cfg,
        &ctx.battery,
        1.0,
        ResamplePolicy::Always,
        false,
        |pf| {
            k += 1.0;
            let np = pf.particles().particles.len() as f64;
            for p in &pf.particles().particles {
                if p.stats.nu != nu0 + k {
                    return Err(format!("nu = {} at step {k}, expected {}", p.stats.nu, nu0 + k));
                }
                if p.weight != 1.0 / np {
                    return Err(format!("weight {} after resampling at step {k}", p.weight));
                }
            }
            Ok(())
        },
    )?;
    let (passed, detail) = match out {
        Ok(_) => (true, format!("nu_k = nu_0 + k exactly for k = 1..{k}")),
        Err(msg) => (false, msg),
    };
    Ok(Check::new("nu recursion with lambda_f = 1", passed, detail))
}

fn determinism(ctx: &Context) -> Result<Check> {
    let run = |parallel| {
        battery_filter_run(
            &ctx.battery_cfg,
            &ctx.battery,
            ctx.battery_cfg.filter.lambda_f,
            ResamplePolicy::Always,
            parallel,
            |_| Ok(()),
        )
    };
    let a = run(false)?;
    let b = run(false)?;
    let c = run(true)?;
    let passed = matches!((&a, &b, &c), (Ok(a), Ok(b), Ok(c)) if a == b && a == c);
    Ok(Check::new(
        "bit-identical estimates for a fixed seed (serial and parallel)",
        passed,
        if passed { "identical" } else { "estimate trajectories differ" },
    ))
}

fn causality(ctx: &Context) -> Result<Check> {
    let full = run_online_scenario(&ctx.battery_cfg, &ctx.battery, 5)?;
    let mut short_cfg = ctx.battery_cfg.clone();
    short_cfg.schedule.steps = 200;
    let short = run_online_scenario(&short_cfg, &ctx.battery, 5)?;
    let strip = |rows: &[crate::harness::StepRow]| {
        rows.iter()
            .map(|r| crate::harness::StepRow {
                wall_time_us: 0.0,
                ..r.clone()
            })
            .collect::<Vec<_>>()
    };
    let passed = short.rows.len() == 200 && strip(&short.rows) == strip(&full.rows[..200]);
    Ok(Check::new(
        "truncating future data leaves earlier estimates unchanged",
        passed,
        format!("compared {} of {} steps", short.rows.len(), full.rows.len()),
    ))
}

/// Names and functions of every check, in run order.
pub const CHECKS: &[(&str, CheckFn)] = &[
    ("orthonormality", orthonormality_check),
    ("l2-equality", l2_equality_check),
    ("full-rank-recovery", full_rank_recovery),
    ("rk4-order", rk4_order),
    ("pf-sanity", pf_sanity),
    ("weight-normalization", normalization_check),
    ("bookkeeping", bookkeeping),
    ("nu-recursion", nu_recursion),
    ("determinism", determinism),
    ("causality", causality),
];

/// Runs every check; a check that errors counts as failed.
pub fn run_suite(mut report: impl FnMut(&Check, f64)) -> Result<Vec<Check>> {
    let ctx = Context::build()?;
    let mut out = Vec::with_capacity(CHECKS.len());
    for (name, f) in CHECKS {
        let start = Instant::now();
        let check = match f(&ctx) {
            Ok(c) => c,
            Err(e) => Check::new(*name, false, format!("error: {e}")),
        };
        report(&check, start.elapsed().as_secs_f64());
        out.push(check);
    }
    Ok(out)
}
