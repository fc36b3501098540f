//! Particle filter pieces checked against closed forms, Monte-Carlo
//! expectations and hand-rolled reference computations.

use std::f64::consts::PI;
use std::sync::OnceLock;

use condgp::filter::{
    init_particles, measurement_update_stats, normalize_and_estimate, particle_rng, propagate,
    student_t_log_likelihood, systematic_resample, time_update_stats, AugmentedModel, Checkpoint, ResamplePolicy,
    WalkScaling,
};
use condgp::harness::{offline_pipeline, run_online_scenario, scenario_filter, simulate_scenario, OfflineArtifacts, ScenarioConfig};
use condgp::models::{BatteryParams, BatterySystem, StaticLinearSystem};
use condgp::validate::{linear_gaussian_filter, LinearGaussianSetup};
use condgp::{HilbertGpModel, NoiseStats, Particle, ParticleFilter, ParticleSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn battery() -> &'static (ScenarioConfig, OfflineArtifacts) {
    static ART: OnceLock<(ScenarioConfig, OfflineArtifacts)> = OnceLock::new();
    ART.get_or_init(|| {
        let cfg = ScenarioConfig::default();
        let art = offline_pipeline(&cfg).unwrap();
        (cfg, art)
    })
}

fn gaussian_log_pdf(r: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = r.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * (n * (2.0 * PI).ln() + cov.determinant().ln() + (r.transpose() * inv * r)[0])
}

#[test]
fn student_t_tends_to_gaussian() {
    let r_cov = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2]);
    let nu = 1e6;
    let nu_prime = nu - 3.0 + 1.0;
    let stats = NoiseStats::new(nu, &r_cov * nu_prime).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y_pred = DVector::from_column_slice(&[0.3, 3.4, 298.0]);
    for _ in 0..20 {
        let r = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let t = student_t_log_likelihood(&(&y_pred + &r), &y_pred, &stats).unwrap();
        let g = gaussian_log_pdf(&r, &r_cov);
        assert!((t - g).abs() <= 1e-3, "student-t {t} vs gaussian {g}");
    }
}

#[test]
fn scripted_statistics_without_forgetting() {
    let mut stats = NoiseStats::new(3.0, DMatrix::identity(2, 2)).unwrap();
    let residuals = [[0.5, -1.0], [2.0, 0.25], [-0.75, 0.0], [0.0, 3.0]];
    let mut expected = DMatrix::<f64>::identity(2, 2);
    for (k, r) in residuals.iter().enumerate() {
        let p = DVector::from_column_slice(r);
        stats = measurement_update_stats(&time_update_stats(&stats, 1.0).unwrap(), &p);
        expected += &p * p.transpose();
        assert_eq!(stats.nu, 3.0 + (k + 1) as f64);
        assert!((&stats.lambda - &expected).amax() <= 1e-15);
    }
}

#[test]
fn discount_compounds() {
    let stats = NoiseStats::new(8.0, DMatrix::identity(3, 3) * 4.0).unwrap();
    let twice = time_update_stats(&time_update_stats(&stats, 0.9).unwrap(), 0.9).unwrap();
    assert!((twice.nu - 8.0 * 0.81).abs() <= 1e-12);
    assert!((twice.lambda[(1, 1)] - 4.0 * 0.81).abs() <= 1e-12);
}

fn static_model(q: f64) -> AugmentedModel<StaticLinearSystem> {
    AugmentedModel::new(
        StaticLinearSystem { dim: 2 },
        Vec::new(),
        DMatrix::identity(2, 2) * q,
        1.0,
        WalkScaling::default(),
    )
    .unwrap()
}

#[test]
fn degenerate_prior_puts_every_particle_on_the_mean() {
    let model = static_model(1.0);
    let mean = DVector::from_column_slice(&[1.5, -2.0]);
    let set = init_particles(&model, &mean, &(DMatrix::identity(2, 2) * 1e-20), 3.0, &DMatrix::identity(2, 2), 40, 1)
        .unwrap();
    for p in &set.particles {
        assert!((&p.x - &mean).amax() <= 1e-9);
        assert_eq!(p.weight, 1.0 / 40.0);
    }
    let again = init_particles(&model, &mean, &(DMatrix::identity(2, 2) * 1e-20), 3.0, &DMatrix::identity(2, 2), 40, 1)
        .unwrap();
    assert_eq!(set, again);
}

#[test]
fn negligible_noise_and_identity_dynamics_leave_particle_in_place() {
    let model = static_model(1e-300);
    let particle = Particle {
        x: DVector::from_column_slice(&[0.25, 7.0]),
        v: Vec::new(),
        weight: 0.5,
        stats: NoiseStats::new(3.0, DMatrix::identity(2, 2)).unwrap(),
    };
    let out = propagate(&particle, &[], &model, &mut particle_rng(1, 1, 0));
    assert!(out.valid);
    assert!((&out.particle.x - &particle.x).amax() <= 1e-100);
}

fn battery_model(cfg: &ScenarioConfig, art: &OfflineArtifacts, q: f64, c: f64) -> AugmentedModel<BatterySystem> {
    AugmentedModel::new(
        BatterySystem {
            params: cfg.model.battery,
            dt: cfg.model.dt,
        },
        vec![art.basis.clone()],
        DMatrix::identity(3, 3) * q,
        c,
        WalkScaling::SquaredSingularValues,
    )
    .unwrap()
}

#[test]
fn coefficient_random_walk_has_zero_mean() {
    let (cfg, art) = battery();
    let model = battery_model(cfg, art, 1e-6, cfg.filter.c);
    let v0 = art.basis.project(art.model_for(5.0).unwrap().w()).unwrap();
    let particle = Particle {
        x: DVector::from_column_slice(&cfg.model.x0),
        v: vec![v0.clone()],
        weight: 1.0,
        stats: NoiseStats::new(3.0, DMatrix::identity(3, 3)).unwrap(),
    };
    let draws = 100_000;
    let mut sum = DVector::zeros(v0.len());
    for i in 0..draws {
        let out = propagate(&particle, &[0.5], &model, &mut particle_rng(77, 1, i));
        sum += &out.particle.v[0];
    }
    let mean = sum / draws as f64;
    for (m, var) in model.walk_variances().iter().enumerate() {
        let se = (var / draws as f64).sqrt();
        assert!((mean[m] - v0[m]).abs() <= 3.0 * se, "v[{m}] mean {} vs {} (se {se})", mean[m], v0[m]);
    }
}

/// Battery ODE written out independently of the library.
fn reference_battery_step(x: [f64; 3], current: f64, alpha: &dyn Fn(f64) -> f64, p: &BatteryParams, dt: f64) -> [f64; 3] {
    let rhs = |s: [f64; 3]| {
        [
            current / p.q_bat,
            -alpha(s[0]) * s[1] + p.beta * current,
            (s[1] * current + p.r0 * current * current - (s[2] - p.t_a) / p.r_c) / p.c_c,
        ]
    };
    let add = |a: [f64; 3], k: [f64; 3], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]];
    let k1 = rhs(x);
    let k2 = rhs(add(x, k1, dt / 2.0));
    let k3 = rhs(add(x, k2, dt / 2.0));
    let k4 = rhs(add(x, k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[test]
fn noiseless_battery_step_matches_reference_integrator() {
    let mut cfg = ScenarioConfig::default();
    cfg.offline.rank = Some(10);
    let art = offline_pipeline(&cfg).unwrap();
    let model = battery_model(&cfg, &art, 1e-300, 1e-300);
    let w5 = art.model_for(5.0).unwrap();
    let v = art.basis.project(w5.w()).unwrap();
    assert!((art.basis.lift(&v).unwrap() - w5.w()).amax() <= 1e-10);

    let x0 = [0.4, 0.05, 300.0];
    let particle = Particle {
        x: DVector::from_column_slice(&x0),
        v: vec![v],
        weight: 1.0,
        stats: NoiseStats::new(3.0, DMatrix::identity(3, 3)).unwrap(),
    };
    let current = 0.8;
    let out = propagate(&particle, &[current], &model, &mut particle_rng(3, 1, 0));
    let expansion = HilbertGpModel::new(art.spec.clone(), w5.w().clone()).unwrap();
    let reference = reference_battery_step(
        x0,
        current,
        &|z| expansion.evaluate(&[z]).unwrap(),
        &cfg.model.battery,
        cfg.model.dt,
    );
    for i in 0..3 {
        assert!((out.particle.x[i] - reference[i]).abs() <= 1e-9, "state {i}: {} vs {}", out.particle.x[i], reference[i]);
    }
}

#[test]
fn out_of_domain_particle_gets_zero_weight() {
    let (cfg, art) = battery();
    let model = battery_model(cfg, art, 1e-6, cfg.filter.c);
    let particle = Particle {
        x: DVector::from_column_slice(&[1.4, 0.0, 298.15]),
        v: vec![DVector::zeros(art.basis.rank())],
        weight: 0.3,
        stats: NoiseStats::new(3.0, DMatrix::identity(3, 3)).unwrap(),
    };
    let out = propagate(&particle, &[0.5], &model, &mut particle_rng(1, 1, 0));
    assert!(!out.valid);
    assert_eq!(out.particle.weight, 0.0);
}

#[test]
fn systematic_offspring_match_multinomial_expectation() {
    let np = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let raw: Vec<f64> = (0..np).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
    let total: f64 = raw.iter().sum();
    let set = ParticleSet {
        particles: raw
            .iter()
            .enumerate()
            .map(|(i, w)| Particle {
                x: DVector::from_element(1, i as f64),
                v: Vec::new(),
                weight: w / total,
                stats: NoiseStats::new(3.0, DMatrix::identity(1, 1)).unwrap(),
            })
            .collect(),
        step: 0,
        seed: 0,
    };
    let runs = 10_000;
    let mut sum = vec![0.0; np];
    for _ in 0..runs {
        let out = systematic_resample(&set, &mut rng);
        let mut counts = vec![0.0; np];
        for p in &out.particles {
            counts[p.x[0] as usize] += 1.0;
        }
        for i in 0..np {
            sum[i] += counts[i];
        }
    }
    for i in 0..np {
        let mean = sum[i] / runs as f64;
        let expected = np as f64 * set.particles[i].weight;
        // Systematic offspring counts are floor or ceil of Np q_i, so the
        // count variance is f (1 - f) with f the fractional part.
        let f = expected - expected.floor();
        let se = (f * (1.0 - f) / runs as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * se + 1e-12, "particle {i}: {mean} vs {expected}");
    }
}

#[test]
fn static_model_posterior_mean_tracks_kalman() {
    // A slightly larger random walk lets the cloud migrate when the truth
    // sits in a prior tail (seed 3 draws 2.6 prior standard deviations).
    let setup = LinearGaussianSetup {
        q: 1e-5,
        ..Default::default()
    };
    for seed in [1, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let truth: f64 = StandardNormal.sample(&mut rng);
        let mut pf = linear_gaussian_filter(&setup, seed).unwrap();
        let (mut m, mut p) = (0.0, setup.prior_var);
        let mut last = 0.0;
        for _ in 0..setup.steps {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = truth + setup.r.sqrt() * e;
            last = pf.step(&[], &DVector::from_element(1, y)).unwrap().x_hat[0];
            p += setup.q;
            let gain = p / (p + setup.r);
            m += gain * (y - m);
            p *= 1.0 - gain;
        }
        let bound = 3.0 * setup.r.sqrt() / (setup.steps as f64).sqrt();
        assert!((last - truth).abs() <= bound, "seed {seed}: {last} vs truth {truth}");
        assert!((last - m).abs() <= bound, "seed {seed}: {last} vs Kalman {m}");
    }
}

#[test]
fn checkpoint_resume_is_bit_identical() {
    let (cfg, art) = battery();
    let mut cfg = cfg.clone();
    cfg.filter.np = 30;
    cfg.schedule.steps = 41;
    let (system, traj) = simulate_scenario(&cfg, 8).unwrap();
    let y = |k: usize| DVector::from_column_slice(&traj.outputs[k]);

    let mut straight = scenario_filter(&cfg, art, system, 8).unwrap();
    let mut resumed = scenario_filter(&cfg, art, system, 8).unwrap();
    for k in 1..=20 {
        straight.step(&traj.inputs[k - 1], &y(k)).unwrap();
        resumed.step(&traj.inputs[k - 1], &y(k)).unwrap();
    }
    let json = serde_json::to_string(&Checkpoint::from(resumed.particles())).unwrap();
    let set = ParticleSet::try_from(serde_json::from_str::<Checkpoint>(&json).unwrap()).unwrap();
    assert_eq!(&set, resumed.particles());
    let mut resumed =
        ParticleFilter::from_checkpoint(resumed.model().clone(), resumed.settings().clone(), set).unwrap();
    for k in 21..=40 {
        let a = straight.step(&traj.inputs[k - 1], &y(k)).unwrap();
        let b = resumed.step(&traj.inputs[k - 1], &y(k)).unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.v_hat, b.v_hat);
    }
}

#[test]
fn essbelow_policy_skips_resampling_when_weights_are_even() {
    let (cfg, art) = battery();
    let mut cfg = cfg.clone();
    cfg.filter.np = 40;
    cfg.schedule.steps = 30;
    cfg.filter.resample = ResamplePolicy::EssBelow { threshold: 0.5 };
    let (system, traj) = simulate_scenario(&cfg, 4).unwrap();
    let mut pf = scenario_filter(&cfg, art, system, 4).unwrap();
    for k in 1..traj.len() {
        let rec = pf.step(&traj.inputs[k - 1], &DVector::from_column_slice(&traj.outputs[k])).unwrap();
        let weights: Vec<f64> = pf.particles().particles.iter().map(|p| p.weight).collect();
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        if rec.ess >= 0.5 * 40.0 {
            // Not resampled: weights stay as normalized, not reset to 1/Np.
            assert!(weights.iter().any(|w| (w - 1.0 / 40.0).abs() > 1e-15) || rec.ess == 40.0);
        } else {
            assert!(weights.iter().all(|w| *w == 1.0 / 40.0));
        }
    }
}

/// With the realization fixed at `j = 5` and the coefficients started at
/// its projection, the starting error is only the fit error (about 0.02),
/// so the random walk alone moves it well past twice that. Bounds pinned
/// from a pilot run over seeds 0..3: max error 4.0 to 5.9, mean 1.27 to 1.37.
/// The wrong-realization start of the switching scenario sits near 16.
#[test]
fn fixed_realization_error_stays_bounded() {
    let (cfg, art) = battery();
    let mut cfg = cfg.clone();
    cfg.schedule.steps = 500;
    cfg.schedule.switch_step = 500;
    cfg.schedule.j_before = 5.0;
    cfg.schedule.j_after = 5.0;
    cfg.filter.init_j = 5.0;
    for seed in [0, 1, 2] {
        let rec = run_online_scenario(&cfg, art, seed).unwrap();
        assert!(rec.failure.is_none());
        let errors: Vec<f64> = rec.rows.iter().map(|r| r.function_error).collect();
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(errors[0] <= 0.1, "seed {seed}: initial error {}", errors[0]);
        assert!(worst <= 6.0, "seed {seed}: max error {worst}");
        assert!(mean <= 1.5, "seed {seed}: mean error {mean}");
    }
}

fn weighted_set(weights: &[f64], xs: &[f64]) -> ParticleSet {
    ParticleSet {
        particles: weights
            .iter()
            .zip(xs)
            .map(|(w, x)| Particle {
                x: DVector::from_element(1, *x),
                v: vec![DVector::from_element(2, 2.0 * x)],
                weight: *w,
                stats: NoiseStats::new(3.0, DMatrix::identity(1, 1)).unwrap(),
            })
            .collect(),
        step: 1,
        seed: 0,
    }
}

proptest! {
    #[test]
    fn normalization_and_permutation_invariance(
        pairs in proptest::collection::vec((0.001..10.0f64, -5.0..5.0f64), 1..40),
        rot in 0usize..40,
    ) {
        let (w, x): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut set = weighted_set(&w, &x);
        let est = normalize_and_estimate(&mut set).unwrap();
        let sum: f64 = set.particles.iter().map(|p| p.weight).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(est.ess >= 1.0 - 1e-9 && est.ess <= w.len() as f64 + 1e-9);

        let k = rot % w.len();
        let (mut w2, mut x2) = (w.clone(), x.clone());
        w2.rotate_left(k);
        x2.rotate_left(k);
        let mut rotated = weighted_set(&w2, &x2);
        let est2 = normalize_and_estimate(&mut rotated).unwrap();
        prop_assert!((est.x[0] - est2.x[0]).abs() <= 1e-12);
        prop_assert!((est.v[0][1] - est2.v[0][1]).abs() <= 1e-12);
    }

    #[test]
    fn scale_matrix_stays_spd(
        residuals in proptest::collection::vec(proptest::collection::vec(-50.0..50.0f64, 3), 1..30),
        lambda_f in 0.5..1.0f64,
    ) {
        let mut stats = NoiseStats::new(3.0, DMatrix::identity(3, 3) * 1e-3).unwrap();
        for r in residuals {
            stats = measurement_update_stats(&time_update_stats(&stats, lambda_f).unwrap(), &DVector::from_vec(r));
            prop_assert!(stats.lambda.clone().cholesky().is_some());
            prop_assert!(stats.nu > 2.0);
        }
    }

    #[test]
    fn student_t_is_elliptically_symmetric(r in proptest::collection::vec(-3.0..3.0f64, 2), nu in 2.5..50.0f64) {
        let stats = NoiseStats::new(nu, DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let c = DVector::from_column_slice(&[1.0, -1.0]);
        let r = DVector::from_vec(r);
        let a = student_t_log_likelihood(&(&c + &r), &c, &stats).unwrap();
        let b = student_t_log_likelihood(&(&c - &r), &c, &stats).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
