//! Noise-adaptive bootstrap particle filter over the augmented state
//! `(x, v_1, …, v_{n_ξ})`.
//!
//! The physical state follows the nested dynamics with `Ξ_i(·) = v_iᵀρ_i(·)`
//! evaluated at each particle's own coefficients; the coefficients follow a
//! random walk scaled by the truncated singular values. Every particle carries
//! an inverse-Wishart posterior `IW(ν, Λ)` over the measurement-noise
//! covariance, which turns the Gaussian likelihood into a Student-t.
//!
//! All randomness is drawn from ChaCha streams keyed by `(seed, step,
//! particle)`, so a run is reproducible regardless of how the particle loop
//! is scheduled across threads.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::conditioning::ConditionedBasis;
use crate::error::{Error, Result};
use crate::models::{GaussianNoise, NestedSystem, TargetEval};

/// Inverse-Wishart statistics `(ν, Λ)` of one particle's noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    pub nu: f64,
    pub lambda: DMatrix<f64>,
}

impl NoiseStats {
    pub fn new(nu: f64, lambda: DMatrix<f64>) -> Result<Self> {
        if !lambda.is_square() || lambda.nrows() == 0 {
            return Err(Error::Stats("scale matrix must be square and non-empty".into()));
        }
        let ny = lambda.nrows() as f64;
        if !(nu.is_finite() && nu > ny - 1.0) {
            return Err(Error::Stats(format!("degrees of freedom {nu} must exceed n_y - 1 = {}", ny - 1.0)));
        }
        if lambda.clone().cholesky().is_none() {
            return Err(Error::Stats("scale matrix is not symmetric positive definite".into()));
        }
        Ok(Self { nu, lambda })
    }

    pub fn output_dim(&self) -> usize {
        self.lambda.nrows()
    }

    /// Forgetting step `(ν, Λ) → (λ_f ν, λ_f Λ)`.
    pub fn time_update(&self, lambda_f: f64) -> Result<Self> {
        if !(lambda_f > 0.0 && lambda_f <= 1.0) {
            return Err(Error::input(format!("forgetting factor must lie in (0, 1], got {lambda_f}")));
        }
        Ok(Self {
            nu: lambda_f * self.nu,
            lambda: &self.lambda * lambda_f,
        })
    }

    /// Conjugate update with residual `p = y − h(x)`: `ν + 1`, `Λ + p pᵀ`.
    pub fn measurement_update(&self, residual: &DVector<f64>) -> Self {
        let mut lambda = self.lambda.clone();
        lambda.ger(1.0, residual, residual, 1.0);
        Self {
            nu: self.nu + 1.0,
            lambda,
        }
    }
}

/// Free-function form of [`NoiseStats::time_update`].
pub fn time_update_stats(stats: &NoiseStats, lambda_f: f64) -> Result<NoiseStats> {
    stats.time_update(lambda_f)
}

/// Free-function form of [`NoiseStats::measurement_update`].
pub fn measurement_update_stats(stats: &NoiseStats, residual: &DVector<f64>) -> NoiseStats {
    stats.measurement_update(residual)
}

/// Log-density at `y` of the multivariate Student-t with location `y_pred`,
/// `ν' = ν − n_y + 1` degrees of freedom and scale matrix `Λ / ν'`.
pub fn student_t_log_likelihood(y: &DVector<f64>, y_pred: &DVector<f64>, stats: &NoiseStats) -> Result<f64> {
    let p = stats.output_dim();
    if y.len() != p || y_pred.len() != p {
        return Err(Error::input(format!(
            "measurement has length {} / {}, noise statistics are {p}-dimensional",
            y.len(),
            y_pred.len()
        )));
    }
    let dof = stats.nu - p as f64 + 1.0;
    if !(dof > 0.0) {
        return Err(Error::Stats(format!("Student-t degrees of freedom {dof} must be positive")));
    }
    let scale = &stats.lambda / dof;
    let chol = scale
        .cholesky()
        .ok_or_else(|| Error::Numeric("Student-t scale matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let delta = y - y_pred;
    let maha = delta.dot(&chol.solve(&delta));
    let pf = p as f64;
    Ok(ln_gamma(0.5 * (dof + pf)) - ln_gamma(0.5 * dof)
        - 0.5 * pf * (dof * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * (dof + pf) * (maha / dof).ln_1p())
}

/// One weighted hypothesis of the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub x: DVector<f64>,
    /// Subspace coefficients, one vector per target function.
    pub v: Vec<DVector<f64>>,
    pub weight: f64,
    pub stats: NoiseStats,
}

/// How the singular values `σ_m` of a conditioned basis set the variance
/// of the coefficient random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkScaling {
    /// Variance `c σ_m`.
    SingularValues,
    /// Variance `c σ_m²`: the step size scales linearly with the
    /// coefficients, so `c` is dimensionless.
    #[default]
    SquaredSingularValues,
}

impl WalkScaling {
    pub fn variance(self, c: f64, sigma: f64) -> f64 {
        match self {
            WalkScaling::SingularValues => c * sigma,
            WalkScaling::SquaredSingularValues => c * sigma * sigma,
        }
    }
}

/// Augmented model: nested system, conditioned bases and process noise
/// `Q̃ = blkdiag(Q, c S_1, …, c S_{n_ξ})` with `S_i` either `Σ_i` or `Σ_i²`.
#[derive(Debug, Clone)]
pub struct AugmentedModel<S> {
    system: S,
    bases: Vec<ConditionedBasis>,
    q: DMatrix<f64>,
    c: f64,
    scaling: WalkScaling,
    noise: GaussianNoise,
    /// `Q̃` itself, kept for inspection.
    q_aug: DMatrix<f64>,
}

impl<S: NestedSystem> AugmentedModel<S> {
    pub fn new(
        system: S,
        bases: Vec<ConditionedBasis>,
        q: DMatrix<f64>,
        c: f64,
        scaling: WalkScaling,
    ) -> Result<Self> {
        let nx = system.state_dim();
        if q.nrows() != nx || q.ncols() != nx {
            return Err(Error::input(format!("Q must be {nx}x{nx}")));
        }
        if q.clone().cholesky().is_none() {
            return Err(Error::input("Q must be symmetric positive definite"));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::input(format!("exploration scale c must be positive, got {c}")));
        }
        if bases.len() != system.target_count() {
            return Err(Error::input(format!(
                "system has {} nested targets but {} conditioned bases were given",
                system.target_count(),
                bases.len()
            )));
        }
        let dim = nx + bases.iter().map(ConditionedBasis::rank).sum::<usize>();
        let mut q_aug = DMatrix::zeros(dim, dim);
        q_aug.view_mut((0, 0), (nx, nx)).copy_from(&q);
        let mut offset = nx;
        for b in &bases {
            for (m, s) in b.singular_values().iter().enumerate() {
                q_aug[(offset + m, offset + m)] = scaling.variance(c, *s);
            }
            offset += b.rank();
        }
        let noise = GaussianNoise::new(&q_aug)?;
        Ok(Self {
            system,
            bases,
            q,
            c,
            scaling,
            noise,
            q_aug,
        })
    }

    pub fn system(&self) -> &S {
        &self.system
    }

    pub fn bases(&self) -> &[ConditionedBasis] {
        &self.bases
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn scaling(&self) -> WalkScaling {
        self.scaling
    }

    /// Random-walk variances of every coefficient, in augmented order.
    pub fn walk_variances(&self) -> Vec<f64> {
        let nx = self.system.state_dim();
        (nx..self.augmented_dim()).map(|i| self.q_aug[(i, i)]).collect()
    }

    pub fn augmented_noise(&self) -> &DMatrix<f64> {
        &self.q_aug
    }

    pub fn augmented_dim(&self) -> usize {
        self.q_aug.nrows()
    }

    /// Splits an augmented vector into `(x, [v_i])`.
    pub fn split(&self, aug: &[f64]) -> (DVector<f64>, Vec<DVector<f64>>) {
        let nx = self.system.state_dim();
        let x = DVector::from_column_slice(&aug[..nx]);
        let mut offset = nx;
        let v = self
            .bases
            .iter()
            .map(|b| {
                let part = DVector::from_column_slice(&aug[offset..offset + b.rank()]);
                offset += b.rank();
                part
            })
            .collect();
        (x, v)
    }

    pub fn join(&self, x: &DVector<f64>, v: &[DVector<f64>]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().copied().collect();
        for part in v {
            out.extend(part.iter());
        }
        out
    }

    /// `Ξ̂_i(·) = v_iᵀ ρ_i(·)` for the given coefficients.
    pub fn reduced_evaluator(&self, v: &[DVector<f64>]) -> ReducedEval<'_> {
        ReducedEval {
            bases: &self.bases,
            lifted: self.bases.iter().zip(v).map(|(b, vi)| b.z() * vi).collect(),
        }
    }
}

/// Reduced expansions at fixed subspace coefficients, stored as their
/// lifted coefficients `Z_M v` over the original basis.
pub struct ReducedEval<'a> {
    bases: &'a [ConditionedBasis],
    lifted: Vec<DVector<f64>>,
}

impl TargetEval for ReducedEval<'_> {
    fn eval(&self, target: usize, point: &[f64]) -> Result<f64> {
        let basis = self
            .bases
            .get(target)
            .ok_or_else(|| Error::input(format!("no conditioned basis for target {target}")))?;
        let spec = basis.spec();
        spec.domain().check(point)?;
        Ok(spec.dot_unchecked(self.lifted[target].as_slice(), point))
    }
}

/// Resampling schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResamplePolicy {
    /// Resample after every measurement (bootstrap filter).
    Always,
    /// Resample only when ESS drops below `threshold · Np`.
    EssBelow { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSettings {
    pub np: usize,
    pub lambda_f: f64,
    pub nu0: f64,
    pub lambda0: DMatrix<f64>,
    pub resample: ResamplePolicy,
    /// Run the per-particle loop on the rayon pool.
    pub parallel: bool,
}

/// Particles, step counter and the seed of the counter-based random streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub step: usize,
    pub seed: u64,
}

const RESAMPLE_STREAM: u64 = 0xFFFF_FFFF;

/// Random stream of particle `index` at `step`.
pub fn particle_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    stream_rng(seed, step, index as u64)
}

fn stream_rng(seed: u64, step: usize, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | (index & 0xFFFF_FFFF));
    rng
}

/// Draws `Np` particles from `N(prior_mean, prior_cov)` over the augmented
/// state, all with weight `1/Np` and statistics `(ν0, Λ0)`.
pub fn init_particles<S: NestedSystem>(
    model: &AugmentedModel<S>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    nu0: f64,
    lambda0: &DMatrix<f64>,
    np: usize,
    seed: u64,
) -> Result<ParticleSet> {
    let dim = model.augmented_dim();
    if np == 0 || np as u64 >= RESAMPLE_STREAM {
        return Err(Error::input(format!("particle count must lie in 1..{RESAMPLE_STREAM}, got {np}")));
    }
    if prior_mean.len() != dim || prior_cov.nrows() != dim || prior_cov.ncols() != dim {
        return Err(Error::input(format!("prior must be {dim}-dimensional")));
    }
    let stats = NoiseStats::new(nu0, lambda0.clone())?;
    if stats.output_dim() != model.system().output_dim() {
        return Err(Error::input("Λ0 dimension does not match the number of outputs"));
    }
    let chol = prior_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::input("prior covariance is not symmetric positive definite"))?;
    let l = chol.l();
    let particles = (0..np)
        .map(|i| {
            let mut rng = particle_rng(seed, 0, i);
            let e = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
            let aug = prior_mean + &l * e;
            let (x, v) = model.split(aug.as_slice());
            Particle {
                x,
                v,
                weight: 1.0 / np as f64,
                stats: stats.clone(),
            }
        })
        .collect();
    Ok(ParticleSet {
        particles,
        step: 0,
        seed,
    })
}

/// Propagated particle and whether its dynamics stayed well-defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub particle: Particle,
    pub valid: bool,
}

/// Samples `x̃_k ~ N(F(x̃_{k−1}, u_{k−1}), Q̃)`. If the dynamics leave the
/// domain of either the system or an expansion, the particle is returned
/// unmoved with weight zero.
pub fn propagate<S: NestedSystem, R: Rng>(
    particle: &Particle,
    u: &[f64],
    model: &AugmentedModel<S>,
    rng: &mut R,
) -> Propagated {
    let eval = model.reduced_evaluator(&particle.v);
    match model.system().transition(particle.x.as_slice(), u, &eval) {
        Ok(next) => {
            let mut aug = next;
            for vi in &particle.v {
                aug.extend(vi.iter());
            }
            model.noise.add_to(&mut aug, rng);
            let (x, v) = model.split(&aug);
            Propagated {
                particle: Particle {
                    x,
                    v,
                    weight: particle.weight,
                    stats: particle.stats.clone(),
                },
                valid: true,
            }
        }
        Err(_) => Propagated {
            particle: Particle {
                weight: 0.0,
                ..particle.clone()
            },
            valid: false,
        },
    }
}

/// Weighted-mean estimates after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub x: DVector<f64>,
    pub v: Vec<DVector<f64>>,
    pub ess: f64,
}

/// Normalizes weights in place and returns weighted means and `1/Σq²`.
pub fn normalize_and_estimate(set: &mut ParticleSet) -> Result<Estimate> {
    let total: f64 = set.particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Divergence { step: set.step });
    }
    for p in &mut set.particles {
        p.weight /= total;
    }
    Ok(weighted_estimate(&set.particles))
}

fn weighted_estimate(particles: &[Particle]) -> Estimate {
    let first = &particles[0];
    let mut x = DVector::zeros(first.x.len());
    let mut v: Vec<DVector<f64>> = first.v.iter().map(|vi| DVector::zeros(vi.len())).collect();
    let mut sum_sq = 0.0;
    for p in particles {
        x.axpy(p.weight, &p.x, 1.0);
        for (acc, vi) in v.iter_mut().zip(&p.v) {
            acc.axpy(p.weight, vi, 1.0);
        }
        sum_sq += p.weight * p.weight;
    }
    Estimate { x, v, ess: 1.0 / sum_sq }
}

/// Ancestor indices of systematic resampling with positions `(i + offset)/Np`.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    // Work in units of 1/Np so uniform weights give integer boundaries.
    let mut j = 0;
    let mut cum = n as f64 * weights[0];
    for i in 0..n {
        let pos = i as f64 + offset;
        while pos >= cum && j + 1 < n {
            j += 1;
            cum += n as f64 * weights[j];
        }
        out.push(j);
    }
    out
}

/// Systematic resampling with one uniform offset; offspring copy their
/// ancestor's whole record (state, coefficients, noise statistics).
pub fn systematic_resample<R: Rng>(set: &ParticleSet, rng: &mut R) -> ParticleSet {
    let weights: Vec<f64> = set.particles.iter().map(|p| p.weight).collect();
    let offset: f64 = rng.random();
    resample_with_indices(set, &systematic_indices(&weights, offset))
}

fn resample_with_indices(set: &ParticleSet, ancestors: &[usize]) -> ParticleSet {
    let np = set.particles.len();
    ParticleSet {
        particles: ancestors
            .iter()
            .map(|&a| Particle {
                weight: 1.0 / np as f64,
                ..set.particles[a].clone()
            })
            .collect(),
        step: set.step,
        seed: set.seed,
    }
}

/// Output of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub x_hat: DVector<f64>,
    pub v_hat: Vec<DVector<f64>>,
    pub ess: f64,
    pub mean_nu: f64,
    pub log_evidence_increment: f64,
    pub wall_time_us: f64,
}

/// Filter state: model, settings and the current particle set.
#[derive(Debug, Clone)]
pub struct ParticleFilter<S> {
    model: AugmentedModel<S>,
    settings: FilterSettings,
    set: ParticleSet,
}

impl<S: NestedSystem> ParticleFilter<S> {
    pub fn new(
        model: AugmentedModel<S>,
        settings: FilterSettings,
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        if !(settings.lambda_f > 0.0 && settings.lambda_f <= 1.0) {
            return Err(Error::input(format!(
                "forgetting factor must lie in (0, 1], got {}",
                settings.lambda_f
            )));
        }
        let set = init_particles(&model, prior_mean, prior_cov, settings.nu0, &settings.lambda0, settings.np, seed)?;
        Ok(Self { model, settings, set })
    }

    /// Resumes from a saved particle set.
    pub fn from_checkpoint(model: AugmentedModel<S>, settings: FilterSettings, set: ParticleSet) -> Result<Self> {
        if set.particles.len() != settings.np {
            return Err(Error::input("checkpoint particle count differs from settings"));
        }
        Ok(Self { model, settings, set })
    }

    pub fn model(&self) -> &AugmentedModel<S> {
        &self.model
    }

    pub fn settings(&self) -> &FilterSettings {
        &self.settings
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    /// Weighted mean of the current particle set.
    pub fn estimate(&self) -> Estimate {
        weighted_estimate(&self.set.particles)
    }

    /// One pass of the algorithm with the previous input `u_{k−1}` and the
    /// new measurement `y_k`. The measurement function is evaluated with
    /// `u_{k−1}`, the latest input the filter has seen.
    pub fn step(&mut self, u_prev: &[f64], y_now: &DVector<f64>) -> Result<StepRecord> {
        let start = Instant::now();
        let k = self.set.step + 1;
        let seed = self.set.seed;
        let lambda_f = self.settings.lambda_f;
        let model = &self.model;

        let update = |(i, p): (usize, &Particle)| -> Result<(Particle, f64)> {
            let stats = p.stats.time_update(lambda_f)?;
            let mut rng = particle_rng(seed, k, i);
            let prop = propagate(p, u_prev, model, &mut rng);
            let mut next = prop.particle;
            next.stats = stats;
            if !prop.valid {
                return Ok((next, f64::NEG_INFINITY));
            }
            let Ok(y_pred) = model.system().measure(next.x.as_slice(), u_prev) else {
                return Ok((next, f64::NEG_INFINITY));
            };
            let y_pred = DVector::from_vec(y_pred);
            let log_lik = student_t_log_likelihood(y_now, &y_pred, &next.stats)?;
            next.stats = next.stats.measurement_update(&(y_now - &y_pred));
            Ok((next, log_lik))
        };
        let results: Vec<(Particle, f64)> = if self.settings.parallel {
            self.set.particles.par_iter().enumerate().map(update).collect::<Result<_>>()?
        } else {
            self.set.particles.iter().enumerate().map(update).collect::<Result<_>>()?
        };

        // q̄_i = q_{i,k-1} · p(y_k | x̃_k^i), handled in the log domain.
        let log_w: Vec<f64> = results
            .iter()
            .zip(&self.set.particles)
            .map(|((_, ll), prev)| prev.weight.ln() + ll)
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Divergence { step: k });
        }
        let mut next = ParticleSet {
            particles: results
                .into_iter()
                .zip(&log_w)
                .map(|((mut p, _), lw)| {
                    p.weight = (lw - max).exp();
                    p
                })
                .collect(),
            step: k,
            seed,
        };
        let scaled_total: f64 = next.particles.iter().map(|p| p.weight).sum();
        let log_evidence_increment = max + scaled_total.ln();
        let estimate = normalize_and_estimate(&mut next)?;

        let resample = match self.settings.resample {
            ResamplePolicy::Always => true,
            ResamplePolicy::EssBelow { threshold } => estimate.ess < threshold * self.settings.np as f64,
        };
        if resample {
            let mut rng = stream_rng(seed, k, RESAMPLE_STREAM);
            next = systematic_resample(&next, &mut rng);
        }
        let mean_nu = next.particles.iter().map(|p| p.stats.nu).sum::<f64>() / next.particles.len() as f64;
        self.set = next;
        Ok(StepRecord {
            step: k,
            x_hat: estimate.x,
            v_hat: estimate.v,
            ess: estimate.ess,
            mean_nu,
            log_evidence_increment,
            wall_time_us: start.elapsed().as_secs_f64() * 1e6,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleDoc {
    x: Vec<f64>,
    v: Vec<Vec<f64>>,
    weight: f64,
    nu: f64,
    lambda: Vec<Vec<f64>>,
}

/// JSON checkpoint of a [`ParticleSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    step: usize,
    seed: u64,
    particles: Vec<ParticleDoc>,
}

impl From<&ParticleSet> for Checkpoint {
    fn from(set: &ParticleSet) -> Self {
        Checkpoint {
            step: set.step,
            seed: set.seed,
            particles: set
                .particles
                .iter()
                .map(|p| ParticleDoc {
                    x: p.x.iter().copied().collect(),
                    v: p.v.iter().map(|vi| vi.iter().copied().collect()).collect(),
                    weight: p.weight,
                    nu: p.stats.nu,
                    lambda: p.stats.lambda.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for ParticleSet {
    type Error = Error;

    fn try_from(doc: Checkpoint) -> Result<Self> {
        let particles = doc
            .particles
            .into_iter()
            .map(|p| {
                let n = p.lambda.len();
                if p.lambda.iter().any(|r| r.len() != n) {
                    return Err(Error::input("checkpoint scale matrix is not square"));
                }
                let lambda = DMatrix::from_fn(n, n, |r, c| p.lambda[r][c]);
                Ok(Particle {
                    x: DVector::from_vec(p.x),
                    v: p.v.into_iter().map(DVector::from_vec).collect(),
                    weight: p.weight,
                    stats: NoiseStats::new(p.nu, lambda)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if particles.is_empty() {
            return Err(Error::input("checkpoint holds no particles"));
        }
        Ok(ParticleSet {
            particles,
            step: doc.step,
            seed: doc.seed,
        })
    }
}
