//! Ground-truth systems: the three-state battery model with a nested RC
//! decay rate, the sinc target family, RK4 discretization and noisy
//! simulation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert_gp::RegressionData;
use crate::io::{fmt_f64, write_csv};

/// Evaluates the nested target functions `Ξ_i` at a feature point.
pub trait TargetEval: Sync {
    fn eval(&self, target: usize, point: &[f64]) -> Result<f64>;
}

impl<F> TargetEval for F
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    fn eval(&self, target: usize, point: &[f64]) -> Result<f64> {
        self(target, point)
    }
}

/// A discrete-time system `x⁺ = f(x, u, Ξ(·))`, `y = h(x, u)` whose
/// dynamics call an unknown function `Ξ`.
pub trait NestedSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn target_count(&self) -> usize {
        1
    }
    fn transition(&self, x: &[f64], u: &[f64], xi: &dyn TargetEval) -> Result<Vec<f64>>;
    fn measure(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
}

/// Battery constants and the surrogate subfunctions `V0(z) = v0_offset +
/// v0_slope·z`, `β(z) = beta`, `R0(z, I) = r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    /// Capacity (A·s).
    pub q_bat: f64,
    /// Core heat capacity (J/K).
    pub c_c: f64,
    /// Core-to-ambient thermal resistance (K/W).
    pub r_c: f64,
    /// Ambient temperature (K).
    pub t_a: f64,
    /// Open-circuit voltage at z = 0 (V).
    pub v0_offset: f64,
    /// Open-circuit voltage slope (V per unit state of charge).
    pub v0_slope: f64,
    /// RC-branch input gain (V/(A·s)).
    pub beta: f64,
    /// Series resistance (Ω).
    pub r0: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            q_bat: 3600.0,
            c_c: 60.0,
            r_c: 2.0,
            t_a: 298.15,
            v0_offset: 3.0,
            v0_slope: 0.7,
            beta: 1.0,
            r0: 0.05,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("q_bat", self.q_bat),
            ("c_c", self.c_c),
            ("r_c", self.r_c),
            ("t_a", self.t_a),
            ("beta", self.beta),
            ("r0", self.r0),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("model.battery.{name}"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn v0(&self, z: f64) -> f64 {
        self.v0_offset + self.v0_slope * z
    }

    pub fn beta(&self, _z: f64) -> f64 {
        self.beta
    }

    pub fn r0(&self, _z: f64, _current: f64) -> f64 {
        self.r0
    }
}

fn check_soc(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(Error::Domain {
            point: vec![z],
            lower: vec![0.0],
            upper: vec![1.0],
        })
    }
}

/// Continuous-time battery dynamics for state `(z, V1, Tc)`.
pub fn battery_rhs(x: &[f64], current: f64, alpha: f64, p: &BatteryParams) -> Result<[f64; 3]> {
    let (z, v1, tc) = (x[0], x[1], x[2]);
    check_soc(z)?;
    Ok([
        current / p.q_bat,
        -alpha * v1 + p.beta(z) * current,
        (v1 * current + p.r0(z, current) * current * current - (tc - p.t_a) / p.r_c) / p.c_c,
    ])
}

/// Battery outputs `(z, V0(z) + V1 + R0·I, Tc)`.
pub fn battery_measurement(x: &[f64], current: f64, p: &BatteryParams) -> Result<[f64; 3]> {
    let (z, v1, tc) = (x[0], x[1], x[2]);
    check_soc(z)?;
    Ok([z, p.v0(z) + v1 + p.r0(z, current) * current, tc])
}

/// `α(z, j) = 4j − 8j (0.5 − z)³`.
pub fn true_alpha(z: f64, j: f64) -> f64 {
    let d = 0.5 - z;
    4.0 * j - 8.0 * j * d * d * d
}

/// `sin(πt)/(πt)` when `normalized`, `sin(t)/t` otherwise; 1 at the origin.
pub fn sinc(t: f64, normalized: bool) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let a = if normalized { PI * t } else { t };
    a.sin() / a
}

/// `10 sinc(j x / 100)` with the normalized convention.
pub fn sinc_target(x: f64, j: f64) -> f64 {
    10.0 * sinc(j * x / 100.0, true)
}

/// One classical Runge–Kutta step of `ẋ = rhs(x)`.
///
/// Any nested function inside `rhs` is re-evaluated at each of the four
/// stage states.
pub fn rk4_step<F>(rhs: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::input(format!("RK4 step must be positive, got {dt}")));
    }
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, d)| b + h * d).collect()
    };
    let k1 = rhs(x)?;
    let k2 = rhs(&stage(x, &k1, 0.5 * dt))?;
    let k3 = rhs(&stage(x, &k2, 0.5 * dt))?;
    let k4 = rhs(&stage(x, &k3, dt))?;
    Ok(x
        .iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Battery model discretized by RK4; the nested target is `α(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatterySystem {
    pub params: BatteryParams,
    pub dt: f64,
}

impl NestedSystem for BatterySystem {
    fn state_dim(&self) -> usize {
        3
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn transition(&self, x: &[f64], u: &[f64], xi: &dyn TargetEval) -> Result<Vec<f64>> {
        let current = u[0];
        rk4_step(
            |s| {
                let alpha = xi.eval(0, &s[..1])?;
                Ok(battery_rhs(s, current, alpha, &self.params)?.to_vec())
            },
            x,
            self.dt,
        )
    }

    fn measure(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(battery_measurement(x, u[0], &self.params)?.to_vec())
    }
}

/// Static linear-Gaussian system `x_{k+1} = x_k`, `y_k = x_k` with no
/// nested function; a sanity model with a closed-form Kalman posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaticLinearSystem {
    pub dim: usize,
}

impl NestedSystem for StaticLinearSystem {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn target_count(&self) -> usize {
        0
    }

    fn transition(&self, x: &[f64], _u: &[f64], _xi: &dyn TargetEval) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn measure(&self, x: &[f64], _u: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

/// Which family of target shapes a realization index `j` selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    BatteryAlpha,
    /// `10 sinc(j x / 100)`, normalized sinc.
    Sinc,
    /// `10 sinc(j x / 100)` with `sinc(t) = sin(t)/t`.
    SincUnnormalized,
}

impl TargetFamily {
    pub fn eval(&self, x: &[f64], j: f64) -> f64 {
        match self {
            TargetFamily::BatteryAlpha => true_alpha(x[0], j),
            TargetFamily::Sinc => sinc_target(x[0], j),
            TargetFamily::SincUnnormalized => 10.0 * sinc(j * x[0] / 100.0, false),
        }
    }

    /// Interval on which the family is defined and errors are measured.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            TargetFamily::BatteryAlpha => (0.0, 1.0),
            TargetFamily::Sinc | TargetFamily::SincUnnormalized => (-15.0, 15.0),
        }
    }
}

/// Ground truth `Ξ(·, j)` for one realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetFunction {
    pub family: TargetFamily,
    pub j: f64,
}

impl TargetEval for TargetFunction {
    fn eval(&self, _target: usize, point: &[f64]) -> Result<f64> {
        Ok(self.family.eval(point, self.j))
    }
}

/// Piecewise-constant realization index: `before` until `switch_step`, then `after`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JSchedule {
    pub before: f64,
    pub after: f64,
    pub switch_step: usize,
}

impl JSchedule {
    pub fn constant(j: f64) -> Self {
        Self {
            before: j,
            after: j,
            switch_step: usize::MAX,
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        if k < self.switch_step {
            self.before
        } else {
            self.after
        }
    }
}

/// Charging current `I(t) = amplitude·sin(2π·frequency·t) + offset` (A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSchedule {
    pub amplitude: f64,
    pub frequency: f64,
    pub offset: f64,
}

impl Default for InputSchedule {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            frequency: 0.05,
            offset: 0.5,
        }
    }
}

impl InputSchedule {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t).sin() + self.offset
    }
}

/// Draws `N(0, C)` samples; diagonal covariances may contain zeros.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    factor: Option<DMatrix<f64>>,
}

impl GaussianNoise {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::input("covariance must be square"));
        }
        if cov.iter().all(|v| *v == 0.0) {
            return Ok(Self { factor: None });
        }
        let n = cov.nrows();
        let diagonal = (0..n).all(|r| (0..n).all(|c| r == c || cov[(r, c)] == 0.0));
        let factor = if diagonal {
            if (0..n).any(|i| !(cov[(i, i)] >= 0.0)) {
                return Err(Error::input("covariance has a negative diagonal entry"));
            }
            DMatrix::from_fn(n, n, |r, c| if r == c { cov[(r, r)].sqrt() } else { 0.0 })
        } else {
            cov.clone()
                .cholesky()
                .ok_or_else(|| Error::input("covariance is not symmetric positive definite"))?
                .unpack()
        };
        Ok(Self { factor: Some(factor) })
    }

    pub fn dim_matches(&self, n: usize) -> bool {
        self.factor.as_ref().is_none_or(|f| f.nrows() == n)
    }

    /// Adds a draw to `x` in place.
    pub fn add_to<R: rand::Rng>(&self, x: &mut [f64], rng: &mut R) {
        let Some(f) = &self.factor else { return };
        let e: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += (0..=r).map(|c| f[(r, c)] * e[c]).sum::<f64>();
        }
    }
}

/// Simulated states, inputs and noisy outputs; `outputs[k]` measures `states[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// Realization index active at each step.
    pub j: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let nx = self.states.first().map_or(0, Vec::len);
        let nu = self.inputs.first().map_or(0, Vec::len);
        let ny = self.outputs.first().map_or(0, Vec::len);
        let mut header = vec!["step".to_string(), "t".to_string(), "j".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        header.extend((0..ny).map(|i| format!("y{i}")));
        let rows = (0..self.len()).map(|k| {
            let mut row = vec![k.to_string(), fmt_f64(k as f64 * self.dt), fmt_f64(self.j[k])];
            row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.inputs[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.outputs[k].iter().map(|v| fmt_f64(*v)));
            row
        });
        write_csv(path, &header, rows)
    }
}

/// Settings shared by every simulation run of a system.
#[derive(Clone, Copy)]
pub struct SimulationSetup<'a> {
    pub family: TargetFamily,
    pub x0: &'a [f64],
    pub inputs: &'a dyn Fn(usize) -> Vec<f64>,
    pub process_noise: &'a DMatrix<f64>,
    pub measurement_noise: &'a DMatrix<f64>,
    pub j_schedule: JSchedule,
    pub dt: f64,
    pub steps: usize,
}

/// Simulates `x_{k+1} = f(x_k, u_k, Ξ(·, j_k)) + e^x`, `y_k = h(x_k, u_k) + e^y`.
pub fn simulate(system: &dyn NestedSystem, setup: &SimulationSetup<'_>, seed: u64) -> Result<Trajectory> {
    let nx = system.state_dim();
    if setup.x0.len() != nx {
        return Err(Error::input(format!("x0 has length {}, system has {nx} states", setup.x0.len())));
    }
    let q = GaussianNoise::new(setup.process_noise)?;
    let r = GaussianNoise::new(setup.measurement_noise)?;
    if !q.dim_matches(nx) || !r.dim_matches(system.output_dim()) {
        return Err(Error::input("noise covariance dimensions do not match the system"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory {
        states: Vec::with_capacity(setup.steps),
        inputs: Vec::with_capacity(setup.steps),
        outputs: Vec::with_capacity(setup.steps),
        j: Vec::with_capacity(setup.steps),
        dt: setup.dt,
        seed,
    };
    let fail = |step: usize, e: Error| Error::Simulation {
        step,
        reason: e.to_string(),
    };
    let mut x = setup.x0.to_vec();
    for k in 0..setup.steps {
        let u = (setup.inputs)(k);
        let j = setup.j_schedule.at(k);
        let mut y = system.measure(&x, &u).map_err(|e| fail(k, e))?;
        r.add_to(&mut y, &mut rng);
        let truth = TargetFunction { family: setup.family, j };
        let mut next = system.transition(&x, &u, &truth).map_err(|e| fail(k, e))?;
        q.add_to(&mut next, &mut rng);
        traj.states.push(std::mem::replace(&mut x, next));
        traj.inputs.push(u);
        traj.outputs.push(y);
        traj.j.push(j);
    }
    Ok(traj)
}

/// Noisy samples of one realization `Ξ(·, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub j: f64,
    pub data: RegressionData,
}

/// The offline dataset `D`: one noisy sample set per realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub family: TargetFamily,
    pub sigma_xi: f64,
    pub seed: u64,
    pub realizations: Vec<Realization>,
}

/// Samples `ξ = Ξ(x, j) + N(0, σ_ξ²)` on `input_grid` for each `j` in `js`.
/// Each realization draws from its own ChaCha stream.
pub fn generate_offline_dataset(
    family: TargetFamily,
    js: &[f64],
    input_grid: &[Vec<f64>],
    sigma_xi: f64,
    seed: u64,
) -> Result<OfflineDataset> {
    if js.is_empty() || input_grid.is_empty() {
        return Err(Error::input("dataset needs J >= 1 realizations and K >= 1 inputs"));
    }
    if !(sigma_xi >= 0.0 && sigma_xi.is_finite()) {
        return Err(Error::input(format!("sigma_xi must be >= 0, got {sigma_xi}")));
    }
    let realizations = js
        .iter()
        .enumerate()
        .map(|(stream, &j)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let targets = input_grid
                .iter()
                .map(|x| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    family.eval(x, j) + sigma_xi * e
                })
                .collect();
            Ok(Realization {
                j,
                data: RegressionData::new(input_grid.to_vec(), targets)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OfflineDataset {
        family,
        sigma_xi,
        seed,
        realizations,
    })
}

impl OfflineDataset {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let dim = self.realizations.first().map_or(0, |r| r.data.inputs[0].len());
        let mut header = vec!["j".to_string(), "k".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.push("xi".to_string());
        let rows = self.realizations.iter().flat_map(|r| {
            r.data.inputs.iter().zip(&r.data.targets).enumerate().map(move |(k, (x, t))| {
                let mut row = vec![fmt_f64(r.j), k.to_string()];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(*t));
                row
            })
        });
        write_csv(path, &header, rows)
    }
}
