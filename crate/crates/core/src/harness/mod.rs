//! Experiment orchestration: offline capture and conditioning, the DOF/error
//! sweep, single online runs of the battery scenario and Monte-Carlo studies.

pub mod config;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ScenarioConfig, CONFIG_KEYS};

use crate::conditioning::{
    rank_for_energy, scree, stack_coefficients, svd_condition, CoefficientStack, ConditionedBasis, ScreeRow,
};
use crate::error::{Error, Result};
use crate::filter::{AugmentedModel, FilterSettings, ParticleFilter};
use crate::hilbert_gp::{fit_coefficients, optimize_hyperparameters, BasisSpec, Domain, HilbertGpModel};
use crate::io::{fmt_f64, write_csv, write_json};
use crate::models::{
    generate_offline_dataset, simulate, BatterySystem, JSchedule, OfflineDataset, SimulationSetup, TargetFamily,
    Trajectory,
};
use crate::quadrature::linspace;

/// Root-mean-square of `estimate − truth` over `grid`.
pub fn function_error<E, T>(estimate: E, truth: T, grid: &[Vec<f64>]) -> Result<f64>
where
    E: Fn(&[f64]) -> Result<f64>,
    T: Fn(&[f64]) -> f64,
{
    if grid.is_empty() {
        return Err(Error::input("error grid is empty"));
    }
    let mut acc = 0.0;
    for x in grid {
        let d = estimate(x)? - truth(x);
        acc += d * d;
    }
    Ok((acc / grid.len() as f64).sqrt())
}

/// Uniform error grid over the configured range.
pub fn error_grid(cfg: &ScenarioConfig) -> Vec<Vec<f64>> {
    let (lo, hi) = cfg.error_range();
    linspace(lo, hi, cfg.offline.error_points).into_iter().map(|x| vec![x]).collect()
}

/// Everything produced offline: data, per-realization fits and the
/// conditioned basis.
#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub dataset: OfflineDataset,
    pub spec: BasisSpec,
    pub models: Vec<HilbertGpModel>,
    pub stack: CoefficientStack,
    pub basis: ConditionedBasis,
    pub scree: Vec<ScreeRow>,
}

impl OfflineArtifacts {
    /// Fitted model of realization `j`, if it was part of the dataset.
    pub fn model_for(&self, j: f64) -> Option<&HilbertGpModel> {
        self.dataset
            .realizations
            .iter()
            .position(|r| r.j == j)
            .map(|i| &self.models[i])
    }

    /// Writes `dataset.csv`, `models.json`, `basis.json` and `scree.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.dataset.write_csv(&dir.join("dataset.csv"))?;
        write_json(&dir.join("models.json"), &self.models)?;
        write_json(&dir.join("basis.json"), &self.basis)?;
        write_scree_csv(&dir.join("scree.csv"), &self.scree)
    }
}

/// Noisy samples of every configured realization on a uniform grid.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<OfflineDataset> {
    let o = &cfg.offline;
    let (dl, du) = cfg.data_range();
    let inputs: Vec<Vec<f64>> = linspace(dl, du, o.samples).into_iter().map(|x| vec![x]).collect();
    generate_offline_dataset(cfg.model.family, &cfg.j_values(), &inputs, o.sigma_xi, o.seed)
}

/// Basis on the padded domain (hyperparameters optimized if configured)
/// and one fitted expansion per realization.
pub fn fit_models(cfg: &ScenarioConfig, dataset: &OfflineDataset) -> Result<(BasisSpec, Vec<HilbertGpModel>)> {
    let o = &cfg.offline;
    let (lo, hi) = cfg.domain_bounds();
    let template = BasisSpec::new(Domain::new(vec![lo], vec![hi])?, o.basis_count, o.hyper)?;
    let spec = if o.optimize_hyperparameters {
        let data: Vec<_> = dataset.realizations.iter().map(|r| r.data.clone()).collect();
        template.with_hyper(optimize_hyperparameters(&template, &data)?)?
    } else {
        template
    };
    let models = dataset
        .realizations
        .par_iter()
        .map(|r| fit_coefficients(&spec, &r.data.inputs, &r.data.targets))
        .collect::<Result<Vec<_>>>()?;
    Ok((spec, models))
}

/// Generates the offline dataset, fits one expansion per realization,
/// stacks the coefficients and conditions them to rank `M`.
pub fn offline_pipeline(cfg: &ScenarioConfig) -> Result<OfflineArtifacts> {
    let dataset = generate_dataset(cfg)?;
    let (spec, models) = fit_models(cfg, &dataset)?;
    let ids = dataset.realizations.iter().map(|r| format!("j={}", r.j)).collect();
    let stack = stack_coefficients(&models)?.with_realization_ids(ids)?;
    let max_rank = stack.realizations().min(spec.count());
    let m = match cfg.offline.rank {
        Some(m) => m,
        None => rank_for_energy(&stack, cfg.offline.energy_threshold)?,
    }
    .min(max_rank);
    let basis = svd_condition(&stack, m)?;
    let scree = scree(&stack)?;
    Ok(OfflineArtifacts {
        dataset,
        spec,
        models,
        stack,
        basis,
        scree,
    })
}

pub fn write_scree_csv(path: &Path, rows: &[ScreeRow]) -> Result<()> {
    let header = ["m", "sigma_m", "cumulative_energy"].map(String::from);
    write_csv(
        path,
        &header,
        rows.iter()
            .map(|r| vec![r.m.to_string(), fmt_f64(r.sigma_m), fmt_f64(r.cumulative_energy)]),
    )
}

/// Errors of both representations at one DOF count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dof: usize,
    /// Conditioned rank actually used, `min(dof, J, N)`.
    pub rank: usize,
    pub mean_error_original: f64,
    pub mean_error_conditioned: f64,
    pub original: Vec<f64>,
    pub conditioned: Vec<f64>,
}

/// For `d = 1..=d_max`: the first `d` original basis functions refit per
/// realization against the rank-`d` conditioned basis with `v = Z_dᵀ w_j`.
pub fn dof_error_sweep(cfg: &ScenarioConfig, art: &OfflineArtifacts) -> Result<Vec<SweepRow>> {
    let d_max = cfg.offline.sweep_max_dof.unwrap_or(art.spec.count()).min(art.spec.count());
    let grid = error_grid(cfg);
    let family = cfg.model.family;
    let max_rank = art.stack.realizations().min(art.spec.count());
    (1..=d_max)
        .into_par_iter()
        .map(|d| {
            let truncated = art.spec.truncated(d);
            let rank = d.min(max_rank);
            let basis = svd_condition(&art.stack, rank)?;
            let rho = rho_table(&basis, &grid)?;
            let mut original = Vec::with_capacity(art.models.len());
            let mut conditioned = Vec::with_capacity(art.models.len());
            for (r, model) in art.dataset.realizations.iter().zip(&art.models) {
                let truth = |x: &[f64]| family.eval(x, r.j);
                let fit = fit_coefficients(&truncated, &r.data.inputs, &r.data.targets)?;
                original.push(function_error(|x| fit.evaluate(x), truth, &grid)?);
                let v = basis.project(model.w())?;
                conditioned.push(table_error(&rho, &v, &grid, truth));
            }
            Ok(SweepRow {
                dof: d,
                rank,
                mean_error_original: mean(&original),
                mean_error_conditioned: mean(&conditioned),
                original,
                conditioned,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], js: &[f64]) -> Result<()> {
    let mut header: Vec<String> = ["dof", "rank", "mean_error_original", "mean_error_conditioned"]
        .map(String::from)
        .to_vec();
    header.extend(js.iter().map(|j| format!("original_j{j}")));
    header.extend(js.iter().map(|j| format!("conditioned_j{j}")));
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![
                r.dof.to_string(),
                r.rank.to_string(),
                fmt_f64(r.mean_error_original),
                fmt_f64(r.mean_error_conditioned),
            ];
            row.extend(r.original.iter().map(|v| fmt_f64(*v)));
            row.extend(r.conditioned.iter().map(|v| fmt_f64(*v)));
            row
        }),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `P × M` table of `ρ(x_p)ᵀ` over a grid.
fn rho_table(basis: &ConditionedBasis, grid: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut table = DMatrix::zeros(grid.len(), basis.rank());
    for (p, x) in grid.iter().enumerate() {
        table.set_row(p, &basis.evaluate_rho(x)?.transpose());
    }
    Ok(table)
}

fn table_error<T: Fn(&[f64]) -> f64>(rho: &DMatrix<f64>, v: &DVector<f64>, grid: &[Vec<f64>], truth: T) -> f64 {
    let est = rho * v;
    let acc: f64 = grid
        .iter()
        .zip(est.iter())
        .map(|(x, e)| {
            let d = e - truth(x);
            d * d
        })
        .sum();
    (acc / grid.len() as f64).sqrt()
}

/// Seed offset separating the filter's random streams from the simulator's.
const FILTER_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

/// Per-step metrics of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub j: f64,
    pub x_true: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub function_error: f64,
    pub state_error: f64,
    pub ess: f64,
    pub mean_nu: f64,
    pub log_evidence_increment: f64,
    pub wall_time_us: f64,
}

/// Convergence statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// First step whose trailing 50-step mean error is below twice the
    /// steady error before the switch.
    pub convergence_step: Option<usize>,
    /// Same after the switch, counted from step 0.
    pub reconvergence_step: Option<usize>,
    /// Mean error over the last 100 steps before the switch.
    pub steady_error_before: f64,
    /// Mean error over the last 100 steps of the run (after the switch).
    pub steady_error_after: Option<f64>,
    pub mean_step_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<StepRow>,
    /// Reason the run stopped early, if it did.
    pub failure: Option<String>,
    pub summary: Option<RunSummary>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

const MOVING_WINDOW: usize = 50;
const STEADY_WINDOW: usize = 100;

/// First step in `[start, end)` whose trailing moving average of `errors`
/// is below `2 · steady`.
pub fn convergence_step(errors: &[f64], start: usize, end: usize, steady: f64) -> Option<usize> {
    let mut sum: f64 = 0.0;
    for k in start..end.min(errors.len()) {
        sum += errors[k];
        if k >= start + MOVING_WINDOW {
            sum -= errors[k - MOVING_WINDOW];
        }
        if k + 1 >= start + MOVING_WINDOW && sum / (MOVING_WINDOW as f64) < 2.0 * steady {
            return Some(k);
        }
    }
    None
}

fn tail_mean(errors: &[f64], end: usize) -> f64 {
    let end = end.min(errors.len());
    let start = end.saturating_sub(STEADY_WINDOW);
    mean(&errors[start..end])
}

fn summarize(cfg: &ScenarioConfig, rows: &[StepRow]) -> RunSummary {
    let errors: Vec<f64> = rows.iter().map(|r| r.function_error).collect();
    let switch = cfg.schedule.switch_step.min(errors.len());
    let steady_before = tail_mean(&errors, switch);
    let (reconvergence_step, steady_after) = if switch < errors.len() {
        let steady = tail_mean(&errors, errors.len());
        (convergence_step(&errors, switch, errors.len(), steady), Some(steady))
    } else {
        (None, None)
    };
    let timed = &rows[1.min(rows.len())..];
    RunSummary {
        convergence_step: convergence_step(&errors, 0, switch, steady_before),
        reconvergence_step,
        steady_error_before: steady_before,
        steady_error_after: steady_after,
        mean_step_us: timed.iter().map(|r| r.wall_time_us).sum::<f64>() / timed.len().max(1) as f64,
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// The basis the filter learns in, and the coefficient prior mean.
fn online_basis(cfg: &ScenarioConfig, art: &OfflineArtifacts) -> Result<(ConditionedBasis, DVector<f64>)> {
    let init = art.model_for(cfg.filter.init_j).ok_or_else(|| {
        Error::config(
            "filter.init_j",
            format!("j = {} is not among the offline realizations", cfg.filter.init_j),
        )
    })?;
    if cfg.filter.baseline_original {
        let n = art.spec.count();
        // Random-walk scale per coefficient: its energy across realizations.
        let w = art.stack.matrix();
        let scale = DVector::from_iterator(n, (0..n).map(|c| w.column(c).norm().max(f64::MIN_POSITIVE)));
        let basis = ConditionedBasis::from_parts(art.spec.clone(), DMatrix::identity(n, n), scale, 1.0)?;
        Ok((basis, init.w().clone()))
    } else {
        let v0 = art.basis.project(init.w())?;
        Ok((art.basis.clone(), v0))
    }
}

/// Simulates the configured battery scenario (switching `j` per the
/// schedule) with `seed`.
pub fn simulate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<(BatterySystem, Trajectory)> {
    if cfg.model.family != TargetFamily::BatteryAlpha {
        return Err(Error::config("model.family", "online runs need the battery_alpha family"));
    }
    let system = BatterySystem {
        params: cfg.model.battery,
        dt: cfg.model.dt,
    };
    let q = diag(&cfg.model.process_noise);
    let r = diag(&cfg.model.measurement_noise);
    let input = cfg.model.input;
    let dt = cfg.model.dt;
    let inputs = move |k: usize| vec![input.at(k as f64 * dt)];
    let setup = SimulationSetup {
        family: TargetFamily::BatteryAlpha,
        x0: &cfg.model.x0,
        inputs: &inputs,
        process_noise: &q,
        measurement_noise: &r,
        j_schedule: JSchedule {
            before: cfg.schedule.j_before,
            after: cfg.schedule.j_after,
            switch_step: cfg.schedule.switch_step,
        },
        dt,
        steps: cfg.schedule.steps,
    };
    let traj = simulate(&system, &setup, seed)?;
    Ok((system, traj))
}

/// The configured filter for run `seed`, before any measurement.
pub fn scenario_filter(
    cfg: &ScenarioConfig,
    art: &OfflineArtifacts,
    system: BatterySystem,
    seed: u64,
) -> Result<ParticleFilter<BatterySystem>> {
    let (basis, v0) = online_basis(cfg, art)?;
    let model = AugmentedModel::new(
        system,
        vec![basis],
        diag(&cfg.model.process_noise),
        cfg.filter.c,
        cfg.filter.walk_scaling,
    )?;
    // The coefficient prior shares the random walk's covariance.
    let mut prior_var: Vec<f64> = cfg.filter.x_prior_var.clone();
    prior_var.extend(model.walk_variances());
    let mut prior_mean: Vec<f64> = cfg.model.x0.iter().zip(&cfg.filter.x_prior_offset).map(|(a, b)| a + b).collect();
    prior_mean.extend(v0.iter());
    let settings = FilterSettings {
        np: cfg.filter.np,
        lambda_f: cfg.filter.lambda_f,
        nu0: cfg.filter.nu0,
        lambda0: diag(&cfg.filter.lambda0),
        resample: cfg.filter.resample,
        parallel: cfg.filter.parallel,
    };
    ParticleFilter::new(
        model,
        settings,
        &DVector::from_vec(prior_mean),
        &diag(&prior_var),
        seed ^ FILTER_SEED_SALT,
    )
}

/// Simulates the configured battery scenario with `seed` and filters it
/// step by step. The filter sees `u_{k−1}` and `y_k` at step `k` only.
pub fn run_online_scenario(cfg: &ScenarioConfig, art: &OfflineArtifacts, seed: u64) -> Result<RunRecord> {
    let start = Instant::now();
    let (system, traj) = match simulate_scenario(cfg, seed) {
        Ok(t) => t,
        Err(e @ Error::Simulation { .. }) => {
            return Ok(RunRecord {
                seed,
                rows: Vec::new(),
                failure: Some(e.to_string()),
                summary: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        }
        Err(e) => return Err(e),
    };
    let grid = error_grid(cfg);
    let (basis, _) = online_basis(cfg, art)?;
    let rho = rho_table(&basis, &grid)?;
    let mut filter = scenario_filter(cfg, art, system, seed)?;

    let make_row = |k: usize, x_hat: &DVector<f64>, v_hat: &DVector<f64>| {
        let j = traj.j[k];
        let x_true = &traj.states[k];
        StepRow {
            step: k,
            j,
            x_true: x_true.clone(),
            x_hat: x_hat.iter().copied().collect(),
            v_hat: v_hat.iter().copied().collect(),
            function_error: table_error(&rho, v_hat, &grid, |x| TargetFamily::BatteryAlpha.eval(x, j)),
            state_error: x_hat.iter().zip(x_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            ess: 0.0,
            mean_nu: 0.0,
            log_evidence_increment: 0.0,
            wall_time_us: 0.0,
        }
    };

    let mut rows = Vec::with_capacity(traj.len());
    let prior = filter.estimate();
    rows.push(StepRow {
        ess: prior.ess,
        mean_nu: cfg.filter.nu0,
        ..make_row(0, &prior.x, &prior.v[0])
    });
    let mut failure = None;
    for k in 1..traj.len() {
        let y = DVector::from_column_slice(&traj.outputs[k]);
        match filter.step(&traj.inputs[k - 1], &y) {
            Ok(rec) => rows.push(StepRow {
                ess: rec.ess,
                mean_nu: rec.mean_nu,
                log_evidence_increment: rec.log_evidence_increment,
                wall_time_us: rec.wall_time_us,
                ..make_row(k, &rec.x_hat, &rec.v_hat[0])
            }),
            Err(e @ Error::Divergence { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let summary = failure.is_none().then(|| summarize(cfg, &rows));
    Ok(RunRecord {
        seed,
        rows,
        failure,
        summary,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Column names of `steps.csv` for a run with `m` coefficients.
pub fn steps_header(m: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "j".to_string()];
    h.extend((0..3).map(|i| format!("x_true_{i}")));
    h.extend((0..3).map(|i| format!("x_hat_{i}")));
    h.extend((0..m).map(|i| format!("v_hat_{i}")));
    h.extend(
        [
            "function_error",
            "state_error",
            "ess",
            "mean_nu",
            "logevidence_increment",
            "wall_time_us",
        ]
        .map(String::from),
    );
    h
}

pub fn write_steps_csv(path: &Path, rows: &[StepRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.v_hat.len());
    write_csv(
        path,
        &steps_header(m),
        rows.iter().map(|r| {
            let mut row = vec![r.step.to_string(), fmt_f64(r.j)];
            row.extend(r.x_true.iter().chain(&r.x_hat).chain(&r.v_hat).map(|v| fmt_f64(*v)));
            row.extend(
                [
                    r.function_error,
                    r.state_error,
                    r.ess,
                    r.mean_nu,
                    r.log_evidence_increment,
                    r.wall_time_us,
                ]
                .map(fmt_f64),
            );
            row
        }),
    )
}

/// Per-step mean and sample standard deviation over successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub step: usize,
    pub mean_function_error: f64,
    pub std_function_error: f64,
    pub mean_state_error: f64,
    pub std_state_error: f64,
    pub mean_ess: f64,
    pub std_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub failure: Option<String>,
    pub summary: Option<RunSummary>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub runs: usize,
    pub failed_runs: usize,
    pub failure_rate: f64,
    pub rows: Vec<McRow>,
    pub outcomes: Vec<RunOutcome>,
    pub wall_time_s: f64,
}

/// Mean and sample standard deviation, accumulated in slice order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    if n == 1 {
        return (m, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (m, (ss / (n - 1) as f64).sqrt())
}

/// Aggregates successful runs step by step.
pub fn aggregate(records: &[RunRecord], steps: usize) -> Vec<McRow> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| !r.failed()).collect();
    (0..steps)
        .map(|k| {
            let column = |f: fn(&StepRow) -> f64| ok.iter().filter_map(|r| r.rows.get(k).map(f)).collect::<Vec<_>>();
            let (mf, sf) = mean_std(&column(|r| r.function_error));
            let (ms, ss) = mean_std(&column(|r| r.state_error));
            let (me, se) = mean_std(&column(|r| r.ess));
            McRow {
                step: k,
                mean_function_error: mf,
                std_function_error: sf,
                mean_state_error: ms,
                std_state_error: ss,
                mean_ess: me,
                std_ess: se,
            }
        })
        .collect()
}

/// Directory name of run `seed` inside a study.
pub fn run_dir_name(cfg: &ScenarioConfig, seed: u64) -> String {
    format!("{}_{seed:06}", cfg.output.name)
}

/// Runs `cfg.runs` online scenarios with seeds `cfg.seed + r` in parallel.
/// With `out` set, every run writes `runs/<name>/config.json` (a config
/// that reproduces exactly that run) and `runs/<name>/steps.csv`, and the
/// study writes `mc_summary.csv` and `mc_summary.json`.
pub fn monte_carlo_study(cfg: &ScenarioConfig, art: &OfflineArtifacts, out: Option<&Path>) -> Result<McSummary> {
    let start = Instant::now();
    let records = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r);
            let record = run_online_scenario(cfg, art, seed)?;
            if let Some(dir) = out {
                let run_dir = dir.join("runs").join(run_dir_name(cfg, seed));
                let mut run_cfg = cfg.clone();
                run_cfg.seed = seed;
                run_cfg.runs = 1;
                write_json(&run_dir.join("config.json"), &run_cfg)?;
                write_steps_csv(&run_dir.join("steps.csv"), &record.rows)?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let failed_runs = records.iter().filter(|r| r.failed()).count();
    let summary = McSummary {
        runs: records.len(),
        failed_runs,
        failure_rate: failed_runs as f64 / records.len() as f64,
        rows: aggregate(&records, cfg.schedule.steps),
        outcomes: records
            .iter()
            .map(|r| RunOutcome {
                seed: r.seed,
                failure: r.failure.clone(),
                summary: r.summary.clone(),
                wall_time_s: r.wall_time_s,
            })
            .collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_mc_csv(&dir.join("mc_summary.csv"), &summary.rows)?;
        write_json(&dir.join("mc_summary.json"), &summary)?;
    }
    Ok(summary)
}

pub fn write_mc_csv(path: &Path, rows: &[McRow]) -> Result<()> {
    let header = [
        "step",
        "mean_function_error",
        "std_function_error",
        "mean_state_error",
        "std_state_error",
        "mean_ess",
        "std_ess",
    ]
    .map(String::from);
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.step.to_string()];
            row.extend(
                [
                    r.mean_function_error,
                    r.std_function_error,
                    r.mean_state_error,
                    r.std_state_error,
                    r.mean_ess,
                    r.std_ess,
                ]
                .map(fmt_f64),
            );
            row
        }),
    )
}

/// Mean of `values[lo..hi]`.
pub fn window_mean(values: &[f64], lo: usize, hi: usize) -> f64 {
    mean(&values[lo.min(values.len())..hi.min(values.len())])
}
