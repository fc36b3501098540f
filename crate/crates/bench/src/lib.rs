//! Fixtures shared by the criterion benches: a warmed-up battery filter
//! and the measurement it consumes next.

use condgp::harness::{offline_pipeline, scenario_filter, simulate_scenario, OfflineArtifacts, ScenarioConfig};
use condgp::models::BatterySystem;
use condgp::ParticleFilter;
use nalgebra::DVector;

/// Filter state right before step `k` of a simulated battery run.
pub struct StepFixture {
    pub filter: ParticleFilter<BatterySystem>,
    pub u_prev: Vec<f64>,
    pub y: DVector<f64>,
}

/// Offline artifacts for the default battery scenario.
pub fn battery_artifacts() -> (ScenarioConfig, OfflineArtifacts) {
    let cfg = ScenarioConfig::default();
    let art = offline_pipeline(&cfg).expect("default offline pipeline");
    (cfg, art)
}

/// Runs `warmup` steps with `np` particles so the benchmarked step sees a
/// settled particle cloud rather than the prior.
pub fn battery_step_fixture(cfg: &ScenarioConfig, art: &OfflineArtifacts, np: usize, warmup: usize) -> StepFixture {
    let mut cfg = cfg.clone();
    cfg.filter.np = np;
    cfg.schedule.steps = warmup + 1;
    let (system, traj) = simulate_scenario(&cfg, cfg.seed).expect("simulation");
    let mut filter = scenario_filter(&cfg, art, system, cfg.seed).expect("filter");
    for k in 1..warmup {
        filter
            .step(&traj.inputs[k - 1], &DVector::from_column_slice(&traj.outputs[k]))
            .expect("warm-up step");
    }
    StepFixture {
        filter,
        u_prev: traj.inputs[warmup - 1].clone(),
        y: DVector::from_column_slice(&traj.outputs[warmup]),
    }
}
