//! Offline pipeline, DOF sweep and Monte-Carlo bookkeeping, with the
//! aggregates recomputed from the files the study writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use condgp::conditioning::svd_condition;
use condgp::harness::{
    dof_error_sweep, error_grid, function_error, monte_carlo_study, offline_pipeline, OfflineArtifacts,
    ScenarioConfig,
};
use condgp::HilbertGpModel;
use nalgebra::DVector;

fn sinc() -> &'static (ScenarioConfig, OfflineArtifacts) {
    static ART: OnceLock<(ScenarioConfig, OfflineArtifacts)> = OnceLock::new();
    ART.get_or_init(|| {
        let cfg = ScenarioConfig::sinc();
        let art = offline_pipeline(&cfg).unwrap();
        (cfg, art)
    })
}

#[test]
fn function_error_is_grid_stable() {
    let estimate = |x: &[f64]| Ok((0.3 * x[0]).sin() + 0.1 * x[0]);
    let truth = |x: &[f64]| (0.3 * x[0]).sin();
    let mut cfg = ScenarioConfig::sinc();
    let coarse = function_error(estimate, truth, &error_grid(&cfg)).unwrap();
    cfg.offline.error_points = 401;
    let fine = function_error(estimate, truth, &error_grid(&cfg)).unwrap();
    assert!((coarse - fine).abs() <= 0.01 * fine, "{coarse} vs {fine}");
}

#[test]
fn single_realization_forces_rank_one() {
    let mut cfg = ScenarioConfig::default();
    cfg.offline.realizations = 1;
    cfg.offline.optimize_hyperparameters = false;
    let art = offline_pipeline(&cfg).unwrap();
    assert_eq!(art.basis.rank(), 1);
}

#[test]
fn battery_family_is_nearly_rank_two() {
    let art = offline_pipeline(&ScenarioConfig::default()).unwrap();
    assert_eq!(art.basis.rank(), 2);
    assert!(art.basis.explained_energy() >= 0.99, "energy {}", art.basis.explained_energy());
}

#[test]
fn two_conditioned_functions_beat_any_two_original_ones() {
    let (cfg, art) = sinc();
    let j = 15.0;
    let model = art.model_for(j).unwrap();
    let truth = |x: &[f64]| cfg.model.family.eval(x, j);
    // Coarse resolution for the exhaustive search over all pairs.
    let mut coarse = cfg.clone();
    coarse.offline.error_points = 61;
    let grid = error_grid(&coarse);

    let basis = svd_condition(&art.stack, 2).unwrap();
    let v = basis.project(model.w()).unwrap();
    let conditioned = function_error(|x| basis.evaluate_reduced(&v, x), truth, &grid).unwrap();

    let n = art.spec.count();
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            let mut w = DVector::zeros(n);
            w[a] = model.w()[a];
            w[b] = model.w()[b];
            let pair = HilbertGpModel::new(art.spec.clone(), w).unwrap();
            best = best.min(function_error(|x| pair.evaluate(x), truth, &grid).unwrap());
        }
    }
    assert!(conditioned < best, "conditioned {conditioned} vs best pair {best}");
}

#[test]
fn sweep_representations_coincide_at_full_dof() {
    let (cfg, art) = sinc();
    let rows = dof_error_sweep(cfg, art).unwrap();
    let last = rows.last().unwrap();
    assert_eq!(last.dof, art.spec.count());
    assert!((last.mean_error_original - last.mean_error_conditioned).abs() <= 1e-10);
    let six = &rows[5];
    assert!(six.mean_error_conditioned < six.mean_error_original);
}

#[test]
fn noiseless_sinc_has_negligible_even_coefficients() {
    let mut cfg = ScenarioConfig::sinc();
    cfg.offline.sigma_xi = 0.0;
    let art = offline_pipeline(&cfg).unwrap();
    let max = art.models.iter().flat_map(|m| m.w().iter()).fold(0.0f64, |a, w| a.max(w.abs()));
    // Zero-based index 1, 3, ... holds the even eigenfunctions j = 2, 4, ...
    let even = art
        .models
        .iter()
        .flat_map(|m| m.w().iter().skip(1).step_by(2))
        .fold(0.0f64, |a, w| a.max(w.abs()));
    assert!(even <= 1e-3 * max, "even {even} vs max {max}");
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn small_study() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.runs = 3;
    cfg.seed = 40;
    cfg.schedule.steps = 120;
    cfg.schedule.switch_step = 60;
    cfg.filter.np = 30;
    cfg
}

#[test]
fn summary_recomputes_from_run_files() {
    let cfg = small_study();
    let art = offline_pipeline(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    monte_carlo_study(&cfg, &art, Some(dir.path())).unwrap();

    let mut per_run = Vec::new();
    for r in 0..cfg.runs {
        let run = dir.path().join("runs").join(format!("battery_{:06}", cfg.seed + r as u64));
        let (header, rows) = read_csv(&run.join("steps.csv"));
        assert_eq!(rows.len(), cfg.schedule.steps);
        let fe = column(&header, "function_error");
        per_run.push(rows.iter().map(|row| row[fe]).collect::<Vec<f64>>());
        let run_cfg: ScenarioConfig =
            ScenarioConfig::from_json(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
        assert_eq!(run_cfg.seed, cfg.seed + r as u64);
    }
    let (header, summary) = read_csv(&dir.path().join("mc_summary.csv"));
    let (mean_col, std_col) = (column(&header, "mean_function_error"), column(&header, "std_function_error"));
    assert_eq!(summary.len(), cfg.schedule.steps);
    for (k, row) in summary.iter().enumerate() {
        let values: Vec<f64> = per_run.iter().map(|run| run[k]).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((row[mean_col] - mean).abs() <= 1e-12 * mean.abs().max(1.0), "step {k} mean");
        assert!((row[std_col] - std).abs() <= 1e-12 * std.max(1.0), "step {k} std");
        assert!(row[std_col] >= 0.0);
    }
}

/// All files of a study, with wall-clock fields dropped.
fn snapshot(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let text = fs::read_to_string(&path).unwrap();
            let rel = path.strip_prefix(dir).unwrap().display().to_string();
            let cleaned = if rel.ends_with("steps.csv") {
                let (header, rows) = read_csv(&path);
                let wall = column(&header, "wall_time_us");
                rows.iter()
                    .map(|r| format!("{:?}", r.iter().enumerate().filter(|(i, _)| *i != wall).collect::<Vec<_>>()))
                    .collect::<Vec<_>>()
                    .join("\n")
            } else if rel.ends_with(".json") {
                let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
                strip_wall_time(&mut v);
                v.to_string()
            } else {
                text
            };
            out.insert(rel, cleaned);
        }
    }
    out
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| k != "wall_time_s" && k != "mean_step_us");
            map.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

#[test]
fn study_outputs_are_reproducible() {
    let cfg = small_study();
    let art = offline_pipeline(&cfg).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    art.write(a.path()).unwrap();
    monte_carlo_study(&cfg, &art, Some(a.path())).unwrap();
    let again = offline_pipeline(&cfg).unwrap();
    again.write(b.path()).unwrap();
    monte_carlo_study(&cfg, &again, Some(b.path())).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert_eq!(v, &sb[k], "{k} differs");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ScenarioConfig::from_json(&fs::read_to_string(&path).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
