//! `condgp`: offline conditioning, online filtering and Monte-Carlo studies
//! from one JSON configuration.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use condgp::harness::{
    dof_error_sweep, fit_models, generate_dataset, monte_carlo_study, offline_pipeline, run_dir_name,
    run_online_scenario, write_scree_csv, write_steps_csv, write_sweep_csv, ScenarioConfig, CONFIG_KEYS,
};
use condgp::io::write_json;
use condgp::Error;

#[derive(Parser, Debug)]
#[command(name = "condgp", version, about = "Conditioned GP bases and noise-adaptive particle filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides as dotted key=value pairs, e.g. `filter.np=200 runs=10`.
    #[arg(long = "override", global = true, num_args = 1.., value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Base seed (same as `--override seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (same as `--override output.dir=PATH`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress lines on standard error.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the offline dataset (dataset.csv).
    GenData,
    /// Fit one basis expansion per realization (models.json).
    Fit,
    /// Fit and SVD-condition the coefficients (basis.json, scree.csv).
    Condition,
    /// One online run of the battery scenario (runs/<name>/steps.csv).
    Run,
    /// Monte-Carlo study over `runs` seeds (runs/*, mc_summary.csv).
    Mc,
    /// DOF/error sweep of original vs conditioned bases (dof_sweep.csv).
    Sweep,
    /// Run the built-in invariant suite; exit 3 if any check fails.
    Validate,
}

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut text = String::from("Configuration keys (JSON sections; override with --override key=value):\n");
    for (key, desc) in CONFIG_KEYS {
        text.push_str(&format!("  {key:<width$}  {desc}\n"));
    }
    text.push_str("\nExit codes: 0 success, 1 runtime failure, 2 configuration error, 3 validation failure.");
    text
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn resolve_config(cli: &Cli) -> condgp::Result<ScenarioConfig> {
    let base = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config {
                    key: "--config".into(),
                    message: format!("cannot read {}: {e}", path.display()),
                })?;
            ScenarioConfig::from_json(&text)?
        }
        None => ScenarioConfig::default(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.dir={}", serde_json::Value::String(out.display().to_string())));
    }
    base.with_overrides(&overrides)
}

fn run(cli: &Cli) -> condgp::Result<bool> {
    let progress = Progress { quiet: cli.quiet };
    let cfg = resolve_config(cli)?;
    let out = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &cfg)?;

    match cli.command {
        Command::GenData => {
            let data = generate_dataset(&cfg)?;
            data.write_csv(&out.join("dataset.csv"))?;
            progress.say(format!("wrote {} realizations to {}", data.realizations.len(), out.display()));
        }
        Command::Fit => {
            let data = generate_dataset(&cfg)?;
            let (spec, models) = fit_models(&cfg, &data)?;
            progress.say(format!("hyperparameters: {:?}", spec.hyper()));
            data.write_csv(&out.join("dataset.csv"))?;
            write_json(&out.join("models.json"), &models)?;
            progress.say(format!("wrote {} models to {}", models.len(), out.display()));
        }
        Command::Condition => {
            let art = offline_pipeline(&cfg)?;
            art.write(&out)?;
            progress.say(format!(
                "M = {}, explained energy {:.6}; artifacts in {}",
                art.basis.rank(),
                art.basis.explained_energy(),
                out.display()
            ));
        }
        Command::Run => {
            let art = offline_pipeline(&cfg)?;
            art.write(&out)?;
            let record = run_online_scenario(&cfg, &art, cfg.seed)?;
            let dir = out.join("runs").join(run_dir_name(&cfg, cfg.seed));
            let mut run_cfg = cfg.clone();
            run_cfg.runs = 1;
            write_json(&dir.join("config.json"), &run_cfg)?;
            write_steps_csv(&dir.join("steps.csv"), &record.rows)?;
            write_json(&dir.join("summary.json"), &record.summary)?;
            match &record.failure {
                Some(reason) => {
                    progress.say(format!("run failed: {reason}"));
                    return Err(Error::Input(format!("online run failed: {reason}")));
                }
                None => progress.say(format!("{} steps written to {}", record.rows.len(), dir.display())),
            }
        }
        Command::Mc => {
            let art = offline_pipeline(&cfg)?;
            art.write(&out)?;
            progress.say(format!("running {} Monte-Carlo runs", cfg.runs));
            let summary = monte_carlo_study(&cfg, &art, Some(&out))?;
            progress.say(format!(
                "{} of {} runs failed ({:.1}%), {:.1} s; summary in {}",
                summary.failed_runs,
                summary.runs,
                100.0 * summary.failure_rate,
                summary.wall_time_s,
                out.join("mc_summary.csv").display()
            ));
        }
        Command::Sweep => {
            let art = offline_pipeline(&cfg)?;
            write_scree_csv(&out.join("scree.csv"), &art.scree)?;
            let rows = dof_error_sweep(&cfg, &art)?;
            write_sweep_csv(&out.join("dof_sweep.csv"), &rows, &cfg.j_values())?;
            for r in &rows {
                progress.say(format!(
                    "d = {:>3}: original {:.4e}, conditioned {:.4e}",
                    r.dof, r.mean_error_original, r.mean_error_conditioned
                ));
            }
        }
        Command::Validate => {
            let checks = condgp::validate::run_suite(|check, secs| {
                println!(
                    "{} {} ({}; {:.2} s)",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail,
                    secs
                );
            })?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {} failed", checks.len(), failed);
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(config_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
