//! `condwalk`: config-driven runner for the conductance-walk toolkit.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure,
//! 3 acceptance-check failure (with `--check`).

use clap::{Parser, Subcommand};
use condwalk_core::corrector::{
    build_phi, build_psi, sublinearity_report, sublinearity_scan, PhiMethod,
};
use condwalk_core::dual::{clock_slope, dual_clt_check, ensemble_y, simulate_y_with_clock};
use condwalk_core::env::EnvironmentWindow;
use condwalk_core::harness::{self, ExperimentKind, RunConfig};
use condwalk_core::kernel::{
    kernel_n, phi_eps, radius_for_deficit, recommended_phi_radius, shift_covariance_check,
    solve_kernel, t_max_for, Anchor, PhiSweep, WindowSpec,
};
use condwalk_core::walk::{ensemble_x_with, EnsembleMode, DEFAULT_MAX_STEPS};
use condwalk_core::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "condwalk",
    about = "Simulation and verification toolkit for 1D walks among dynamical conductances",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    /// Path to a run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "condwalk-out")]
    out: PathBuf,
    /// Worker threads (the CONDSIM_THREADS environment variable wins).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Table output format.
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    /// Gate the run on its acceptance thresholds (exit 3 on failure).
    #[arg(long, global = true)]
    check: bool,
    /// Scale factor applied to path/environment/replicate counts; useful for
    /// smoke runs of full-size configs.
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an environment window and dump it.
    Env {
        #[arg(long, default_value_t = -16)]
        x_min: i64,
        #[arg(long, default_value_t = 16)]
        x_max: i64,
        #[arg(long, default_value_t = 0.0)]
        t_min: f64,
        #[arg(long, default_value_t = 16.0)]
        t_max: f64,
    },
    /// Simulate walk ensembles and export the sampled positions.
    Simulate,
    /// Simulate dual-walk ensembles: clock slope and CLT distance.
    Dual,
    /// Kernel grids, truncated kernels, the density at the origin, and the
    /// shift-covariance probe.
    Kernel,
    /// Density/coordinate fields and sublinearity ratios.
    Corrector,
    /// Invariance diagnostics and the dual-side comparison.
    Diagnose,
    /// Counterexample suites.
    Counterexample {
        /// Which moment failure to exercise.
        #[arg(value_parser = ["lower", "upper"])]
        which: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems exit 1 per the interface contract
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let threads = std::env::var("CONDSIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .or(cli.threads);
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(check_failures) => {
            if cli.check && !check_failures.is_empty() {
                for f in &check_failures {
                    eprintln!("check failed: {f}");
                }
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Range(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::config("missing --config PATH (see `condwalk --help` for usage)")
    })?;
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(scale) = cli.scale {
        if !(scale > 0.0) {
            return Err(Error::config("--scale must be positive"));
        }
        let shrink = |v: usize, floor: usize| ((v as f64 * scale) as usize).max(floor);
        cfg.run.n_paths = shrink(cfg.run.n_paths, 50);
        cfg.run.var_paths = shrink(cfg.run.var_paths, 50);
        cfg.run.martingale_paths = shrink(cfg.run.martingale_paths, 50);
        cfg.run.dual_paths = shrink(cfg.run.dual_paths, 20);
        cfg.run.phi_envs = shrink(cfg.run.phi_envs, 20);
        cfg.run.replicates = shrink(cfg.run.replicates, 3);
    }
    Ok(cfg)
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)?;
    Ok(())
}

/// Writes a CSV table, or converts it to a JSON array of row objects when
/// the JSON table format is selected.
fn write_table(cli: &Cli, name: &str, csv: &str) -> Result<()> {
    if cli.format == "json" {
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let rows: Vec<serde_json::Value> = lines
            .map(|line| {
                let mut obj = serde_json::Map::new();
                for (key, field) in header.iter().zip(line.split(',')) {
                    let value = field
                        .parse::<f64>()
                        .map(|v| {
                            serde_json::Number::from_f64(v)
                                .map(serde_json::Value::Number)
                                .unwrap_or(serde_json::Value::Null)
                        })
                        .unwrap_or_else(|_| serde_json::Value::String(field.to_string()));
                    obj.insert((*key).to_string(), value);
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        let json = serde_json::to_string_pretty(&rows).expect("serializable table");
        write_text(&cli.out, &name.replace(".csv", ".json"), &json)
    } else {
        write_text(&cli.out, name, csv)
    }
}

fn dispatch(cli: &Cli) -> Result<Vec<String>> {
    match &cli.command {
        Command::Env {
            x_min,
            x_max,
            t_min,
            t_max,
        } => {
            let cfg = load_config(cli)?;
            let env = EnvironmentWindow::build(
                &cfg.env,
                *x_min,
                *x_max,
                *t_min,
                *t_max,
                cfg.master_seed,
            )?;
            write_text(&cli.out, "env.txt", &env.dump())?;
            write_text(&cli.out, "env_spec.toml", &cfg.env.to_toml_string())?;
            Ok(vec![])
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let mut sample_times: Vec<f64> = cfg
                .run
                .n_ladder
                .iter()
                .flat_map(|&n| cfg.run.t_grid.iter().map(move |&t| n * t))
                .collect();
            sample_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sample_times.dedup();
            let summary = ensemble_x_with(
                &cfg.env,
                EnsembleMode::Quenched,
                cfg.run.n_paths,
                &sample_times,
                cfg.master_seed,
                DEFAULT_MAX_STEPS,
                0,
            )?;
            write_table(cli, "ensemble.csv", &summary.to_csv())?;
            let mut trace = Vec::new();
            summary.write_binary(&mut trace)?;
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("trace.bin"), trace)?;
            Ok(vec![])
        }
        Command::Dual => {
            let cfg = load_config(cli)?;
            let ens = ensemble_y(
                &cfg.env,
                EnsembleMode::Annealed,
                cfg.run.dual_paths,
                cfg.run.dual_horizon,
                cfg.master_seed,
            )?;
            let slope = clock_slope(&ens)?;
            let clt = dual_clt_check(&ens).ok();
            let summary = serde_json::json!({
                "clock_slope": { "value": slope.value, "se": slope.se, "n": slope.n },
                "ks_distance": clt.map(|c| c.0),
                "n_paths": ens.final_positions.len(),
                "horizon": ens.horizon,
            });
            write_text(
                &cli.out,
                "dual.json",
                &serde_json::to_string_pretty(&summary).expect("serializable"),
            )?;
            // a few full records with clock samples for plotting
            let env = condwalk_core::dual::build_dual_env(
                &cfg.env,
                0,
                cfg.run.dual_horizon.min(100.0),
                cfg.master_seed,
            )?;
            let times: Vec<f64> = (1..=32)
                .map(|i| cfg.run.dual_horizon.min(100.0) * i as f64 / 32.0)
                .collect();
            let records: Vec<_> = (0..cfg.run.dual_paths.min(10))
                .map(|i| {
                    simulate_y_with_clock(
                        &env,
                        0,
                        cfg.run.dual_horizon.min(100.0),
                        condwalk_core::dual::dual_path_seed(cfg.master_seed, i as u64),
                        &times,
                        condwalk_core::dual::DEFAULT_MAX_STEPS,
                    )
                })
                .collect::<Result<_>>()?;
            write_table(cli, "dual_clock.csv", &condwalk_core::dual::clock_csv(&records))?;
            Ok(vec![])
        }
        Command::Kernel => {
            let cfg = load_config(cli)?;
            let env = EnvironmentWindow::build(&cfg.env, -2, 2, -1.0, 2.0, cfg.master_seed)?;
            let rate_bound = cfg.env.rate_bound().unwrap_or(2.0);
            let window = WindowSpec::new(radius_for_deficit(rate_bound, 1.0, 1e-9))
                .with_tolerance(cfg.run.uniform_tol.min(1e-10));
            let grid = solve_kernel(
                &env,
                Anchor::Source {
                    time: 1.0,
                    vertex: 0,
                },
                (0.0, 1.0),
                &window,
            )?;
            write_table(cli, "kernel_grid.csv", &grid.to_csv())?;
            write_text(&cli.out, "kernel_summary.json", &grid.summary_json())?;
            let truncated = kernel_n(
                &env,
                Anchor::Target {
                    time: 0.0,
                    vertex: 0,
                },
                (0.0, 1.0),
                &window,
                4,
            )?;
            write_table(cli, "kernel_n4.csv", &truncated.to_csv())?;
            let mut phi_json = Vec::new();
            for &eps in &cfg.run.eps_schedule {
                let radius =
                    recommended_phi_radius(&cfg.env, t_max_for(eps, cfg.run.tail_tol), 3.5, 10);
                let rec = phi_eps(
                    &env,
                    eps,
                    None,
                    &[(0.0, 0)],
                    &WindowSpec::new(radius).with_tolerance(cfg.run.uniform_tol),
                    cfg.run.tail_tol,
                )?;
                phi_json.push(serde_json::json!({
                    "epsilon": eps,
                    "phi_at_origin": rec.value_grid[0],
                    "t_max_integral": rec.t_max_integral,
                    "tail_bound": rec.tail_bound,
                }));
            }
            let covariance = shift_covariance_check(&env, 20, cfg.master_seed, &window)?;
            let summary = serde_json::json!({
                "phi_eps": phi_json,
                "shift_covariance_max_violation": covariance,
            });
            write_text(
                &cli.out,
                "phi_eps.json",
                &serde_json::to_string_pretty(&summary).expect("serializable"),
            )?;
            let mut failures = Vec::new();
            if covariance > 1e-8 {
                failures.push(format!("shift covariance violation {covariance}"));
            }
            Ok(failures)
        }
        Command::Corrector => {
            let cfg = load_config(cli)?;
            let method = harness::default_phi_method(&cfg.env);
            let sweep = PhiSweep {
                eps_schedule: cfg.run.eps_schedule.clone(),
                tail_tol: cfg.run.tail_tol,
                uniform_tol: cfg.run.uniform_tol,
                ..PhiSweep::default()
            };
            let report = if method == PhiMethod::KernelExtrapolated {
                let n_max = *cfg.run.n_ladder.last().unwrap();
                let _ = n_max;
                let env = EnvironmentWindow::build(&cfg.env, -2, 2, -1.0, 1.0, cfg.master_seed)?;
                // small field for inspection plus the streaming ratio scan
                let times: Vec<f64> = (0..=8).map(|i| i as f64).collect();
                let phi = build_phi(&env, method, &times, -8, 8, &sweep)?;
                write_table(cli, "phi_field.csv", &phi.to_csv())?;
                write_text(&cli.out, "phi_field.json", &phi.metadata_json())?;
                let psi = build_psi(&env, &phi, &times, -7, 7)?;
                write_table(cli, "psi_field.csv", &psi.to_csv())?;
                sublinearity_scan(&env, &sweep, &[n_max / 100.0, n_max / 10.0, n_max])?
            } else {
                let n_max = *cfg.run.n_ladder.last().unwrap();
                let xr = n_max.sqrt().ceil() as i64 + 2;
                let env = EnvironmentWindow::build(
                    &cfg.env,
                    -xr - 4,
                    xr + 4,
                    -1.0,
                    2.0,
                    cfg.master_seed,
                )?;
                let phi = build_phi(&env, method, &[0.0], -xr - 3, xr + 3, &sweep)?;
                write_text(&cli.out, "phi_field.json", &phi.metadata_json())?;
                let psi = build_psi(&env, &phi, &[0.0], -xr - 2, xr + 2)?;
                sublinearity_report(&psi, &cfg.run.n_ladder)?
            };
            write_text(
                &cli.out,
                "sublinearity.json",
                &serde_json::to_string_pretty(&report).expect("serializable"),
            )?;
            Ok(vec![])
        }
        Command::Diagnose => {
            let cfg = load_config(cli)?;
            if !matches!(
                cfg.kind,
                ExperimentKind::Invariance | ExperimentKind::Remark84 | ExperimentKind::Diagnose
            ) {
                return Err(Error::config(
                    "diagnose needs a config of kind invariance, remark84 or diagnose",
                ));
            }
            let report = harness::run(&cfg)?;
            write_text(&cli.out, "report.json", &report.to_json())?;
            write_table(cli, "long.csv", &report.to_long_csv())?;
            let ks_csv = {
                let mut s = String::from("n,t,distance,n_paths,threshold\n");
                for row in &report.ks_table {
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        row.n, row.t, row.distance, row.n_paths, row.threshold
                    ));
                }
                s
            };
            write_table(cli, "ks_table.csv", &ks_csv)?;
            Ok(report.check_failures())
        }
        Command::Counterexample { which } => {
            let cfg = load_config(cli)?;
            let expected = match which.as_str() {
                "lower" => ExperimentKind::CounterexampleLower,
                _ => ExperimentKind::CounterexampleUpper,
            };
            if cfg.kind != expected {
                return Err(Error::config(format!(
                    "config kind does not match `counterexample {which}`"
                )));
            }
            let report = harness::run(&cfg)?;
            write_text(&cli.out, "report.json", &report.to_json())?;
            write_table(cli, "long.csv", &report.to_long_csv())?;
            let mut failures = Vec::new();
            if let Some(l) = &report.lower_counterexample {
                let medians: Vec<f64> = l.decay.iter().map(|d| d.median_escape).collect();
                if !medians.windows(2).all(|w| w[1] < w[0]) {
                    failures.push(format!("escape medians not strictly decreasing: {medians:?}"));
                }
                for row in &l.r_beta {
                    if row.estimate.value > row.upper_bound + 3.0 * row.estimate.se {
                        failures.push(format!(
                            "R_beta({}) = {} exceeds the bound {}",
                            row.t, row.estimate.value, row.upper_bound
                        ));
                    }
                }
            }
            if let Some(u) = &report.upper_counterexample {
                let heavy = cfg.env.moment_violation().is_some();
                if heavy && u.median_growth_factor < 3.0 {
                    failures.push(format!(
                        "quantile growth {} below 3 for a heavy spec",
                        u.median_growth_factor
                    ));
                }
                if !heavy && u.median_growth_factor > 1.3 {
                    failures.push(format!(
                        "quantile growth {} above 1.3 for a compliant control",
                        u.median_growth_factor
                    ));
                }
            }
            Ok(failures)
        }
    }
}
