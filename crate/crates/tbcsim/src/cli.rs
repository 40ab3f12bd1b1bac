use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use tbc_core::oracle::{parse_grid, verify_inclusion, ToyManeuver, ToyParams};
use tbc_core::scenario::{self, run_scenario, summarize, with_recorded_pilot, ScenarioConfig, TraceSet};
use tbc_core::Error;

use crate::serve::{self, ServeOptions};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SAFETY: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tbcsim", version, about = "Time-varying backup controller safety filter simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file (or builtin name) and write its traces.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted `key=value` setting, e.g. `filter.maneuver_time=0`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the builtin scenarios.
    ListBuiltins,
    /// Print the summary of a trace directory as JSON.
    Summarize { dir: PathBuf },
    /// Re-run a recorded session from its command log.
    Replay {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        pilot_agent: u32,
    },
    /// Exhaustive set-inclusion check on a toy system.
    Oracle {
        #[arg(long, value_enum, default_value_t = Toy::Truck)]
        toy: Toy,
        #[arg(long, default_value = "200x200")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        maneuver_time: Option<f64>,
        /// Accelerate toward the obstacle instead of changing lanes.
        #[arg(long)]
        harmful: bool,
    },
    /// Run a scenario in real time and accept pilot commands over WebSocket.
    Serve {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 1.0)]
        realtime_factor: f64,
        #[arg(long, default_value_t = 0)]
        pilot_agent: u32,
        #[arg(long)]
        record: Option<PathBuf>,
        /// Stop after this much simulated time (s).
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toy {
    Truck,
}

/// Loads a scenario from a path, falling back to a builtin name.
pub fn load_scenario(spec: &str, overrides: &[String]) -> tbc_core::Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        ScenarioConfig::from_toml_with_overrides(&text, overrides)
    } else if scenario::builtin_source(spec).is_some() {
        scenario::builtin(spec, overrides)
    } else {
        Err(Error::Parse(format!("`{spec}` is neither a file nor a builtin scenario")))
    }
}

fn exit_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parse(_) | Error::Override(..)) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

pub fn execute(cli: Cli) -> u8 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            exit_for(&e)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { scenario, out, seed, overrides } => {
            let mut cfg = load_scenario(&scenario, &overrides)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let traces = run_scenario(&cfg)?;
            finish_run(&traces, &out)
        }
        Command::ListBuiltins => {
            for (name, _) in scenario::BUILTINS {
                let cfg = scenario::builtin(name, &[])?;
                println!("{name:<14} {}", cfg.description);
            }
            Ok(EXIT_OK)
        }
        Command::Summarize { dir } => {
            let traces = TraceSet::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))?;
            println!("{}", serde_json::to_string_pretty(&summarize(&traces))?);
            Ok(EXIT_OK)
        }
        Command::Replay { dir, out, pilot_agent } => {
            let rec = TraceSet::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))?;
            let cfg = with_recorded_pilot(&rec.scenario, &rec.commands, pilot_agent);
            let traces = run_scenario(&cfg)?;
            finish_run(&traces, &out)
        }
        Command::Oracle { toy: Toy::Truck, grid, out, maneuver_time, harmful } => {
            let grid = parse_grid(&grid).ok_or_else(|| Error::Parse(format!("bad grid `{grid}`, expected NxM")))?;
            let mut params = ToyParams::default();
            if let Some(t) = maneuver_time {
                params.maneuver_time = t;
            }
            if harmful {
                params.maneuver = ToyManeuver::Accelerate;
            }
            params.validate().map_err(Error::from)?;
            let report = verify_inclusion(&grid, &params);
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            info!(
                "{} cells: {} safe under pure backup, {} under the optimal offset, {} violations ({:.2} s)",
                report.counts.cells,
                report.counts.pure_backup_safe,
                report.counts.tbc_safe,
                report.counts.violations,
                report.runtime_s
            );
            Ok(if report.passed() { EXIT_OK } else { EXIT_SAFETY })
        }
        Command::Serve { scenario, port, bind, realtime_factor, pilot_agent, record, duration } => {
            let cfg = load_scenario(&scenario, &[])?;
            let max_ticks = duration.map(|d| (d / cfg.filter.period).round() as u64);
            let opts = ServeOptions {
                bind,
                port,
                realtime_factor,
                pilot_agent: Some(pilot_agent),
                record,
                max_ticks,
                ..ServeOptions::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let handle = serve::start(cfg, opts).await?;
                let stop = handle.stop_signal();
                tokio::spawn(async move {
                    if tokio::signal::ctrl_c().await.is_ok() {
                        info!("shutting down");
                        stop.store(true, std::sync::atomic::Ordering::SeqCst);
                    }
                });
                handle.wait().await
            })
            .map(|o| {
                info!("served {} ticks ({:.2} s simulated)", o.ticks, o.sim_time);
                EXIT_OK
            })
        }
    }
}

fn finish_run(traces: &TraceSet, out: &Path) -> anyhow::Result<u8> {
    traces.write_dir(out).with_context(|| format!("writing {}", out.display()))?;
    let summary = summarize(traces);
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    info!(
        "{}: min h = {:.4}, mean lambda = {:.3}, {} resets, {} switches, deadlock = {}",
        summary.name,
        summary.min_h.overall,
        summary.lambda.mean,
        summary.resets,
        summary.switches,
        summary.deadlock.deadlocked
    );
    if traces.scenario.assert_safety && !summary.safety_ok {
        error!("safety bound violated: min h = {}", summary.min_h.overall);
        return Ok(EXIT_SAFETY);
    }
    Ok(EXIT_OK)
}
