//! Command-line front end: static optimization, the full closed loop,
//! stored-artifact evaluation, rendering, and feedback replay.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use raceline::io;
use raceline::orchestrator::{
    closed_loop, evaluate_stored, replay_feedback, static_optimize, ExperimentConfig,
};
use raceline::render::{render_svg, RenderInput};
use raceline::{Error, Result};

#[derive(Parser)]
#[command(
    name = "raceline",
    version,
    about = "Closed-loop raceline optimization with execution-feedback map adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the lap count.
    #[arg(long)]
    laps: Option<usize>,
    /// Disable constraint-map feedback.
    #[arg(long)]
    no_feedback: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a static raceline for the configured track and a fresh map.
    Optimize(CommonArgs),
    /// Run the full closed-loop experiment: plan, drive, attribute, adapt.
    Loop(CommonArgs),
    /// Recompute a stored trajectory's lap time under the configured limits
    /// and an optional stored constraint map.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Stored trajectory CSV.
        #[arg(long)]
        trajectory: PathBuf,
        /// Stored constraint map CSV; nominal limits when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Render stored artifacts to an SVG.
    Render {
        #[command(flatten)]
        common: CommonArgs,
        /// Stored planned trajectory CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Stored constraint map CSV.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Stored lap log CSV for the executed path.
        #[arg(long)]
        lap_log: Option<PathBuf>,
    },
    /// Re-run the feedback pass over a stored run's lap logs, rebuilding
    /// the constraint map from scratch (retune gains without re-simulating).
    ReplayFeedback {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory holding lap_001, lap_002, ...
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.experiment.out = Some(o.display().to_string());
    }
    if let Some(l) = common.laps {
        cfg.experiment.laps = l;
    }
    if common.no_feedback {
        cfg.experiment.feedback_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize(common) => {
            let cfg = load_config(&common)?;
            let res = static_optimize(&cfg)?;
            println!("baseline_time,{}", io::fmt_f64(res.baseline_time));
            println!("planned_time,{}", io::fmt_f64(res.planned_time));
            println!("evaluations,{}", res.evaluations);
        }
        Command::Loop(common) => {
            let cfg = load_config(&common)?;
            let res = closed_loop(&cfg)?;
            print!("{}", res.results_text);
        }
        Command::Evaluate {
            common,
            trajectory,
            map,
        } => {
            let cfg = load_config(&common)?;
            let stored = io::read_trajectory_csv(
                &fs::read_to_string(&trajectory)?,
                &trajectory.display().to_string(),
            )?;
            let stored_map = match &map {
                Some(p) => Some(io::read_map(
                    &fs::read_to_string(p)?,
                    &p.display().to_string(),
                )?),
                None => None,
            };
            let t = evaluate_stored(&stored, &cfg.limits, stored_map.as_ref())?;
            println!("lap_time,{}", io::fmt_f64(t));
        }
        Command::Render {
            common,
            trajectory,
            map,
            lap_log,
        } => {
            let cfg = load_config(&common)?;
            let track = cfg.load_track_model()?;
            let stored = match &trajectory {
                Some(p) => Some(io::read_trajectory_csv(
                    &fs::read_to_string(p)?,
                    &p.display().to_string(),
                )?),
                None => None,
            };
            let stored_map = match &map {
                Some(p) => Some(io::read_map(
                    &fs::read_to_string(p)?,
                    &p.display().to_string(),
                )?),
                None => None,
            };
            let log = match &lap_log {
                Some(p) => io::read_lap_log(
                    &fs::read_to_string(p)?,
                    &p.display().to_string(),
                )?,
                None => Vec::new(),
            };
            let svg = render_svg(&RenderInput {
                track: &track,
                map: stored_map.as_ref(),
                planned: stored.as_ref().map(|s| s.samples.as_slice()),
                executed: &log,
                blame: &[],
            });
            match &common.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    let path = dir.join("render.svg");
                    fs::write(&path, svg)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{svg}"),
            }
        }
        Command::ReplayFeedback { common, run } => {
            let cfg = load_config(&common)?;
            let (map, events) = replay_feedback(&cfg, &run)?;
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("map.csv"), io::write_map(&map))?;
                fs::write(
                    dir.join("blame_events.csv"),
                    io::write_blame_events(&events),
                )?;
            }
            println!("blame_events,{}", events.len());
            println!("mean_m,{}", io::fmt_f64(map.mean_m()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real argument
            // errors are configuration failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
