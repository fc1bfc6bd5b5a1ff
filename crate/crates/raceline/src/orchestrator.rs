//! Closed-loop experiment driver: plan under the current constraint map,
//! drive the plan on the simulated vehicle, attribute tracking errors to
//! blame regions, update the map, re-plan. Also owns experiment
//! configuration and the on-disk artifact layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blame::{
    blame_region, blame_region_fallback, closest_point, sign_zones, transition_index,
    SIGN_DEADBAND_FACTOR,
};
use crate::closure::FreeParameters;
use crate::cma::{self, CmaState, GenerationRecord};
use crate::constraint_map::{modulate_error, BlamePoint, ConstraintMap, FeedbackConfig, MapParams};
use crate::io::{self, BlameEventRecord, LapLogRow};
use crate::mpc::{reference_window, MpcConfig, MpcController};
use crate::objective::{objective_from_vector, ObjectiveConfig};
use crate::plant::{measure_position, step, FrictionField, VehicleParams, VehicleState, DT_PLANT};
use crate::render::{render_svg, RenderInput};
use crate::rng;
use crate::timing::{
    min_lap_time_spatial, sample_trajectory, DynamicLimits, TimedTrajectory,
    DEFAULT_LAP_TIME_SAMPLES, MIN_TRAJECTORY_SAMPLES,
};
use crate::track::TrackModel;
use crate::{Error, Result};

/// Tracking error at which a lap is declared lost, m.
pub const ABORT_E_HAT: f64 = 2.0;
/// Lap boundary detection: closest-point u must rise above this...
const WRAP_HIGH: f64 = 0.9;
/// ...then fall below this...
const WRAP_LOW: f64 = 0.1;
/// ...and stay there for this many controller steps.
const WRAP_DEBOUNCE: usize = 5;
/// A lap running longer than this multiple of its plan counts as lost.
const TIME_FUSE: f64 = 5.0;
/// Blame events below this fraction of e_th are applied to the map but not
/// exported, keeping the event ledger to meaningful deviations.
const REPORT_FLOOR: f64 = 0.2;

/// Run-level knobs that don't belong to any physics subsystem.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    /// Bundled track name ("oval", "scurve") or a path to a track CSV.
    pub track: String,
    /// Control-point count for the centerline fit and the optimizer.
    pub n_ctrl: usize,
    pub laps: usize,
    /// Objective evaluations granted to each lap's re-optimization.
    pub iterations_per_lap: usize,
    /// Evaluations for the first, cold optimization. Defaults to
    /// iterations_per_lap when absent.
    pub initial_iterations: Option<usize>,
    /// First lap (1-based) on which the feedback pass may touch the map.
    pub feedback_enabled_from_lap: usize,
    /// Master feedback switch; the CLI's --no-feedback clears it.
    pub feedback_enabled: bool,
    pub seed: u64,
    /// Output directory. None = keep everything in memory.
    pub out: Option<String>,
    /// Free margin around the track bounding box covered by the map, m.
    pub map_margin: f64,
    /// Sample count for driven and exported trajectories.
    pub trajectory_samples: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            track: "oval".into(),
            n_ctrl: 16,
            laps: 1,
            iterations_per_lap: 500,
            initial_iterations: None,
            feedback_enabled_from_lap: 1,
            feedback_enabled: true,
            seed: 0,
            out: None,
            map_margin: 2.0,
            trajectory_samples: MIN_TRAJECTORY_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSection {
    /// Initial step size in the free-parameter encoding.
    pub sigma_init: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection { sigma_init: 0.1 }
    }
}

/// Whole-experiment configuration; every section has defaults, so a minimal
/// TOML file only names the track.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub limits: DynamicLimits<f64>,
    pub feedback: FeedbackConfig<f64>,
    pub map: MapParams<f64>,
    pub mpc: MpcConfig<f64>,
    pub plant: VehicleParams<f64>,
    pub objective: ObjectiveConfig<f64>,
    pub optimizer: OptimizerSection,
    pub friction: FrictionField<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            file: file.into(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.laps < 1 {
            return Err(Error::Config("laps must be >= 1".into()));
        }
        if e.iterations_per_lap < 1 {
            return Err(Error::Config("iterations_per_lap must be >= 1".into()));
        }
        if matches!(e.initial_iterations, Some(0)) {
            return Err(Error::Config("initial_iterations must be >= 1".into()));
        }
        if e.n_ctrl < 5 {
            return Err(Error::Config("n_ctrl must be >= 5".into()));
        }
        if e.feedback_enabled_from_lap < 1 {
            return Err(Error::Config("feedback_enabled_from_lap is 1-based".into()));
        }
        if e.trajectory_samples < MIN_TRAJECTORY_SAMPLES {
            return Err(Error::Config(format!(
                "trajectory_samples must be >= {MIN_TRAJECTORY_SAMPLES}"
            )));
        }
        if !(e.map_margin > 0.0) {
            return Err(Error::Config("map_margin must be positive".into()));
        }
        if e.track.is_empty() {
            return Err(Error::Config("track must name a bundled track or a file".into()));
        }
        if !(self.optimizer.sigma_init > 0.0) {
            return Err(Error::Config("sigma_init must be positive".into()));
        }
        // Sub-section validators report Invalid; at this level every one of
        // them is a configuration problem.
        let as_config = |err: Error| Error::Config(err.to_string());
        self.limits.validate().map_err(as_config)?;
        self.feedback.validate().map_err(as_config)?;
        self.mpc.validate().map_err(as_config)?;
        self.plant.validate().map_err(as_config)?;
        self.objective.validate().map_err(as_config)?;
        self.friction.validate().map_err(as_config)?;
        Ok(())
    }

    /// Resolves the track field: bundled name first, then a file path.
    pub fn load_track_model(&self) -> Result<TrackModel<f64>> {
        if let Some(t) = crate::tracks::by_name(&self.experiment.track) {
            return Ok(t);
        }
        io::load_track(Path::new(&self.experiment.track))
    }

    fn fresh_map(&self, track: &TrackModel<f64>) -> Result<ConstraintMap<f64>> {
        let (lo, hi) = track.extent_with_margin(self.experiment.map_margin);
        ConstraintMap::new(lo.x, lo.y, hi.x, hi.y, &self.map)
    }
}

/// Everything one simulated lap produced.
pub struct LapOutcome {
    pub log: Vec<LapLogRow>,
    /// Plant clock at the start-line crossing (or at abort), s.
    pub duration: f64,
    pub max_e_hat: f64,
    pub mean_e_hat: f64,
    pub aborted: bool,
}

/// Drives one lap of `traj` with the tracking controller on the simulated
/// plant. The lap ends when the closest-point parameter wraps past the
/// start line (debounced), or aborts when the vehicle leaves the map,
/// the tracking error exceeds [`ABORT_E_HAT`], or the time fuse blows.
pub fn run_lap(
    traj: &TimedTrajectory<f64>,
    params: &VehicleParams<f64>,
    friction: &FrictionField<f64>,
    limits: &DynamicLimits<f64>,
    mpc_cfg: &MpcConfig<f64>,
    map: &ConstraintMap<f64>,
    rng: &mut rng::Prng,
) -> Result<LapOutcome> {
    let start = &traj.samples[0];
    let d1 = traj.curve.derivative(0.0, 1)?;
    let mut state = VehicleState {
        x: start.pos.x,
        y: start.pos.y,
        theta: d1.y.atan2(d1.x),
        // Steady-state steering for the local curvature removes the
        // launch transient.
        delta: (start.kappa * params.wheelbase).atan(),
        v: start.v,
    };
    let substeps = ((mpc_cfg.dt / DT_PLANT).round() as usize).max(1);
    let mut controller = MpcController::new();
    let mut t = 0.0f64;
    let mut log: Vec<LapLogRow> = Vec::new();
    let mut sum_e = 0.0f64;
    let mut max_e = 0.0f64;
    let mut n_meas = 0usize;
    let mut mid_seen = false;
    let mut armed = false;
    let mut low_run = 0usize;
    let mut crossing: Option<f64> = None;
    let mut aborted = false;
    loop {
        let meas = measure_position(&state, params.meas_sigma, rng);
        let (_, u_near, e_hat) = closest_point(traj, meas);
        sum_e += e_hat;
        max_e = max_e.max(e_hat);
        n_meas += 1;

        // The start point sits on the seam, where measurement noise can
        // resolve to u just below 1 and fake an instant lap. Arm the wrap
        // detector only after the vehicle has passed through mid-lap.
        if u_near > 0.3 && u_near < 0.7 {
            mid_seen = true;
        }
        if mid_seen && u_near > WRAP_HIGH {
            armed = true;
            low_run = 0;
            crossing = None;
        } else if armed && u_near < WRAP_LOW {
            low_run += 1;
            if crossing.is_none() {
                crossing = Some(t);
            }
            if low_run >= WRAP_DEBOUNCE {
                break;
            }
        } else {
            low_run = 0;
            crossing = None;
        }

        if e_hat > ABORT_E_HAT || !map.contains(state.pos()) || t > TIME_FUSE * traj.lap_time {
            aborted = true;
            break;
        }

        let window = reference_window(traj, t, mpc_cfg.horizon, mpc_cfg.dt)?;
        let est = VehicleState {
            x: meas.x,
            y: meas.y,
            ..state
        };
        let sol = controller.solve(&est, &window, mpc_cfg, params)?;
        let mut slip = false;
        let logged_state = state;
        for _ in 0..substeps {
            let (next, s) = step(&state, &sol.input, DT_PLANT, friction, limits, params);
            state = next;
            slip |= s;
        }
        log.push(LapLogRow {
            t,
            state: logged_state,
            input: sol.input,
            slip,
            meas,
        });
        controller.advance();
        t += mpc_cfg.dt;
    }
    Ok(LapOutcome {
        log,
        duration: crossing.unwrap_or(t).max(DT_PLANT),
        max_e_hat: max_e,
        mean_e_hat: sum_e / n_meas as f64,
        aborted,
    })
}

/// Attributes the lap's tracking errors to acceleration-sign zones and
/// applies at most one map update per zone: the zone's worst observation
/// wins. Every traversed zone gets its update (small errors push M up, big
/// ones push it down); only events whose error clears the reporting floor
/// are exported.
pub fn feedback_pass(
    log: &[LapLogRow],
    traj: &TimedTrajectory<f64>,
    map: &mut ConstraintMap<f64>,
    cfg: &FeedbackConfig<f64>,
    lap: usize,
) -> Result<Vec<BlameEventRecord>> {
    if log.is_empty() {
        return Ok(Vec::new());
    }
    let a_par: Vec<f64> = traj.samples.iter().map(|s| s.a_par).collect();
    let peak = a_par.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let zones = sign_zones(&a_par, SIGN_DEADBAND_FACTOR * peak);

    // zone key -> (step, i_min, e_hat) of the worst observation in it.
    let mut worst: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    for (step, row) in log.iter().enumerate() {
        let (i_min, _, e_hat) = closest_point(traj, row.meas);
        let key = match transition_index(&zones.z, i_min) {
            Ok(z) => z,
            // No sign change anywhere: the whole lap is one zone.
            Err(Error::NoTransition) => usize::MAX,
            Err(e) => return Err(e),
        };
        let entry = worst.entry(key).or_insert((step, i_min, e_hat));
        if e_hat > entry.2 {
            *entry = (step, i_min, e_hat);
        }
    }

    let mut events = Vec::new();
    for (key, (step, i_min, e_hat)) in worst {
        let e = modulate_error(e_hat, cfg);
        let region = if key == usize::MAX {
            blame_region_fallback(traj, i_min, e)
        } else {
            blame_region(traj, key, i_min, e)
        };
        let points: Vec<BlamePoint<f64>> = region
            .positions
            .iter()
            .map(|p| BlamePoint { pos: *p, e })
            .collect();
        map.apply_blame(&points, cfg.blame_radius)?;
        if e_hat >= REPORT_FLOOR * cfg.e_th {
            events.push(BlameEventRecord {
                lap,
                step,
                i_min,
                i_transition: region.i_transition,
                e_hat,
                e,
            });
        }
    }
    Ok(events)
}

/// Extra negative push after an aborted lap: the plan was infeasible enough
/// to lose the vehicle, so the last blame region is driven down at twice
/// the usual negative gain so the next plan retreats decisively.
pub fn abort_feedback(
    log: &[LapLogRow],
    traj: &TimedTrajectory<f64>,
    map: &mut ConstraintMap<f64>,
    cfg: &FeedbackConfig<f64>,
) -> Result<()> {
    let Some(last) = log.last() else {
        return Ok(());
    };
    let (i_min, _, e_hat) = closest_point(traj, last.meas);
    let a_par: Vec<f64> = traj.samples.iter().map(|s| s.a_par).collect();
    let peak = a_par.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let zones = sign_zones(&a_par, SIGN_DEADBAND_FACTOR * peak);
    let e = 2.0 * cfg.w_minus * e_hat.max(cfg.e_th);
    let region = match transition_index(&zones.z, i_min) {
        Ok(z) => blame_region(traj, z, i_min, e),
        Err(Error::NoTransition) => blame_region_fallback(traj, i_min, e),
        Err(err) => return Err(err),
    };
    let points: Vec<BlamePoint<f64>> = region
        .positions
        .iter()
        .map(|p| BlamePoint { pos: *p, e })
        .collect();
    map.apply_blame(&points, cfg.blame_radius)
}

/// Per-lap summary row of a closed-loop run.
#[derive(Clone, Debug)]
pub struct LapResult {
    pub lap: usize,
    pub planned_time: f64,
    pub executed_duration: f64,
    pub max_e_hat: f64,
    pub mean_e_hat: f64,
    pub blame_events: usize,
    pub aborted: bool,
}

pub struct ClosedLoopResult {
    pub laps: Vec<LapResult>,
    pub map: ConstraintMap<f64>,
    pub params: FreeParameters<f64>,
    pub planned: TimedTrajectory<f64>,
    pub history: Vec<GenerationRecord<f64>>,
    /// The exact text persisted as results.txt.
    pub results_text: String,
}

fn results_header() -> &'static str {
    "lap,planned_time,executed_duration,max_e_hat,mean_e_hat,blame_events,aborted\n"
}

fn results_row(r: &LapResult) -> String {
    format!(
        "{},{},{},{},{},{},{}\n",
        r.lap,
        io::fmt_f64(r.planned_time),
        io::fmt_f64(r.executed_duration),
        io::fmt_f64(r.max_e_hat),
        io::fmt_f64(r.mean_e_hat),
        r.blame_events,
        r.aborted as u8
    )
}

/// The full loop: per lap, re-optimize the raceline under the current map
/// (warm-starting the optimizer), drive it, and feed tracking errors back
/// into the map. Aborted laps still produce results and stronger negative
/// feedback; the loop never halts early.
pub fn closed_loop(cfg: &ExperimentConfig) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let track = cfg.load_track_model()?;
    let e = &cfg.experiment;
    let mut map = cfg.fresh_map(&track)?;
    let fit = crate::fit::fit_centerline_uniform_speed(&track.centerline(), e.n_ctrl)?;

    let mut x = fit.params.to_vector();
    let mut warm: Option<CmaState<f64>> = None;
    let mut opt_rng = rng::substream(e.seed, 1);
    let mut plant_rng = rng::substream(e.seed, 2);

    let out_dir = e.out.as_ref().map(PathBuf::from);
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(cfg)
            .map_err(|err| Error::Invalid(format!("config serialization: {err}")))?;
        fs::write(dir.join("config.toml"), text)?;
    }

    let mut results = Vec::new();
    let mut history: Vec<GenerationRecord<f64>> = Vec::new();
    let mut evals_total = 0usize;
    let mut results_text = String::from(results_header());
    let mut final_params = fit.params.clone();
    let mut final_traj: Option<TimedTrajectory<f64>> = None;

    for lap in 1..=e.laps {
        let budget = if lap == 1 {
            e.initial_iterations.unwrap_or(e.iterations_per_lap)
        } else {
            e.iterations_per_lap
        };
        let objective =
            |v: &[f64]| objective_from_vector(e.n_ctrl, v, &track, &cfg.limits, Some(&map), &cfg.objective);
        let outcome = cma::optimize(
            &objective,
            &x,
            cfg.optimizer.sigma_init,
            budget,
            &mut opt_rng,
            warm.take(),
        )?;
        // A short warm-started run can fail to rediscover the previous
        // plan (the warm mean is not the previous best), so the incumbent
        // keeps its seat unless the new best beats it under the current
        // map. When the map tightened, the incumbent re-scores accordingly
        // and planned time is still allowed to rise.
        if outcome.best_cost <= objective(&x) {
            x = outcome.best.clone();
        }
        warm = Some(outcome.state);
        for mut rec in outcome.history {
            rec.evaluations += evals_total;
            history.push(rec);
        }
        evals_total += outcome.evaluations;

        let params = FreeParameters::from_vector(e.n_ctrl, &x)?;
        let curve = params.apply_closure()?;
        let planned_time =
            min_lap_time_spatial(&curve, &cfg.limits, &map, DEFAULT_LAP_TIME_SAMPLES)?;
        let traj = sample_trajectory(&curve, planned_time, e.trajectory_samples)?;

        let lap_run = run_lap(
            &traj,
            &cfg.plant,
            &cfg.friction,
            &cfg.limits,
            &cfg.mpc,
            &map,
            &mut plant_rng,
        )?;

        let feedback_on = e.feedback_enabled && lap >= e.feedback_enabled_from_lap;
        let events = if feedback_on {
            let ev = feedback_pass(&lap_run.log, &traj, &mut map, &cfg.feedback, lap)?;
            if lap_run.aborted {
                abort_feedback(&lap_run.log, &traj, &mut map, &cfg.feedback)?;
            }
            ev
        } else {
            Vec::new()
        };

        let result = LapResult {
            lap,
            planned_time,
            executed_duration: lap_run.duration,
            max_e_hat: lap_run.max_e_hat,
            mean_e_hat: lap_run.mean_e_hat,
            blame_events: events.len(),
            aborted: lap_run.aborted,
        };
        results_text.push_str(&results_row(&result));

        if let Some(dir) = &out_dir {
            let lap_dir = dir.join(format!("lap_{lap:03}"));
            fs::create_dir_all(&lap_dir)?;
            fs::write(
                lap_dir.join("trajectory.csv"),
                io::write_trajectory_csv(planned_time, &traj.samples),
            )?;
            fs::write(lap_dir.join("params.csv"), io::write_params(&params))?;
            fs::write(lap_dir.join("map.csv"), io::write_map(&map))?;
            fs::write(lap_dir.join("lap_log.csv"), io::write_lap_log(&lap_run.log))?;
            fs::write(
                lap_dir.join("blame_events.csv"),
                io::write_blame_events(&events),
            )?;
            let svg = render_svg(&RenderInput {
                track: &track,
                map: Some(&map),
                planned: Some(&traj.samples),
                executed: &lap_run.log,
                blame: &events,
            });
            fs::write(lap_dir.join("lap.svg"), svg)?;
        }

        results.push(result);
        final_params = params;
        final_traj = Some(traj);
    }

    if let Some(dir) = &out_dir {
        fs::write(dir.join("results.txt"), &results_text)?;
        fs::write(dir.join("history.csv"), io::write_history(&history))?;
        fs::write(dir.join("map.csv"), io::write_map(&map))?;
    }

    Ok(ClosedLoopResult {
        laps: results,
        map,
        params: final_params,
        planned: final_traj.expect("laps >= 1 guarantees a trajectory"),
        history,
        results_text,
    })
}

/// Static raceline optimization: one cold CMA-ES run against a fresh map,
/// no driving. Returns both the optimized plan and the centerline-fit
/// baseline it is measured against.
pub struct StaticResult {
    pub params: FreeParameters<f64>,
    pub planned: TimedTrajectory<f64>,
    pub planned_time: f64,
    pub baseline_time: f64,
    pub history: Vec<GenerationRecord<f64>>,
    pub evaluations: usize,
}

pub fn static_optimize(cfg: &ExperimentConfig) -> Result<StaticResult> {
    cfg.validate()?;
    let track = cfg.load_track_model()?;
    let e = &cfg.experiment;
    let map = cfg.fresh_map(&track)?;
    let fit = crate::fit::fit_centerline_uniform_speed(&track.centerline(), e.n_ctrl)?;
    let baseline = fit.params.apply_closure()?;
    let baseline_time =
        min_lap_time_spatial(&baseline, &cfg.limits, &map, DEFAULT_LAP_TIME_SAMPLES)?;

    let budget = e.initial_iterations.unwrap_or(e.iterations_per_lap);
    let mut opt_rng = rng::substream(e.seed, 1);
    let objective =
        |v: &[f64]| objective_from_vector(e.n_ctrl, v, &track, &cfg.limits, Some(&map), &cfg.objective);
    let outcome = cma::optimize(
        &objective,
        &fit.params.to_vector(),
        cfg.optimizer.sigma_init,
        budget,
        &mut opt_rng,
        None,
    )?;

    let params = FreeParameters::from_vector(e.n_ctrl, &outcome.best)?;
    let curve = params.apply_closure()?;
    let planned_time = min_lap_time_spatial(&curve, &cfg.limits, &map, DEFAULT_LAP_TIME_SAMPLES)?;
    let traj = sample_trajectory(&curve, planned_time, e.trajectory_samples)?;

    if let Some(dir) = e.out.as_ref().map(PathBuf::from) {
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("trajectory.csv"),
            io::write_trajectory_csv(planned_time, &traj.samples),
        )?;
        fs::write(dir.join("params.csv"), io::write_params(&params))?;
        fs::write(dir.join("history.csv"), io::write_history(&outcome.history))?;
        let svg = render_svg(&RenderInput {
            track: &track,
            map: Some(&map),
            planned: Some(&traj.samples),
            executed: &[],
            blame: &[],
        });
        fs::write(dir.join("plan.svg"), svg)?;
        let summary = format!(
            "baseline_time,{}\nplanned_time,{}\nevaluations,{}\n",
            io::fmt_f64(baseline_time),
            io::fmt_f64(planned_time),
            outcome.evaluations
        );
        fs::write(dir.join("summary.txt"), summary)?;
    }

    Ok(StaticResult {
        params,
        planned: traj,
        planned_time,
        baseline_time,
        history: outcome.history,
        evaluations: outcome.evaluations,
    })
}

/// Lap time the stored geometry requires under the given limits and map.
/// The parameter-domain kinematics are recovered from the stored physical
/// values through the stored lap time, then rescaled by the tightest of the
/// speed and acceleration ratios, the same max form the planner uses.
pub fn evaluate_stored(
    stored: &io::StoredTrajectory,
    limits: &DynamicLimits<f64>,
    map: Option<&ConstraintMap<f64>>,
) -> Result<f64> {
    limits.validate()?;
    let t_old = stored.lap_time;
    if !(t_old > 0.0) {
        return Err(Error::Invalid("stored lap time must be positive".into()));
    }
    let mut t_req = 0.0f64;
    for s in &stored.samples {
        let v_hat = s.v * t_old;
        let a_par_hat = s.a_par * t_old * t_old;
        let a_perp_hat = s.a_perp * t_old * t_old;
        let (a_par_lim, a_perp_lim) = match map {
            Some(m) => m.scale_at(s.pos, limits)?,
            None => (limits.a_par_nominal, limits.a_perp_nominal),
        };
        t_req = t_req
            .max(v_hat / limits.v_max)
            .max((a_par_hat.abs() / a_par_lim).sqrt())
            .max((a_perp_hat.abs() / a_perp_lim).sqrt());
    }
    if !(t_req > 0.0) {
        return Err(Error::Invalid("degenerate stored trajectory".into()));
    }
    Ok(t_req)
}

/// Rebuilds the constraint map by replaying stored lap logs through the
/// feedback pass against their stored planned trajectories, starting from a
/// fresh map. Lets feedback gains be retuned without re-simulating.
pub fn replay_feedback(
    cfg: &ExperimentConfig,
    run_dir: &Path,
) -> Result<(ConstraintMap<f64>, Vec<BlameEventRecord>)> {
    cfg.validate()?;
    let track = cfg.load_track_model()?;
    let mut map = cfg.fresh_map(&track)?;
    let mut events = Vec::new();
    let mut lap = 1usize;
    loop {
        let lap_dir = run_dir.join(format!("lap_{lap:03}"));
        if !lap_dir.exists() {
            break;
        }
        let traj_path = lap_dir.join("trajectory.csv");
        let stored = io::read_trajectory_csv(
            &fs::read_to_string(&traj_path)?,
            &traj_path.display().to_string(),
        )?;
        let params_path = lap_dir.join("params.csv");
        let params = io::read_params(
            &fs::read_to_string(&params_path)?,
            &params_path.display().to_string(),
        )?;
        let curve = params.apply_closure()?;
        let traj = sample_trajectory(&curve, stored.lap_time, stored.samples.len())?;
        let log_path = lap_dir.join("lap_log.csv");
        let log = io::read_lap_log(
            &fs::read_to_string(&log_path)?,
            &log_path.display().to_string(),
        )?;
        events.extend(feedback_pass(&log, &traj, &mut map, &cfg.feedback, lap)?);
        lap += 1;
    }
    if lap == 1 {
        return Err(Error::Config(format!(
            "no lap directories under {}",
            run_dir.display()
        )));
    }
    Ok((map, events))
}
