//! Text serialization for every artifact the loop persists: tracks,
//! trajectories, curve parameters, constraint maps, lap logs, blame events
//! and optimizer history. All floating-point values are written with 17
//! significant digits so a read-back is bit-exact, which is what makes
//! fixed-seed runs byte-reproducible.

use std::fmt::Write as _;
use std::path::Path;

use crate::closure::FreeParameters;
use crate::cma::GenerationRecord;
use crate::constraint_map::ConstraintMap;
use crate::plant::{ControlInput, VehicleState};
use crate::timing::TrajectorySample;
use crate::track::TrackModel;
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Shortest exact decimal form: 17 significant digits round-trip f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn parse_f64(s: &str, file: &str, line_no: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        file: file.into(),
        msg: format!("bad number {:?} on line {}", s, line_no + 1),
    })
}

fn parse_usize(s: &str, file: &str, line_no: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Parse {
        file: file.into(),
        msg: format!("bad integer {:?} on line {}", s, line_no + 1),
    })
}

// ---- track files ----

/// Closed polyline with widths; the closing duplicate row is written out.
pub fn write_track_csv(rows: &[(Vec2<f64>, f64, f64)]) -> String {
    let mut out = String::from("x,y,w_left,w_right\n");
    for (p, wl, wr) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(*wl),
            fmt_f64(*wr)
        );
    }
    if let Some((p, wl, wr)) = rows.first() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(*wl),
            fmt_f64(*wr)
        );
    }
    out
}

pub fn read_track_csv(text: &str, file: &str) -> Result<TrackModel<f64>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                file: file.into(),
                msg: format!("expected 4 fields on line {}", i + 1),
            });
        }
        rows.push((
            Vec2::new(parse_f64(parts[0], file, i)?, parse_f64(parts[1], file, i)?),
            parse_f64(parts[2], file, i)?,
            parse_f64(parts[3], file, i)?,
        ));
    }
    TrackModel::new(&rows)
}

pub fn load_track(path: &Path) -> Result<TrackModel<f64>> {
    let text = std::fs::read_to_string(path)?;
    read_track_csv(&text, &path.display().to_string())
}

// ---- trajectories ----

/// Samples only; enough to evaluate, replay, or render a stored plan.
#[derive(Clone, Debug)]
pub struct StoredTrajectory {
    pub lap_time: f64,
    pub samples: Vec<TrajectorySample<f64>>,
}

pub fn write_trajectory_csv(lap_time: f64, samples: &[TrajectorySample<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lap_time,{}", fmt_f64(lap_time));
    out.push_str("u,x,y,v,a_par,a_perp,kappa\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(s.u),
            fmt_f64(s.pos.x),
            fmt_f64(s.pos.y),
            fmt_f64(s.v),
            fmt_f64(s.a_par),
            fmt_f64(s.a_perp),
            fmt_f64(s.kappa)
        );
    }
    out
}

pub fn read_trajectory_csv(text: &str, file: &str) -> Result<StoredTrajectory> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        file: file.into(),
        msg: "empty trajectory file".into(),
    })?;
    let lap_time = match header.split(',').collect::<Vec<_>>().as_slice() {
        ["lap_time", v] => parse_f64(v, file, 0)?,
        _ => {
            return Err(Error::Parse {
                file: file.into(),
                msg: "first line must be lap_time,<seconds>".into(),
            })
        }
    };
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('u') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Parse {
                file: file.into(),
                msg: format!("expected 7 fields on line {}", i + 1),
            });
        }
        samples.push(TrajectorySample {
            u: parse_f64(parts[0], file, i)?,
            pos: Vec2::new(parse_f64(parts[1], file, i)?, parse_f64(parts[2], file, i)?),
            v: parse_f64(parts[3], file, i)?,
            a_par: parse_f64(parts[4], file, i)?,
            a_perp: parse_f64(parts[5], file, i)?,
            kappa: parse_f64(parts[6], file, i)?,
        });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            file: file.into(),
            msg: "trajectory has no samples".into(),
        });
    }
    Ok(StoredTrajectory { lap_time, samples })
}

// ---- curve parameter records ----

pub fn write_params(free: &FreeParameters<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n,{}", free.n());
    for p in free.free_points() {
        let _ = writeln!(out, "point,{},{}", fmt_f64(p.x), fmt_f64(p.y));
    }
    for w in free.free_weights() {
        let _ = writeln!(out, "weight,{}", fmt_f64(*w));
    }
    for k in free.free_knots() {
        let _ = writeln!(out, "knot,{}", fmt_f64(*k));
    }
    out
}

pub fn read_params(text: &str, file: &str) -> Result<FreeParameters<f64>> {
    let mut n = None;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut knots = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        match parts.as_slice() {
            ["n", v] => n = Some(parse_usize(v, file, i)?),
            ["point", x, y] => {
                points.push(Vec2::new(parse_f64(x, file, i)?, parse_f64(y, file, i)?))
            }
            ["weight", w] => weights.push(parse_f64(w, file, i)?),
            ["knot", k] => knots.push(parse_f64(k, file, i)?),
            _ => {
                return Err(Error::Parse {
                    file: file.into(),
                    msg: format!("unrecognized record on line {}", i + 1),
                })
            }
        }
    }
    let n = n.ok_or_else(|| Error::Parse {
        file: file.into(),
        msg: "missing n record".into(),
    })?;
    FreeParameters::new(n, points, weights, knots)
}

// ---- constraint maps ----

pub fn write_map(map: &ConstraintMap<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "origin,{},{}", fmt_f64(map.x_min()), fmt_f64(map.y_min()));
    let _ = writeln!(out, "resolution,{}", fmt_f64(map.resolution()));
    let _ = writeln!(out, "cells,{},{}", map.nx(), map.ny());
    let _ = writeln!(out, "noise,{},{}", fmt_f64(map.r_meas), fmt_f64(map.q_proc));
    let _ = writeln!(out, "clamp,{},{}", fmt_f64(map.m_min), fmt_f64(map.m_max));
    out.push_str("ix,iy,m,v\n");
    for iy in 0..map.ny() {
        for ix in 0..map.nx() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                ix,
                iy,
                fmt_f64(map.m_cell(ix, iy)),
                fmt_f64(map.v_cell(ix, iy))
            );
        }
    }
    out
}

pub fn read_map(text: &str, file: &str) -> Result<ConstraintMap<f64>> {
    let mut origin = None;
    let mut resolution = None;
    let mut cells = None;
    let mut noise = None;
    let mut clamp = None;
    let mut body = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("ix,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        match parts.as_slice() {
            ["origin", x, y] => {
                origin = Some((parse_f64(x, file, i)?, parse_f64(y, file, i)?))
            }
            ["resolution", r] => resolution = Some(parse_f64(r, file, i)?),
            ["cells", nx, ny] => {
                cells = Some((parse_usize(nx, file, i)?, parse_usize(ny, file, i)?))
            }
            ["noise", r, q] => noise = Some((parse_f64(r, file, i)?, parse_f64(q, file, i)?)),
            ["clamp", lo, hi] => clamp = Some((parse_f64(lo, file, i)?, parse_f64(hi, file, i)?)),
            [ix, iy, m, v] => body.push((
                parse_usize(ix, file, i)?,
                parse_usize(iy, file, i)?,
                parse_f64(m, file, i)?,
                parse_f64(v, file, i)?,
            )),
            _ => {
                return Err(Error::Parse {
                    file: file.into(),
                    msg: format!("unrecognized record on line {}", i + 1),
                })
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        file: file.into(),
        msg: format!("missing {what} header"),
    };
    let (x_min, y_min) = origin.ok_or_else(|| missing("origin"))?;
    let resolution = resolution.ok_or_else(|| missing("resolution"))?;
    let (nx, ny) = cells.ok_or_else(|| missing("cells"))?;
    let (r_meas, q_proc) = noise.ok_or_else(|| missing("noise"))?;
    let (m_min, m_max) = clamp.ok_or_else(|| missing("clamp"))?;
    let mut m = vec![0.0f64; nx * ny];
    let mut v = vec![0.0f64; nx * ny];
    let mut seen = vec![false; nx * ny];
    for (ix, iy, mv, vv) in body {
        if ix >= nx || iy >= ny {
            return Err(Error::Parse {
                file: file.into(),
                msg: format!("cell ({ix},{iy}) outside {nx}x{ny} grid"),
            });
        }
        let idx = iy * nx + ix;
        m[idx] = mv;
        v[idx] = vv;
        seen[idx] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parse {
            file: file.into(),
            msg: "incomplete cell listing".into(),
        });
    }
    ConstraintMap::from_raw(
        x_min, y_min, resolution, nx, ny, m, v, r_meas, q_proc, m_min, m_max,
    )
}

// ---- lap logs ----

#[derive(Clone, Copy, Debug)]
pub struct LapLogRow {
    /// Plant clock, s.
    pub t: f64,
    pub state: VehicleState<f64>,
    pub input: ControlInput<f64>,
    pub slip: bool,
    /// Noisy position fed to the controller, m.
    pub meas: Vec2<f64>,
}

pub fn write_lap_log(rows: &[LapLogRow]) -> String {
    let mut out =
        String::from("t,x,y,theta,delta,v,a_cmd,delta_dot_cmd,slip_flag,meas_x,meas_y\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.state.x),
            fmt_f64(r.state.y),
            fmt_f64(r.state.theta),
            fmt_f64(r.state.delta),
            fmt_f64(r.state.v),
            fmt_f64(r.input.a),
            fmt_f64(r.input.delta_dot),
            u8::from(r.slip),
            fmt_f64(r.meas.x),
            fmt_f64(r.meas.y)
        );
    }
    out
}

pub fn read_lap_log(text: &str, file: &str) -> Result<Vec<LapLogRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('t') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 11 {
            return Err(Error::Parse {
                file: file.into(),
                msg: format!("expected 11 fields on line {}", i + 1),
            });
        }
        rows.push(LapLogRow {
            t: parse_f64(parts[0], file, i)?,
            state: VehicleState {
                x: parse_f64(parts[1], file, i)?,
                y: parse_f64(parts[2], file, i)?,
                theta: parse_f64(parts[3], file, i)?,
                delta: parse_f64(parts[4], file, i)?,
                v: parse_f64(parts[5], file, i)?,
            },
            input: ControlInput {
                a: parse_f64(parts[6], file, i)?,
                delta_dot: parse_f64(parts[7], file, i)?,
            },
            slip: parts[8].trim() == "1",
            meas: Vec2::new(parse_f64(parts[9], file, i)?, parse_f64(parts[10], file, i)?),
        });
    }
    Ok(rows)
}

// ---- blame events ----

#[derive(Clone, Copy, Debug)]
pub struct BlameEventRecord {
    pub lap: usize,
    /// Controller step index within the lap.
    pub step: usize,
    pub i_min: usize,
    pub i_transition: usize,
    /// Observed tracking error, m.
    pub e_hat: f64,
    /// Modulated update signal actually applied.
    pub e: f64,
}

pub fn write_blame_events(events: &[BlameEventRecord]) -> String {
    let mut out = String::from("lap,step,i_min,i_transition,e_hat,e\n");
    for ev in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            ev.lap,
            ev.step,
            ev.i_min,
            ev.i_transition,
            fmt_f64(ev.e_hat),
            fmt_f64(ev.e)
        );
    }
    out
}

// ---- optimizer history ----

pub fn write_history(history: &[GenerationRecord<f64>]) -> String {
    let mut out = String::from("generation,evaluations,best_cost,mean_cost,sigma\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            h.generation,
            h.evaluations,
            fmt_f64(h.best_cost),
            fmt_f64(h.mean_cost),
            fmt_f64(h.sigma)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint_map::MapParams;

    #[test]
    fn f64_text_roundtrip_is_bit_exact() {
        for x in [
            0.1,
            -3.75e-11,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -0.0,
            5e-324,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{} -> {}", x, s);
        }
    }

    #[test]
    fn track_csv_roundtrip() {
        let rows = crate::tracks::stadium_oval_rows();
        let text = write_track_csv(&rows);
        let track = read_track_csv(&text, "test").unwrap();
        assert_eq!(track.points().len(), rows.len());
        for (p, r) in track.points().iter().zip(&rows) {
            assert_eq!(p.pos, r.0);
            assert_eq!(p.w_left, r.1);
        }
        // Writing again from the parsed model's rows gives identical text.
        let rows2: Vec<(Vec2<f64>, f64, f64)> = track
            .points()
            .iter()
            .map(|p| (p.pos, p.w_left, p.w_right))
            .collect();
        assert_eq!(write_track_csv(&rows2), text);
    }

    #[test]
    fn bundled_track_assets_in_sync() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/tracks");
        let oval = std::fs::read_to_string(format!("{root}/oval.csv")).unwrap();
        assert_eq!(oval, write_track_csv(&crate::tracks::stadium_oval_rows()));
        let scurve = std::fs::read_to_string(format!("{root}/scurve.csv")).unwrap();
        assert_eq!(scurve, write_track_csv(&crate::tracks::wavy_circle_rows()));
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let samples: Vec<TrajectorySample<f64>> = (0..8)
            .map(|i| TrajectorySample {
                u: i as f64 / 8.0,
                pos: Vec2::new(i as f64 * 0.3, -(i as f64) * 0.7),
                v: 1.0 + i as f64,
                a_par: 0.1 * i as f64,
                a_perp: -0.2 * i as f64,
                kappa: 0.01 * i as f64,
            })
            .collect();
        let text = write_trajectory_csv(7.25, &samples);
        let back = read_trajectory_csv(&text, "test").unwrap();
        assert_eq!(back.lap_time, 7.25);
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in back.samples.iter().zip(&samples) {
            assert_eq!(a.pos, b.pos);
            assert_eq!(a.v, b.v);
            assert_eq!(a.kappa, b.kappa);
        }
    }

    #[test]
    fn params_roundtrip() {
        let n = 9;
        let pts: Vec<Vec2<f64>> = (0..n - 2)
            .map(|i| {
                let a = i as f64 / (n - 2) as f64 * std::f64::consts::TAU;
                Vec2::new(3.0 * a.cos(), 3.0 * a.sin())
            })
            .collect();
        let weights: Vec<f64> = (0..n - 2).map(|i| 1.0 + 0.01 * i as f64).collect();
        let knots: Vec<f64> = (1..=n - 3).map(|i| i as f64 / (n - 2) as f64).collect();
        let free = FreeParameters::new(n, pts, weights, knots).unwrap();
        let text = write_params(&free);
        let back = read_params(&text, "test").unwrap();
        assert_eq!(back.free_points(), free.free_points());
        assert_eq!(back.free_weights(), free.free_weights());
        assert_eq!(back.free_knots(), free.free_knots());
    }

    #[test]
    fn map_roundtrip() {
        let params = MapParams::default();
        let mut map: ConstraintMap<f64> =
            ConstraintMap::new(-2.0, -1.0, 3.0, 2.0, &params).unwrap();
        map.set_cell(1, 2, 0.73, 0.41);
        map.set_cell(0, 0, 1.21, 0.99);
        let text = write_map(&map);
        let back = read_map(&text, "test").unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn lap_log_roundtrip() {
        let rows = vec![
            LapLogRow {
                t: 0.02,
                state: VehicleState {
                    x: 1.0,
                    y: 2.0,
                    theta: 0.5,
                    delta: -0.1,
                    v: 3.0,
                },
                input: ControlInput {
                    a: 0.7,
                    delta_dot: -0.3,
                },
                slip: true,
                meas: Vec2::new(1.004, 1.997),
            },
            LapLogRow {
                t: 0.04,
                state: VehicleState {
                    x: 1.06,
                    y: 2.01,
                    theta: 0.51,
                    delta: -0.11,
                    v: 3.01,
                },
                input: ControlInput {
                    a: 0.2,
                    delta_dot: 0.1,
                },
                slip: false,
                meas: Vec2::new(1.06, 2.011),
            },
        ];
        let text = write_lap_log(&rows);
        let back = read_lap_log(&text, "test").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].state, rows[0].state);
        assert_eq!(back[0].slip, true);
        assert_eq!(back[1].slip, false);
        assert_eq!(back[1].meas, rows[1].meas);
    }
}
