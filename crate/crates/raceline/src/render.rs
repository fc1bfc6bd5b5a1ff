//! SVG rendering of runs: track boundaries, constraint-map heat cells,
//! planned and executed paths, and blame regions. Hand-rolled tags; no
//! drawing dependencies.

use std::fmt::Write as _;

use crate::blame::circular_range;
use crate::constraint_map::ConstraintMap;
use crate::io::{BlameEventRecord, LapLogRow};
use crate::timing::TrajectorySample;
use crate::track::TrackModel;
use crate::vec2::Vec2;

/// Everything one frame can show; all layers optional except the track.
pub struct RenderInput<'a> {
    pub track: &'a TrackModel<f64>,
    pub map: Option<&'a ConstraintMap<f64>>,
    pub planned: Option<&'a [TrajectorySample<f64>]>,
    pub executed: &'a [LapLogRow],
    pub blame: &'a [BlameEventRecord],
}

fn fmt(x: f64) -> String {
    // Three decimals of a meter is below stroke resolution.
    format!("{:.3}", x)
}

/// Heat-cell rectangle for one map cell, or None when the cell is close
/// enough to neutral that painting it would only add noise. Blue below 1,
/// red above; opacity grows with the deviation.
pub fn cell_rect(map: &ConstraintMap<f64>, ix: usize, iy: usize) -> Option<String> {
    let m = map.m_cell(ix, iy);
    let dev = m - 1.0;
    if dev.abs() < 0.01 {
        return None;
    }
    let alpha = dev.abs().min(1.0);
    let color = if dev < 0.0 { "#2060c0" } else { "#c03020" };
    let res = map.resolution();
    let x = map.x_min() + ix as f64 * res;
    let y = map.y_min() + iy as f64 * res;
    Some(format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" fill-opacity=\"{:.3}\"/>",
        fmt(x),
        fmt(y),
        fmt(res),
        fmt(res),
        color,
        alpha
    ))
}

fn polyline(points: impl Iterator<Item = Vec2<f64>>, style: &str, close: bool) -> String {
    let mut coords = String::new();
    let mut first = None;
    for p in points {
        if first.is_none() {
            first = Some(p);
        }
        let _ = write!(coords, "{},{} ", fmt(p.x), fmt(p.y));
    }
    if close {
        if let Some(p) = first {
            let _ = write!(coords, "{},{}", fmt(p.x), fmt(p.y));
        }
    }
    format!("<polyline points=\"{}\" {}/>", coords.trim_end(), style)
}

/// Outward normals of the closed centerline (left of travel).
fn boundary(track: &TrackModel<f64>, left: bool) -> Vec<Vec2<f64>> {
    let pts = track.points();
    let n = pts.len();
    (0..n)
        .map(|i| {
            let prev = pts[(i + n - 1) % n].pos;
            let next = pts[(i + 1) % n].pos;
            let tangent = next - prev;
            let len = tangent.norm().max(1e-12);
            let normal = Vec2::new(-tangent.y / len, tangent.x / len);
            if left {
                pts[i].pos + normal.scale(pts[i].w_left)
            } else {
                pts[i].pos - normal.scale(pts[i].w_right)
            }
        })
        .collect()
}

pub fn render_svg(input: &RenderInput) -> String {
    // Frame from the map extent when present, else the padded track bounds.
    let (lo, hi) = match input.map {
        Some(m) => (
            Vec2::new(m.x_min(), m.y_min()),
            Vec2::new(m.x_max(), m.y_max()),
        ),
        None => input.track.extent_with_margin(1.0),
    };
    let w = hi.x - lo.x;
    let h = hi.y - lo.y;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\" width=\"900\" height=\"{}\">",
        fmt(lo.x),
        fmt(-hi.y),
        fmt(w),
        fmt(h),
        (900.0 * h / w) as i64
    );
    // Flip y so +y points up in the figure.
    out.push_str("<g transform=\"scale(1,-1)\">\n");
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#fafaf7\"/>",
        fmt(lo.x),
        fmt(lo.y),
        fmt(w),
        fmt(h)
    );

    if let Some(map) = input.map {
        out.push_str("<g>\n");
        for iy in 0..map.ny() {
            for ix in 0..map.nx() {
                if let Some(rect) = cell_rect(map, ix, iy) {
                    out.push_str(&rect);
                    out.push('\n');
                }
            }
        }
        out.push_str("</g>\n");
    }

    for left in [true, false] {
        let pts = boundary(input.track, left);
        out.push_str(&polyline(
            pts.into_iter(),
            "fill=\"none\" stroke=\"#303030\" stroke-width=\"0.05\"",
            true,
        ));
        out.push('\n');
    }

    if let Some(samples) = input.planned {
        // Split by longitudinal-acceleration sign: accelerating green,
        // braking orange, neutral gray.
        let n = samples.len();
        let deadband = crate::blame::SIGN_DEADBAND_FACTOR
            * samples
                .iter()
                .map(|s| s.a_par.abs())
                .fold(0.0f64, f64::max);
        let class = |a: f64| -> usize {
            if a > deadband {
                0
            } else if a < -deadband {
                1
            } else {
                2
            }
        };
        let colors = ["#1a8f3c", "#d97a1a", "#888888"];
        let mut i = 0usize;
        while i < n {
            let c = class(samples[i].a_par);
            let mut j = i + 1;
            while j < n && class(samples[j].a_par) == c {
                j += 1;
            }
            // Overlap one sample so segments join visually.
            let end = (j + 1).min(n);
            out.push_str(&polyline(
                samples[i..end].iter().map(|s| s.pos),
                &format!(
                    "fill=\"none\" stroke=\"{}\" stroke-width=\"0.08\"",
                    colors[c]
                ),
                false,
            ));
            out.push('\n');
            i = j;
        }

        // Blame regions as translucent overlays on the planned line.
        for ev in input.blame {
            if ev.i_transition >= n || ev.i_min >= n {
                continue;
            }
            let idx = circular_range(ev.i_transition, ev.i_min, n);
            out.push_str(&polyline(
                idx.into_iter().map(|k| samples[k].pos),
                "fill=\"none\" stroke=\"#4040ff\" stroke-width=\"0.22\" stroke-opacity=\"0.35\"",
                false,
            ));
            out.push('\n');
        }
    }

    if !input.executed.is_empty() {
        out.push_str(&polyline(
            input.executed.iter().map(|r| r.state.pos()),
            "fill=\"none\" stroke=\"#101010\" stroke-width=\"0.04\" stroke-dasharray=\"0.15,0.1\"",
            false,
        ));
        out.push('\n');
    }

    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint_map::MapParams;

    /// Minimal XML well-formedness: every opened tag closes in order.
    fn well_formed(svg: &str) -> bool {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg;
        while let Some(start) = rest.find('<') {
            let Some(end_rel) = rest[start..].find('>') else {
                return false;
            };
            let tag = &rest[start + 1..start + end_rel];
            rest = &rest[start + end_rel + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                match stack.pop() {
                    Some(open) if open == name.trim() => {}
                    _ => return false,
                }
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name: String = tag
                    .chars()
                    .take_while(|c| !c.is_whitespace() && *c != '>')
                    .collect();
                stack.push(name);
            }
        }
        stack.is_empty()
    }

    #[test]
    fn plan_only_rendering_is_well_formed() {
        let track = crate::tracks::stadium_oval();
        let input = RenderInput {
            track: &track,
            map: None,
            planned: None,
            executed: &[],
            blame: &[],
        };
        let svg = render_svg(&input);
        assert!(svg.starts_with("<svg"));
        assert!(well_formed(&svg), "unbalanced tags");
    }

    #[test]
    fn cell_colors_match_values() {
        let track = crate::tracks::stadium_oval();
        let (lo, hi) = track.extent_with_margin(2.0);
        let params = MapParams::default();
        let mut map: ConstraintMap<f64> =
            ConstraintMap::new(lo.x, lo.y, hi.x, hi.y, &params).unwrap();
        let mut rng = crate::rng::seeded(17);
        use rand::Rng;
        let mut expectations = Vec::new();
        for _ in 0..10 {
            let ix = rng.gen_range(0..map.nx());
            let iy = rng.gen_range(0..map.ny());
            let m = rng.gen_range(0.2..1.8);
            map.set_cell(ix, iy, m, 0.5);
            expectations.push((ix, iy, m));
        }
        let input = RenderInput {
            track: &track,
            map: Some(&map),
            planned: None,
            executed: &[],
            blame: &[],
        };
        let svg = render_svg(&input);
        assert!(well_formed(&svg));
        for (ix, iy, m) in expectations {
            let rect = cell_rect(&map, ix, iy);
            match rect {
                Some(r) => {
                    assert!(svg.contains(&r), "missing cell rect for ({ix},{iy})");
                    if m < 1.0 {
                        assert!(r.contains("#2060c0"), "cell below 1 must be blue");
                    } else {
                        assert!(r.contains("#c03020"), "cell above 1 must be red");
                    }
                }
                None => assert!((m - 1.0).abs() < 0.01),
            }
        }
    }

    #[test]
    fn full_frame_renders() {
        let track = crate::tracks::stadium_oval();
        let fitted = crate::fit::fit_centerline(&track.centerline(), 16).unwrap();
        let curve = fitted.params.apply_closure().unwrap();
        let limits = crate::timing::DynamicLimits {
            v_max: 8.0,
            a_par_nominal: 3.0,
            a_perp_nominal: 4.0,
        };
        let lap_time = crate::timing::min_lap_time_const(&curve, &limits, 1024).unwrap();
        let traj = crate::timing::sample_trajectory(&curve, lap_time, 512).unwrap();
        let executed = vec![LapLogRow {
            t: 0.0,
            state: crate::plant::VehicleState {
                x: traj.samples[0].pos.x,
                y: traj.samples[0].pos.y,
                theta: 0.0,
                delta: 0.0,
                v: 1.0,
            },
            input: crate::plant::ControlInput::zero(),
            slip: false,
            meas: traj.samples[0].pos,
        }];
        let blame = vec![BlameEventRecord {
            lap: 0,
            step: 3,
            i_min: 40,
            i_transition: 10,
            e_hat: 0.2,
            e: -0.4,
        }];
        let (lo, hi) = track.extent_with_margin(2.0);
        let map: ConstraintMap<f64> =
            ConstraintMap::new(lo.x, lo.y, hi.x, hi.y, &MapParams::default()).unwrap();
        let input = RenderInput {
            track: &track,
            map: Some(&map),
            planned: Some(&traj.samples),
            executed: &executed,
            blame: &blame,
        };
        let svg = render_svg(&input);
        assert!(well_formed(&svg));
        assert!(svg.contains("stroke-dasharray"), "executed layer missing");
        assert!(svg.contains("stroke-opacity"), "blame layer missing");
    }
}
