//! Track geometry: closed centerline polyline with per-point half-widths,
//! plus the nearest-centerline queries the boundary penalty and the map
//! sizing need.

use crate::vec2::Vec2;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug)]
pub struct TrackPoint<T: Real = f64> {
    pub pos: Vec2<T>,
    /// m, to the left of travel direction
    pub w_left: T,
    /// m, to the right of travel direction
    pub w_right: T,
    /// cumulative centerline arc length at this point, m
    pub arc: T,
}

/// Closed centerline with widths. Points are stored as an open ring; the
/// segment from the last point back to the first closes the loop.
#[derive(Clone, Debug)]
pub struct TrackModel<T: Real = f64> {
    points: Vec<TrackPoint<T>>,
    total_length: T,
}

/// Result of a nearest-centerline query.
#[derive(Clone, Copy, Debug)]
pub struct TrackQuery<T: Real = f64> {
    /// Distance from the query position to the centerline, m (>= 0).
    pub distance: T,
    /// +1 when the position lies left of travel direction, -1 right.
    pub side: T,
    /// Interpolated half-width on the query's side, m.
    pub halfwidth: T,
    /// Closest point on the centerline.
    pub nearest: Vec2<T>,
    /// Arc length of the closest point, m.
    pub arc: T,
}

impl<T: Real> TrackModel<T> {
    /// Builds from (position, w_left, w_right) rows. A duplicated closing
    /// row (first == last) is accepted and dropped.
    pub fn new(rows: &[(Vec2<T>, T, T)]) -> Result<Self> {
        let mut rows = rows.to_vec();
        if rows.len() >= 2 {
            let first = rows[0].0;
            let last = rows[rows.len() - 1].0;
            if first.dist(last) < T::of(1e-9) {
                rows.pop();
            }
        }
        if rows.len() < 3 {
            return Err(Error::Invalid("track needs at least 3 points".into()));
        }
        for (p, wl, wr) in &rows {
            if !p.is_finite() || !wl.is_finite() || !wr.is_finite() {
                return Err(Error::Invalid("non-finite track row".into()));
            }
            if !(*wl > T::zero()) || !(*wr > T::zero()) {
                return Err(Error::Invalid("track widths must be positive".into()));
            }
        }
        let n = rows.len();
        let mut points = Vec::with_capacity(n);
        let mut arc = T::zero();
        for (i, (p, wl, wr)) in rows.iter().enumerate() {
            points.push(TrackPoint {
                pos: *p,
                w_left: *wl,
                w_right: *wr,
                arc,
            });
            let next = rows[(i + 1) % n].0;
            arc += p.dist(next);
        }
        if !(arc > T::zero()) {
            return Err(Error::Invalid("degenerate zero-length track".into()));
        }
        Ok(TrackModel {
            points,
            total_length: arc,
        })
    }

    pub fn points(&self) -> &[TrackPoint<T>] {
        &self.points
    }

    pub fn total_length(&self) -> T {
        self.total_length
    }

    /// Centerline positions as a plain ring (for fitting).
    pub fn centerline(&self) -> Vec<Vec2<T>> {
        self.points.iter().map(|p| p.pos).collect()
    }

    /// Nearest point on the closed centerline polyline, with side sign and
    /// the local half-width interpolated along the winning segment.
    pub fn closest(&self, pos: Vec2<T>) -> TrackQuery<T> {
        let n = self.points.len();
        let mut best_d2 = T::infinity();
        let mut best = TrackQuery {
            distance: T::zero(),
            side: T::one(),
            halfwidth: T::one(),
            nearest: self.points[0].pos,
            arc: T::zero(),
        };
        for i in 0..n {
            let a = &self.points[i];
            let b = &self.points[(i + 1) % n];
            let ab = b.pos - a.pos;
            let len_sq = ab.norm_sq();
            let mut t = T::zero();
            if len_sq > T::zero() {
                t = ((pos - a.pos).dot(ab) / len_sq).max(T::zero()).min(T::one());
            }
            let cand = a.pos + ab.scale(t);
            let d2 = cand.dist_sq(pos);
            if d2 < best_d2 {
                best_d2 = d2;
                let cross = ab.cross(pos - cand);
                let side = if cross >= T::zero() { T::one() } else { -T::one() };
                let wl = a.w_left + (b.w_left - a.w_left) * t;
                let wr = a.w_right + (b.w_right - a.w_right) * t;
                let seg_len = len_sq.sqrt();
                best = TrackQuery {
                    distance: d2.sqrt(),
                    side,
                    halfwidth: if side > T::zero() { wl } else { wr },
                    nearest: cand,
                    arc: a.arc + seg_len * t,
                };
            }
        }
        best
    }

    /// How far the position sticks out past the local boundary, m (0 inside).
    pub fn boundary_excess(&self, pos: Vec2<T>) -> T {
        let q = self.closest(pos);
        (q.distance - q.halfwidth).max(T::zero())
    }

    /// Axis-aligned bounds of the centerline inflated by the largest
    /// half-width plus a margin, m. Used to size constraint maps so planned
    /// lines near (or slightly beyond) the boundary stay inside the map.
    pub fn extent_with_margin(&self, margin: T) -> (Vec2<T>, Vec2<T>) {
        let mut lo = self.points[0].pos;
        let mut hi = self.points[0].pos;
        let mut w_max = T::zero();
        for p in &self.points {
            lo = Vec2::new(lo.x.min(p.pos.x), lo.y.min(p.pos.y));
            hi = Vec2::new(hi.x.max(p.pos.x), hi.y.max(p.pos.y));
            w_max = w_max.max(p.w_left).max(p.w_right);
        }
        let pad = w_max + margin;
        (
            Vec2::new(lo.x - pad, lo.y - pad),
            Vec2::new(hi.x + pad, hi.y + pad),
        )
    }
}
