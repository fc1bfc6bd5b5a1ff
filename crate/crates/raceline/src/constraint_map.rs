//! Grid of per-cell acceleration scale factors with uncertainties.
//!
//! Each cell holds a dimensionless factor M (multiplying the nominal
//! acceleration limits at that location) and a variance V. Feedback updates
//! are scalar Kalman steps per cell: K = V/(V+R), M += K e, V = (1-K)V + Q,
//! with M clamped to a configured band. Cells are treated as independent
//! states; lookups bilinearly interpolate between cell centers so lap times
//! stay continuous as a path crosses cell borders.

use serde::{Deserialize, Serialize};

use crate::timing::DynamicLimits;
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Error-feedback shaping parameters (map update side).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig<T: Real = f64> {
    /// Error threshold separating "good tracking" from "poor tracking", m.
    pub e_th: T,
    /// Gain on errors below threshold; >= 0 so limits may grow.
    pub w_plus: T,
    /// Gain on errors at or above threshold; <= 0 so limits shrink.
    pub w_minus: T,
    /// Cells within this distance of a blame point receive the update, m.
    pub blame_radius: T,
}

impl<T: Real> Default for FeedbackConfig<T> {
    fn default() -> Self {
        FeedbackConfig {
            e_th: T::of(0.1),
            w_plus: T::of(2.0),
            w_minus: T::of(-2.0),
            blame_radius: T::of(0.5),
        }
    }
}

impl<T: Real> FeedbackConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_th > T::zero()) {
            return Err(Error::Invalid("e_th must be positive".into()));
        }
        if self.w_plus < T::zero() || self.w_minus > T::zero() {
            return Err(Error::Invalid(
                "need w_plus >= 0 and w_minus <= 0".into(),
            ));
        }
        if !(self.blame_radius > T::zero()) {
            return Err(Error::Invalid("blame radius must be positive".into()));
        }
        Ok(())
    }
}

/// Construction parameters for a fresh map.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams<T: Real = f64> {
    /// Cell size, m.
    pub resolution: T,
    pub m_init: T,
    pub v_init: T,
    /// Measurement noise variance R.
    pub r_meas: T,
    /// Process noise variance Q.
    pub q_proc: T,
    pub m_min: T,
    pub m_max: T,
}

impl<T: Real> Default for MapParams<T> {
    fn default() -> Self {
        MapParams {
            resolution: T::of(0.25),
            m_init: T::one(),
            v_init: T::one(),
            r_meas: T::of(0.5),
            q_proc: T::of(0.01),
            m_min: T::of(0.05),
            m_max: T::of(2.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlamePoint<T: Real = f64> {
    pub pos: Vec2<T>,
    /// Signed update signal from [`modulate_error`].
    pub e: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintMap<T: Real = f64> {
    x_min: T,
    y_min: T,
    resolution: T,
    nx: usize,
    ny: usize,
    m: Vec<T>,
    v: Vec<T>,
    pub r_meas: T,
    pub q_proc: T,
    pub m_min: T,
    pub m_max: T,
}

impl<T: Real> ConstraintMap<T> {
    /// Covers at least [x_min, x_max] x [y_min, y_max], extended outward to
    /// whole cells.
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T, params: &MapParams<T>) -> Result<Self> {
        if !(params.resolution > T::zero()) {
            return Err(Error::Invalid("map resolution must be positive".into()));
        }
        if !(x_max > x_min) || !(y_max > y_min) {
            return Err(Error::Invalid("empty map extent".into()));
        }
        if !(params.v_init > T::zero()) || !(params.r_meas > T::zero()) || params.q_proc < T::zero()
        {
            return Err(Error::Invalid(
                "need V_init > 0, R > 0, Q >= 0".into(),
            ));
        }
        if !(params.m_max > params.m_min) || !(params.m_min > T::zero()) {
            return Err(Error::Invalid("need 0 < m_min < m_max".into()));
        }
        let nx = ((x_max - x_min) / params.resolution).ceil().to_f64_lossy() as usize;
        let ny = ((y_max - y_min) / params.resolution).ceil().to_f64_lossy() as usize;
        let nx = nx.max(1);
        let ny = ny.max(1);
        if nx * ny > 4_000_000 {
            return Err(Error::Invalid(format!(
                "map would have {} cells; refusing",
                nx * ny
            )));
        }
        let m_init = params.m_init.max(params.m_min).min(params.m_max);
        Ok(ConstraintMap {
            x_min,
            y_min,
            resolution: params.resolution,
            nx,
            ny,
            m: vec![m_init; nx * ny],
            v: vec![params.v_init; nx * ny],
            r_meas: params.r_meas,
            q_proc: params.q_proc,
            m_min: params.m_min,
            m_max: params.m_max,
        })
    }

    /// Rebuilds a map from persisted raw parts (see [`crate::io`]).
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        x_min: T,
        y_min: T,
        resolution: T,
        nx: usize,
        ny: usize,
        m: Vec<T>,
        v: Vec<T>,
        r_meas: T,
        q_proc: T,
        m_min: T,
        m_max: T,
    ) -> Result<Self> {
        if m.len() != nx * ny || v.len() != nx * ny {
            return Err(Error::Invalid("grid size mismatch".into()));
        }
        if v.iter().any(|x| !(*x > T::zero())) {
            return Err(Error::Invalid("variances must stay positive".into()));
        }
        Ok(ConstraintMap {
            x_min,
            y_min,
            resolution,
            nx,
            ny,
            m,
            v,
            r_meas,
            q_proc,
            m_min,
            m_max,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn y_min(&self) -> T {
        self.y_min
    }

    pub fn x_max(&self) -> T {
        self.x_min + self.resolution * T::from_usize_exact(self.nx)
    }

    pub fn y_max(&self) -> T {
        self.y_min + self.resolution * T::from_usize_exact(self.ny)
    }

    pub fn m_values(&self) -> &[T] {
        &self.m
    }

    pub fn v_values(&self) -> &[T] {
        &self.v
    }

    fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn m_cell(&self, ix: usize, iy: usize) -> T {
        self.m[self.idx(ix, iy)]
    }

    pub fn v_cell(&self, ix: usize, iy: usize) -> T {
        self.v[self.idx(ix, iy)]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2<T> {
        let half = T::of(0.5);
        Vec2::new(
            self.x_min + self.resolution * (T::from_usize_exact(ix) + half),
            self.y_min + self.resolution * (T::from_usize_exact(iy) + half),
        )
    }

    pub fn contains(&self, pos: Vec2<T>) -> bool {
        pos.x >= self.x_min && pos.x <= self.x_max() && pos.y >= self.y_min && pos.y <= self.y_max()
    }

    /// Interpolated scale factor at a position: bilinear between the four
    /// surrounding cell centers, clamped to the center lattice inside the
    /// boundary half-cell band.
    pub fn m_at(&self, pos: Vec2<T>) -> Result<T> {
        if !self.contains(pos) || !pos.is_finite() {
            return Err(Error::OutsideExtent(
                pos.x.to_f64_lossy(),
                pos.y.to_f64_lossy(),
            ));
        }
        let half = T::of(0.5);
        let gx = ((pos.x - self.x_min) / self.resolution - half)
            .max(T::zero())
            .min(T::from_usize_exact(self.nx - 1));
        let gy = ((pos.y - self.y_min) / self.resolution - half)
            .max(T::zero())
            .min(T::from_usize_exact(self.ny - 1));
        let ix0 = gx.floor().to_f64_lossy() as usize;
        let iy0 = gy.floor().to_f64_lossy() as usize;
        let ix0 = ix0.min(self.nx - 1);
        let iy0 = iy0.min(self.ny - 1);
        let ix1 = (ix0 + 1).min(self.nx - 1);
        let iy1 = (iy0 + 1).min(self.ny - 1);
        let fx = gx - T::from_usize_exact(ix0);
        let fy = gy - T::from_usize_exact(iy0);
        let m00 = self.m[self.idx(ix0, iy0)];
        let m10 = self.m[self.idx(ix1, iy0)];
        let m01 = self.m[self.idx(ix0, iy1)];
        let m11 = self.m[self.idx(ix1, iy1)];
        let top = m00 + (m10 - m00) * fx;
        let bot = m01 + (m11 - m01) * fx;
        Ok(top + (bot - top) * fy)
    }

    /// Position-dependent acceleration ceilings: interpolated M times the
    /// nominal longitudinal/lateral limits.
    pub fn scale_at(&self, pos: Vec2<T>, limits: &DynamicLimits<T>) -> Result<(T, T)> {
        let m = self.m_at(pos)?;
        Ok((m * limits.a_par_nominal, m * limits.a_perp_nominal))
    }

    pub fn set_cell(&mut self, ix: usize, iy: usize, m: T, v: T) {
        let i = self.idx(ix, iy);
        self.m[i] = m;
        self.v[i] = v;
    }

    /// One feedback pass: every cell whose center lies within `radius` of
    /// any blame point receives exactly one Kalman update, driven by the
    /// nearest point's error tapered linearly with distance. Ties on
    /// distance keep the earliest point.
    pub fn apply_blame(&mut self, points: &[BlamePoint<T>], radius: T) -> Result<()> {
        if !(radius > T::zero()) {
            return Err(Error::Invalid("blame radius must be positive".into()));
        }
        for p in points {
            if !self.contains(p.pos) {
                return Err(Error::OutsideExtent(
                    p.pos.x.to_f64_lossy(),
                    p.pos.y.to_f64_lossy(),
                ));
            }
        }
        // nearest[(cell)] = (distance^2, error of that point)
        let mut nearest: Vec<Option<(T, T)>> = vec![None; self.nx * self.ny];
        let r2 = radius * radius;
        let half = T::of(0.5);
        for p in points {
            let gx_lo = ((p.pos.x - radius - self.x_min) / self.resolution - half).ceil();
            let gx_hi = ((p.pos.x + radius - self.x_min) / self.resolution - half).floor();
            let gy_lo = ((p.pos.y - radius - self.y_min) / self.resolution - half).ceil();
            let gy_hi = ((p.pos.y + radius - self.y_min) / self.resolution - half).floor();
            let ix_lo = gx_lo.max(T::zero()).to_f64_lossy() as usize;
            let iy_lo = gy_lo.max(T::zero()).to_f64_lossy() as usize;
            if gx_hi < T::zero() || gy_hi < T::zero() {
                continue;
            }
            let ix_hi = (gx_hi.to_f64_lossy() as usize).min(self.nx - 1);
            let iy_hi = (gy_hi.to_f64_lossy() as usize).min(self.ny - 1);
            for iy in iy_lo..=iy_hi {
                for ix in ix_lo..=ix_hi {
                    let d2 = self.cell_center(ix, iy).dist_sq(p.pos);
                    if d2 > r2 {
                        continue;
                    }
                    let slot = &mut nearest[iy * self.nx + ix];
                    match slot {
                        Some((best, _)) if d2 >= *best => {}
                        _ => *slot = Some((d2, p.e)),
                    }
                }
            }
        }
        for (i, slot) in nearest.iter().enumerate() {
            if let Some((d2, e)) = slot {
                let taper = T::one() - d2.sqrt() / radius;
                let (m2, v2, _) = kalman_update_cell(
                    self.m[i],
                    self.v[i],
                    *e * taper,
                    self.r_meas,
                    self.q_proc,
                    self.m_min,
                    self.m_max,
                );
                self.m[i] = m2;
                self.v[i] = v2;
            }
        }
        Ok(())
    }

    /// Mean M over cells whose centers lie within `radius` of `center`.
    /// Measurement helper for experiments and tests.
    pub fn mean_m_within(&self, center: Vec2<T>, radius: T) -> Option<T> {
        let mut sum = T::zero();
        let mut count = 0usize;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                if self.cell_center(ix, iy).dist(center) <= radius {
                    sum += self.m[self.idx(ix, iy)];
                    count += 1;
                }
            }
        }
        if count == 0 {
            None
        } else {
            Some(sum / T::from_usize_exact(count))
        }
    }

    /// Mean M over the whole grid.
    pub fn mean_m(&self) -> T {
        let sum: T = self.m.iter().copied().sum();
        sum / T::from_usize_exact(self.m.len())
    }
}

/// Error modulation: small observed errors reward (grow limits), large ones
/// penalize (shrink limits). The threshold boundary itself counts as large.
pub fn modulate_error<T: Real>(e_hat: T, cfg: &FeedbackConfig<T>) -> T {
    if e_hat < cfg.e_th {
        cfg.w_plus * e_hat
    } else {
        cfg.w_minus * e_hat
    }
}

/// Scalar Kalman step for one cell. Returns (M+, V+, K) with M+ clamped.
pub fn kalman_update_cell<T: Real>(
    m: T,
    v: T,
    e: T,
    r: T,
    q: T,
    m_min: T,
    m_max: T,
) -> (T, T, T) {
    let k = v / (v + r);
    let m_next = (m + k * e).max(m_min).min(m_max);
    let v_next = (T::one() - k) * v + q;
    (m_next, v_next, k)
}
