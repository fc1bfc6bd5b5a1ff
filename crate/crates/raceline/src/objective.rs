//! Optimization objective: lap time under the current constraint map plus
//! soft penalties for leaving the track and exceeding the steerable
//! curvature.

use serde::{Deserialize, Serialize};

use crate::closure::FreeParameters;
use crate::constraint_map::ConstraintMap;
use crate::nurbs::NurbsCurve;
use crate::timing::{min_lap_time_const, min_lap_time_spatial, DynamicLimits};
use crate::track::TrackModel;
use crate::{Real, Result};

/// Cost assigned to candidates whose decoded curve cannot be evaluated
/// (degenerate tangents, leaving the map extent, conditioning failures).
/// Large but finite so population ranking stays total.
pub const DEGENERATE_COST: f64 = 1e7;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig<T: Real = f64> {
    /// Boundary-excess penalty weight, s/m^2.
    pub lambda_dist: T,
    /// Curvature-excess penalty weight.
    pub lambda_curv: T,
    /// Maximum steerable curvature, 1/m.
    pub kappa_max: T,
    /// Samples for the penalty integrals and the lap-time scan.
    pub samples: usize,
}

impl<T: Real> Default for ObjectiveConfig<T> {
    fn default() -> Self {
        ObjectiveConfig {
            lambda_dist: T::of(50.0),
            lambda_curv: T::of(10.0),
            // tan(delta_max) / wheelbase for the default vehicle.
            kappa_max: T::of(0.4f64.tan() / 0.33),
            samples: 512,
        }
    }
}

impl<T: Real> ObjectiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_dist < T::zero() || self.lambda_curv < T::zero() {
            return Err(crate::Error::Invalid("penalty weights must be >= 0".into()));
        }
        if !(self.kappa_max > T::zero()) {
            return Err(crate::Error::Invalid("kappa_max must be positive".into()));
        }
        if self.samples < 16 {
            return Err(crate::Error::Invalid(
                "objective needs at least 16 samples".into(),
            ));
        }
        Ok(())
    }

    /// Curvature ceiling implied by a steering limit and wheelbase.
    pub fn kappa_max_for(delta_max: T, wheelbase: T) -> T {
        delta_max.tan() / wheelbase
    }
}

/// Mean squared boundary excess over uniform curve samples, m^2.
pub fn distance_penalty<T: Real>(
    curve: &NurbsCurve<T>,
    track: &TrackModel<T>,
    samples: usize,
) -> Result<T> {
    let mut sum = T::zero();
    for i in 0..samples {
        let u = T::from_usize_exact(i) / T::from_usize_exact(samples);
        let pos = curve.evaluate(u)?;
        let excess = track.boundary_excess(pos);
        sum += excess * excess;
    }
    Ok(sum / T::from_usize_exact(samples))
}

/// Mean squared curvature excess over uniform curve samples (discrete
/// integral of max(0, kappa - kappa_max)^2 over the closed parameter range).
pub fn curvature_penalty<T: Real>(
    curve: &NurbsCurve<T>,
    kappa_max: T,
    samples: usize,
) -> Result<T> {
    let mut sum = T::zero();
    for i in 0..samples {
        let u = T::from_usize_exact(i) / T::from_usize_exact(samples);
        let excess = (curve.curvature(u)? - kappa_max).max(T::zero());
        sum += excess * excess;
    }
    Ok(sum / T::from_usize_exact(samples))
}

/// Full objective for a decoded parameter set. Decoding or evaluation
/// failures quietly map to [`DEGENERATE_COST`].
pub fn objective<T: Real>(
    free: &FreeParameters<T>,
    track: &TrackModel<T>,
    limits: &DynamicLimits<T>,
    map: Option<&ConstraintMap<T>>,
    cfg: &ObjectiveConfig<T>,
) -> T {
    match objective_inner(free, track, limits, map, cfg) {
        Ok(cost) => cost,
        Err(_) => T::of(DEGENERATE_COST),
    }
}

fn objective_inner<T: Real>(
    free: &FreeParameters<T>,
    track: &TrackModel<T>,
    limits: &DynamicLimits<T>,
    map: Option<&ConstraintMap<T>>,
    cfg: &ObjectiveConfig<T>,
) -> Result<T> {
    let curve = free.apply_closure()?;
    let lap_time = match map {
        Some(m) => min_lap_time_spatial(&curve, limits, m, cfg.samples)?,
        None => min_lap_time_const(&curve, limits, cfg.samples)?,
    };
    let phi_dist = distance_penalty(&curve, track, cfg.samples)?;
    let phi_curv = curvature_penalty(&curve, cfg.kappa_max, cfg.samples)?;
    Ok(lap_time + cfg.lambda_dist * phi_dist + cfg.lambda_curv * phi_curv)
}

/// Vector-space objective for the population optimizer: decode, then score.
/// Any invalid vector costs [`DEGENERATE_COST`].
pub fn objective_from_vector<T: Real>(
    n_ctrl: usize,
    v: &[T],
    track: &TrackModel<T>,
    limits: &DynamicLimits<T>,
    map: Option<&ConstraintMap<T>>,
    cfg: &ObjectiveConfig<T>,
) -> T {
    match FreeParameters::from_vector(n_ctrl, v) {
        Ok(free) => objective(&free, track, limits, map, cfg),
        Err(_) => T::of(DEGENERATE_COST),
    }
}
