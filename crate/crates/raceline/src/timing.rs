//! Time parameterization of a geometric lap: the curve parameter u maps to
//! time through u = t/T, so a single scalar T carries the whole temporal
//! profile. Velocity is ||c'(u)||/T and acceleration components scale with
//! 1/T^2, which turns minimum-lap-time search into a closed-form max over
//! the sampled constraint ratios.

use serde::{Deserialize, Serialize};

use crate::constraint_map::ConstraintMap;
use crate::nurbs::{NurbsCurve, EPS_SPEED};
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Sampling density for the lap-time max; the discretization error at 2048
/// is far below the 0.1% oracle tolerance on tracks tens of meters long.
pub const DEFAULT_LAP_TIME_SAMPLES: usize = 2048;

/// Trajectories handed to the controller and the blame analysis carry at
/// least this many samples.
pub const MIN_TRAJECTORY_SAMPLES: usize = 512;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicLimits<T: Real = f64> {
    /// m/s
    pub v_max: T,
    /// m/s^2, longitudinal
    pub a_par_nominal: T,
    /// m/s^2, lateral
    pub a_perp_nominal: T,
}

impl<T: Real> Default for DynamicLimits<T> {
    /// Scaled-car envelope matching the default vehicle parameters.
    fn default() -> Self {
        DynamicLimits {
            v_max: T::of(8.0),
            a_par_nominal: T::of(3.0),
            a_perp_nominal: T::of(4.0),
        }
    }
}

impl<T: Real> DynamicLimits<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > T::zero())
            || !(self.a_par_nominal > T::zero())
            || !(self.a_perp_nominal > T::zero())
        {
            return Err(Error::Invalid("dynamic limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrajectorySample<T> {
    pub u: T,
    pub pos: Vec2<T>,
    /// m/s
    pub v: T,
    /// m/s^2, tangential
    pub a_par: T,
    /// m/s^2, normal (positive = leftward)
    pub a_perp: T,
    /// 1/m, signed
    pub kappa: T,
}

/// A curve plus its time scale, densified on a uniform u grid over [0,1).
#[derive(Clone, Debug)]
pub struct TimedTrajectory<T: Real = f64> {
    pub lap_time: T,
    pub samples: Vec<TrajectorySample<T>>,
    pub curve: NurbsCurve<T>,
}

impl<T: Real> TimedTrajectory<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// u spacing of the sample grid.
    pub fn du(&self) -> T {
        T::one() / T::from_usize_exact(self.samples.len())
    }
}

/// Parametric-speed quantities at T = 1: (||c'||, tangential and normal
/// components of c'' projected on the unit tangent/normal). Dividing by T
/// and T^2 gives the physical velocity and accelerations.
pub fn kinematics_hat<T: Real>(curve: &NurbsCurve<T>, u: T) -> Result<(T, T, T)> {
    let d = curve.derivatives(u, 2)?;
    let speed = d[1].norm();
    if speed < T::of(EPS_SPEED) {
        return Err(Error::DegenerateTangent(u.to_f64_lossy()));
    }
    let a_par = d[1].dot(d[2]) / speed;
    let a_perp = d[1].cross(d[2]) / speed;
    Ok((speed, a_par, a_perp))
}

/// Velocity and acceleration components at parameter u for lap time T:
/// v = ||c'||/T, and the tangential/normal components of the second time
/// derivative of q(t) = c(t/T), each scaling as 1/T^2.
pub fn kinematics_at<T: Real>(curve: &NurbsCurve<T>, u: T, lap_time: T) -> Result<(T, T, T)> {
    if !(lap_time > T::zero()) {
        return Err(Error::Invalid("lap time must be positive".into()));
    }
    let (v_hat, ap_hat, an_hat) = kinematics_hat(curve, u)?;
    let t2 = lap_time * lap_time;
    Ok((v_hat / lap_time, ap_hat / t2, an_hat / t2))
}

fn lap_time_from_ratios<T: Real>(
    curve: &NurbsCurve<T>,
    n: usize,
    mut limits_at: impl FnMut(Vec2<T>, T) -> Result<(T, T)>,
    v_max: T,
) -> Result<T> {
    if n < 8 {
        return Err(Error::Invalid("need at least 8 samples".into()));
    }
    let mut worst = T::zero();
    for i in 0..n {
        let u = T::from_usize_exact(i) / T::from_usize_exact(n);
        let d = curve.derivatives(u, 2)?;
        let speed = d[1].norm();
        if speed < T::of(EPS_SPEED) {
            return Err(Error::DegenerateTangent(u.to_f64_lossy()));
        }
        let ap_hat = (d[1].dot(d[2]) / speed).abs();
        let an_hat = (d[1].cross(d[2]) / speed).abs();
        let (ap_max, an_max) = limits_at(d[0], u)?;
        let r_v = speed / v_max;
        let r_ap = (ap_hat / ap_max).sqrt();
        let r_an = (an_hat / an_max).sqrt();
        worst = worst.max(r_v).max(r_ap).max(r_an);
    }
    if !(worst > T::zero()) || !worst.is_finite() {
        return Err(Error::Invalid(
            "degenerate curve: no active constraint found".into(),
        ));
    }
    Ok(worst)
}

/// Minimum feasible lap time under constant limits: the largest over the u
/// grid of { v_hat/v_max, sqrt(|a_par_hat|/a_par_max),
/// sqrt(|a_perp_hat|/a_perp_max) }, where hatted values are taken at T = 1.
/// At the returned T the binding constraint ratio equals 1 by construction.
pub fn min_lap_time_const<T: Real>(
    curve: &NurbsCurve<T>,
    limits: &DynamicLimits<T>,
    n: usize,
) -> Result<T> {
    limits.validate()?;
    lap_time_from_ratios(
        curve,
        n,
        |_, _| Ok((limits.a_par_nominal, limits.a_perp_nominal)),
        limits.v_max,
    )
}

/// Same max form with spatially varying limits: the acceleration ceilings at
/// each sample are the map's interpolated scale at the planned position
/// times the nominals. With M = 1 everywhere this equals
/// [`min_lap_time_const`] exactly.
pub fn min_lap_time_spatial<T: Real>(
    curve: &NurbsCurve<T>,
    limits: &DynamicLimits<T>,
    map: &ConstraintMap<T>,
    n: usize,
) -> Result<T> {
    limits.validate()?;
    lap_time_from_ratios(
        curve,
        n,
        |pos, u| match map.scale_at(pos, limits) {
            Ok(pair) => Ok(pair),
            Err(Error::OutsideExtent(_, _)) => Err(Error::CurveOutsideExtent(u.to_f64_lossy())),
            Err(e) => Err(e),
        },
        limits.v_max,
    )
}

/// Densifies the curve at n uniform u values in [0,1) with all kinematic
/// fields populated for lap time T.
pub fn sample_trajectory<T: Real>(
    curve: &NurbsCurve<T>,
    lap_time: T,
    n: usize,
) -> Result<TimedTrajectory<T>> {
    if !(lap_time > T::zero()) {
        return Err(Error::Invalid("lap time must be positive".into()));
    }
    if n < MIN_TRAJECTORY_SAMPLES {
        return Err(Error::Invalid(format!(
            "trajectories carry at least {MIN_TRAJECTORY_SAMPLES} samples, got {n}"
        )));
    }
    let t2 = lap_time * lap_time;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let u = T::from_usize_exact(i) / T::from_usize_exact(n);
        let d = curve.derivatives(u, 2)?;
        let speed = d[1].norm();
        if speed < T::of(EPS_SPEED) {
            return Err(Error::DegenerateTangent(u.to_f64_lossy()));
        }
        let kappa = d[1].cross(d[2]) / (speed * speed * speed);
        samples.push(TrajectorySample {
            u,
            pos: d[0],
            v: speed / lap_time,
            a_par: d[1].dot(d[2]) / speed / t2,
            a_perp: d[1].cross(d[2]) / speed / t2,
            kappa,
        });
    }
    Ok(TimedTrajectory {
        lap_time,
        samples,
        curve: curve.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::FreeParameters;
    use crate::nurbs::DEGREE;
    use rand::Rng;

    fn random_closed_curve(rng: &mut impl Rng, n: usize) -> NurbsCurve<f64> {
        // Smooth random loops: perturbed ellipses so tangents never vanish.
        let pts: Vec<Vec2<f64>> = (0..n - 2)
            .map(|i| {
                let a = i as f64 / (n - 2) as f64 * std::f64::consts::TAU;
                let r = 8.0 + rng.gen_range(-1.5..1.5);
                Vec2::new(r * a.cos(), 0.7 * r * a.sin())
            })
            .collect();
        let weights: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(0.7..1.4)).collect();
        let k = n - DEGREE;
        let mut cuts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..k {
            if cuts[i] - cuts[i - 1] < 0.01 {
                cuts[i] = cuts[i - 1] + 0.01;
            }
        }
        FreeParameters::new(n, pts, weights, cuts)
            .unwrap()
            .apply_closure()
            .unwrap()
    }

    fn straight_segment_curve(len: f64) -> NurbsCurve<f64> {
        // Open linear-precision segment along x of the given length.
        let n = 7;
        let interior = n - DEGREE;
        let mut knots = vec![0.0; DEGREE + 1];
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(vec![1.0; DEGREE + 1]);
        let xi = crate::nurbs::greville_abscissae(&knots, DEGREE);
        let pts = xi.iter().map(|x| Vec2::new(len * x, 0.0)).collect();
        NurbsCurve::new(pts, vec![1.0; n + 1], knots).unwrap()
    }

    fn limits(v: f64, ap: f64, an: f64) -> DynamicLimits<f64> {
        DynamicLimits {
            v_max: v,
            a_par_nominal: ap,
            a_perp_nominal: an,
        }
    }

    #[test]
    fn straight_curve_is_velocity_limited() {
        let curve = straight_segment_curve(10.0);
        let lim = limits(2.0, 5.0, 5.0);
        let t = min_lap_time_const(&curve, &lim, 512).unwrap();
        assert!((t - 5.0).abs() < 1e-9, "expected 5 s, got {t}");
        let (v, ap, an) = kinematics_at(&curve, 0.5, t).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        assert!(ap.abs() < 1e-9);
        assert!(an.abs() < 1e-9);
    }

    #[test]
    fn doubling_t_scales_kinematics() {
        let mut rng = crate::rng::seeded(41);
        let curve = random_closed_curve(&mut rng, 10);
        for _ in 0..50 {
            let u: f64 = rng.gen();
            let t1 = 7.0;
            let (v1, ap1, an1) = kinematics_at(&curve, u, t1).unwrap();
            let (v2, ap2, an2) = kinematics_at(&curve, u, 2.0 * t1).unwrap();
            assert!((v1 - 2.0 * v2).abs() < 1e-12 * v1.abs().max(1.0));
            assert!((ap1 - 4.0 * ap2).abs() < 1e-12 * ap1.abs().max(1.0));
            assert!((an1 - 4.0 * an2).abs() < 1e-12 * an1.abs().max(1.0));
        }
    }

    #[test]
    fn kinematics_match_time_domain_finite_differences() {
        // Independent oracle: q(t) = c(t/T); second central differences in
        // time projected on the unit tangent/normal.
        let mut rng = crate::rng::seeded(42);
        let curve = random_closed_curve(&mut rng, 12);
        let t_lap = 9.0;
        for i in 0..40 {
            let u = 0.02 + 0.96 * i as f64 / 40.0;
            let (v, ap, an) = kinematics_at(&curve, u, t_lap).unwrap();
            // h ~ eps^(1/4): second differences lose 4*eps/h^2 to roundoff.
            let h = 1e-4;
            let q = |dt: f64| curve.evaluate(u + dt / t_lap).unwrap();
            let qm = q(-h);
            let q0 = q(0.0);
            let qp = q(h);
            let vel = (qp - qm) / (2.0 * h);
            let acc = (qp - q0 * 2.0 + qm) / (h * h);
            let tangent = vel / vel.norm();
            let normal = Vec2::new(-tangent.y, tangent.x);
            assert!((vel.norm() - v).abs() / v < 1e-5, "v mismatch at u={u}");
            let ap_fd = acc.dot(tangent);
            let an_fd = acc.dot(normal);
            assert!(
                (ap - ap_fd).abs() / ap_fd.abs().max(1.0) < 1e-5,
                "a_par mismatch at u={u}: {ap} vs {ap_fd}"
            );
            assert!(
                (an - an_fd).abs() / an_fd.abs().max(1.0) < 1e-5,
                "a_perp mismatch at u={u}: {an} vs {an_fd}"
            );
        }
    }

    /// Brute-force oracle: scan T on a fine grid, return the smallest T
    /// whose per-sample demands violate no constraint.
    fn brute_force_t_scan(
        curve: &NurbsCurve<f64>,
        lim: &DynamicLimits<f64>,
        n: usize,
    ) -> f64 {
        let feasible = |t: f64| -> bool {
            for i in 0..n {
                let u = i as f64 / n as f64;
                let (v, ap, an) = kinematics_at(curve, u, t).unwrap();
                if v > lim.v_max || ap.abs() > lim.a_par_nominal || an.abs() > lim.a_perp_nominal
                {
                    return false;
                }
            }
            true
        };
        let mut t = 1e-3;
        while !feasible(t) {
            t *= 1.5;
        }
        let mut hi = t;
        let mut lo = t / 1.5;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn lap_time_matches_brute_force_scan() {
        let mut rng = crate::rng::seeded(43);
        for _ in 0..5 {
            let curve = random_closed_curve(&mut rng, 11);
            let lim = limits(
                rng.gen_range(2.0..6.0),
                rng.gen_range(2.0..8.0),
                rng.gen_range(2.0..8.0),
            );
            let n = 512;
            let t = min_lap_time_const(&curve, &lim, n).unwrap();
            let t_scan = brute_force_t_scan(&curve, &lim, n);
            assert!(
                (t - t_scan).abs() / t_scan < 1e-3,
                "{t} vs scan {t_scan}"
            );
        }
    }

    #[test]
    fn at_returned_t_one_constraint_is_active() {
        let mut rng = crate::rng::seeded(44);
        let curve = random_closed_curve(&mut rng, 9);
        let lim = limits(4.0, 6.0, 6.0);
        let n = 1024;
        let t = min_lap_time_const(&curve, &lim, n).unwrap();
        let mut max_ratio: f64 = 0.0;
        for i in 0..n {
            let u = i as f64 / n as f64;
            let (v, ap, an) = kinematics_at(&curve, u, t).unwrap();
            max_ratio = max_ratio
                .max(v / lim.v_max)
                .max((ap.abs() / lim.a_par_nominal).sqrt())
                .max((an.abs() / lim.a_perp_nominal).sqrt());
        }
        assert!((max_ratio - 1.0).abs() < 1e-6, "max ratio {max_ratio}");
    }

    #[test]
    fn trajectory_sampling_grid() {
        let mut rng = crate::rng::seeded(45);
        let curve = random_closed_curve(&mut rng, 10);
        let traj = sample_trajectory(&curve, 8.0, 512).unwrap();
        assert_eq!(traj.len(), 512);
        for w in traj.samples.windows(2) {
            assert!(w[1].u > w[0].u);
            assert!((w[1].u - w[0].u - 1.0 / 512.0).abs() < 1e-12);
        }
        // v field equals kinematics_at pointwise.
        for s in traj.samples.iter().step_by(37) {
            let (v, ap, an) = kinematics_at(&curve, s.u, 8.0).unwrap();
            assert_eq!(s.v, v);
            assert_eq!(s.a_par, ap);
            assert_eq!(s.a_perp, an);
        }
        // Double-resolution grid reproduces the coarse one exactly.
        let fine = sample_trajectory(&curve, 8.0, 1024).unwrap();
        for (i, s) in traj.samples.iter().enumerate() {
            let f = &fine.samples[2 * i];
            assert_eq!(s.pos, f.pos);
            assert_eq!(s.v, f.v);
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        let mut rng = crate::rng::seeded(46);
        let curve = random_closed_curve(&mut rng, 9);
        assert!(sample_trajectory(&curve, 0.0, 512).is_err());
        assert!(sample_trajectory(&curve, 5.0, 64).is_err());
        let bad = limits(-1.0, 1.0, 1.0);
        assert!(min_lap_time_const(&curve, &bad, 512).is_err());
    }
}
