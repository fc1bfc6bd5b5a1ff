//! Attribution of tracking errors to trajectory zones.
//!
//! The planned longitudinal-acceleration profile partitions the lap into
//! sign-constant zones separated by crossing indices Z. An observed error at
//! closest-point index i_min is traced back to the most recent crossing
//! (circular predecessor), and the section between them is the blame region
//! that receives the map update: the cause of a tracking error (too much
//! demanded acceleration) precedes the place where the error is observed.

use crate::timing::TimedTrajectory;
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Fraction of the nominal longitudinal limit treated as "no acceleration"
/// when classifying signs; raw sampled accelerations chatter around zero.
pub const SIGN_DEADBAND_FACTOR: f64 = 0.05;

/// Per-sample acceleration signs and the crossing index set.
#[derive(Clone, Debug, PartialEq)]
pub struct SignZones {
    /// -1, 0, +1 per trajectory sample.
    pub s: Vec<i8>,
    /// Ascending indices i with S[(i+1) mod N] != S[i]; the wrap pair
    /// (N-1, 0) participates like any other neighbor pair.
    pub z: Vec<usize>,
}

/// Circular index interval [i_transition, i_min] with the positions it
/// covers and the error signal attached to it.
#[derive(Clone, Debug)]
pub struct BlameRegion<T: Real = f64> {
    pub i_transition: usize,
    pub i_min: usize,
    pub indices: Vec<usize>,
    pub positions: Vec<Vec2<T>>,
    pub e: T,
}

/// Classifies per-sample longitudinal acceleration into {-1, 0, +1} with the
/// given deadband and collects the circular crossing set.
pub fn sign_zones<T: Real>(a_par: &[T], deadband: T) -> SignZones {
    assert!(a_par.len() >= 2, "need at least two samples");
    let s: Vec<i8> = a_par
        .iter()
        .map(|a| {
            if a.abs() <= deadband {
                0
            } else if *a > T::zero() {
                1
            } else {
                -1
            }
        })
        .collect();
    let n = s.len();
    let z = (0..n).filter(|i| s[(i + 1) % n] != s[*i]).collect();
    SignZones { s, z }
}

/// Nearest reference sample to a position: grid argmin of squared distance,
/// then one parabolic refinement between the circular neighbors, evaluated
/// back on the curve. Returns (grid index, refined u, refined distance).
pub fn closest_point<T: Real>(traj: &TimedTrajectory<T>, pos: Vec2<T>) -> (usize, T, T) {
    let n = traj.len();
    let mut i_min = 0usize;
    let mut best = T::infinity();
    for (i, s) in traj.samples.iter().enumerate() {
        let d2 = s.pos.dist_sq(pos);
        if d2 < best {
            best = d2;
            i_min = i;
        }
    }
    let prev = traj.samples[(i_min + n - 1) % n].pos.dist_sq(pos);
    let next = traj.samples[(i_min + 1) % n].pos.dist_sq(pos);
    let denom = prev - best - best + next;
    let mut delta = T::zero();
    if denom > T::zero() {
        delta = (prev - next) / (T::of(2.0) * denom);
        // The vertex of the fitted parabola stays between the neighbors.
        delta = delta.max(T::of(-0.5)).min(T::of(0.5));
    }
    let du = traj.du();
    let u_grid = traj.samples[i_min].u;
    let mut u_ref = u_grid + delta * du;
    if u_ref < T::zero() {
        u_ref += T::one();
    }
    if u_ref >= T::one() {
        u_ref -= T::one();
    }
    let mut e_hat = best.sqrt();
    let mut u_best = u_grid;
    if let Ok(refined) = traj.curve.evaluate(u_ref) {
        let d = refined.dist(pos);
        // Keep the refinement only when it actually improves on the grid.
        if d < e_hat {
            e_hat = d;
            u_best = u_ref;
        }
    }
    (i_min, u_best, e_hat)
}

/// Most recent crossing strictly behind i_min in circular order: the largest
/// z < i_min, or the largest z overall when none precedes i_min (wrap).
pub fn transition_index(z: &[usize], i_min: usize) -> Result<usize> {
    if z.is_empty() {
        return Err(Error::NoTransition);
    }
    debug_assert!(z.windows(2).all(|w| w[0] < w[1]), "Z must be ascending");
    match z.iter().rev().find(|zi| **zi < i_min) {
        Some(zi) => Ok(*zi),
        None => Ok(z[z.len() - 1]),
    }
}

/// The circular inclusive index range [from, to] over a grid of n samples.
pub fn circular_range(from: usize, to: usize, n: usize) -> Vec<usize> {
    assert!(from < n && to < n);
    let len = (to + n - from) % n + 1;
    (0..len).map(|k| (from + k) % n).collect()
}

/// Collects the blame region between a transition index and the error's
/// closest-point index, with the (already modulated) error signal attached.
pub fn blame_region<T: Real>(
    traj: &TimedTrajectory<T>,
    i_transition: usize,
    i_min: usize,
    e: T,
) -> BlameRegion<T> {
    let indices = circular_range(i_transition, i_min, traj.len());
    let positions = indices.iter().map(|i| traj.samples[*i].pos).collect();
    BlameRegion {
        i_transition,
        i_min,
        indices,
        positions,
        e,
    }
}

/// Degenerate fallback when the lap has no sign transitions at all: blame a
/// fixed-length lookback window behind the error.
pub fn blame_region_fallback<T: Real>(
    traj: &TimedTrajectory<T>,
    i_min: usize,
    e: T,
) -> BlameRegion<T> {
    let n = traj.len();
    let lookback = (n / 8).max(1);
    let from = (i_min + n - lookback) % n;
    blame_region(traj, from, i_min, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::FreeParameters;
    use crate::nurbs::{NurbsCurve, DEGREE};
    use crate::timing::sample_trajectory;
    use rand::Rng;

    #[test]
    fn sign_zone_definition() {
        let z = sign_zones(&[1.0, 1.0, -1.0, -1.0, 1.0], 0.0);
        assert_eq!(z.s, vec![1, 1, -1, -1, 1]);
        // Wrap pair (4,0) has equal signs, so no crossing at 4.
        assert_eq!(z.z, vec![1, 3]);
    }

    #[test]
    fn sign_zone_deadband_and_wrap() {
        let z = sign_zones(&[0.1, 0.01, -0.2], 0.05);
        assert_eq!(z.s, vec![1, 0, -1]);
        // Crossings at 0 (1->0), 1 (0->-1), and the wrap 2 (-1->1).
        assert_eq!(z.z, vec![0, 1, 2]);
    }

    #[test]
    fn transition_examples() {
        let z = vec![10, 50, 120];
        assert_eq!(transition_index(&z, 60).unwrap(), 50);
        assert_eq!(transition_index(&z, 5).unwrap(), 120);
        assert_eq!(transition_index(&z, 10).unwrap(), 120);
        assert_eq!(transition_index(&z, 11).unwrap(), 10);
        assert!(matches!(transition_index(&[], 3), Err(Error::NoTransition)));
    }

    #[test]
    fn transition_matches_circular_brute_force() {
        // Oracle: walk backwards from i_min-1 circularly until a member of Z
        // is hit.
        let mut rng = crate::rng::seeded(61);
        for _ in 0..10_000 {
            let n = rng.gen_range(4usize..300);
            let count = rng.gen_range(1usize..(n.min(12)));
            let mut z: Vec<usize> = (0..count).map(|_| rng.gen_range(0..n)).collect();
            z.sort_unstable();
            z.dedup();
            let i_min = rng.gen_range(0..n);
            let got = transition_index(&z, i_min).unwrap();
            let mut probe = (i_min + n - 1) % n;
            let want = loop {
                if z.contains(&probe) {
                    break probe;
                }
                probe = (probe + n - 1) % n;
            };
            assert_eq!(got, want, "Z={z:?} i_min={i_min}");
        }
    }

    #[test]
    fn transition_invariant_under_origin_rotation() {
        let mut rng = crate::rng::seeded(62);
        for _ in 0..500 {
            let n = 128usize;
            let count = rng.gen_range(1usize..8);
            let mut z: Vec<usize> = (0..count).map(|_| rng.gen_range(0..n)).collect();
            z.sort_unstable();
            z.dedup();
            let i_min = rng.gen_range(0..n);
            let shift = rng.gen_range(0..n);
            let rotate = |i: usize| (i + shift) % n;
            let mut z_rot: Vec<usize> = z.iter().map(|zi| rotate(*zi)).collect();
            z_rot.sort_unstable();
            let a = rotate(transition_index(&z, i_min).unwrap());
            let b = transition_index(&z_rot, rotate(i_min)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn circular_range_examples() {
        assert_eq!(circular_range(50, 60, 128).len(), 11);
        let wrapped = circular_range(120, 5, 128);
        assert_eq!(wrapped.len(), 14);
        assert_eq!(wrapped[0], 120);
        assert_eq!(wrapped[7], 127);
        assert_eq!(wrapped[8], 0);
        assert_eq!(wrapped[13], 5);
    }

    fn loop_trajectory() -> crate::timing::TimedTrajectory<f64> {
        let n = 12;
        let pts: Vec<Vec2<f64>> = (0..n - 2)
            .map(|i| {
                let a = i as f64 / (n - 2) as f64 * std::f64::consts::TAU;
                Vec2::new(8.0 * a.cos(), 5.0 * a.sin())
            })
            .collect();
        let k = n - DEGREE;
        let knots: Vec<f64> = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        let curve = FreeParameters::new(n, pts, vec![1.0; n - 2], knots)
            .unwrap()
            .apply_closure()
            .unwrap();
        sample_trajectory(&curve, 10.0, 512).unwrap()
    }

    #[test]
    fn closest_point_on_curve_is_tight() {
        let traj = loop_trajectory();
        let mut rng = crate::rng::seeded(63);
        for _ in 0..50 {
            let u: f64 = rng.gen();
            let pos = traj.curve.evaluate(u).unwrap();
            let (_, u_min, e_hat) = closest_point(&traj, pos);
            // Query on the reference: distance bounded by the grid spacing.
            let seg = traj.curve.derivative(u, 1).unwrap().norm() / 512.0;
            assert!(e_hat <= seg, "e_hat {e_hat} vs segment bound {seg}");
            let wrap_dist = (u_min - u).abs().min(1.0 - (u_min - u).abs());
            assert!(wrap_dist < 2.0 / 512.0);
        }
    }

    #[test]
    fn closest_point_straight_reference_analytic() {
        // Open linear-precision reference from (0,0) to (10,0).
        let n = 7;
        let interior = n - DEGREE;
        let mut knots = vec![0.0; DEGREE + 1];
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(vec![1.0; DEGREE + 1]);
        let xi = crate::nurbs::greville_abscissae(&knots, DEGREE);
        let pts: Vec<Vec2<f64>> = xi.iter().map(|x| Vec2::new(10.0 * x, 0.0)).collect();
        let curve = NurbsCurve::new(pts, vec![1.0; n + 1], knots).unwrap();
        let traj = sample_trajectory(&curve, 5.0, 512).unwrap();
        let (_, u_min, e_hat) = closest_point(&traj, Vec2::new(3.0, 4.0));
        assert!((u_min - 0.3).abs() < 1e-6, "u_min {u_min}");
        assert!((e_hat - 4.0).abs() < 1e-9, "e_hat {e_hat}");
    }

    #[test]
    fn closest_point_matches_dense_scan() {
        let traj = loop_trajectory();
        let mut rng = crate::rng::seeded(64);
        for _ in 0..40 {
            let q = Vec2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-6.0..6.0));
            let (_, _, e_hat) = closest_point(&traj, q);
            // 100x denser brute-force scan.
            let mut dense = f64::INFINITY;
            let m = 512 * 100;
            for i in 0..m {
                let u = i as f64 / m as f64;
                dense = dense.min(traj.curve.evaluate(u).unwrap().dist(q));
            }
            assert!(
                (e_hat - dense).abs() < 1e-4,
                "refined {e_hat} vs dense {dense}"
            );
            // Refinement must never lose to the coarse grid it started from.
            let coarse = traj
                .samples
                .iter()
                .map(|s| s.pos.dist(q))
                .fold(f64::INFINITY, f64::min);
            assert!(e_hat <= coarse + 1e-12);
        }
    }

    #[test]
    fn region_stays_within_one_zone() {
        let traj = loop_trajectory();
        let a_par: Vec<f64> = traj.samples.iter().map(|s| s.a_par).collect();
        let max_a = a_par.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let zones = sign_zones(&a_par, 0.05 * max_a);
        assert!(!zones.z.is_empty(), "loop should alternate accel/decel");
        let mut rng = crate::rng::seeded(65);
        for _ in 0..200 {
            let i_min = rng.gen_range(0..traj.len());
            let it = transition_index(&zones.z, i_min).unwrap();
            let region = blame_region(&traj, it, i_min, -0.1);
            assert_eq!(region.indices[0], it);
            assert_eq!(*region.indices.last().unwrap(), i_min);
            // Strictly inside the region (excluding both ends) S is constant
            // and no crossing index appears.
            for w in region.indices.windows(2).skip(1) {
                if w[1] == i_min {
                    break;
                }
                assert_eq!(
                    zones.s[w[0]], zones.s[w[1]],
                    "sign change inside region {region:?}"
                );
            }
            for idx in &region.indices[1..region.indices.len().saturating_sub(1)] {
                assert!(
                    !zones.z.contains(idx) || *idx == it,
                    "crossing {idx} inside region"
                );
            }
        }
    }

    #[test]
    fn fallback_region_length() {
        let traj = loop_trajectory();
        let region = blame_region_fallback(&traj, 10, -0.1);
        assert_eq!(region.indices.len(), 512 / 8 + 1);
        assert_eq!(*region.indices.last().unwrap(), 10);
    }
}
