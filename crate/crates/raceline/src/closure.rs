//! Reduced parameterization of a closed lap and the C2 seam construction.
//!
//! A lap is a clamped cubic whose last three control points are not free:
//! they are solved from the first three so that position, first, and second
//! parametric derivatives match across the u = 1 -> 0 seam. The last three
//! weights mirror the first three (w_n = w_0, w_{n-1} = w_1, w_{n-2} = w_2),
//! which makes the rational derivatives close exactly, not only the
//! homogeneous ones.
//!
//! The seam solve works in homogeneous coordinates, where the curve is
//! polynomial and endpoint derivatives are linear in the weighted control
//! points. For a clamped cubic with knots u_0..u_{n+4} (u_0..u_3 = 0,
//! u_{n+1}..u_{n+4} = 1) the derivative curve construction gives
//!   A'(0)  = 3 (P1 - P0) / u_4
//!   A''(0) = (6/u_4) ((P2 - P1)/u_5 - (P1 - P0)/u_4)
//!   A'(1)  = 3 (Pn - Pn1) / b_1,               b_1 = 1 - u_n
//!   A''(1) = (6/b_1) ((Pn - Pn1)/b_1 - (Pn1 - Pn2)/b_2), b_2 = 1 - u_{n-1}
//! (P_i = w_i p_i, and identical formulas with scalars w_i for the weight
//! function). Rational derivatives follow from the quotient rule
//!   c'  = (A' - c w') / w
//!   c'' = (A'' - 2 c' w' - c w'') / w.
//! Matching c, c', c'' at both ends is then a triangular linear system for
//! P_n, P_{n-1}, P_{n-2}, solved in closed form below.

use serde::{Deserialize, Serialize};

use crate::nurbs::{NurbsCurve, DEGREE};
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Interior knots closer than this to 0 or 1 make the seam solve divide by
/// a near-zero span and are rejected.
pub const COND_EPS: f64 = 1e-6;

/// Largest magnitude a knot-increment logit can take in the flattened
/// parameter vector. e^(2*12) ~ 2.6e10 keeps every decoded increment far
/// above f64 rounding of the partial sums while leaving the optimizer a
/// huge dynamic range.
pub const LOGIT_CAP: f64 = 12.0;

/// The free subset of a closed-lap curve with n+1 control points: the first
/// n-2 control points, the first n-2 weights, and all n-3 interior knots.
/// Everything else is determined by the closure construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeParameters<T: Real = f64> {
    n: usize,
    free_points: Vec<Vec2<T>>,
    free_weights: Vec<T>,
    free_knots: Vec<T>,
}

impl<T: Real> FreeParameters<T> {
    pub fn new(
        n: usize,
        free_points: Vec<Vec2<T>>,
        free_weights: Vec<T>,
        free_knots: Vec<T>,
    ) -> Result<Self> {
        if n < 5 {
            return Err(Error::Invalid(format!(
                "closure needs n >= 5 so the mirrored weights stay distinct, got n = {n}"
            )));
        }
        if free_points.len() != n - 2 {
            return Err(Error::Invalid(format!(
                "expected {} free control points, got {}",
                n - 2,
                free_points.len()
            )));
        }
        if free_weights.len() != n - 2 {
            return Err(Error::Invalid(format!(
                "expected {} free weights, got {}",
                n - 2,
                free_weights.len()
            )));
        }
        if free_knots.len() != n - DEGREE {
            return Err(Error::Invalid(format!(
                "expected {} interior knots, got {}",
                n - DEGREE,
                free_knots.len()
            )));
        }
        if free_weights.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid("free weights must be positive".into()));
        }
        let mut prev = T::zero();
        for k in &free_knots {
            if !(*k > prev && *k < T::one()) {
                return Err(Error::Invalid(
                    "interior knots must be strictly increasing inside (0,1)".into(),
                ));
            }
            prev = *k;
        }
        Ok(FreeParameters {
            n,
            free_points,
            free_weights,
            free_knots,
        })
    }

    /// Highest control-point index of the completed curve.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn free_points(&self) -> &[Vec2<T>] {
        &self.free_points
    }

    pub fn free_weights(&self) -> &[T] {
        &self.free_weights
    }

    pub fn free_knots(&self) -> &[T] {
        &self.free_knots
    }

    /// Length of the flat optimization vector: 2(n-2) + (n-2) + (n-3).
    pub fn dim(&self) -> usize {
        Self::dim_for(self.n)
    }

    pub fn dim_for(n: usize) -> usize {
        // 2(n-2) point coordinates + (n-2) log-weights + (n-3) knot logits.
        4 * n - 9
    }

    /// Flattens to the unconstrained optimization vector: control-point
    /// coordinates as-is, weights in log space, interior knots as
    /// normalized-increment logits (last increment pinned to logit 0).
    pub fn to_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim());
        for p in &self.free_points {
            v.push(p.x);
            v.push(p.y);
        }
        for w in &self.free_weights {
            v.push(w.ln());
        }
        let k = self.free_knots.len();
        let mut increments = Vec::with_capacity(k + 1);
        let mut prev = T::zero();
        for t in &self.free_knots {
            increments.push(*t - prev);
            prev = *t;
        }
        increments.push(T::one() - prev);
        let last = increments[k];
        let cap = T::of(LOGIT_CAP);
        for d in &increments[..k] {
            v.push((*d / last).ln().max(-cap).min(cap));
        }
        v
    }

    /// Inverse of [`to_vector`]. The softmax over (logits, 0) yields k+1
    /// positive increments summing to 1, whose partial sums are the interior
    /// knots: strict monotonicity and (0,1) containment hold by construction.
    pub fn from_vector(n: usize, v: &[T]) -> Result<Self> {
        let dim = Self::dim_for(n);
        if v.len() != dim {
            return Err(Error::Invalid(format!(
                "expected a {dim}-vector for n = {n}, got length {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite parameter vector".into()));
        }
        let np = n - 2;
        let mut free_points = Vec::with_capacity(np);
        for i in 0..np {
            free_points.push(Vec2::new(v[2 * i], v[2 * i + 1]));
        }
        let free_weights: Vec<T> = v[2 * np..3 * np].iter().map(|x| x.exp()).collect();
        let k = n - DEGREE;
        // Capping the logits bounds the increment ratio so the decoded knot
        // partial sums stay strictly increasing in floating point no matter
        // how far the optimizer wanders.
        let cap = T::of(LOGIT_CAP);
        let logits: Vec<T> = v[3 * np..]
            .iter()
            .map(|l| (*l).max(-cap).min(cap))
            .collect();
        let mut mx = T::zero(); // the pinned logit
        for l in &logits {
            if *l > mx {
                mx = *l;
            }
        }
        let mut exps: Vec<T> = logits.iter().map(|l| (*l - mx).exp()).collect();
        exps.push((-mx).exp());
        let total: T = exps.iter().copied().sum();
        let mut free_knots = Vec::with_capacity(k);
        let mut acc = T::zero();
        for e in &exps[..k] {
            acc += *e / total;
            free_knots.push(acc);
        }
        Self::new(n, free_points, free_weights, free_knots)
    }

    /// Extracts the free subset from a curve with the closed-lap layout.
    /// Only shape is checked; whether the curve actually satisfies the seam
    /// conditions is up to the caller.
    pub fn from_curve(curve: &NurbsCurve<T>) -> Result<Self> {
        let n = curve.n();
        if n < 5 {
            return Err(Error::Invalid("curve too small for the closed layout".into()));
        }
        let free_points = curve.control_points()[..n - 2].to_vec();
        let free_weights = curve.weights()[..n - 2].to_vec();
        let free_knots = curve.knots()[DEGREE + 1..=n].to_vec();
        Self::new(n, free_points, free_weights, free_knots)
    }

    /// Completes the curve: mirrored weights, clamped knot vector, and the
    /// last three control points solved so that c, c', c'' agree at the seam.
    pub fn apply_closure(&self) -> Result<NurbsCurve<T>> {
        let n = self.n;
        let k = self.free_knots.len();
        let u4 = self.free_knots[0];
        let u5 = self.free_knots[1];
        let un = self.free_knots[k - 1];
        let un1 = self.free_knots[k - 2];
        let b1 = T::one() - un;
        let b2 = T::one() - un1;
        let cond = T::of(COND_EPS);
        if u4 < cond || b1 < cond {
            return Err(Error::IllConditioned(format!(
                "boundary knot spans too small (first interior {}, last interior {})",
                u4.to_f64_lossy(),
                un.to_f64_lossy()
            )));
        }

        let w0 = self.free_weights[0];
        let w1 = self.free_weights[1];
        let w2 = self.free_weights[2];
        let p0 = self.free_points[0];
        let p1 = self.free_points[1];
        let p2 = self.free_points[2];
        let three = T::of(3.0);
        let six = T::of(6.0);

        // Start-side derivatives of the homogeneous curve and weight function.
        let hp0 = p0 * w0;
        let hp1 = p1 * w1;
        let hp2 = p2 * w2;
        let a1_0 = (hp1 - hp0) * (three / u4);
        let w1_0 = (w1 - w0) * (three / u4);
        let a2_0 = ((hp2 - hp1) / u5 - (hp1 - hp0) / u4) * (six / u4);
        let w2_0 = ((w2 - w1) / u5 - (w1 - w0) / u4) * (six / u4);

        // Rational derivatives at u = 0: the closure targets.
        let d1 = (a1_0 - p0 * w1_0) / w0;
        let d2 = (a2_0 - d1 * (T::of(2.0) * w1_0) - p0 * w2_0) / w0;

        // End-side weight-function derivatives under the mirror
        // w_n = w_0, w_{n-1} = w_1, w_{n-2} = w_2.
        let wp1 = (w0 - w1) * (three / b1);
        let wp2 = ((w0 - w1) / b1 - (w1 - w2) / b2) * (six / b1);

        // Invert the quotient rule at u = 1 (where c(1) = p_0, w(1) = w_0)
        // to get the required homogeneous end derivatives, then peel off the
        // last three weighted control points.
        let a1_1 = d1 * w0 + p0 * wp1;
        let a2_1 = d2 * w0 + d1 * (T::of(2.0) * wp1) + p0 * wp2;
        let hpn = p0 * w0;
        let hpn1 = hpn - a1_1 * (b1 / three);
        let x = (hpn - hpn1) / b1;
        let y = x - a2_1 * (b1 / six);
        let hpn2 = hpn1 - y * b2;

        let mut points = self.free_points.clone();
        points.push(hpn2 / w2);
        points.push(hpn1 / w1);
        points.push(hpn / w0);

        let mut weights = self.free_weights.clone();
        weights.push(w2);
        weights.push(w1);
        weights.push(w0);

        let mut knots = vec![T::zero(); DEGREE + 1];
        knots.extend_from_slice(&self.free_knots);
        knots.extend(std::iter::repeat(T::one()).take(DEGREE + 1));

        debug_assert_eq!(points.len(), n + 1);
        NurbsCurve::new(points, weights, knots)
    }
}
