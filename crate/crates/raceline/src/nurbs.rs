//! Rational B-spline curve evaluation and analytic parametric derivatives.
//!
//! Curves are planar, cubic (p = 3), and use a clamped knot vector with
//! endpoint multiplicity p+1, so c(0) interpolates the first control point
//! and c(1) the last. Closure of a lap (last three control points computed
//! from the first three) lives in [`crate::closure`].

use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Fixed curve degree. The closure construction and the free-parameter
/// layout both assume cubics; nothing else is supported.
pub const DEGREE: usize = 3;

/// Parametric speed below this is treated as a degenerate tangent
/// (per unit u, meters).
pub const EPS_SPEED: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct NurbsCurve<T: Real = f64> {
    control_points: Vec<Vec2<T>>,
    weights: Vec<T>,
    knots: Vec<T>,
}

impl<T: Real> NurbsCurve<T> {
    /// Validates the clamped-cubic invariants and builds the curve:
    /// equal-length points/weights (n+1 each), strictly positive weights,
    /// n+p+2 nondecreasing knots with p+1 zeros up front, p+1 ones at the
    /// end, and interior knots strictly inside (0,1).
    pub fn new(control_points: Vec<Vec2<T>>, weights: Vec<T>, knots: Vec<T>) -> Result<Self> {
        let p = DEGREE;
        let n1 = control_points.len();
        if n1 < p + 1 {
            return Err(Error::Invalid(format!(
                "need at least {} control points, got {n1}",
                p + 1
            )));
        }
        if weights.len() != n1 {
            return Err(Error::Invalid(format!(
                "{} weights for {n1} control points",
                weights.len()
            )));
        }
        if knots.len() != n1 + p + 1 {
            return Err(Error::Invalid(format!(
                "expected {} knots for {n1} control points, got {}",
                n1 + p + 1,
                knots.len()
            )));
        }
        if control_points.iter().any(|pt| !pt.is_finite()) {
            return Err(Error::Invalid("non-finite control point".into()));
        }
        if weights.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid("weights must be strictly positive".into()));
        }
        for pair in knots.windows(2) {
            if !(pair[1] >= pair[0]) {
                return Err(Error::Invalid("knots must be nondecreasing".into()));
            }
        }
        let zero = T::zero();
        let one = T::one();
        if knots[..=p].iter().any(|u| *u != zero) {
            return Err(Error::Invalid(format!(
                "first {} knots must equal 0",
                p + 1
            )));
        }
        if knots[knots.len() - p - 1..].iter().any(|u| *u != one) {
            return Err(Error::Invalid(format!("last {} knots must equal 1", p + 1)));
        }
        if knots[p + 1..knots.len() - p - 1]
            .iter()
            .any(|u| !(*u > zero && *u < one))
        {
            return Err(Error::Invalid(
                "interior knots must lie strictly inside (0,1)".into(),
            ));
        }
        Ok(NurbsCurve {
            control_points,
            weights,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    /// Highest control-point index n (there are n+1 points).
    pub fn n(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn control_points(&self) -> &[Vec2<T>] {
        &self.control_points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Knot span index containing u: the i with knots[i] <= u < knots[i+1],
    /// except u = 1 maps to the last nonvanishing span n.
    pub fn find_span(&self, u: T) -> usize {
        find_span(u, &self.knots, DEGREE)
    }

    /// The p+1 basis values that are nonzero at u, plus the span index.
    pub fn basis_at(&self, u: T) -> Result<(Vec<T>, usize)> {
        basis_functions(u, &self.knots, DEGREE)
    }

    /// Curve point by the rational basis sum.
    pub fn evaluate(&self, u: T) -> Result<Vec2<T>> {
        let (basis, span) = self.basis_at(u)?;
        let mut num = Vec2::zero();
        let mut den = T::zero();
        for (j, b) in basis.iter().enumerate() {
            let i = span - DEGREE + j;
            let w = self.weights[i];
            num += self.control_points[i] * (*b * w);
            den += *b * w;
        }
        Ok(num / den)
    }

    /// Parametric derivatives c^(0..=k) at u. The homogeneous curve
    /// (weighted points, weight function) is differentiated exactly and the
    /// rational derivatives recovered by the generalized quotient rule
    ///   c^(k) = (A^(k) - sum_{i=1..k} C(k,i) w^(i) c^(k-i)) / w.
    /// One-sided at the clamped endpoints.
    pub fn derivatives(&self, u: T, k: usize) -> Result<Vec<Vec2<T>>> {
        if k > DEGREE {
            return Err(Error::BadDerivativeOrder(k));
        }
        check_domain(u, &self.knots)?;
        let span = self.find_span(u);
        let ders = ders_basis_functions(span, u, DEGREE, k, &self.knots);
        // Homogeneous derivatives: A^(i) (2-D part) and w^(i) (weight part).
        let mut a = vec![Vec2::zero(); k + 1];
        let mut w = vec![T::zero(); k + 1];
        for (order, row) in ders.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                let i = span - DEGREE + j;
                let wi = self.weights[i];
                a[order] += self.control_points[i] * (*d * wi);
                w[order] += *d * wi;
            }
        }
        let mut c = vec![Vec2::zero(); k + 1];
        for order in 0..=k {
            let mut v = a[order];
            for i in 1..=order {
                let bin = T::from_usize_exact(binomial(order, i));
                v -= c[order - i] * (bin * w[i]);
            }
            c[order] = v / w[0];
        }
        Ok(c)
    }

    /// Single parametric derivative of order k (1..=3).
    pub fn derivative(&self, u: T, k: usize) -> Result<Vec2<T>> {
        if k < 1 {
            return Err(Error::BadDerivativeOrder(k));
        }
        Ok(self.derivatives(u, k)?[k])
    }

    /// Unsigned curvature |c' x c''| / ||c'||^3.
    pub fn curvature(&self, u: T) -> Result<T> {
        Ok(self.signed_curvature(u)?.abs())
    }

    /// Signed curvature: positive where the curve turns left.
    pub fn signed_curvature(&self, u: T) -> Result<T> {
        let d = self.derivatives(u, 2)?;
        let speed = d[1].norm();
        if speed < T::of(EPS_SPEED) {
            return Err(Error::DegenerateTangent(u.to_f64_lossy()));
        }
        Ok(d[1].cross(d[2]) / (speed * speed * speed))
    }

    /// Greville abscissae xi_i = (u_{i+1} + ... + u_{i+p}) / p. Control
    /// points placed linearly in xi reproduce a straight line exactly.
    pub fn greville_abscissae(&self) -> Vec<T> {
        greville_abscissae(&self.knots, DEGREE)
    }
}

pub fn greville_abscissae<T: Real>(knots: &[T], p: usize) -> Vec<T> {
    let n1 = knots.len() - p - 1;
    let pf = T::from_usize_exact(p);
    (0..n1)
        .map(|i| {
            let mut s = T::zero();
            for j in 1..=p {
                s += knots[i + j];
            }
            s / pf
        })
        .collect()
}

fn check_domain<T: Real>(u: T, knots: &[T]) -> Result<()> {
    if !(u >= knots[0] && u <= knots[knots.len() - 1]) {
        return Err(Error::OutOfDomain(u.to_f64_lossy()));
    }
    Ok(())
}

pub fn find_span<T: Real>(u: T, knots: &[T], p: usize) -> usize {
    let n = knots.len() - p - 2;
    if u >= knots[n + 1] {
        return n;
    }
    if u <= knots[p] {
        return p;
    }
    let mut lo = p;
    let mut hi = n + 1;
    let mut mid = (lo + hi) / 2;
    while u < knots[mid] || u >= knots[mid + 1] {
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// The p+1 nonzero B-spline basis values at u plus the span index, by the
/// standard triangular recurrence on knot differences. Values are
/// nonnegative and sum to 1.
pub fn basis_functions<T: Real>(u: T, knots: &[T], p: usize) -> Result<(Vec<T>, usize)> {
    check_domain(u, knots)?;
    let span = find_span(u, knots, p);
    let mut n = vec![T::zero(); p + 1];
    let mut left = vec![T::zero(); p + 1];
    let mut right = vec![T::zero(); p + 1];
    n[0] = T::one();
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = T::zero();
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    Ok((n, span))
}

/// Derivatives of the nonzero basis functions through order nd at u
/// (nd <= p). Returns ders[order][j] for the p+1 functions active on the
/// span. Triangular-table algorithm over inverse knot differences.
pub fn ders_basis_functions<T: Real>(
    span: usize,
    u: T,
    p: usize,
    nd: usize,
    knots: &[T],
) -> Vec<Vec<T>> {
    let mut ndu = vec![vec![T::zero(); p + 1]; p + 1];
    let mut left = vec![T::zero(); p + 1];
    let mut right = vec![T::zero(); p + 1];
    ndu[0][0] = T::one();
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = T::zero();
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![T::zero(); p + 1]; nd + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![T::zero(); p + 1]; 2];
    for r in 0..=p {
        let mut s1 = 0usize;
        let mut s2 = 1usize;
        a[0][0] = T::one();
        for k in 1..=nd {
            let mut d = T::zero();
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize {
                k - 1
            } else {
                p - r
            };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
            }
            if r as isize <= pk as isize {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    // Scale by p! / (p-k)!
    let mut r = T::from_usize_exact(p);
    for k in 1..=nd {
        for j in 0..=p {
            ders[k][j] *= r;
        }
        if k < nd {
            r *= T::from_usize_exact(p - k);
        }
    }
    ders
}

fn binomial(n: usize, k: usize) -> usize {
    match (n, k) {
        (_, 0) => 1,
        (1, 1) => 1,
        (2, 1) => 2,
        (2, 2) => 1,
        (3, 1) => 3,
        (3, 2) => 3,
        (3, 3) => 1,
        _ => unreachable!("orders beyond the cubic degree are rejected earlier"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent slow oracle: the Cox-de Boor recurrence written directly
    /// over all n+1 functions, no span logic shared with the fast path.
    fn cox_de_boor_all<T: Real>(u: T, knots: &[T], p: usize) -> Vec<T> {
        let count = knots.len() - 1;
        let mut n0 = vec![T::zero(); count];
        let last = knots[knots.len() - 1];
        for i in 0..count {
            let hit = if u >= knots[i] && u < knots[i + 1] {
                true
            } else {
                // Close the final nonempty interval at u = 1.
                u == last && knots[i] < last && knots[i + 1] == last
            };
            if hit {
                n0[i] = T::one();
            }
        }
        let mut prev = n0;
        for deg in 1..=p {
            let m = prev.len() - 1;
            let mut cur = vec![T::zero(); m];
            for i in 0..m {
                let d1 = knots[i + deg] - knots[i];
                let d2 = knots[i + deg + 1] - knots[i + 1];
                let mut v = T::zero();
                if d1 > T::zero() {
                    v += (u - knots[i]) / d1 * prev[i];
                }
                if d2 > T::zero() {
                    v += (knots[i + deg + 1] - u) / d2 * prev[i + 1];
                }
                cur[i] = v;
            }
            prev = cur;
        }
        prev
    }

    fn uniform_clamped_knots(n: usize) -> Vec<f64> {
        let interior = n - DEGREE;
        let mut knots = vec![0.0; DEGREE + 1];
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(vec![1.0; DEGREE + 1]);
        knots
    }

    fn random_open_curve(rng: &mut impl Rng, n: usize) -> NurbsCurve<f64> {
        let pts = (0..=n)
            .map(|_| {
                crate::vec2::Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))
            })
            .collect();
        let weights = (0..=n).map(|_| rng.gen_range(0.3..3.0)).collect();
        let interior = n - DEGREE;
        let mut cuts: Vec<f64> = (0..interior).map(|_| rng.gen_range(0.05..0.95)).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Enforce a minimum gap so random vectors stay well conditioned.
        for i in 1..cuts.len() {
            if cuts[i] - cuts[i - 1] < 1e-3 {
                cuts[i] = cuts[i - 1] + 1e-3;
            }
        }
        let mut knots = vec![0.0; DEGREE + 1];
        knots.extend(cuts);
        knots.extend(vec![1.0; DEGREE + 1]);
        NurbsCurve::new(pts, weights, knots).unwrap()
    }

    #[test]
    fn clamped_endpoint_basis() {
        let knots = uniform_clamped_knots(7);
        let (b0, s0) = basis_functions(0.0, &knots, DEGREE).unwrap();
        assert_eq!(s0, DEGREE);
        assert_eq!(b0[0], 1.0);
        assert!(b0[1..].iter().all(|v| *v == 0.0));
        let (b1, s1) = basis_functions(1.0, &knots, DEGREE).unwrap();
        assert_eq!(s1, 7);
        assert_eq!(b1[DEGREE], 1.0);
        assert!(b1[..DEGREE].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn basis_matches_slow_recurrence() {
        let mut rng = crate::rng::seeded(11);
        for _ in 0..50 {
            let n = rng.gen_range(5..12);
            let curve = random_open_curve(&mut rng, n);
            let u: f64 = rng.gen();
            let (fast, span) = curve.basis_at(u).unwrap();
            let all = cox_de_boor_all(u, curve.knots(), DEGREE);
            for (j, f) in fast.iter().enumerate() {
                let i = span - DEGREE + j;
                assert!(
                    (f - all[i]).abs() < 1e-13,
                    "basis mismatch at i={i}: {f} vs {}",
                    all[i]
                );
            }
            let active: f64 = fast.iter().sum();
            assert!((active - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_matches_dense_rational_sum() {
        let mut rng = crate::rng::seeded(12);
        for _ in 0..20 {
            let n = rng.gen_range(5..12);
            let curve = random_open_curve(&mut rng, n);
            for _ in 0..100 {
                let u: f64 = rng.gen();
                let p = curve.evaluate(u).unwrap();
                let all = cox_de_boor_all(u, curve.knots(), DEGREE);
                let mut num = crate::vec2::Vec2::zero();
                let mut den = 0.0;
                for i in 0..=curve.n() {
                    let wb = all[i] * curve.weights()[i];
                    num += curve.control_points()[i] * wb;
                    den += wb;
                }
                let q = num / den;
                assert!(p.dist(q) < 1e-12, "dense oracle disagrees at u={u}");
            }
        }
    }

    #[test]
    fn constant_control_polygon_is_constant() {
        let n = 8;
        let p = crate::vec2::Vec2::new(2.5, -1.0);
        let curve = NurbsCurve::new(
            vec![p; n + 1],
            vec![1.0; n + 1],
            uniform_clamped_knots(n),
        )
        .unwrap();
        for i in 0..=40 {
            let u = i as f64 / 40.0;
            assert!(curve.evaluate(u).unwrap().dist(p) < 1e-14);
            let d = curve.derivatives(u, 2).unwrap();
            assert!(d[1].norm() < 1e-12);
            assert!(d[2].norm() < 1e-12);
        }
    }

    #[test]
    fn linear_precision_on_greville_abscissae() {
        let n = 9;
        let knots = uniform_clamped_knots(n);
        let a = crate::vec2::Vec2::new(1.0, 2.0);
        let b = crate::vec2::Vec2::new(3.0, -4.0);
        let xi = greville_abscissae(&knots, DEGREE);
        let pts: Vec<_> = xi.iter().map(|x| a + b * *x).collect();
        let curve = NurbsCurve::new(pts, vec![1.0; n + 1], knots).unwrap();
        for i in 0..=50 {
            let u = i as f64 / 50.0;
            let want = a + b * u;
            assert!(curve.evaluate(u).unwrap().dist(want) < 1e-10);
            let d = curve.derivatives(u, 2).unwrap();
            assert!(d[1].dist(b) < 1e-9);
            assert!(d[2].norm() < 1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = crate::rng::seeded(13);
        for _ in 0..5 {
            let curve = random_open_curve(&mut rng, 10);
            let mut checked = 0;
            while checked < 50 {
                let u: f64 = rng.gen_range(0.05..0.95);
                // Stay away from knots where higher derivatives may jump.
                if curve
                    .knots()
                    .iter()
                    .any(|k| (k - u).abs() < 1e-3)
                {
                    continue;
                }
                checked += 1;
                let h = 1e-6;
                let cm = curve.evaluate(u - h).unwrap();
                let c0 = curve.evaluate(u).unwrap();
                let cp = curve.evaluate(u + h).unwrap();
                let d = curve.derivatives(u, 2).unwrap();
                let fd1 = (cp - cm) / (2.0 * h);
                let fd2 = (cp - c0 * 2.0 + cm) / (h * h);
                assert!(
                    d[1].dist(fd1) / d[1].norm().max(1.0) < 1e-6,
                    "first derivative mismatch at u={u}"
                );
                assert!(
                    d[2].dist(fd2) / d[2].norm().max(1.0) < 1e-4,
                    "second derivative mismatch at u={u}"
                );
            }
        }
    }

    #[test]
    fn third_derivative_consistent_with_second() {
        let mut rng = crate::rng::seeded(14);
        let curve = random_open_curve(&mut rng, 9);
        let u = 0.4321;
        let h = 1e-6;
        let d3 = curve.derivative(u, 3).unwrap();
        let a = curve.derivative(u - h, 2).unwrap();
        let b = curve.derivative(u + h, 2).unwrap();
        let fd3 = (b - a) / (2.0 * h);
        assert!(d3.dist(fd3) / d3.norm().max(1.0) < 1e-4);
    }

    #[test]
    fn domain_and_order_errors() {
        let curve = random_open_curve(&mut crate::rng::seeded(15), 8);
        assert!(matches!(
            curve.evaluate(-0.1),
            Err(Error::OutOfDomain(_))
        ));
        assert!(matches!(curve.evaluate(1.1), Err(Error::OutOfDomain(_))));
        assert!(matches!(
            curve.derivative(0.5, 0),
            Err(Error::BadDerivativeOrder(0))
        ));
        assert!(matches!(
            curve.derivative(0.5, 4),
            Err(Error::BadDerivativeOrder(4))
        ));
    }

    #[test]
    fn rejects_bad_construction() {
        let knots = uniform_clamped_knots(7);
        let pts = vec![crate::vec2::Vec2::new(0.0, 0.0); 8];
        assert!(NurbsCurve::new(pts.clone(), vec![1.0; 7], knots.clone()).is_err());
        assert!(NurbsCurve::new(pts.clone(), vec![-1.0; 8], knots.clone()).is_err());
        let mut bad = knots.clone();
        bad[5] = 0.9;
        bad[6] = 0.2;
        assert!(NurbsCurve::new(pts.clone(), vec![1.0; 8], bad).is_err());
        let mut outside = knots;
        outside[5] = 1.5;
        assert!(NurbsCurve::new(pts, vec![1.0; 8], outside).is_err());
    }

    #[test]
    fn f32_instantiation_evaluates() {
        let n = 7;
        let knots: Vec<f32> = uniform_clamped_knots(n).iter().map(|k| *k as f32).collect();
        let pts: Vec<crate::vec2::Vec2<f32>> = (0..=n)
            .map(|i| crate::vec2::Vec2::new(i as f32, (i as f32).sin()))
            .collect();
        let curve = NurbsCurve::new(pts, vec![1.0f32; n + 1], knots).unwrap();
        let (b, _) = curve.basis_at(0.37).unwrap();
        let s: f32 = b.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(curve.evaluate(0.37).unwrap().is_finite());
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity(u in 0.0f64..=1.0, n in 5usize..14) {
            let knots = uniform_clamped_knots(n);
            let (b, _) = basis_functions(u, &knots, DEGREE).unwrap();
            let sum: f64 = b.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
            proptest::prop_assert!(b.iter().all(|v| *v >= 0.0));
        }
    }
}
