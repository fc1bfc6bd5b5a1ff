//! Least-squares fit of a closed lap curve to an ordered point loop.
//! Used to seed the optimizer from a track centerline.

use crate::closure::FreeParameters;
use crate::linalg::Matrix;
use crate::nurbs::{NurbsCurve, DEGREE};
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

#[derive(Clone, Debug)]
pub struct FitResult<T: Real = f64> {
    pub params: FreeParameters<T>,
    /// Max distance from an input point to its projection on the fitted
    /// curve.
    pub max_residual: T,
}

/// Everything tied to one interior knot choice: the clamped knot vector and
/// the linear fold of the closure tail back onto p_0, p_1, p_2 (with unit
/// weights the tail is exactly linear in them, so probing the closure with
/// basis points extracts the coefficients without duplicating formulas).
struct FitCtx<T: Real> {
    n: usize,
    unknowns: usize,
    knots_interior: Vec<T>,
    knots: Vec<T>,
    ones: Vec<T>,
    tail_coef: [[T; 3]; 3],
}

impl<T: Real> FitCtx<T> {
    fn new(n: usize, knots_interior: Vec<T>) -> Result<Self> {
        let ones = vec![T::one(); n - 2];
        let mut tail_coef = [[T::zero(); 3]; 3]; // [tail j][source q]
        for q in 0..3 {
            let mut probe = vec![Vec2::zero(); n - 2];
            probe[q] = Vec2::new(T::one(), T::zero());
            let free = FreeParameters::new(n, probe, ones.clone(), knots_interior.clone())?;
            let curve = free.apply_closure()?;
            for j in 0..3 {
                tail_coef[j][q] = curve.control_points()[n - 2 + j].x;
            }
        }
        let mut knots = vec![T::zero(); DEGREE + 1];
        knots.extend_from_slice(&knots_interior);
        knots.extend(std::iter::repeat(T::one()).take(DEGREE + 1));
        Ok(FitCtx {
            n,
            unknowns: n - 2,
            knots_interior,
            knots,
            ones,
            tail_coef,
        })
    }

    fn params_of(&self, pts: Vec<Vec2<T>>) -> Result<FreeParameters<T>> {
        FreeParameters::new(self.n, pts, self.ones.clone(), self.knots_interior.clone())
    }

    /// Basis values and first derivatives at t with the three tail columns
    /// folded back into the first three unknowns.
    fn rows_at(&self, t: T, row: &mut [T], drow: &mut [T]) {
        for v in row.iter_mut() {
            *v = T::zero();
        }
        for v in drow.iter_mut() {
            *v = T::zero();
        }
        let span = crate::nurbs::find_span(t, &self.knots, DEGREE);
        let ders = crate::nurbs::ders_basis_functions(span, t, DEGREE, 1, &self.knots);
        for b_idx in 0..=DEGREE {
            let i = span - DEGREE + b_idx;
            let (v, dv) = (ders[0][b_idx], ders[1][b_idx]);
            if i < self.unknowns {
                row[i] += v;
                drow[i] += dv;
            } else {
                let tail_j = i - self.unknowns;
                for q in 0..3 {
                    row[q] += v * self.tail_coef[tail_j][q];
                    drow[q] += dv * self.tail_coef[tail_j][q];
                }
            }
        }
    }

    /// Point-distance least squares at fixed parameters; x and y decouple.
    fn solve_pdm(&self, ring: &[Vec2<T>], ts: &[T]) -> Result<(FreeParameters<T>, NurbsCurve<T>)> {
        let u = self.unknowns;
        let mut gram = Matrix::zeros(u, u);
        let mut rhs_x = vec![T::zero(); u];
        let mut rhs_y = vec![T::zero(); u];
        let mut row = vec![T::zero(); u];
        let mut drow = vec![T::zero(); u];
        for (j, t) in ts.iter().enumerate() {
            self.rows_at(*t, &mut row, &mut drow);
            for a in 0..u {
                if row[a] == T::zero() {
                    continue;
                }
                for b in 0..u {
                    gram[(a, b)] += row[a] * row[b];
                }
                rhs_x[a] += row[a] * ring[j].x;
                rhs_y[a] += row[a] * ring[j].y;
            }
        }
        // Tiny ridge keeps rank-deficient inputs (e.g. heavily repeated
        // points) solvable; the bias is far below the residual scale.
        let mut trace = T::zero();
        for a in 0..u {
            trace += gram[(a, a)];
        }
        let ridge = T::of(1e-9) * trace / T::from_usize_exact(u);
        for a in 0..u {
            gram[(a, a)] += ridge;
        }
        let sol_x = gram.clone().solve(rhs_x)?;
        let sol_y = gram.solve(rhs_y)?;
        let fitted: Vec<Vec2<T>> = sol_x
            .into_iter()
            .zip(sol_y)
            .map(|(x, y)| Vec2::new(x, y))
            .collect();
        let params = self.params_of(fitted)?;
        let curve = params.apply_closure()?;
        Ok((params, curve))
    }

    /// Newton foot-point polish of every parameter on the given curve (the
    /// curve is closed and C^2 at the seam, so parameters wrap freely);
    /// returns (max distance, sum of squared distances).
    fn correct(&self, ring: &[Vec2<T>], ts: &mut [T], curve: &NurbsCurve<T>) -> Result<(T, T)> {
        let mut max_residual = T::zero();
        let mut sum_sq = T::zero();
        for (j, t) in ts.iter_mut().enumerate() {
            let q = ring[j];
            for _ in 0..6 {
                let c = curve.evaluate(*t)?;
                let d1 = curve.derivative(*t, 1)?;
                let d2 = curve.derivative(*t, 2)?;
                let g = (c - q).dot(d1);
                let h = d1.norm_sq() + (c - q).dot(d2);
                if !(h > T::zero()) {
                    break;
                }
                let step = g / h;
                let mut tn = *t - step;
                tn = tn - tn.floor();
                if curve.evaluate(tn)?.dist(q) < c.dist(q) {
                    *t = tn;
                } else {
                    break;
                }
                if step.abs() < T::of(1e-14) {
                    break;
                }
            }
            let d = curve.evaluate(*t)?.dist(q);
            max_residual = max_residual.max(d);
            sum_sq += d * d;
        }
        Ok((max_residual, sum_sq))
    }

    /// Global correspondence refresh: dense-table nearest point for every
    /// input, then the Newton polish. Local foot-point updates cannot jump
    /// to a different branch of the curve once an assignment is skewed;
    /// this can.
    fn global_project(
        &self,
        ring: &[Vec2<T>],
        ts: &mut [T],
        curve: &NurbsCurve<T>,
    ) -> Result<(T, T)> {
        const TABLE: usize = 4096;
        let mut table = Vec::with_capacity(TABLE);
        for i in 0..TABLE {
            let u = T::from_usize_exact(i) / T::from_usize_exact(TABLE);
            table.push(curve.evaluate(u)?);
        }
        for (j, t) in ts.iter_mut().enumerate() {
            let q = ring[j];
            let mut bi = 0usize;
            let mut bd = T::infinity();
            for (i, p) in table.iter().enumerate() {
                let d = p.dist_sq(q);
                if d < bd {
                    bd = d;
                    bi = i;
                }
            }
            *t = T::from_usize_exact(bi) / T::from_usize_exact(TABLE);
        }
        self.correct(ring, ts, curve)
    }

    /// Joint Levenberg-Marquardt over (control points, all parameters).
    /// The parameter block of the normal equations is diagonal, so a Schur
    /// complement reduces every iteration to a small dense solve. Returns
    /// the final cost (sum of squared residuals at the assigned
    /// parameters).
    fn lm(
        &self,
        ring: &[Vec2<T>],
        pts: &mut Vec<Vec2<T>>,
        ts: &mut Vec<T>,
        max_iters: usize,
    ) -> Result<T> {
        let u = self.unknowns;
        let dim2 = 2 * u;
        let m = ring.len();
        let mut row = vec![T::zero(); u];
        let mut drow = vec![T::zero(); u];
        let cost_of = |pts: &[Vec2<T>], ts: &[T], row: &mut [T], drow: &mut [T]| -> T {
            let mut c = T::zero();
            for (j, t) in ts.iter().enumerate() {
                self.rows_at(*t, row, drow);
                let mut pos = Vec2::zero();
                for a in 0..u {
                    pos += pts[a].scale(row[a]);
                }
                c += pos.dist_sq(ring[j]);
            }
            c
        };
        let mut lambda = T::of(1e-3);
        let mut cost = cost_of(pts, ts, &mut row, &mut drow);
        'outer: for _ in 0..max_iters {
            let mut cc = Matrix::zeros(dim2, dim2);
            let mut g_p = vec![T::zero(); dim2];
            let mut b_cols: Vec<Vec<T>> = Vec::with_capacity(m);
            let mut d_diag = vec![T::zero(); m];
            let mut g_t = vec![T::zero(); m];
            for (j, t) in ts.iter().enumerate() {
                self.rows_at(*t, &mut row, &mut drow);
                let mut pos = Vec2::zero();
                let mut der = Vec2::zero();
                for a in 0..u {
                    pos += pts[a].scale(row[a]);
                    der += pts[a].scale(drow[a]);
                }
                let r = pos - ring[j];
                let mut col = vec![T::zero(); dim2];
                for a in 0..u {
                    if row[a] != T::zero() {
                        for b in 0..u {
                            let w = row[a] * row[b];
                            cc[(2 * a, 2 * b)] += w;
                            cc[(2 * a + 1, 2 * b + 1)] += w;
                        }
                        g_p[2 * a] += row[a] * r.x;
                        g_p[2 * a + 1] += row[a] * r.y;
                    }
                    col[2 * a] = row[a] * der.x;
                    col[2 * a + 1] = row[a] * der.y;
                }
                b_cols.push(col);
                d_diag[j] = der.norm_sq();
                g_t[j] = der.dot(r);
            }
            let mut diag_max = T::zero();
            for a in 0..dim2 {
                diag_max = diag_max.max(cc[(a, a)]);
            }
            let floor = T::of(1e-12) * diag_max.max(T::one());
            // Damped trials: raise lambda until a step lowers the cost.
            for _ in 0..12 {
                let scale = T::one() + lambda;
                let mut s_mat = cc.clone();
                let mut rhs = g_p.clone();
                for v in rhs.iter_mut() {
                    *v = -*v;
                }
                for a in 0..dim2 {
                    s_mat[(a, a)] += lambda * (cc[(a, a)] + floor);
                }
                for j in 0..m {
                    let dj = d_diag[j] * scale + floor;
                    let w = T::one() / dj;
                    for a in 0..dim2 {
                        if b_cols[j][a] == T::zero() {
                            continue;
                        }
                        for b in 0..dim2 {
                            s_mat[(a, b)] -= b_cols[j][a] * w * b_cols[j][b];
                        }
                        rhs[a] += b_cols[j][a] * w * g_t[j];
                    }
                }
                let Ok(dp) = s_mat.solve(rhs) else {
                    lambda = lambda * T::of(10.0);
                    continue;
                };
                let cand_pts: Vec<Vec2<T>> = (0..u)
                    .map(|a| pts[a] + Vec2::new(dp[2 * a], dp[2 * a + 1]))
                    .collect();
                let mut cand_ts = ts.clone();
                for j in 0..m {
                    let dj = d_diag[j] * scale + floor;
                    let mut bt_dp = T::zero();
                    for a in 0..dim2 {
                        bt_dp += b_cols[j][a] * dp[a];
                    }
                    let dt = -(g_t[j] + bt_dp) / dj;
                    let mut tn = cand_ts[j] + dt;
                    tn = tn - tn.floor();
                    cand_ts[j] = tn;
                }
                let cand_cost = cost_of(&cand_pts, &cand_ts, &mut row, &mut drow);
                if cand_cost < cost {
                    let done = cost - cand_cost < T::of(1e-15) * (T::one() + cost);
                    *pts = cand_pts;
                    *ts = cand_ts;
                    cost = cand_cost;
                    lambda = (lambda * T::of(0.3)).max(T::of(1e-12));
                    if done {
                        break 'outer;
                    }
                    continue 'outer;
                }
                lambda = lambda * T::of(10.0);
            }
            break;
        }
        Ok(cost)
    }
}

/// Interior knots by parameter averaging (the standard placement for global
/// approximation): knots follow where the data parameters actually live, so
/// the span structure matches the correspondence instead of fighting it.
/// Falls back to uniform spacing if the averaged knots collapse.
fn averaged_knots<T: Real>(ts: &[T], n: usize) -> Vec<T> {
    let k = n - DEGREE;
    let m = ts.len();
    let uniform = || -> Vec<T> {
        (1..=k)
            .map(|i| T::from_usize_exact(i) / T::from_usize_exact(k + 1))
            .collect()
    };
    if m < k + 2 {
        return uniform();
    }
    let mut sorted = ts.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite parameters"));
    let d = T::from_usize_exact(m) / T::from_usize_exact(k + 1);
    let mut v = Vec::with_capacity(k);
    for i in 1..=k {
        let pos = T::from_usize_exact(i) * d;
        let idx = pos.floor().to_f64_lossy() as usize;
        let alpha = pos - pos.floor();
        if idx == 0 || idx >= m {
            return uniform();
        }
        let val = sorted[idx - 1] * (T::one() - alpha) + sorted[idx] * alpha;
        v.push(val);
    }
    // Validity: strictly increasing, comfortably inside (0,1).
    let margin = T::of(1e-5);
    let mut prev = T::zero();
    for t in &v {
        if !(*t > prev + margin) || !(*t < T::one() - margin) {
            return uniform();
        }
        prev = *t;
    }
    v
}

/// Fits a closed cubic lap with n_ctrl+1 control points (unit weights) to
/// the closed point loop. The loop is chord-length parameterized, interior
/// knots are placed by parameter averaging, and the last three control
/// points are eliminated through the closure construction, so the solved
/// system only contains the free ones and the result is seam-exact by
/// construction. Alternating least-squares/reprojection rounds with a joint
/// Levenberg-Marquardt refinement drive the correspondence; knots are
/// re-placed between rounds as the parameters migrate.
pub fn fit_centerline<T: Real>(points: &[Vec2<T>], n_ctrl: usize) -> Result<FitResult<T>> {
    fit_closed_loop(points, n_ctrl, true)
}

/// Same fit with the joint refinement disabled: data parameters stay glued
/// to chord length (plus local foot-point correction), keeping parameter
/// speed nearly proportional to arc length. The geometric residual is a
/// little worse, but the parameterization stays tame, which matters for
/// curves that later carry a speed profile: v(u) follows the parameter
/// speed, so a fit free to warp its parameters can hide enormous phantom
/// accelerations in an otherwise accurate shape.
pub fn fit_centerline_uniform_speed<T: Real>(
    points: &[Vec2<T>],
    n_ctrl: usize,
) -> Result<FitResult<T>> {
    fit_closed_loop(points, n_ctrl, false)
}

fn fit_closed_loop<T: Real>(points: &[Vec2<T>], n_ctrl: usize, polish: bool) -> Result<FitResult<T>> {
    let n = n_ctrl;
    if n < 5 {
        return Err(Error::Invalid("need n_ctrl >= 5".into()));
    }
    let mut ring: Vec<Vec2<T>> = points.to_vec();
    if ring.len() >= 2 && ring[0].dist(ring[ring.len() - 1]) < T::of(1e-6) {
        ring.pop();
    }
    if ring.len() < n + 1 {
        return Err(Error::Invalid(format!(
            "need at least {} points to fit {} control points, got {}",
            n + 1,
            n + 1,
            ring.len()
        )));
    }
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invalid("non-finite input point".into()));
    }

    let m = ring.len();
    // Degeneracy check: a loop with (near-)zero enclosed area cannot close
    // into a valid lap.
    let mut area2 = T::zero();
    let (mut lo, mut hi) = (ring[0], ring[0]);
    for i in 0..m {
        let a = ring[i];
        let b = ring[(i + 1) % m];
        area2 += a.cross(b);
        lo = Vec2::new(lo.x.min(a.x), lo.y.min(a.y));
        hi = Vec2::new(hi.x.max(a.x), hi.y.max(a.y));
    }
    let diag = (hi - lo).norm();
    if area2.abs() < T::of(1e-9) * diag * diag {
        return Err(Error::Invalid(
            "input points are (nearly) collinear; loop is not closable".into(),
        ));
    }

    // Chord-length parameters over the closed ring (the closing segment
    // back to the first point is part of the total length).
    let mut cum = vec![T::zero(); m];
    let mut total = T::zero();
    for i in 0..m {
        cum[i] = total;
        total += ring[i].dist(ring[(i + 1) % m]);
    }
    if !(total > T::zero()) {
        return Err(Error::Invalid("zero-length input loop".into()));
    }
    let chords: Vec<T> = cum.iter().map(|c| *c / total).collect();

    // Reassigns every parameter so the fitted curve's normalized arc length
    // at t_j equals the input point's chord fraction; pins the tangential
    // sliding mode globally before the local machinery takes over.
    let arc_match = |ts: &mut [T], curve: &NurbsCurve<T>| -> Result<()> {
        const GRID: usize = 2048;
        let mut cum = vec![T::zero(); GRID + 1];
        let mut prev_speed = curve.derivative(T::zero(), 1)?.norm();
        let h = T::one() / T::from_usize_exact(GRID);
        for i in 1..=GRID {
            let tau = T::from_usize_exact(i) * h;
            let sp = curve.derivative(tau.min(T::one()), 1)?.norm();
            cum[i] = cum[i - 1] + (sp + prev_speed) * h / T::of(2.0);
            prev_speed = sp;
        }
        let total = cum[GRID];
        if !(total > T::zero()) {
            return Ok(());
        }
        for (t, c) in ts.iter_mut().zip(&chords) {
            let target = *c * total;
            let mut lo = 0usize;
            let mut hi = GRID;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if cum[mid] < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let seg = cum[hi] - cum[lo];
            let frac = if seg > T::zero() {
                ((target - cum[lo]) / seg).max(T::zero()).min(T::one())
            } else {
                T::zero()
            };
            *t = (T::from_usize_exact(lo) + frac) * h;
        }
        Ok(())
    };

    // The parameter assignment has a near-rigid tangential sliding mode, so
    // a bad initial correspondence strands the refinement in a skewed local
    // minimum. Two principled initializations cover the common sampling
    // regimes: chord fractions (arc-uniform or unevenly spaced data) and
    // uniform index (data sampled uniformly in the source parameter). The
    // full pipeline runs from each and the better fit wins.
    let run_from = |init: Vec<T>, match_arcs: bool, best: &mut Option<FitResult<T>>| {
        let mut ts = init;
        let mut prev_sq: Option<T> = None;
        for round in 0..5 {
            let ctx = FitCtx::new(n, averaged_knots(&ts, n))?;
            // A few alternating passes settle the correspondence on the
            // new knot layout before the joint refinement.
            let mut curve = None;
            for _ in 0..3 {
                let (_, c) = ctx.solve_pdm(&ring, &ts)?;
                if match_arcs && round == 0 {
                    arc_match(&mut ts, &c)?;
                } else {
                    let _ = ctx.correct(&ring, &mut ts, &c)?;
                }
                curve = Some(c);
            }
            if let Some(c) = &curve {
                let _ = ctx.global_project(&ring, &mut ts, c)?;
            }
            let (params, _) = ctx.solve_pdm(&ring, &ts)?;
            let params = if polish {
                let mut pts = params.free_points().to_vec();
                let _ = ctx.lm(&ring, &mut pts, &mut ts, 60)?;
                ctx.params_of(pts)?
            } else {
                params
            };
            let fitted = params.apply_closure()?;
            let (max_residual, sum_sq) = ctx.global_project(&ring, &mut ts, &fitted)?;
            if best
                .as_ref()
                .map_or(true, |b| max_residual < b.max_residual)
            {
                *best = Some(FitResult {
                    params,
                    max_residual,
                });
            }
            let stalled = prev_sq.map_or(false, |p| sum_sq > p * T::of(0.99));
            prev_sq = Some(prev_sq.map_or(sum_sq, |p| p.min(sum_sq)));
            if max_residual < T::of(1e-10) || stalled {
                break;
            }
        }
        Ok::<(), Error>(())
    };

    let mut best: Option<FitResult<T>> = None;
    run_from(chords.clone(), true, &mut best)?;
    // The uniform-index branch exists to recover curves whose samples were
    // taken uniformly in the source parameter; only the exact-recovery mode
    // wants that, and only when the chord branch hasn't already nailed it.
    if polish && best.as_ref().map_or(true, |b| b.max_residual > T::of(1e-10)) {
        let uniform_idx: Vec<T> = (0..m)
            .map(|j| T::from_usize_exact(j) / T::from_usize_exact(m))
            .collect();
        run_from(uniform_idx, false, &mut best)?;
    }
    Ok(best.expect("at least one round runs"))
}
