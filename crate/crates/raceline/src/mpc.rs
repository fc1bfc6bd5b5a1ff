//! Receding-horizon trajectory tracker. Follows the timed reference with an
//! iterated-linearization (iLQR) solve over the kinematic single-track
//! model; residual tracking errors are the learning signal downstream, so
//! the controller deliberately knows nothing about the friction field.

use serde::{Deserialize, Serialize};

use crate::plant::{ControlInput, VehicleParams, VehicleState};
use crate::timing::TimedTrajectory;
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

const NX: usize = 5;
const NU: usize = 2;
/// Euler substeps per controller interval for the prediction model.
const SUBSTEPS: usize = 4;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig<T: Real = f64> {
    /// Horizon length in controller steps (window states, including the
    /// terminal one).
    pub horizon: usize,
    /// Controller interval, s.
    pub dt: T,
    pub w_pos: T,
    pub w_heading: T,
    pub w_speed: T,
    pub w_accel: T,
    pub w_steer_rate: T,
    /// Multiplier on the state weights at the horizon end.
    pub terminal_scale: T,
    pub max_iters: usize,
}

impl<T: Real> Default for MpcConfig<T> {
    fn default() -> Self {
        MpcConfig {
            horizon: 20,
            dt: T::of(0.02),
            w_pos: T::of(10.0),
            w_heading: T::one(),
            w_speed: T::one(),
            w_accel: T::of(0.1),
            w_steer_rate: T::of(0.1),
            terminal_scale: T::of(5.0),
            max_iters: 50,
        }
    }
}

impl<T: Real> MpcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 5 {
            return Err(Error::Invalid("mpc horizon must be >= 5".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::Invalid("mpc dt must be positive".into()));
        }
        for w in [
            self.w_pos,
            self.w_heading,
            self.w_speed,
            self.w_accel,
            self.w_steer_rate,
            self.terminal_scale,
        ] {
            if w < T::zero() {
                return Err(Error::Invalid("mpc weights must be >= 0".into()));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("mpc needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RefState<T: Real = f64> {
    pub pos: Vec2<T>,
    pub theta: T,
    pub v: T,
}

/// Time-indexed reference lookup: h states at t_now + k dt, wrapped modulo
/// the lap time. Heading comes from the tangent direction, speed from the
/// curve speed over the lap time.
pub fn reference_window<T: Real>(
    traj: &TimedTrajectory<T>,
    t_now: T,
    h: usize,
    dt: T,
) -> Result<Vec<RefState<T>>> {
    let mut window = Vec::with_capacity(h);
    for k in 0..h {
        let t = t_now + T::from_usize_exact(k) * dt;
        let mut u = t / traj.lap_time;
        u = u - u.floor();
        let pos = traj.curve.evaluate(u)?;
        let d1 = traj.curve.derivative(u, 1)?;
        window.push(RefState {
            pos,
            theta: d1.y.atan2(d1.x),
            v: d1.norm() / traj.lap_time,
        });
    }
    Ok(window)
}

#[derive(Clone, Debug)]
pub struct MpcSolution<T: Real = f64> {
    pub input: ControlInput<T>,
    pub predicted: Vec<VehicleState<T>>,
    pub cost: T,
    pub iterations: usize,
    /// False when the iteration cap was hit before the improvement tolerance;
    /// the best iterate is still returned.
    pub converged: bool,
}

/// Stateful solver: keeps the previous input sequence to warm-start the
/// next solve (shifted by one step).
#[derive(Clone, Debug)]
pub struct MpcController<T: Real = f64> {
    u_seq: Vec<[T; 2]>,
}

type Mat55<T> = [[T; NX]; NX];
type Mat52<T> = [[T; NU]; NX];

fn zeros55<T: Real>() -> Mat55<T> {
    [[T::zero(); NX]; NX]
}

fn eye55<T: Real>() -> Mat55<T> {
    let mut m = zeros55();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

fn mul55<T: Real>(a: &Mat55<T>, b: &Mat55<T>) -> Mat55<T> {
    let mut out = zeros55();
    for i in 0..NX {
        for k in 0..NX {
            let aik = a[i][k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..NX {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn mul552<T: Real>(a: &Mat55<T>, b: &Mat52<T>) -> Mat52<T> {
    let mut out = [[T::zero(); NU]; NX];
    for i in 0..NX {
        for k in 0..NX {
            let aik = a[i][k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..NU {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn wrap_angle<T: Real>(a: T) -> T {
    a.sin().atan2(a.cos())
}

impl<T: Real> MpcController<T> {
    pub fn new() -> Self {
        MpcController { u_seq: Vec::new() }
    }

    /// Shift the stored warm start by one controller step.
    pub fn advance(&mut self) {
        if !self.u_seq.is_empty() {
            self.u_seq.rotate_left(1);
            let last = self.u_seq.len() - 1;
            self.u_seq[last] = [T::zero(); 2];
        }
    }

    /// One receding-horizon solve. The window's final state acts as the
    /// terminal reference, so len-1 inputs are planned. Input bounds come
    /// from the vehicle parameters and are enforced by clamping in every
    /// rollout, so the returned command always respects them.
    pub fn solve(
        &mut self,
        state: &VehicleState<T>,
        window: &[RefState<T>],
        cfg: &MpcConfig<T>,
        params: &VehicleParams<T>,
    ) -> Result<MpcSolution<T>> {
        if window.len() < 2 {
            return Err(Error::Invalid("mpc window needs >= 2 states".into()));
        }
        let n_in = window.len() - 1;
        if self.u_seq.len() != n_in {
            self.u_seq = vec![[T::zero(); 2]; n_in];
        }
        let bounds = [params.a_cmd_max, params.delta_dot_max];
        let h = cfg.dt / T::from_usize_exact(SUBSTEPS);
        let lb = params.wheelbase;

        // Nominal rollout under the stored (clamped) sequence.
        let rollout = |u_seq: &[[T; 2]]| -> (Vec<VehicleState<T>>, T) {
            let mut xs = Vec::with_capacity(n_in + 1);
            xs.push(*state);
            let mut cost = T::zero();
            for (k, u) in u_seq.iter().enumerate() {
                let x = xs[k];
                cost += stage_cost(&x, &window[k], u, cfg, T::one());
                xs.push(predict(&x, u, h, lb));
            }
            cost += stage_cost(
                &xs[n_in],
                &window[n_in],
                &[T::zero(); 2],
                cfg,
                cfg.terminal_scale,
            );
            (xs, cost)
        };

        let clamp_u = |u: [T; 2]| -> [T; 2] {
            [
                u[0].max(-bounds[0]).min(bounds[0]),
                u[1].max(-bounds[1]).min(bounds[1]),
            ]
        };
        for u in self.u_seq.iter_mut() {
            *u = clamp_u(*u);
        }

        let (mut xs, mut cost) = rollout(&self.u_seq);
        let mut mu = T::of(1e-6);
        let mut iterations = 0usize;
        let mut converged = false;
        'ilqr: for _it in 0..cfg.max_iters {
            iterations += 1;
            // Backward pass on the linearized model.
            let mut k_ff = vec![[T::zero(); 2]; n_in];
            let mut k_fb = vec![[[T::zero(); NX]; 2]; n_in];
            let (mut vx, mut vxx) =
                terminal_expansion(&xs[n_in], &window[n_in], cfg, cfg.terminal_scale);
            let mut backward_ok = true;
            for k in (0..n_in).rev() {
                let (a_mat, b_mat) = discrete_jacobians(&xs[k], h, lb);
                let (lx, lu, lxx, luu) =
                    stage_expansion(&xs[k], &window[k], &self.u_seq[k], cfg, T::one());
                // Q expansions.
                let mut qx = lx;
                let mut qu = lu;
                for i in 0..NX {
                    for j in 0..NX {
                        qx[i] += a_mat[j][i] * vx[j];
                    }
                }
                for i in 0..NU {
                    for j in 0..NX {
                        qu[i] += b_mat[j][i] * vx[j];
                    }
                }
                let vxx_a = mul55(&vxx, &a_mat);
                let vxx_b = mul552(&vxx, &b_mat);
                let mut qxx = lxx;
                for i in 0..NX {
                    for j in 0..NX {
                        let mut s = T::zero();
                        for r in 0..NX {
                            s += a_mat[r][i] * vxx_a[r][j];
                        }
                        qxx[i][j] += s;
                    }
                }
                let mut quu = luu;
                for i in 0..NU {
                    for j in 0..NU {
                        let mut s = T::zero();
                        for r in 0..NX {
                            s += b_mat[r][i] * vxx_b[r][j];
                        }
                        quu[i][j] += s;
                    }
                }
                let mut qux = [[T::zero(); NX]; NU];
                for i in 0..NU {
                    for j in 0..NX {
                        let mut s = T::zero();
                        for r in 0..NX {
                            s += b_mat[r][i] * vxx_a[r][j];
                        }
                        qux[i][j] = s;
                    }
                }
                // Levenberg regularization on the input Hessian.
                let quu_reg = [
                    [quu[0][0] + mu, quu[0][1]],
                    [quu[1][0], quu[1][1] + mu],
                ];
                let det = quu_reg[0][0] * quu_reg[1][1] - quu_reg[0][1] * quu_reg[1][0];
                if !(quu_reg[0][0] > T::zero()) || !(det > T::zero()) {
                    backward_ok = false;
                    break;
                }
                let inv = [
                    [quu_reg[1][1] / det, -quu_reg[0][1] / det],
                    [-quu_reg[1][0] / det, quu_reg[0][0] / det],
                ];
                for i in 0..NU {
                    k_ff[k][i] = -(inv[i][0] * qu[0] + inv[i][1] * qu[1]);
                    for j in 0..NX {
                        k_fb[k][i][j] = -(inv[i][0] * qux[0][j] + inv[i][1] * qux[1][j]);
                    }
                }
                // Value function recursion (regularized gains, exact Q).
                let kk = k_ff[k];
                let kb = k_fb[k];
                let mut new_vx = qx;
                let mut new_vxx = qxx;
                for i in 0..NX {
                    for r in 0..NU {
                        let mut quu_k = T::zero();
                        for c in 0..NU {
                            quu_k += quu[r][c] * kk[c];
                        }
                        new_vx[i] += kb[r][i] * (quu_k + qu[r]) + qux[r][i] * kk[r];
                    }
                    for j in 0..NX {
                        for r in 0..NU {
                            let mut quu_kb = T::zero();
                            for c in 0..NU {
                                quu_kb += quu[r][c] * kb[c][j];
                            }
                            new_vxx[i][j] +=
                                kb[r][i] * quu_kb + kb[r][i] * qux[r][j] + qux[r][i] * kb[r][j];
                        }
                    }
                }
                // Symmetrize against roundoff drift.
                for i in 0..NX {
                    for j in (i + 1)..NX {
                        let s = (new_vxx[i][j] + new_vxx[j][i]) / T::of(2.0);
                        new_vxx[i][j] = s;
                        new_vxx[j][i] = s;
                    }
                }
                vx = new_vx;
                vxx = new_vxx;
            }
            if !backward_ok {
                mu = mu * T::of(10.0);
                if mu > T::of(1e8) {
                    break 'ilqr;
                }
                continue 'ilqr;
            }
            // Forward pass with backtracking line search; inputs clamped to
            // the box, acceptance only on cost decrease keeps the iteration
            // monotone.
            let mut alpha = T::one();
            let mut accepted = false;
            for _ in 0..8 {
                let mut trial_u = self.u_seq.clone();
                let mut x = *state;
                for k in 0..n_in {
                    let mut du = [T::zero(); 2];
                    for i in 0..NU {
                        du[i] = alpha * k_ff[k][i];
                        for j in 0..NX {
                            du[i] += k_fb[k][i][j] * state_diff(&x, &xs[k])[j];
                        }
                    }
                    trial_u[k] = clamp_u([self.u_seq[k][0] + du[0], self.u_seq[k][1] + du[1]]);
                    x = predict(&x, &trial_u[k], h, lb);
                }
                let (trial_xs, trial_cost) = rollout(&trial_u);
                if trial_cost < cost {
                    let rel_drop = (cost - trial_cost) / (T::one() + cost);
                    self.u_seq = trial_u;
                    xs = trial_xs;
                    cost = trial_cost;
                    accepted = true;
                    mu = (mu * T::of(0.5)).max(T::of(1e-9));
                    if rel_drop < T::of(1e-9) {
                        converged = true;
                        break 'ilqr;
                    }
                    break;
                }
                alpha = alpha / T::of(2.0);
            }
            if !accepted {
                mu = mu * T::of(10.0);
                if mu > T::of(1e8) {
                    // No descent direction left; current iterate is the
                    // (locally) best available.
                    converged = true;
                    break 'ilqr;
                }
            }
        }
        Ok(MpcSolution {
            input: ControlInput {
                a: self.u_seq[0][0],
                delta_dot: self.u_seq[0][1],
            },
            predicted: xs,
            cost,
            iterations,
            converged,
        })
    }
}

impl<T: Real> Default for MpcController<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Controller-model prediction over one interval: chained Euler substeps.
fn predict<T: Real>(state: &VehicleState<T>, u: &[T; 2], h: T, wheelbase: T) -> VehicleState<T> {
    let mut s = *state;
    for _ in 0..SUBSTEPS {
        let next = VehicleState {
            x: s.x + h * s.v * s.theta.cos(),
            y: s.y + h * s.v * s.theta.sin(),
            theta: s.theta + h * s.v * s.delta.tan() / wheelbase,
            delta: s.delta + h * u[1],
            v: s.v + h * u[0],
        };
        s = next;
    }
    s
}

/// Discrete Jacobians of `predict` by chaining the per-substep Euler
/// linearization A_k = I + h df/dx along the substep trajectory.
fn discrete_jacobians<T: Real>(state: &VehicleState<T>, h: T, wheelbase: T) -> (Mat55<T>, Mat52<T>) {
    let mut a_total = eye55();
    let mut b_total = [[T::zero(); NU]; NX];
    let mut s = *state;
    for _ in 0..SUBSTEPS {
        let cos_t = s.theta.cos();
        let sin_t = s.theta.sin();
        let tan_d = s.delta.tan();
        let sec2 = T::one() + tan_d * tan_d;
        let mut a_sub = eye55();
        a_sub[0][2] = -h * s.v * sin_t;
        a_sub[0][4] = h * cos_t;
        a_sub[1][2] = h * s.v * cos_t;
        a_sub[1][4] = h * sin_t;
        a_sub[2][3] = h * s.v * sec2 / wheelbase;
        a_sub[2][4] = h * tan_d / wheelbase;
        let mut b_sub = [[T::zero(); NU]; NX];
        b_sub[3][1] = h;
        b_sub[4][0] = h;
        b_total = mul552(&a_sub, &b_total);
        for i in 0..NX {
            for j in 0..NU {
                b_total[i][j] += b_sub[i][j];
            }
        }
        a_total = mul55(&a_sub, &a_total);
        // Advance the substep state with zero input; the input terms do not
        // feed the Jacobian coefficients (they are state-independent).
        s = VehicleState {
            x: s.x + h * s.v * cos_t,
            y: s.y + h * s.v * sin_t,
            theta: s.theta + h * s.v * tan_d / wheelbase,
            delta: s.delta,
            v: s.v,
        };
    }
    (a_total, b_total)
}

fn state_diff<T: Real>(a: &VehicleState<T>, b: &VehicleState<T>) -> [T; NX] {
    [
        a.x - b.x,
        a.y - b.y,
        wrap_angle(a.theta - b.theta),
        a.delta - b.delta,
        a.v - b.v,
    ]
}

fn residuals<T: Real>(x: &VehicleState<T>, r: &RefState<T>) -> [T; NX] {
    [
        x.x - r.pos.x,
        x.y - r.pos.y,
        wrap_angle(x.theta - r.theta),
        T::zero(),
        x.v - r.v,
    ]
}

fn stage_cost<T: Real>(
    x: &VehicleState<T>,
    r: &RefState<T>,
    u: &[T; 2],
    cfg: &MpcConfig<T>,
    state_scale: T,
) -> T {
    let e = residuals(x, r);
    state_scale
        * (cfg.w_pos * (e[0] * e[0] + e[1] * e[1])
            + cfg.w_heading * e[2] * e[2]
            + cfg.w_speed * e[4] * e[4])
        + cfg.w_accel * u[0] * u[0]
        + cfg.w_steer_rate * u[1] * u[1]
}

type StageExpansion<T> = ([T; NX], [T; NU], Mat55<T>, [[T; NU]; NU]);

fn stage_expansion<T: Real>(
    x: &VehicleState<T>,
    r: &RefState<T>,
    u: &[T; 2],
    cfg: &MpcConfig<T>,
    state_scale: T,
) -> StageExpansion<T> {
    let e = residuals(x, r);
    let two = T::of(2.0);
    let mut lx = [T::zero(); NX];
    let mut lxx = zeros55();
    let w = [
        cfg.w_pos * state_scale,
        cfg.w_pos * state_scale,
        cfg.w_heading * state_scale,
        T::zero(),
        cfg.w_speed * state_scale,
    ];
    for i in 0..NX {
        lx[i] = two * w[i] * e[i];
        lxx[i][i] = two * w[i];
    }
    let lu = [two * cfg.w_accel * u[0], two * cfg.w_steer_rate * u[1]];
    let luu = [
        [two * cfg.w_accel, T::zero()],
        [T::zero(), two * cfg.w_steer_rate],
    ];
    (lx, lu, lxx, luu)
}

fn terminal_expansion<T: Real>(
    x: &VehicleState<T>,
    r: &RefState<T>,
    cfg: &MpcConfig<T>,
    scale: T,
) -> ([T; NX], Mat55<T>) {
    let (lx, _, lxx, _) = stage_expansion(x, r, &[T::zero(); 2], cfg, scale);
    (lx, lxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_centerline;
    use crate::plant::{step, FrictionField, DT_PLANT};
    use crate::timing::{min_lap_time_const, sample_trajectory, DynamicLimits};

    fn straight_window(h: usize, dt: f64, v: f64) -> Vec<RefState<f64>> {
        (0..h)
            .map(|k| RefState {
                pos: Vec2::new(v * dt * k as f64, 0.0),
                theta: 0.0,
                v,
            })
            .collect()
    }

    #[test]
    fn equilibrium_commands_are_tiny() {
        let cfg = MpcConfig::default();
        let params = VehicleParams::default();
        let window = straight_window(cfg.horizon, cfg.dt, 2.0);
        let state = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            delta: 0.0,
            v: 2.0,
        };
        let mut ctrl = MpcController::new();
        let sol = ctrl.solve(&state, &window, &cfg, &params).unwrap();
        assert!(sol.input.a.abs() < 1e-3 * params.a_cmd_max, "a = {}", sol.input.a);
        assert!(
            sol.input.delta_dot.abs() < 1e-3 * params.delta_dot_max,
            "delta_dot = {}",
            sol.input.delta_dot
        );
    }

    #[test]
    fn lateral_offset_steers_back() {
        let cfg = MpcConfig::default();
        let params = VehicleParams::default();
        let window = straight_window(cfg.horizon, cfg.dt, 2.0);
        // Offset to the left of a reference heading +x: correction must
        // steer right (negative steering rate from zero steering).
        let state = VehicleState {
            x: 0.0,
            y: 0.1,
            theta: 0.0,
            delta: 0.0,
            v: 2.0,
        };
        let mut ctrl = MpcController::new();
        let sol = ctrl.solve(&state, &window, &cfg, &params).unwrap();
        assert!(sol.input.delta_dot < 0.0, "delta_dot = {}", sol.input.delta_dot);
        let mirrored = VehicleState { y: -0.1, ..state };
        let mut ctrl2 = MpcController::new();
        let sol2 = ctrl2.solve(&mirrored, &window, &cfg, &params).unwrap();
        assert!(sol2.input.delta_dot > 0.0);
    }

    fn circle_trajectory(radius: f64, limits: &DynamicLimits<f64>) -> TimedTrajectory<f64> {
        let pts: Vec<Vec2<f64>> = (0..64)
            .map(|i| {
                let a = i as f64 / 64.0 * std::f64::consts::TAU;
                Vec2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        let fit = fit_centerline(&pts, 12).unwrap();
        let curve = fit.params.apply_closure().unwrap();
        let lap_time = min_lap_time_const(&curve, limits, 2048).unwrap();
        sample_trajectory(&curve, lap_time, 2048).unwrap()
    }

    #[test]
    fn window_wraps_at_lap_time() {
        let limits = DynamicLimits {
            v_max: 4.0,
            a_par_nominal: 3.0,
            a_perp_nominal: 4.0,
        };
        let traj = circle_trajectory(4.0, &limits);
        let w0 = reference_window(&traj, 0.0, 20, 0.02).unwrap();
        let w1 = reference_window(&traj, traj.lap_time, 20, 0.02).unwrap();
        for (a, b) in w0.iter().zip(&w1) {
            assert!(a.pos.dist(b.pos) < 1e-9);
            assert!((a.v - b.v).abs() < 1e-9);
        }
        // And the first entry is the trajectory start.
        assert!(w0[0].pos.dist(traj.curve.evaluate(0.0).unwrap()) < 1e-12);
    }

    #[test]
    fn window_speeds_match_kinematics() {
        let limits = DynamicLimits {
            v_max: 4.0,
            a_par_nominal: 3.0,
            a_perp_nominal: 4.0,
        };
        let traj = circle_trajectory(4.0, &limits);
        let t_now = 0.37 * traj.lap_time;
        let window = reference_window(&traj, t_now, 10, 0.02).unwrap();
        for (k, r) in window.iter().enumerate() {
            let t = t_now + k as f64 * 0.02;
            let u = (t / traj.lap_time).fract();
            let (v, _, _) = crate::timing::kinematics_at(&traj.curve, u, traj.lap_time).unwrap();
            assert!((r.v - v).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_loop_circle_tracks_within_tolerance() {
        // Plan at 80% of the plant-assumed nominals so the reference is
        // comfortably feasible; the tracker then has to stay within 5 cm.
        let nominal = DynamicLimits {
            v_max: 8.0,
            a_par_nominal: 3.0,
            a_perp_nominal: 4.0,
        };
        let planning = DynamicLimits {
            v_max: 0.8 * nominal.v_max,
            a_par_nominal: 0.8 * nominal.a_par_nominal,
            a_perp_nominal: 0.8 * nominal.a_perp_nominal,
        };
        let traj = circle_trajectory(4.0, &planning);
        let cfg: MpcConfig<f64> = MpcConfig::default();
        let params = VehicleParams::default();
        let friction = FrictionField::nominal();
        let start = traj.curve.evaluate(0.0).unwrap();
        let d1 = traj.curve.derivative(0.0, 1).unwrap();
        let mut state = VehicleState {
            x: start.x,
            y: start.y,
            theta: d1.y.atan2(d1.x),
            delta: 0.0,
            v: d1.norm() / traj.lap_time,
        };
        let mut ctrl = MpcController::new();
        let plant_steps = (cfg.dt / DT_PLANT).round() as usize;
        let mut max_err: f64 = 0.0;
        let mut t = 0.0;
        while t < traj.lap_time {
            let window = reference_window(&traj, t, cfg.horizon, cfg.dt).unwrap();
            let sol = ctrl.solve(&state, &window, &cfg, &params).unwrap();
            for _ in 0..plant_steps {
                let (next, _) = step(&state, &sol.input, DT_PLANT, &friction, &nominal, &params);
                state = next;
            }
            ctrl.advance();
            let (_, _, e_hat) = crate::blame::closest_point(&traj, state.pos());
            max_err = max_err.max(e_hat);
            t += cfg.dt;
        }
        assert!(max_err < 0.05, "max tracking error {}", max_err);
    }
}
