//! Ground-truth simulator: kinematic single-track vehicle with
//! position-dependent traction saturation, so low-friction regions produce
//! real tracking errors for the feedback loop to learn from.

use serde::{Deserialize, Serialize};

use crate::timing::DynamicLimits;
use crate::vec2::Vec2;
use crate::{Error, Real, Result};

/// Plant integration step, s. The controller runs at a multiple of this.
pub const DT_PLANT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState<T: Real = f64> {
    /// m
    pub x: T,
    /// m
    pub y: T,
    /// heading, rad
    pub theta: T,
    /// steering angle, rad
    pub delta: T,
    /// speed, m/s (never negative)
    pub v: T,
}

impl<T: Real> VehicleState<T> {
    pub fn pos(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput<T: Real = f64> {
    /// longitudinal acceleration command, m/s^2
    pub a: T,
    /// steering rate command, rad/s
    pub delta_dot: T,
}

impl<T: Real> ControlInput<T> {
    pub fn zero() -> Self {
        ControlInput {
            a: T::zero(),
            delta_dot: T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams<T: Real = f64> {
    /// m
    pub wheelbase: T,
    /// rad
    pub delta_max: T,
    /// rad/s
    pub delta_dot_max: T,
    /// m/s^2
    pub a_cmd_max: T,
    /// Physical grip ceiling relative to the planner's nominal limits on a
    /// nominal (scale 1) surface. Above 1 the plant out-grips the plan, so
    /// slip happens mainly where friction patches cut below planned demand.
    pub headroom: T,
    /// Std dev of position measurement noise fed to the controller, m.
    pub meas_sigma: T,
}

impl<T: Real> Default for VehicleParams<T> {
    fn default() -> Self {
        VehicleParams {
            wheelbase: T::of(0.33),
            delta_max: T::of(0.4),
            delta_dot_max: T::of(3.2),
            a_cmd_max: T::of(6.0),
            headroom: T::of(1.1),
            meas_sigma: T::of(0.005),
        }
    }
}

impl<T: Real> VehicleParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > T::zero())
            || !(self.delta_max > T::zero())
            || !(self.delta_dot_max > T::zero())
            || !(self.a_cmd_max > T::zero())
            || !(self.headroom > T::zero())
        {
            return Err(Error::Invalid("vehicle parameters must be positive".into()));
        }
        if self.meas_sigma < T::zero() {
            return Err(Error::Invalid("measurement noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// One region of reduced grip. Scales multiply; overlaps take the minimum.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FrictionPatch<T: Real = f64> {
    Circle { cx: T, cy: T, r: T, scale: T },
    Polygon { vertices: Vec<[T; 2]>, scale: T },
}

impl<T: Real> FrictionPatch<T> {
    pub fn scale(&self) -> T {
        match self {
            FrictionPatch::Circle { scale, .. } => *scale,
            FrictionPatch::Polygon { scale, .. } => *scale,
        }
    }

    pub fn contains(&self, pos: Vec2<T>) -> bool {
        match self {
            FrictionPatch::Circle { cx, cy, r, .. } => {
                pos.dist_sq(Vec2::new(*cx, *cy)) <= *r * *r
            }
            FrictionPatch::Polygon { vertices, .. } => {
                // Even-odd ray casting against a horizontal ray to +x.
                let n = vertices.len();
                if n < 3 {
                    return false;
                }
                let mut inside = false;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let crosses = (a[1] > pos.y) != (b[1] > pos.y);
                    if crosses {
                        let t = (pos.y - a[1]) / (b[1] - a[1]);
                        let x_hit = a[0] + t * (b[0] - a[0]);
                        if x_hit > pos.x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

/// Nominal grip 1.0 everywhere, scaled down inside patches. A global scale
/// below 1 models a uniformly worse tire/surface combination.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrictionField<T: Real = f64> {
    #[serde(default)]
    pub patches: Vec<FrictionPatch<T>>,
    #[serde(default = "one")]
    pub global_scale: T,
}

fn one<T: Real>() -> T {
    T::one()
}

impl<T: Real> Default for FrictionField<T> {
    fn default() -> Self {
        Self::nominal()
    }
}

impl<T: Real> FrictionField<T> {
    pub fn nominal() -> Self {
        FrictionField {
            patches: Vec::new(),
            global_scale: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.global_scale > T::zero()) {
            return Err(Error::Invalid("global friction scale must be > 0".into()));
        }
        for p in &self.patches {
            if !(p.scale() > T::zero()) || p.scale() > T::one() {
                return Err(Error::Invalid(
                    "friction patch scales must lie in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Grip scale at a position: the minimum over containing patches (or 1),
    /// times the global scale.
    pub fn mu_at(&self, pos: Vec2<T>) -> T {
        let mut mu = T::one();
        for p in &self.patches {
            if p.contains(pos) {
                mu = mu.min(p.scale());
            }
        }
        mu * self.global_scale
    }
}

/// Kinematic single-track derivative. Pure; no saturation logic here.
pub fn dynamics<T: Real>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    wheelbase: T,
) -> VehicleState<T> {
    VehicleState {
        x: state.v * state.theta.cos(),
        y: state.v * state.theta.sin(),
        theta: state.v * state.delta.tan() / wheelbase,
        delta: input.delta_dot,
        v: input.a,
    }
}

fn rk4<T: Real>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    dt: T,
    wheelbase: T,
    delta_override: Option<T>,
) -> VehicleState<T> {
    let eval = |s: &VehicleState<T>| -> VehicleState<T> {
        let mut probe = *s;
        if let Some(d) = delta_override {
            probe.delta = d;
        }
        let mut k = dynamics(&probe, input, wheelbase);
        if delta_override.is_some() {
            // The saturated steering angle is held for the whole step; the
            // commanded steering state still integrates underneath it.
            k.delta = input.delta_dot;
        }
        k
    };
    let half = dt / T::of(2.0);
    let k1 = eval(state);
    let s2 = advance(state, &k1, half);
    let k2 = eval(&s2);
    let s3 = advance(state, &k2, half);
    let k3 = eval(&s3);
    let s4 = advance(state, &k3, dt);
    let k4 = eval(&s4);
    let sixth = dt / T::of(6.0);
    let two = T::of(2.0);
    VehicleState {
        x: state.x + sixth * (k1.x + two * k2.x + two * k3.x + k4.x),
        y: state.y + sixth * (k1.y + two * k2.y + two * k3.y + k4.y),
        theta: state.theta + sixth * (k1.theta + two * k2.theta + two * k3.theta + k4.theta),
        delta: state.delta + sixth * (k1.delta + two * k2.delta + two * k3.delta + k4.delta),
        v: state.v + sixth * (k1.v + two * k2.v + two * k3.v + k4.v),
    }
}

fn advance<T: Real>(s: &VehicleState<T>, k: &VehicleState<T>, dt: T) -> VehicleState<T> {
    VehicleState {
        x: s.x + dt * k.x,
        y: s.y + dt * k.y,
        theta: s.theta + dt * k.theta,
        delta: s.delta + dt * k.delta,
        v: s.v + dt * k.v,
    }
}

/// One plant step: traction check at the current position, then RK4.
///
/// The demanded lateral acceleration v^2 tan|δ|/L is compared against the
/// local ceiling μ·headroom·a_perp_nominal once at the step start; if it
/// exceeds the ceiling the steering angle used for heading propagation is
/// reduced to the saturating value for the whole step (understeer) and the
/// slip flag is set. The demanded longitudinal acceleration is likewise
/// clipped to μ·headroom·a_par_nominal. Returns the next state and whether
/// any saturation engaged.
pub fn step<T: Real>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    dt: T,
    friction: &FrictionField<T>,
    limits: &DynamicLimits<T>,
    params: &VehicleParams<T>,
) -> (VehicleState<T>, bool) {
    let mu = friction.mu_at(state.pos());
    let a_perp_ceiling = mu * params.headroom * limits.a_perp_nominal;
    let a_par_ceiling = mu * params.headroom * limits.a_par_nominal;

    let mut slip = false;
    let mut eff = *input;
    eff.a = eff.a.max(-params.a_cmd_max).min(params.a_cmd_max);
    eff.delta_dot = eff
        .delta_dot
        .max(-params.delta_dot_max)
        .min(params.delta_dot_max);
    if eff.a.abs() > a_par_ceiling {
        eff.a = a_par_ceiling * eff.a.signum();
        slip = true;
    }

    let mut delta_override = None;
    if state.v > T::zero() {
        let demand = state.v * state.v * state.delta.tan().abs() / params.wheelbase;
        if demand > a_perp_ceiling {
            let sat = (a_perp_ceiling * params.wheelbase / (state.v * state.v)).atan();
            delta_override = Some(sat * state.delta.signum());
            slip = true;
        }
    }

    let mut next = rk4(state, &eff, dt, params.wheelbase, delta_override);
    next.v = next.v.max(T::zero());
    next.delta = next.delta.max(-params.delta_max).min(params.delta_max);
    (next, slip)
}

/// Position measurement: true position plus isotropic Gaussian noise.
pub fn measure_position<T: Real>(
    state: &VehicleState<T>,
    sigma: T,
    rng: &mut crate::rng::Prng,
) -> Vec2<T> {
    if sigma <= T::zero() {
        return state.pos();
    }
    let nx = T::of(crate::rng::standard_normal(rng));
    let ny = T::of(crate::rng::standard_normal(rng));
    Vec2::new(state.x + sigma * nx, state.y + sigma * ny)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> DynamicLimits<f64> {
        DynamicLimits {
            v_max: 8.0,
            a_par_nominal: 3.0,
            a_perp_nominal: 4.0,
        }
    }

    fn params() -> VehicleParams<f64> {
        VehicleParams::default()
    }

    #[test]
    fn rest_derivatives_are_zero() {
        let s = VehicleState {
            x: 1.0,
            y: 2.0,
            theta: 0.7,
            delta: 0.3,
            v: 0.0,
        };
        let d = dynamics(&s, &ControlInput::zero(), 0.33);
        assert_eq!(d.x, 0.0);
        assert_eq!(d.y, 0.0);
        assert_eq!(d.theta, 0.0);
    }

    #[test]
    fn straight_line_keeps_heading() {
        let mut s = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.5,
            delta: 0.0,
            v: 3.0,
        };
        let f = FrictionField::nominal();
        for _ in 0..1000 {
            let (n, slip) = step(&s, &ControlInput::zero(), DT_PLANT, &f, &limits(), &params());
            assert!(!slip);
            s = n;
        }
        assert!((s.theta - 0.5).abs() < 1e-12);
        assert!((s.v - 3.0).abs() < 1e-12, "speed drifted to {}", s.v);
        let dist = (s.x * s.x + s.y * s.y).sqrt();
        assert!((dist - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_steering_closes_circle() {
        let p = params();
        let delta = 0.25f64;
        let radius = p.wheelbase / delta.tan();
        let v = 1.5f64;
        // Stay below the lateral ceiling so no saturation engages.
        assert!(v * v / radius < p.headroom * limits().a_perp_nominal);
        let period = std::f64::consts::TAU * radius / v;
        let steps = (period / DT_PLANT).round() as usize;
        let dt = period / steps as f64;
        let mut s = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            delta,
            v,
        };
        let start = s.pos();
        let f = FrictionField::nominal();
        for _ in 0..steps {
            let (n, slip) = step(&s, &ControlInput::zero(), dt, &f, &limits(), &p);
            assert!(!slip);
            s = n;
        }
        assert!(
            s.pos().dist(start) < 1e-6,
            "circle closure error {}",
            s.pos().dist(start)
        );
    }

    #[test]
    fn below_saturation_matches_pure_rk4() {
        let s = VehicleState {
            x: 0.3,
            y: -0.2,
            theta: 1.1,
            delta: 0.1,
            v: 2.0,
        };
        let input = ControlInput {
            a: 1.0,
            delta_dot: 0.5,
        };
        let f = FrictionField::nominal();
        let (next, slip) = step(&s, &input, DT_PLANT, &f, &limits(), &params());
        assert!(!slip);
        let raw = rk4(&s, &input, DT_PLANT, params().wheelbase, None);
        assert_eq!(next, raw);
    }

    #[test]
    fn low_friction_patch_saturates_steering() {
        let p = params();
        let lim = limits();
        let f = FrictionField {
            patches: vec![FrictionPatch::Circle {
                cx: 0.0,
                cy: 0.0,
                r: 5.0,
                scale: 0.2,
            }],
            global_scale: 1.0,
        };
        let v = 4.0f64;
        let s = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            delta: p.delta_max,
            v,
        };
        let demand = v * v * p.delta_max.tan() / p.wheelbase;
        let ceiling = 0.2 * p.headroom * lim.a_perp_nominal;
        assert!(demand > ceiling);
        let (next, slip) = step(&s, &ControlInput::zero(), DT_PLANT, &f, &lim, &p);
        assert!(slip);
        // Realized yaw rate equals the saturated value a_ceiling / v.
        let yaw_rate = (next.theta - s.theta) / DT_PLANT;
        let expected = ceiling / v;
        assert!(
            (yaw_rate - expected).abs() < 1e-6 * expected,
            "yaw rate {} vs saturated {}",
            yaw_rate,
            expected
        );
    }

    #[test]
    fn longitudinal_demand_clipped_by_friction() {
        let p = params();
        let lim = limits();
        let f = FrictionField {
            patches: Vec::new(),
            global_scale: 0.2,
        };
        let s = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            delta: 0.0,
            v: 2.0,
        };
        let input = ControlInput {
            a: 3.0,
            delta_dot: 0.0,
        };
        let (next, slip) = step(&s, &input, DT_PLANT, &f, &lim, &p);
        assert!(slip);
        let ceiling = 0.2 * p.headroom * lim.a_par_nominal;
        assert!(((next.v - s.v) / DT_PLANT - ceiling).abs() < 1e-9);
    }

    #[test]
    fn lowering_friction_never_raises_lateral_accel() {
        let p = params();
        let lim = limits();
        let s = VehicleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            delta: 0.35,
            v: 5.0,
        };
        let mut prev = f64::INFINITY;
        for scale in [1.0, 0.7, 0.4, 0.2, 0.1] {
            let f = FrictionField {
                patches: Vec::new(),
                global_scale: scale,
            };
            let (next, _) = step(&s, &ControlInput::zero(), DT_PLANT, &f, &lim, &p);
            let realized = (next.theta - s.theta) / DT_PLANT * s.v;
            assert!(realized <= prev + 1e-12);
            prev = realized;
        }
    }

    #[test]
    fn zero_input_from_rest_is_identity() {
        let s = VehicleState {
            x: 1.0,
            y: 2.0,
            theta: 0.3,
            delta: 0.1,
            v: 0.0,
        };
        let f = FrictionField::nominal();
        let (next, slip) = step(&s, &ControlInput::zero(), DT_PLANT, &f, &limits(), &params());
        assert!(!slip);
        assert_eq!(next, s);
    }

    #[test]
    fn polygon_containment() {
        let patch: FrictionPatch<f64> = FrictionPatch::Polygon {
            vertices: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [0.0, 2.0]],
            scale: 0.5,
        };
        assert!(patch.contains(Vec2::new(2.0, 1.0)));
        assert!(!patch.contains(Vec2::new(5.0, 1.0)));
        assert!(!patch.contains(Vec2::new(2.0, 3.0)));
        let f = FrictionField {
            patches: vec![patch],
            global_scale: 1.0,
        };
        assert_eq!(f.mu_at(Vec2::new(2.0, 1.0)), 0.5);
        assert_eq!(f.mu_at(Vec2::new(5.0, 1.0)), 1.0);
    }

    #[test]
    fn measurement_noise_is_deterministic() {
        let s = VehicleState {
            x: 1.0,
            y: 2.0,
            theta: 0.0,
            delta: 0.0,
            v: 0.0,
        };
        let mut r1 = crate::rng::seeded(7);
        let mut r2 = crate::rng::seeded(7);
        let m1 = measure_position(&s, 0.005, &mut r1);
        let m2 = measure_position(&s, 0.005, &mut r2);
        assert_eq!(m1, m2);
        assert!(m1.dist(s.pos()) < 0.1);
    }
}
