//! Closed-loop raceline optimization toolkit.
//!
//! The pipeline: a closed cubic NURBS describes the path, a single time scale
//! T maps it to a timed trajectory, CMA-ES searches the reduced parameter
//! space for minimum lap time under a spatial acceleration-limit map, a
//! simulated vehicle drives the result under tracking MPC, and observed
//! tracking errors are attributed backwards to acceleration-transition zones
//! and fed into per-cell Kalman-style updates of the limit map. Repeat.

pub mod vec2;
pub mod linalg;
pub mod rng;
pub mod nurbs;
pub mod closure;
pub mod fit;
pub mod timing;
pub mod constraint_map;
pub mod blame;
pub mod plant;
pub mod mpc;
pub mod cma;
pub mod track;
pub mod objective;
pub mod tracks;
pub mod io;
pub mod orchestrator;
pub mod render;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Scalar abstraction for the numeric kernels. Implemented by f32 and f64;
/// everything downstream of the orchestrator is generic over it.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion from an f64 literal.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_usize_exact(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to any Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Concrete double-precision aliases for the main kernel types.
pub type Curve64 = nurbs::NurbsCurve<f64>;
pub type Params64 = closure::FreeParameters<f64>;
pub type Trajectory64 = timing::TimedTrajectory<f64>;
pub type Map64 = constraint_map::ConstraintMap<f64>;
pub type Cma64 = cma::CmaState<f64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter {0} outside the curve domain [0,1]")]
    OutOfDomain(f64),
    #[error("derivative order {0} unsupported (expected 1..=3)")]
    BadDerivativeOrder(usize),
    #[error("degenerate tangent at u = {0}: parametric speed below guard")]
    DegenerateTangent(f64),
    #[error("position ({0}, {1}) outside the map extent")]
    OutsideExtent(f64, f64),
    #[error("curve leaves the map extent at u = {0}")]
    CurveOutsideExtent(f64),
    #[error("closure system ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("no acceleration transition: the whole lap is one zone")]
    NoTransition,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
