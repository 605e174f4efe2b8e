//! Kinematic rigid body on SE(3) with forward-speed, pitch-rate and yaw-rate
//! actuation, plus the path parameter `gamma` and controller memory `eta`.
//!
//! The rotation is stored as a full 3x3 matrix and pulled back onto SO(3)
//! after every step with one Newton-Schulz iteration `R (3I - R'R) / 2`.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{PathSpec, Vec3};

/// Default integration step.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vec3,
    /// Body to inertial.
    pub r: Matrix3<f64>,
}

impl Pose {
    pub fn new(p: Vec3, r: Matrix3<f64>) -> Self {
        Self { p, r }
    }

    pub fn identity_at(p: Vec3) -> Self {
        Self {
            p,
            r: Matrix3::identity(),
        }
    }

    /// `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_ypr(p: Vec3, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            p,
            r: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
        }
    }

    /// Frobenius norm of `R'R - I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.r.transpose() * self.r - Matrix3::identity()).norm()
    }
}

/// Body-frame point whose position is regulated onto the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyOffset {
    eps: Vec3,
}

impl BodyOffset {
    pub fn new(eps: Vec3) -> Result<Self> {
        if eps[0] == 0.0 || !eps[0].is_finite() {
            return Err(Error::SingularOffset(eps[0]));
        }
        Ok(Self { eps })
    }

    pub fn vector(&self) -> Vec3 {
        self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleInput {
    pub v1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl VehicleInput {
    pub fn new(v1: f64, w2: f64, w3: f64) -> Self {
        Self { v1, w2, w3 }
    }

    pub fn from_vec(u: Vec3) -> Self {
        Self::new(u[0], u[1], u[2])
    }

    pub fn to_vec(self) -> Vec3 {
        Vec3::new(self.v1, self.w2, self.w3)
    }

    /// Body angular velocity; roll rate is not actuated.
    pub fn omega(self) -> Vec3 {
        Vec3::new(0.0, self.w2, self.w3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: Pose,
    pub gamma: f64,
    pub eta: f64,
}

/// Common path-parameter speed `g(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommonSpeed {
    Constant {
        v_d: f64,
    },
    /// Linear interpolation, held constant outside the table.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl CommonSpeed {
    pub fn constant(v_d: f64) -> Self {
        CommonSpeed::Constant { v_d }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            CommonSpeed::Constant { v_d } => *v_d,
            CommonSpeed::Table { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let k = times.partition_point(|&x| x <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    /// `sup_t |g(t)|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            CommonSpeed::Constant { v_d } => v_d.abs(),
            CommonSpeed::Table { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CommonSpeed::Constant { v_d } if v_d.is_finite() => Ok(()),
            CommonSpeed::Constant { v_d } => Err(Error::Malformed(format!("v_d = {v_d}"))),
            CommonSpeed::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::Malformed(
                        "speed table needs matching, non-empty times and values".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Malformed("speed table times must increase".into()));
                }
                Ok(())
            }
        }
    }
}

/// `Omega(w) x = w x x`.
pub fn skew(w: Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// `(p_dot, R_dot) = (R (v1, 0, 0)', R Omega(0, w2, w3))`.
pub fn dynamics(pose: &Pose, u: VehicleInput) -> (Vec3, Matrix3<f64>) {
    (pose.r.column(0) * u.v1, pose.r * skew(u.omega()))
}

/// One Newton-Schulz step toward the polar factor.
pub fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    r * (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5
}

/// Inputs driving the stacked state over one stage evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageInput {
    pub u: VehicleInput,
    pub v_gamma: f64,
    /// Auxiliary consensus input; `gamma_dot = g + u_gamma_aux + eta`.
    pub u_gamma_aux: f64,
}

#[derive(Debug, Clone, Copy)]
struct Deriv {
    p: Vec3,
    r: Matrix3<f64>,
    gamma: f64,
    eta: f64,
}

fn deriv(s: &AgentState, inp: &StageInput, g: f64) -> Deriv {
    let (p, r) = dynamics(&s.pose, inp.u);
    Deriv {
        p,
        r,
        gamma: g + inp.u_gamma_aux + s.eta,
        eta: inp.v_gamma,
    }
}

fn advance(s: &AgentState, d: &Deriv, h: f64) -> AgentState {
    AgentState {
        pose: Pose {
            p: s.pose.p + d.p * h,
            r: s.pose.r + d.r * h,
        },
        gamma: s.gamma + d.gamma * h,
        eta: s.eta + d.eta * h,
    }
}

/// One classical RK4 step with a state-feedback input evaluated at every
/// stage. The rotation is re-orthonormalized afterwards.
pub fn rk4_step_feedback<F>(
    s: &AgentState,
    t: f64,
    dt: f64,
    speed: &CommonSpeed,
    input: F,
) -> AgentState
where
    F: Fn(f64, &AgentState) -> StageInput,
{
    rk4_parts(s, t, dt, speed, input).0
}

/// [`rk4_step_feedback`] with compensated summation of the path parameter.
///
/// `carry` holds the rounding error left over from earlier steps. Over tens
/// of thousands of steps this keeps `gamma` within a few ulps of the exact
/// quadrature, so runs that differ only by a common speed produce the same
/// disagreement to near machine precision.
pub fn rk4_step_compensated<F>(
    s: &AgentState,
    carry: &mut f64,
    t: f64,
    dt: f64,
    speed: &CommonSpeed,
    input: F,
) -> AgentState
where
    F: Fn(f64, &AgentState) -> StageInput,
{
    let (mut out, d_gamma) = rk4_parts(s, t, dt, speed, input);
    let (sum, err) = two_sum(s.gamma, d_gamma + *carry);
    out.gamma = sum;
    *carry = err;
    out
}

/// Exact rounding error of `a + b`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let sum = a + b;
    let bb = sum - a;
    (sum, (a - (sum - bb)) + (b - bb))
}

/// The step and its `gamma` increment before rounding into the state.
fn rk4_parts<F>(s: &AgentState, t: f64, dt: f64, speed: &CommonSpeed, input: F) -> (AgentState, f64)
where
    F: Fn(f64, &AgentState) -> StageInput,
{
    let h2 = dt / 2.0;
    let tm = t + h2;
    let k1 = deriv(s, &input(t, s), speed.at(t));
    let s2 = advance(s, &k1, h2);
    let k2 = deriv(&s2, &input(tm, &s2), speed.at(tm));
    let s3 = advance(s, &k2, h2);
    let k3 = deriv(&s3, &input(tm, &s3), speed.at(tm));
    let s4 = advance(s, &k3, dt);
    let k4 = deriv(&s4, &input(t + dt, &s4), speed.at(t + dt));
    let w = dt / 6.0;
    let d_gamma = (k1.gamma + 2.0 * (k2.gamma + k3.gamma) + k4.gamma) * w;
    let mut out = AgentState {
        pose: Pose {
            p: s.pose.p + (k1.p + (k2.p + k3.p) * 2.0 + k4.p) * w,
            r: s.pose.r + (k1.r + (k2.r + k3.r) * 2.0 + k4.r) * w,
        },
        gamma: s.gamma + d_gamma,
        eta: s.eta + (k1.eta + 2.0 * (k2.eta + k3.eta) + k4.eta) * w,
    };
    out.pose.r = reorthonormalize(&out.pose.r);
    (out, d_gamma)
}

/// RK4 step with inputs held constant over the step.
pub fn rk4_step(
    s: &AgentState,
    t: f64,
    dt: f64,
    speed: &CommonSpeed,
    input: StageInput,
) -> AgentState {
    rk4_step_feedback(s, t, dt, speed, |_, _| input)
}

/// A constant input applied for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputPiece {
    pub duration: f64,
    pub input: StageInput,
}

/// Number of equal substeps no longer than `dt_max` covering `duration`.
pub fn substeps(duration: f64, dt_max: f64) -> usize {
    ((duration / dt_max) - 1e-9).ceil().max(1.0) as usize
}

/// Integrates a piecewise-constant input signal. Each piece is split into
/// equal steps no longer than `dt`, so piece boundaries land on step edges.
pub fn integrate(
    s0: &AgentState,
    t0: f64,
    pieces: &[InputPiece],
    dt: f64,
    speed: &CommonSpeed,
) -> AgentState {
    let mut s = *s0;
    let mut t = t0;
    for piece in pieces {
        if piece.duration <= 0.0 {
            continue;
        }
        let n = substeps(piece.duration, dt);
        let h = piece.duration / n as f64;
        for k in 0..n {
            s = rk4_step(&s, t + k as f64 * h, h, speed, piece.input);
        }
        t += piece.duration;
    }
    s
}

/// Integrates `n_steps` steps of size `dt` under state feedback.
pub fn integrate_feedback<F>(
    s0: &AgentState,
    t0: f64,
    dt: f64,
    n_steps: usize,
    speed: &CommonSpeed,
    input: F,
) -> AgentState
where
    F: Fn(f64, &AgentState) -> StageInput,
{
    let mut s = *s0;
    for k in 0..n_steps {
        s = rk4_step_feedback(&s, t0 + k as f64 * dt, dt, speed, &input);
    }
    s
}

/// `y = R'(p + R eps - c_d(gamma))`.
pub fn output_y(pose: &Pose, offset: &BodyOffset, spec: &PathSpec, gamma: f64) -> Vec3 {
    pose.r.transpose() * (pose.p - spec.eval(gamma)) + offset.vector()
}

/// Closed-form `y_dot = -Omega(w) y - R' c_d'(gamma) gamma_dot + Delta u`.
pub fn output_rate(
    pose: &Pose,
    u: VehicleInput,
    gamma: f64,
    gamma_dot: f64,
    offset: &BodyOffset,
    spec: &PathSpec,
) -> Vec3 {
    let y = output_y(pose, offset, spec, gamma);
    let w = u.omega();
    // Delta u = (v1, 0, 0) + w x eps
    let delta_u = Vec3::new(u.v1, 0.0, 0.0) + w.cross(&offset.vector());
    -skew(w) * y - pose.r.transpose() * spec.derivative(gamma) * gamma_dot + delta_u
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn state(pose: Pose) -> AgentState {
        AgentState {
            pose,
            gamma: 0.0,
            eta: 0.0,
        }
    }

    fn rot_z(a: f64) -> Matrix3<f64> {
        *Rotation3::from_euler_angles(0.0, 0.0, a).matrix()
    }

    fn default_offset() -> BodyOffset {
        BodyOffset::new(Vec3::new(-0.5, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn skew_examples() {
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, 0.0, -2.0, 0.0, 0.0);
        assert_eq!(skew(Vec3::new(0.0, 2.0, 3.0)), expected);
        assert_eq!(skew(Vec3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn dynamics_examples() {
        let id = Pose::identity_at(Vec3::zeros());
        let (pd, rd) = dynamics(&id, VehicleInput::new(1.0, 0.0, 0.0));
        assert_eq!((pd, rd), (Vec3::new(1.0, 0.0, 0.0), Matrix3::zeros()));
        let (pd, rd) = dynamics(&id, VehicleInput::default());
        assert_eq!((pd, rd), (Vec3::zeros(), Matrix3::zeros()));
        let turned = Pose::new(Vec3::zeros(), rot_z(FRAC_PI_2));
        let (pd, _) = dynamics(&turned, VehicleInput::new(2.0, 0.0, 0.0));
        assert_abs_diff_eq!(pd, Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn offset_must_have_nonzero_first_component() {
        assert!(matches!(
            BodyOffset::new(Vec3::new(0.0, 1.0, 1.0)),
            Err(Error::SingularOffset(_))
        ));
    }

    #[test]
    fn gamma_flow_is_linear() {
        let s0 = AgentState {
            gamma: 15.0,
            ..state(Pose::identity_at(Vec3::new(1.0, 2.0, 3.0)))
        };
        let piece = InputPiece {
            duration: 1.0,
            input: StageInput::default(),
        };
        let s1 = integrate(&s0, 0.0, &[piece], DEFAULT_DT, &CommonSpeed::constant(2.0));
        assert_abs_diff_eq!(s1.gamma, 17.0, epsilon = 1e-12);
        assert_eq!(s1.pose, s0.pose);
    }

    #[test]
    fn eta_decays_exponentially() {
        let s0 = AgentState {
            eta: 1.0,
            ..state(Pose::identity_at(Vec3::zeros()))
        };
        let s1 = integrate_feedback(
            &s0,
            0.0,
            DEFAULT_DT,
            1000,
            &CommonSpeed::constant(0.0),
            |_, s| StageInput {
                v_gamma: -s.eta,
                ..Default::default()
            },
        );
        assert_abs_diff_eq!(s1.eta, (-1.0f64).exp(), epsilon = 1e-9);
    }

    fn spin_error(dt: f64) -> (f64, AgentState) {
        let s0 = state(Pose::identity_at(Vec3::zeros()));
        let piece = InputPiece {
            duration: 2.0,
            input: StageInput {
                u: VehicleInput::new(1.0, 0.0, PI),
                ..Default::default()
            },
        };
        let s1 = integrate(&s0, 0.0, &[piece], dt, &CommonSpeed::constant(0.0));
        ((s1.pose.r - Matrix3::identity()).norm(), s1)
    }

    #[test]
    fn full_turn_returns_to_identity() {
        let (err, s1) = spin_error(DEFAULT_DT);
        assert!(err < 1e-7, "{err}");
        assert!(s1.pose.orthogonality_error() < 1e-9);
        // A full circle of radius 1/pi brings the body back to the start.
        assert!(s1.pose.p.norm() < 1e-7);
    }

    #[test]
    fn compensated_gamma_tracks_exact_sum() {
        let s0 = AgentState {
            gamma: 1000.0,
            ..state(Pose::identity_at(Vec3::zeros()))
        };
        let inp = StageInput {
            u_gamma_aux: 0.1,
            ..Default::default()
        };
        let speed = CommonSpeed::constant(0.0);
        let (mut plain, mut comp, mut carry) = (s0, s0, 0.0);
        for k in 0..100_000 {
            let t = k as f64 * 1e-3;
            plain = rk4_step(&plain, t, 1e-3, &speed, inp);
            comp = rk4_step_compensated(&comp, &mut carry, t, 1e-3, &speed, |_, _| inp);
        }
        assert!(
            (comp.gamma - 1010.0).abs() <= 2.3e-13,
            "{}",
            comp.gamma - 1010.0
        );
        assert!((plain.gamma - 1010.0).abs() > (comp.gamma - 1010.0).abs());
        assert_eq!(comp.pose, plain.pose);
    }

    #[test]
    fn rk4_order_on_rotation_flow() {
        // Position error is free of the orthogonal projection, so it shows
        // the raw integration order.
        let exact = |t: f64| Vec3::new((PI * t).sin() / PI, (1.0 - (PI * t).cos()) / PI, 0.0);
        let err = |dt: f64| {
            let s0 = state(Pose::identity_at(Vec3::zeros()));
            let piece = InputPiece {
                duration: 1.5,
                input: StageInput {
                    u: VehicleInput::new(1.0, 0.0, PI),
                    ..Default::default()
                },
            };
            let s = integrate(&s0, 0.0, &[piece], dt, &CommonSpeed::constant(0.0));
            (s.pose.p - exact(1.5)).norm()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn output_examples() {
        let pose = Pose::identity_at(Vec3::new(1.0, 0.0, 0.0));
        let origin = PathSpec::line([0.0; 3], [1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(
            output_y(&pose, &default_offset(), &origin, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            epsilon = 1e-15
        );
        // c = p + R eps = (0.5, 0, 0) sits on the path at gamma = 0.5.
        assert_abs_diff_eq!(
            output_y(&pose, &default_offset(), &origin, 0.5),
            Vec3::zeros(),
            epsilon = 1e-15
        );
        let rate = output_rate(
            &pose,
            VehicleInput::default(),
            0.0,
            0.0,
            &default_offset(),
            &origin,
        );
        assert_eq!(rate, Vec3::zeros());
    }

    #[test]
    fn common_speed_table() {
        let g = CommonSpeed::Table {
            times: vec![0.0, 1.0, 3.0],
            values: vec![1.0, 3.0, 3.0],
        };
        assert_eq!(g.at(-1.0), 1.0);
        assert_eq!(g.at(0.5), 2.0);
        assert_eq!(g.at(10.0), 3.0);
        assert_eq!(g.sup_abs(), 3.0);
    }

    fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
        (-PI..PI, -1.5f64..1.5, -PI..PI)
            .prop_map(|(a, b, c)| *Rotation3::from_euler_angles(a, b, c).matrix())
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-r..r).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
    }

    fn wave() -> PathSpec {
        PathSpec::SinusoidOffsetLine {
            origin: [0.0; 3],
            direction: [1.0, 0.0, 0.0],
            offset: [0.0, 1.0, 0.0],
            normal: [0.0, 0.0, 1.0],
            amplitude: 1.5,
            frequency: 0.4,
        }
    }

    proptest! {
        #[test]
        fn skew_annihilates_its_axis(w in vec3(10.0), x in vec3(10.0)) {
            prop_assert!((skew(w) * w).norm() < 1e-12);
            prop_assert!((skew(w) * x - w.cross(&x)).norm() < 1e-12);
        }

        #[test]
        fn output_norm_is_tracking_error(r in rotation(), p in vec3(20.0), gamma in -10.0f64..10.0) {
            let pose = Pose::new(p, r);
            let off = default_offset();
            let spec = wave();
            let y = output_y(&pose, &off, &spec, gamma);
            let c = p + r * off.vector();
            prop_assert!((y.norm() - (c - spec.eval(gamma)).norm()).abs() < 1e-12);
        }

        #[test]
        fn output_rate_matches_finite_difference(
            r in rotation(),
            p in vec3(5.0),
            gamma in -5.0f64..5.0,
            u in vec3(2.0),
            ug in -1.0f64..1.0,
        ) {
            let s0 = AgentState { pose: Pose::new(p, r), gamma, eta: ug };
            let inp = StageInput { u: VehicleInput::from_vec(u), ..Default::default() };
            let speed = CommonSpeed::constant(2.0);
            let off = default_offset();
            let spec = wave();
            let h = 1e-5;
            let fwd = rk4_step(&s0, 0.0, h, &speed, inp);
            let bwd = rk4_step(&s0, 0.0, -h, &speed, inp);
            let fd = (output_y(&fwd.pose, &off, &spec, fwd.gamma)
                - output_y(&bwd.pose, &off, &spec, bwd.gamma)) / (2.0 * h);
            let an = output_rate(&s0.pose, inp.u, gamma, 2.0 + ug, &off, &spec);
            prop_assert!((fd - an).norm() < 1e-6, "fd {fd:?} an {an:?}");
        }

        #[test]
        fn integration_stays_on_so3(r in rotation(), u in vec3(3.0)) {
            let s0 = state(Pose::new(Vec3::zeros(), r));
            let piece = InputPiece {
                duration: 3.0,
                input: StageInput { u: VehicleInput::from_vec(u), ..Default::default() },
            };
            let s1 = integrate(&s0, 0.0, &[piece], DEFAULT_DT, &CommonSpeed::constant(0.0));
            prop_assert!(s1.pose.orthogonality_error() < 1e-9);
            prop_assert!(s1.pose.r.determinant() > 0.0);
        }
    }
}
