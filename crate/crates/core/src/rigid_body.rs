//! Rigid-body quadrotor model.
//!
//! The vehicle is abstracted as a rigid body commanded by a mass-normalized
//! collective thrust along its body z axis and a desired body rate vector.
//! The low-level rate loop is modelled as a first-order lag
//! `ω̇ = C(x)(ω_des − ω)` with `C(x) = c0 / (1 + c_v‖v‖)`.
//!
//! State layout (13 scalars): world position, attitude quaternion
//! (body → world, Hamilton convention, scalar first), world velocity and
//! body angular rate.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Three-component vector used for positions, velocities and rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn try_normalize(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        (n > eps).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Largest absolute component.
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Attitude quaternion `(w, x, y, z)`, rotating body-frame vectors into the
/// world frame. Public constructors and operations keep it unit-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes the four components. Returns `None` for a zero or
    /// non-finite quaternion.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return None;
        }
        Some(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        match axis.try_normalize(1e-12) {
            Some(a) => {
                let (s, c) = (0.5 * angle).sin_cos();
                Self { w: c, x: a.x * s, y: a.y * s, z: a.z * s }
            }
            None => Self::IDENTITY,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Hamilton product `self ⊗ o`, renormalized.
    pub fn compose(self, o: UnitQuaternion) -> UnitQuaternion {
        let [w, x, y, z] = hamilton(self.to_array(), o.to_array());
        Self::new_normalize(w, x, y, z).unwrap_or(Self::IDENTITY)
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(t)
    }

    /// Rotates a world-frame vector into the body frame.
    pub fn inverse_rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(-self.x, -self.y, -self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(t)
    }

    /// Body z axis expressed in the world frame (third column of R(q)).
    pub fn body_z(&self) -> Vec3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Vec3::new(
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = &'static str;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new_normalize(a[0], a[1], a[2], a[3]).ok_or("quaternion must be finite and non-zero")
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

fn hamilton(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Full 13-component vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneState {
    /// World position (m).
    pub p: Vec3,
    pub q: UnitQuaternion,
    /// World velocity (m/s).
    pub v: Vec3,
    /// Body angular rate (rad/s).
    pub w: Vec3,
}

impl DroneState {
    /// Level hover at `p`, at rest.
    pub fn at_rest(p: Vec3) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn with_velocity(mut self, v: Vec3) -> Self {
        self.v = v;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite()
            && self.v.is_finite()
            && self.w.is_finite()
            && self.q.to_array().iter().all(|c| c.is_finite())
    }
}

/// Actuator-level command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneInput {
    /// Mass-normalized collective thrust along body z (m/s²).
    pub thrust: f64,
    /// Desired body rate (rad/s).
    pub w_des: Vec3,
}

impl DroneInput {
    pub fn new(thrust: f64, w_des: Vec3) -> Self {
        Self { thrust, w_des }
    }

    /// Componentwise `(1 − s)·self + s·other`.
    pub fn lerp(self, other: DroneInput, s: f64) -> DroneInput {
        DroneInput {
            thrust: (1.0 - s) * self.thrust + s * other.thrust,
            w_des: (1.0 - s) * self.w_des + s * other.w_des,
        }
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &DroneInput) -> f64 {
        (self.thrust - other.thrust).abs().max((self.w_des - other.w_des).max_abs())
    }
}

/// Physical and actuator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneParams {
    /// Base rate-tracking gain (1/s).
    pub c0: f64,
    /// Speed attenuation of the rate-tracking gain (s/m).
    pub c_v: f64,
    /// Thrust ceiling (m/s²).
    pub thrust_max: f64,
    /// Per-axis desired-rate limit (rad/s).
    pub w_max: f64,
    pub gravity: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self { c0: 20.0, c_v: 0.0, thrust_max: 2.0 * 9.81, w_max: 10.0, gravity: 9.81 }
    }
}

impl DroneParams {
    pub fn validate(&self, errs: &mut Vec<ConfigError>, ctx: &str) {
        if !(self.c0 > 0.0) {
            errs.push(ConfigError::invalid(ctx, "c0", "must be > 0"));
        }
        if !(self.c_v >= 0.0) {
            errs.push(ConfigError::invalid(ctx, "c_v", "must be >= 0"));
        }
        if !(self.gravity > 0.0) || !self.gravity.is_finite() {
            errs.push(ConfigError::invalid(ctx, "gravity", "must be finite and > 0"));
        }
        if !(self.thrust_max > self.gravity) || !self.thrust_max.is_finite() {
            errs.push(ConfigError::invalid(ctx, "thrust_max", "must be finite and exceed gravity"));
        }
        if !(self.w_max > 0.0) || !self.w_max.is_finite() {
            errs.push(ConfigError::invalid(ctx, "w_max", "must be finite and > 0"));
        }
    }

    /// Rate-tracking gain `C(x)`.
    pub fn rate_gain(&self, v: Vec3) -> f64 {
        self.c0 / (1.0 + self.c_v * v.norm())
    }

    /// Thrust that exactly cancels gravity at level attitude.
    pub fn hover_input(&self) -> DroneInput {
        DroneInput::new(self.gravity, Vec3::ZERO)
    }
}

/// Time derivative of [`DroneState`]; the quaternion rate is not unit-norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub p: Vec3,
    pub q: [f64; 4],
    pub v: Vec3,
    pub w: Vec3,
}

impl StateDerivative {
    pub fn max_abs(&self) -> f64 {
        let q = self.q.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        self.p.max_abs().max(q).max(self.v.max_abs()).max(self.w.max_abs())
    }

    pub fn to_array(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[..3].copy_from_slice(&self.p.to_array());
        out[3..7].copy_from_slice(&self.q);
        out[7..10].copy_from_slice(&self.v.to_array());
        out[10..].copy_from_slice(&self.w.to_array());
        out
    }
}

/// Saturates thrust to `[0, thrust_max]` and each desired rate component to
/// `[−w_max, w_max]`. NaN thrust maps to zero; NaN rates map to zero.
pub fn clamp_input(u: DroneInput, params: &DroneParams) -> DroneInput {
    let sat = |c: f64, lo: f64, hi: f64| if c.is_nan() { 0.0 } else { c.clamp(lo, hi) };
    DroneInput {
        thrust: sat(u.thrust, 0.0, params.thrust_max),
        w_des: u.w_des.map(|c| sat(c, -params.w_max, params.w_max)),
    }
}

/// Control-affine vector field `f(x) + g(x)u` evaluated at `(x, u)`.
///
/// `u` is used as given; callers clamp beforehand.
pub fn drone_derivative(x: &DroneState, u: &DroneInput, params: &DroneParams) -> StateDerivative {
    debug_assert!(x.is_finite(), "non-finite state {x:?}");
    let q = x.q.to_array();
    let half_w = [0.0, 0.5 * x.w.x, 0.5 * x.w.y, 0.5 * x.w.z];
    let q_dot = hamilton(q, half_w);
    let accel = x.q.body_z() * u.thrust - Vec3::new(0.0, 0.0, params.gravity);
    let w_dot = params.rate_gain(x.v) * (u.w_des - x.w);
    StateDerivative { p: x.v, q: q_dot, v: accel, w: w_dot }
}

fn offset(x: &DroneState, k: &StateDerivative, h: f64) -> DroneState {
    DroneState {
        p: x.p + k.p * h,
        // Stage quaternions are deliberately left unnormalized.
        q: UnitQuaternion {
            w: x.q.w + k.q[0] * h,
            x: x.q.x + k.q[1] * h,
            y: x.q.y + k.q[2] * h,
            z: x.q.z + k.q[3] * h,
        },
        v: x.v + k.v * h,
        w: x.w + k.w * h,
    }
}

/// One classical RK4 step of length `dt` with `u` held constant, followed by
/// quaternion renormalization.
pub fn integrate_step(x: &DroneState, u: &DroneInput, dt: f64, params: &DroneParams) -> DroneState {
    debug_assert!(dt > 0.0 && dt <= 0.1, "dt out of range: {dt}");
    let k1 = drone_derivative(x, u, params);
    let k2 = drone_derivative(&offset(x, &k1, 0.5 * dt), u, params);
    let k3 = drone_derivative(&offset(x, &k2, 0.5 * dt), u, params);
    let k4 = drone_derivative(&offset(x, &k3, dt), u, params);
    let sixth = dt / 6.0;
    let comb = |a: f64, b: f64, c: f64, d: f64| sixth * (a + 2.0 * b + 2.0 * c + d);
    let combv = |a: Vec3, b: Vec3, c: Vec3, d: Vec3| (a + 2.0 * b + 2.0 * c + d) * sixth;
    let q = [0, 1, 2, 3].map(|i| x.q.to_array()[i] + comb(k1.q[i], k2.q[i], k3.q[i], k4.q[i]));
    DroneState {
        p: x.p + combv(k1.p, k2.p, k3.p, k4.p),
        q: UnitQuaternion::new_normalize(q[0], q[1], q[2], q[3]).unwrap_or(x.q),
        v: x.v + combv(k1.v, k2.v, k3.v, k4.v),
        w: x.w + combv(k1.w, k2.w, k3.w, k4.w),
    }
}
