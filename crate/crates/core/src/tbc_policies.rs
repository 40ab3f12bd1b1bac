//! Backup controller, maneuvers and the composed time-varying backup
//! controller (TBC).
//!
//! A TBC runs a maneuver for `T_M` seconds, blends linearly into the backup
//! controller over `δ` seconds and then runs the backup controller alone.
//! The backup controller stops the vehicle and pushes it away from nearby
//! geofence faces.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rigid_body::{clamp_input, DroneInput, DroneParams, DroneState, UnitQuaternion, Vec3};
use crate::safety_sets::World;

/// Timing constants of a TBC: maneuver length `T_M`, smoothing length `δ`
/// and rollout horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbcTiming {
    pub maneuver: f64,
    pub smoothing: f64,
    pub horizon: f64,
}

impl TbcTiming {
    pub fn new(maneuver: f64, smoothing: f64, horizon: f64) -> Self {
        Self { maneuver, smoothing, horizon }
    }

    /// Phase at which the policy becomes the pure backup controller.
    pub fn backup_start(&self) -> f64 {
        self.maneuver + self.smoothing
    }

    pub fn validate(&self, errs: &mut Vec<ConfigError>) {
        if !(self.maneuver >= 0.0) || !self.maneuver.is_finite() {
            errs.push(ConfigError::invalid("filter", "maneuver_time", "must be finite and >= 0"));
        }
        if !(self.smoothing > 0.0) || !self.smoothing.is_finite() {
            errs.push(ConfigError::invalid("filter", "smoothing_time", "must be finite and > 0"));
        }
        if !(self.horizon > self.backup_start()) || !self.horizon.is_finite() {
            errs.push(ConfigError::invalid(
                "filter",
                "horizon",
                "must exceed maneuver_time + smoothing_time",
            ));
        }
    }
}

/// Pilot-style velocity command in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityCommand {
    pub v_des: Vec3,
    #[serde(default)]
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn new(v_des: Vec3, yaw_rate: f64) -> Self {
        Self { v_des, yaw_rate }
    }

    pub fn hover() -> Self {
        Self::default()
    }

    /// Rescales `v_des` so its norm does not exceed `v_max`. Non-finite
    /// components are zeroed first.
    pub fn clamped(self, v_max: f64) -> Self {
        let v = self.v_des.map(|c| if c.is_finite() { c } else { 0.0 });
        let n = v.norm();
        let v_des = if n > v_max { v * (v_max / n) } else { v };
        let yaw_rate = if self.yaw_rate.is_finite() { self.yaw_rate } else { 0.0 };
        Self { v_des, yaw_rate }
    }
}

/// Gains of the velocity, attitude and repulsion loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackupGains {
    /// Velocity error to acceleration (1/s).
    pub k_v: f64,
    /// Tilt error to body rate (1/s).
    pub k_att: f64,
    /// Repulsion speed per metre of margin violation (1/s).
    pub k_repel: f64,
    /// Distance from a face at which repulsion starts (m).
    pub repel_margin: f64,
    /// Position error to speed for evade maneuvers (1/s).
    pub k_pos: f64,
}

impl Default for BackupGains {
    fn default() -> Self {
        Self { k_v: 2.0, k_att: 8.0, k_repel: 2.0, repel_margin: 1.0, k_pos: 2.0 }
    }
}

impl BackupGains {
    pub fn validate(&self, errs: &mut Vec<ConfigError>, ctx: &str) {
        for (name, v) in [
            ("k_v", self.k_v),
            ("k_att", self.k_att),
            ("k_repel", self.k_repel),
            ("repel_margin", self.repel_margin),
            ("k_pos", self.k_pos),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(ConfigError::invalid(ctx, name, "must be finite and > 0"));
            }
        }
    }
}

/// Maneuver definition as configured, before it is bound to a start state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManeuverTemplate {
    /// Hold the pilot command that was current when the maneuver started.
    CarryOn,
    /// Move `target_offset` metres along `direction` at up to `speed`.
    Evade { direction: Vec3, target_offset: f64, speed: f64 },
}

impl ManeuverTemplate {
    pub fn evade_up(target_offset: f64, speed: f64) -> Self {
        Self::Evade { direction: Vec3::Z, target_offset, speed }
    }

    /// Binds the template to the current state and pilot command.
    pub fn instantiate(&self, x: &DroneState, pilot: VelocityCommand) -> ManeuverKind {
        match *self {
            ManeuverTemplate::CarryOn => ManeuverKind::CarryOn { frozen: pilot },
            ManeuverTemplate::Evade { direction, target_offset, speed } => ManeuverKind::Evade {
                direction: direction.try_normalize(1e-12).unwrap_or(Vec3::Z),
                target_offset,
                speed,
                origin: x.p,
            },
        }
    }

    pub fn validate(&self, errs: &mut Vec<ConfigError>, ctx: &str) {
        if let ManeuverTemplate::Evade { direction, target_offset, speed } = *self {
            if !direction.is_finite() || (direction.norm() - 1.0).abs() > 1e-6 {
                errs.push(ConfigError::invalid(ctx, "direction", "must be a unit vector"));
            }
            if !(target_offset >= 0.0) || !target_offset.is_finite() {
                errs.push(ConfigError::invalid(ctx, "target_offset", "must be finite and >= 0"));
            }
            if !(speed > 0.0) || !speed.is_finite() {
                errs.push(ConfigError::invalid(ctx, "speed", "must be finite and > 0"));
            }
        }
    }
}

/// A maneuver bound to its start context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManeuverKind {
    CarryOn { frozen: VelocityCommand },
    Evade { direction: Vec3, target_offset: f64, speed: f64, origin: Vec3 },
}

/// Largest tilt the velocity controller will request (rad).
const MAX_TILT: f64 = 1.0;
/// Lower bound on commanded vertical acceleration, as a fraction of gravity.
const MIN_LIFT_FRACTION: f64 = 0.25;

/// Velocity tracking controller on SE(3).
///
/// The desired acceleration `a = k_v(v_des − v) + g·ẑ` fixes the thrust
/// (projected on the current body z axis) and the desired thrust direction;
/// the body rate command rotates body z towards it.
pub fn velocity_controller(
    x: &DroneState,
    cmd: &VelocityCommand,
    params: &DroneParams,
    gains: &BackupGains,
) -> DroneInput {
    let g = params.gravity;
    let mut a = gains.k_v * (cmd.v_des - x.v) + Vec3::new(0.0, 0.0, g);
    a.z = a.z.max(MIN_LIFT_FRACTION * g);
    let horiz = (a.x * a.x + a.y * a.y).sqrt();
    let horiz_max = a.z * MAX_TILT.tan();
    if horiz > horiz_max {
        let s = horiz_max / horiz;
        a.x *= s;
        a.y *= s;
    }

    let bz = x.q.body_z();
    let thrust = a.dot(bz).max(0.0);

    let a_hat = a.try_normalize(1e-9).unwrap_or(Vec3::Z);
    let axis = bz.cross(a_hat);
    let angle = axis.norm().atan2(bz.dot(a_hat));
    let err_world = match axis.try_normalize(1e-12) {
        Some(k) => k * angle,
        None if bz.dot(a_hat) < 0.0 => x.q.rotate(Vec3::X) * angle,
        None => Vec3::ZERO,
    };
    let mut w_des = x.q.inverse_rotate(err_world) * gains.k_att;
    w_des.z = cmd.yaw_rate;
    clamp_input(DroneInput::new(thrust, w_des), params)
}

/// Inward repulsion velocity from geofence faces closer than the margin.
pub fn repulsion(p: Vec3, world: &World, gains: &BackupGains) -> Vec3 {
    let b = &world.geofence;
    let d = p - b.center;
    let axis = |off: f64, half: f64| {
        let face_distance = half - off.abs();
        if face_distance < gains.repel_margin {
            -off.signum() * gains.k_repel * (gains.repel_margin - face_distance)
        } else {
            0.0
        }
    };
    Vec3::new(
        axis(d.x, b.half_extents.x),
        axis(d.y, b.half_extents.y),
        axis(d.z, b.half_extents.z),
    )
}

/// Backup controller `u_B`: stop, and repel from the geofence boundary.
pub fn backup_controller(
    x: &DroneState,
    world: &World,
    params: &DroneParams,
    gains: &BackupGains,
) -> DroneInput {
    let cmd = VelocityCommand::new(repulsion(x.p, world, gains), 0.0);
    velocity_controller(x, &cmd, params, gains)
}

/// Velocity command issued by a bound maneuver at state `x`.
pub fn maneuver_command(kind: &ManeuverKind, x: &DroneState, gains: &BackupGains) -> VelocityCommand {
    match *kind {
        ManeuverKind::CarryOn { frozen } => frozen,
        ManeuverKind::Evade { direction, target_offset, speed, origin } => {
            let travelled = (x.p - origin).dot(direction);
            let remaining = (target_offset - travelled).max(0.0);
            VelocityCommand::new(direction * speed.min(gains.k_pos * remaining), 0.0)
        }
    }
}

/// Maneuver input `u_M(x)`.
pub fn maneuver_input(
    kind: &ManeuverKind,
    x: &DroneState,
    params: &DroneParams,
    gains: &BackupGains,
) -> DroneInput {
    velocity_controller(x, &maneuver_command(kind, x, gains), params, gains)
}

/// Linear blend from `u_m` at `τ = T_M` to `u_b` at `τ = T_M + δ`.
pub fn smooth_transition(u_m: DroneInput, u_b: DroneInput, tau: f64, timing: &TbcTiming) -> DroneInput {
    if tau >= timing.backup_start() {
        return u_b;
    }
    let s = ((tau - timing.maneuver) / timing.smoothing).clamp(0.0, 1.0);
    u_m.lerp(u_b, s)
}

/// Evaluates the time-varying backup controller `π(x, τ)`.
pub fn tbc_evaluate(
    kind: &ManeuverKind,
    x: &DroneState,
    tau: f64,
    world: &World,
    timing: &TbcTiming,
    params: &DroneParams,
    gains: &BackupGains,
) -> DroneInput {
    if timing.maneuver <= 0.0 {
        // No maneuver window: the policy is the plain backup controller.
        backup_controller(x, world, params, gains)
    } else if tau <= timing.maneuver {
        maneuver_input(kind, x, params, gains)
    } else if tau <= timing.backup_start() {
        let u_m = maneuver_input(kind, x, params, gains);
        let u_b = backup_controller(x, world, params, gains);
        smooth_transition(u_m, u_b, tau, timing)
    } else {
        backup_controller(x, world, params, gains)
    }
}

/// Largest finite-difference rate `‖π(x, τ+h) − π(x, τ)‖∞ / h` over a sweep
/// of `τ ∈ [0, T]` at fixed `x`.
#[allow(clippy::too_many_arguments)]
pub fn tau_lipschitz(
    kind: &ManeuverKind,
    x: &DroneState,
    world: &World,
    timing: &TbcTiming,
    params: &DroneParams,
    gains: &BackupGains,
    h: f64,
) -> f64 {
    let n = (timing.horizon / h).ceil() as usize;
    let mut prev = tbc_evaluate(kind, x, 0.0, world, timing, params, gains);
    let mut worst = 0.0_f64;
    for k in 1..=n {
        let u = tbc_evaluate(kind, x, k as f64 * h, world, timing, params, gains);
        worst = worst.max(u.max_abs_diff(&prev) / h);
        prev = u;
    }
    worst
}

/// Level attitude with the given yaw.
pub fn yawed(yaw: f64) -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(Vec3::Z, yaw)
}
