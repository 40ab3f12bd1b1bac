//! Barrier functions for the safe set and the backup set.
//!
//! Every barrier is non-negative exactly on its set. Conjunctions of
//! constraints are taken as a pointwise minimum.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rigid_body::{DroneState, Vec3};

/// Axis-aligned geofence given by its center and half side lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl BoxRegion {
    pub fn new(center: Vec3, half_extents: Vec3) -> Self {
        Self { center, half_extents }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_extents.x
            && d.y.abs() <= self.half_extents.y
            && d.z.abs() <= self.half_extents.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereObstacle {
    pub center: Vec3,
    pub radius: f64,
}

/// Static environment shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub geofence: BoxRegion,
    #[serde(default)]
    pub obstacles: Vec<SphereObstacle>,
    /// Radius of the sphere modelling each agent (m).
    #[serde(default = "default_agent_radius")]
    pub agent_radius: f64,
    /// Speed defining the backup set (m/s).
    #[serde(default = "default_v_stop")]
    pub v_stop: f64,
}

fn default_agent_radius() -> f64 {
    0.25
}

fn default_v_stop() -> f64 {
    0.1
}

impl World {
    pub fn new(geofence: BoxRegion) -> Self {
        Self { geofence, obstacles: Vec::new(), agent_radius: 0.25, v_stop: 0.1 }
    }

    pub fn with_obstacle(mut self, obs: SphereObstacle) -> Self {
        self.obstacles.push(obs);
        self
    }

    pub fn validate(&self, errs: &mut Vec<ConfigError>) {
        let h = self.geofence.half_extents;
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || !h.is_finite() {
            errs.push(ConfigError::invalid("world", "half_extents", "all components must be finite and > 0"));
        }
        if !self.geofence.center.is_finite() {
            errs.push(ConfigError::invalid("world", "center", "must be finite"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !o.radius.is_finite() || !o.center.is_finite() {
                errs.push(ConfigError::invalid("world", &format!("obstacles[{i}]"), "radius must be > 0, values finite"));
            }
        }
        if !(self.agent_radius > 0.0) || !self.agent_radius.is_finite() {
            errs.push(ConfigError::invalid("world", "agent_radius", "must be finite and > 0"));
        }
        if !(self.v_stop > 0.0) || !self.v_stop.is_finite() {
            errs.push(ConfigError::invalid("world", "v_stop", "must be finite and > 0"));
        }
    }
}

/// `min_i { r_i² − (p_i − c_i)² }` over the three axes.
pub fn h_box(p: Vec3, b: &BoxRegion) -> f64 {
    let d = p - b.center;
    let r = b.half_extents;
    let hx = r.x * r.x - d.x * d.x;
    let hy = r.y * r.y - d.y * d.y;
    let hz = r.z * r.z - d.z * d.z;
    hx.min(hy).min(hz)
}

/// Inter-agent barrier `‖p_i − p_j‖² − 4r²`.
pub fn h_pair(p_i: Vec3, p_j: Vec3, r: f64) -> f64 {
    // Squared differences are sign-symmetric, so h_pair(a, b) == h_pair(b, a) bit-exactly.
    (p_i - p_j).norm_squared() - 4.0 * r * r
}

/// Obstacle barrier with the obstacle inflated by the agent radius.
pub fn h_sphere(p: Vec3, obs: &SphereObstacle, r: f64) -> f64 {
    let rr = obs.radius + r;
    (p - obs.center).norm_squared() - rr * rr
}

/// Backup-set barrier `v_stop − ‖v‖`.
pub fn h_backup(v: Vec3, v_stop: f64) -> f64 {
    -v.norm() + v_stop
}

/// Per-class breakdown of the safe-set barrier at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierBreakdown {
    pub geofence: f64,
    /// `None` when the world has no obstacles.
    pub obstacle: Option<f64>,
    /// `None` when there are no other agents.
    pub pair: Option<f64>,
}

impl BarrierBreakdown {
    pub fn min(&self) -> f64 {
        let mut h = self.geofence;
        if let Some(o) = self.obstacle {
            h = h.min(o);
        }
        if let Some(p) = self.pair {
            h = h.min(p);
        }
        h
    }
}

pub fn barrier_breakdown(p: Vec3, world: &World, others: &[Vec3]) -> BarrierBreakdown {
    let r = world.agent_radius;
    let obstacle = world.obstacles.iter().map(|o| h_sphere(p, o, r)).reduce(f64::min);
    let pair = others.iter().map(|&o| h_pair(p, o, r)).reduce(f64::min);
    BarrierBreakdown { geofence: h_box(p, &world.geofence), obstacle, pair }
}

/// Minimum over the geofence, every obstacle and every other agent.
pub fn h_world(x: &DroneState, world: &World, others: &[Vec3]) -> f64 {
    h_world_at(x.p, world, others)
}

/// Position-only form of [`h_world`].
pub fn h_world_at(p: Vec3, world: &World, others: &[Vec3]) -> f64 {
    let r = world.agent_radius;
    let mut h = h_box(p, &world.geofence);
    for o in &world.obstacles {
        h = h.min(h_sphere(p, o, r));
    }
    for &o in others {
        h = h.min(h_pair(p, o, r));
    }
    h
}
