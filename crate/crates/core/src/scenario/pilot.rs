//! Scripted and live pilot command sources.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rigid_body::{DroneState, Vec3};
use crate::tbc_policies::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub t_start: f64,
    pub v_des: Vec3,
    #[serde(default)]
    pub yaw_rate: f64,
}

/// Scripted stand-in for a human pilot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PilotScript {
    Constant {
        v_des: Vec3,
        #[serde(default)]
        yaw_rate: f64,
    },
    /// The command of the last segment whose `t_start` is not after `t`;
    /// hover before the first segment.
    Piecewise { segments: Vec<Segment> },
    /// Flies through `points` in order with a proportional velocity command,
    /// then holds the last point.
    Waypoint {
        points: Vec<Vec3>,
        gain: f64,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
}

fn default_tolerance() -> f64 {
    0.2
}

impl Default for PilotScript {
    fn default() -> Self {
        PilotScript::Constant { v_des: Vec3::ZERO, yaw_rate: 0.0 }
    }
}

impl PilotScript {
    pub fn validate(&self, errs: &mut Vec<ConfigError>, ctx: &str) {
        match self {
            PilotScript::Constant { v_des, yaw_rate } => {
                if !v_des.is_finite() || !yaw_rate.is_finite() {
                    errs.push(ConfigError::invalid(ctx, "pilot", "command must be finite"));
                }
            }
            PilotScript::Piecewise { segments } => {
                if segments.iter().any(|s| !s.t_start.is_finite() || !s.v_des.is_finite() || !s.yaw_rate.is_finite()) {
                    errs.push(ConfigError::invalid(ctx, "pilot.segments", "values must be finite"));
                }
                if segments.windows(2).any(|w| !(w[1].t_start > w[0].t_start)) {
                    errs.push(ConfigError::invalid(ctx, "pilot.segments", "t_start must be strictly increasing"));
                }
            }
            PilotScript::Waypoint { points, gain, tolerance } => {
                if points.is_empty() {
                    errs.push(ConfigError::invalid(ctx, "pilot.points", "at least one waypoint is required"));
                }
                if points.iter().any(|p| !p.is_finite()) {
                    errs.push(ConfigError::invalid(ctx, "pilot.points", "must be finite"));
                }
                if !(*gain > 0.0) || !gain.is_finite() {
                    errs.push(ConfigError::invalid(ctx, "pilot.gain", "must be finite and > 0"));
                }
                if !(*tolerance > 0.0) || !tolerance.is_finite() {
                    errs.push(ConfigError::invalid(ctx, "pilot.tolerance", "must be finite and > 0"));
                }
            }
        }
    }
}

/// Evaluates a [`PilotScript`] over time, keeping waypoint progress.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRunner {
    script: PilotScript,
    next_waypoint: usize,
}

impl PilotRunner {
    pub fn new(script: PilotScript) -> Self {
        Self { script, next_waypoint: 0 }
    }

    /// Raw (unclamped) command at time `t` for a vehicle in state `x`.
    pub fn command(&mut self, t: f64, x: &DroneState) -> VelocityCommand {
        match &self.script {
            PilotScript::Constant { v_des, yaw_rate } => VelocityCommand::new(*v_des, *yaw_rate),
            PilotScript::Piecewise { segments } => segments
                .iter()
                .take_while(|s| s.t_start <= t)
                .last()
                .map_or_else(VelocityCommand::hover, |s| VelocityCommand::new(s.v_des, s.yaw_rate)),
            PilotScript::Waypoint { points, gain, tolerance } => {
                while self.next_waypoint + 1 < points.len()
                    && (points[self.next_waypoint] - x.p).norm() < *tolerance
                {
                    self.next_waypoint += 1;
                }
                let target = points[self.next_waypoint];
                VelocityCommand::new((target - x.p) * *gain, 0.0)
            }
        }
    }
}

/// Zero-order hold of live commands with a staleness fallback to hover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandHold {
    latest: Option<(f64, VelocityCommand)>,
    pub max_age: f64,
}

impl CommandHold {
    pub fn new(max_age: f64) -> Self {
        Self { latest: None, max_age }
    }

    pub fn receive(&mut self, t: f64, cmd: VelocityCommand) {
        self.latest = Some((t, cmd));
    }

    /// Latest command if it is at most `max_age` old, hover otherwise.
    pub fn command(&self, t: f64) -> VelocityCommand {
        match self.latest {
            Some((t_rx, cmd)) if t - t_rx <= self.max_age => cmd,
            _ => VelocityCommand::hover(),
        }
    }
}

/// Compresses a per-tick command log into piecewise segments that replay
/// it exactly when evaluated at `tick · period`.
pub fn commands_to_script(ticks: &[(u64, VelocityCommand)], period: f64) -> PilotScript {
    let mut segments: Vec<Segment> = Vec::new();
    let mut last: Option<VelocityCommand> = None;
    for &(tick, cmd) in ticks {
        if last != Some(cmd) {
            segments.push(Segment { t_start: tick as f64 * period, v_des: cmd.v_des, yaw_rate: cmd.yaw_rate });
            last = Some(cmd);
        }
    }
    PilotScript::Piecewise { segments }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_picks_latest_started_segment() {
        let s = PilotScript::Piecewise {
            segments: vec![
                Segment { t_start: 1.0, v_des: Vec3::X, yaw_rate: 0.0 },
                Segment { t_start: 2.0, v_des: -Vec3::X, yaw_rate: 0.5 },
            ],
        };
        let mut r = PilotRunner::new(s);
        let x = DroneState::default();
        assert_eq!(r.command(0.5, &x), VelocityCommand::hover());
        assert_eq!(r.command(1.0, &x).v_des, Vec3::X);
        assert_eq!(r.command(2.5, &x), VelocityCommand::new(-Vec3::X, 0.5));
    }

    #[test]
    fn piecewise_must_increase() {
        let s = PilotScript::Piecewise {
            segments: vec![
                Segment { t_start: 1.0, v_des: Vec3::X, yaw_rate: 0.0 },
                Segment { t_start: 1.0, v_des: Vec3::X, yaw_rate: 0.0 },
            ],
        };
        let mut errs = Vec::new();
        s.validate(&mut errs, "agents[0]");
        assert_eq!(errs.len(), 1);
    }

    #[test]
    fn waypoints_advance() {
        let mut r = PilotRunner::new(PilotScript::Waypoint {
            points: vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)],
            gain: 1.0,
            tolerance: 0.2,
        });
        let far = DroneState::default();
        assert_eq!(r.command(0.0, &far).v_des, Vec3::X);
        let near = DroneState::at_rest(Vec3::new(0.9, 0.0, 0.0));
        let c = r.command(1.0, &near);
        assert!((c.v_des - Vec3::new(0.1, 1.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn hold_falls_back_to_hover() {
        let mut h = CommandHold::new(0.5);
        assert_eq!(h.command(0.0), VelocityCommand::hover());
        let cmd = VelocityCommand::new(Vec3::X, 0.0);
        h.receive(1.0, cmd);
        assert_eq!(h.command(1.5), cmd);
        assert_eq!(h.command(1.51), VelocityCommand::hover());
    }

    #[test]
    fn command_log_replays_exactly() {
        let period = 0.01;
        let log: Vec<(u64, VelocityCommand)> = (0..300)
            .map(|k| (k, VelocityCommand::new(Vec3::new((k / 37) as f64 * 0.3, 0.0, 0.0), 0.0)))
            .collect();
        let mut r = PilotRunner::new(commands_to_script(&log, period));
        for &(k, cmd) in &log {
            assert_eq!(r.command(k as f64 * period, &DroneState::default()), cmd);
        }
    }
}
