//! Live-session wire format: one JSON object per WebSocket text frame.
//!
//! Client to server:
//!
//! ```json
//! {"type":"cmd","agent":0,"vx":1.0,"vy":0.0,"vz":0.0,"yaw_rate":0.0,"ts":1234}
//! ```
//!
//! Server to client: `state` frames at the publish rate, one `world` frame
//! on connect, and `error` replies to frames that cannot be used.

use serde::{Deserialize, Serialize};

use crate::multi_agent::Agent;
use crate::rigid_body::Vec3;
use crate::safety_sets::{SphereObstacle, World};
use crate::tbc_policies::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientCommand {
    pub agent: u32,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    /// Client clock (ms); informational only.
    #[serde(default)]
    pub ts: f64,
}

impl ClientCommand {
    pub fn command(&self) -> VelocityCommand {
        VelocityCommand::new(Vec3::new(self.vx, self.vy, self.vz), self.yaw_rate)
    }
}

/// Result of decoding one client frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Command(ClientCommand),
    /// Well-formed JSON object with a `type` we do not handle.
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unknown agent {0}")]
    UnknownAgent(u32),
    #[error("agent {0} is not pilot-controlled")]
    NotPilotAgent(u32),
    #[error("non-finite command component")]
    NonFinite,
}

#[derive(Deserialize)]
struct Tagged {
    #[serde(rename = "type")]
    kind: String,
}

/// Decodes a client text frame.
pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Tagged { kind } = Tagged::deserialize(&value).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match kind.as_str() {
        "cmd" => {
            let mut obj = value;
            if let Some(m) = obj.as_object_mut() {
                m.remove("type");
            }
            let cmd: ClientCommand = serde_json::from_value(obj).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
            if ![cmd.vx, cmd.vy, cmd.vz, cmd.yaw_rate].iter().all(|c| c.is_finite()) {
                return Err(ProtocolError::NonFinite);
            }
            Ok(ClientMessage::Command(cmd))
        }
        _ => Ok(ClientMessage::Unknown(kind)),
    }
}

pub fn encode_client(cmd: &ClientCommand) -> String {
    let mut v = serde_json::to_value(cmd).expect("plain struct");
    v.as_object_mut().expect("object").insert("type".into(), "cmd".into());
    v.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub id: u32,
    pub p: Vec3,
    pub q: [f64; 4],
    pub v: Vec3,
    pub h_i: f64,
    pub lambda: f64,
    pub phase: f64,
    pub maneuver: usize,
}

impl AgentFrame {
    pub fn from_agent(a: &Agent) -> Self {
        Self {
            id: a.id,
            p: a.state.p,
            q: a.state.q.to_array(),
            v: a.state.v,
            h_i: a.filter.last_h_i,
            lambda: a.filter.last_lambda,
            phase: a.filter.phase,
            maneuver: a.filter.maneuver_idx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        t: f64,
        agents: Vec<AgentFrame>,
    },
    World {
        center: Vec3,
        half_extents: Vec3,
        obstacles: Vec<SphereObstacle>,
        agent_radius: f64,
        v_stop: f64,
        v_cmd_max: f64,
        pilot_agent: Option<u32>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn world(world: &World, v_cmd_max: f64, pilot_agent: Option<u32>) -> Self {
        ServerMessage::World {
            center: world.geofence.center,
            half_extents: world.geofence.half_extents,
            obstacles: world.obstacles.clone(),
            agent_radius: world.agent_radius,
            v_stop: world.v_stop,
            v_cmd_max,
            pilot_agent,
        }
    }

    pub fn error(e: impl std::fmt::Display) -> Self {
        ServerMessage::Error { message: e.to_string() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_command() {
        let m = parse_client(r#"{"type":"cmd","agent":0,"vx":1.5,"vy":0,"vz":-0.5,"yaw_rate":0.1,"ts":12}"#).unwrap();
        match m {
            ClientMessage::Command(c) => {
                assert_eq!(c.agent, 0);
                assert_eq!(c.command().v_des, Vec3::new(1.5, 0.0, -0.5));
                assert_eq!(c.ts, 12.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_type_and_malformed_frames() {
        assert_eq!(parse_client(r#"{"type":"ping"}"#).unwrap(), ClientMessage::Unknown("ping".into()));
        assert!(matches!(parse_client("not json"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(parse_client(r#"{"agent":0}"#), Err(ProtocolError::Malformed(_))));
        assert!(matches!(parse_client(r#"{"type":"cmd","agent":0}"#), Err(ProtocolError::Malformed(_))));
        assert!(matches!(
            parse_client(r#"{"type":"cmd","agent":0,"vx":1,"vy":0,"vz":0,"extra":1}"#),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(parse_client(r#"{"type":"cmd","agent":-1,"vx":1,"vy":0,"vz":0}"#), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn command_round_trip() {
        let c = ClientCommand { agent: 3, vx: 0.1, vy: -2.0, vz: 1e-7, yaw_rate: 0.25, ts: 99.0 };
        assert_eq!(parse_client(&encode_client(&c)).unwrap(), ClientMessage::Command(c));
    }

    #[test]
    fn state_frame_shape() {
        let msg = ServerMessage::State {
            t: 0.5,
            agents: vec![AgentFrame {
                id: 0,
                p: Vec3::new(1.0, 2.0, 3.0),
                q: [1.0, 0.0, 0.0, 0.0],
                v: Vec3::ZERO,
                h_i: 0.1,
                lambda: 0.9,
                phase: 0.2,
                maneuver: 0,
            }],
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["agents"][0]["p"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["agents"][0]["maneuver"], 0);
        assert!(v["agents"][0].get("h_i").is_some());
    }
}
