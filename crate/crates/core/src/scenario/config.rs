//! Scenario files.
//!
//! A scenario is a TOML document with top-level `duration`, `seed` and
//! the sections `[world]`, `[filter]`, `[faults]` and `[[agents]]`.
//! Unknown keys are rejected. Dotted `key=value` overrides are applied to
//! the TOML tree before it is decoded, e.g. `filter.maneuver_time=0` or
//! `agents.1.pilot.v_des=[-1,0,0]`.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ConfigErrors, Error, Result};
use crate::rigid_body::{DroneParams, DroneState, Vec3};
use crate::safety_filter::FilterConfig;
use crate::safety_sets::{BoxRegion, SphereObstacle, World};
use crate::scenario::pilot::PilotScript;
use crate::tbc_policies::{yawed, BackupGains, ManeuverTemplate, TbcTiming};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated time (s).
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fail the run when the true trajectory leaves the safe set by more
    /// than the safety tolerance.
    #[serde(default)]
    pub assert_safety: bool,
    pub world: WorldSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub faults: FaultSection,
    pub agents: Vec<AgentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub center: Vec3,
    pub half_extents: Vec3,
    #[serde(default)]
    pub obstacles: Vec<SphereObstacle>,
    #[serde(default = "default_agent_radius")]
    pub agent_radius: f64,
    #[serde(default = "default_v_stop")]
    pub v_stop: f64,
}

fn default_agent_radius() -> f64 {
    0.25
}

fn default_v_stop() -> f64 {
    0.1
}

impl WorldSection {
    pub fn to_world(&self) -> World {
        World {
            geofence: BoxRegion::new(self.center, self.half_extents),
            obstacles: self.obstacles.clone(),
            agent_radius: self.agent_radius,
            v_stop: self.v_stop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub horizon: f64,
    pub maneuver_time: f64,
    pub smoothing_time: f64,
    pub period: f64,
    pub dt_roll: f64,
    pub beta: f64,
    pub epsilon_margin: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            horizon: f.timing.horizon,
            maneuver_time: f.timing.maneuver,
            smoothing_time: f.timing.smoothing,
            period: f.period,
            dt_roll: f.dt_roll,
            beta: f.beta,
            epsilon_margin: f.epsilon_margin,
        }
    }
}

impl FilterSection {
    pub fn to_config(&self) -> FilterConfig {
        FilterConfig {
            timing: TbcTiming::new(self.maneuver_time, self.smoothing_time, self.horizon),
            period: self.period,
            dt_roll: self.dt_roll,
            beta: self.beta,
            epsilon_margin: self.epsilon_margin,
        }
    }
}

/// Broadcast fault injection between agents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    pub drop_probability: f64,
    pub delay_ticks: u64,
}

impl FaultSection {
    pub fn is_active(&self) -> bool {
        self.drop_probability > 0.0 || self.delay_ticks > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Defaults to the position in the agent list.
    #[serde(default)]
    pub id: Option<u32>,
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
    /// Initial heading (rad); the vehicle starts level with zero body rate.
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub pilot: PilotScript,
    #[serde(default = "default_maneuvers")]
    pub maneuvers: Vec<ManeuverTemplate>,
    #[serde(default)]
    pub gains: BackupGains,
    #[serde(default)]
    pub params: DroneParams,
    /// Pilot command speed limit (m/s).
    #[serde(default = "default_v_cmd_max")]
    pub v_cmd_max: f64,
}

fn default_maneuvers() -> Vec<ManeuverTemplate> {
    vec![ManeuverTemplate::CarryOn]
}

fn default_v_cmd_max() -> f64 {
    4.0
}

impl AgentSection {
    pub fn initial_state(&self) -> DroneState {
        DroneState { p: self.position, q: yawed(self.yaw), v: self.velocity, w: Vec3::ZERO }
    }
}

impl ScenarioConfig {
    /// Parses and validates a scenario document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses a scenario, applies `key=value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Value = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: ScenarioConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    pub fn world(&self) -> World {
        self.world.to_world()
    }

    pub fn filter_config(&self) -> FilterConfig {
        self.filter.to_config()
    }

    pub fn agent_id(&self, idx: usize) -> u32 {
        self.agents[idx].id.unwrap_or(idx as u32)
    }

    /// Number of control periods in the run.
    pub fn total_ticks(&self) -> u64 {
        (self.duration / self.filter.period).round() as u64
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> std::result::Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            errs.push(ConfigError::invalid("", "duration", "must be finite and > 0"));
        }
        let world = self.world();
        world.validate(&mut errs);
        let filter = self.filter_config();
        filter.validate(&mut errs);
        if filter.period.is_finite() && filter.period > 0.0 && self.duration / filter.period > 1e8 {
            errs.push(ConfigError::invalid("", "duration", "too many control periods"));
        }
        if !(0.0..=1.0).contains(&self.faults.drop_probability) {
            errs.push(ConfigError::invalid("faults", "drop_probability", "must lie in [0, 1]"));
        }
        if self.faults.delay_ticks > 10_000 {
            errs.push(ConfigError::invalid("faults", "delay_ticks", "must be <= 10000"));
        }
        if self.agents.is_empty() {
            errs.push(ConfigError::invalid("", "agents", "at least one agent is required"));
        }
        let mut ids = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let ctx = format!("agents[{i}]");
            let id = self.agent_id(i);
            if ids.contains(&id) {
                errs.push(ConfigError::invalid(&ctx, "id", format!("duplicate agent id {id}")));
            }
            ids.push(id);
            if !a.position.is_finite() || !a.velocity.is_finite() || !a.yaw.is_finite() {
                errs.push(ConfigError::invalid(&ctx, "position", "initial state must be finite"));
            }
            if a.maneuvers.is_empty() {
                errs.push(ConfigError::invalid(&ctx, "maneuvers", "at least one maneuver is required"));
            }
            for (j, m) in a.maneuvers.iter().enumerate() {
                m.validate(&mut errs, &format!("{ctx}.maneuvers[{j}]"));
            }
            a.gains.validate(&mut errs, &format!("{ctx}.gains"));
            a.params.validate(&mut errs, &format!("{ctx}.params"));
            a.pilot.validate(&mut errs, &ctx);
            if !(a.v_cmd_max > 0.0) || !a.v_cmd_max.is_finite() {
                errs.push(ConfigError::invalid(&ctx, "v_cmd_max", "must be finite and > 0"));
            }
        }
        ConfigErrors::check(errs)
    }
}

/// Sets `path` (dot-separated, numeric segments index arrays) to `value`,
/// which is parsed as a TOML value and falls back to a plain string.
pub fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let bad = |msg: &str| Error::Override(spec.to_string(), msg.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(bad("empty key"));
    }
    let value = parse_override_value(raw.trim());

    let segments: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(Default::default()))
            }
            toml::Value::Array(a) => {
                let idx: usize = seg.parse().map_err(|_| bad("array segments must be indices"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| bad(&format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(&format!("`{seg}` is not inside a table or array"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

fn parse_override_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
duration = 1.0
[world]
center = [0.0, 0.0, 2.0]
half_extents = [5.0, 5.0, 2.0]
[[agents]]
position = [0.0, 0.0, 2.0]
"#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.filter, FilterSection::default());
        assert_eq!(c.agents[0].maneuvers, vec![ManeuverTemplate::CarryOn]);
        assert_eq!(c.total_ticks(), 100);
        assert_eq!(c.agent_id(0), 0);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Parse(_))));
        let text = MINIMAL.replace("[world]", "[world]\nradius = 3");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = MINIMAL.replace("duration = 1.0", "duration = -1.0").replace("[5.0, 5.0, 2.0]", "[5.0, 0.0, 2.0]");
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::Config(ConfigErrors(errs))) => {
                assert!(errs.iter().any(|e| e.field == "duration"));
                assert!(errs.iter().any(|e| e.field == "half_extents"));
            }
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn overrides_reach_nested_values() {
        let ov = vec![
            "filter.maneuver_time=0".to_string(),
            "agents.0.velocity=[1.0, 0.0, 0.0]".to_string(),
            "name=override_test".to_string(),
        ];
        let c = ScenarioConfig::from_toml_with_overrides(MINIMAL, &ov).unwrap();
        assert_eq!(c.filter.maneuver_time, 0.0);
        assert_eq!(c.agents[0].velocity, Vec3::X);
        assert_eq!(c.name, "override_test");
        assert!(ScenarioConfig::from_toml_with_overrides(MINIMAL, &["agents.3.yaw=1".into()]).is_err());
        assert!(ScenarioConfig::from_toml_with_overrides(MINIMAL, &["noequals".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let again = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
    }
}
