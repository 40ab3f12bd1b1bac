//! Trace files.
//!
//! A run directory holds
//!
//! - `trace.csv`: one row per agent per control period;
//! - `commands.csv`: the clamped pilot command each agent received;
//! - `timing.csv`: filter wall time per agent per period (varies run to run);
//! - `scenario.toml`: the resolved configuration.
//!
//! `trace.csv` and `commands.csv` are byte-identical across runs with the
//! same configuration and seed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::{DroneState, Vec3};
use crate::safety_filter::Telemetry;
use crate::scenario::config::ScenarioConfig;
use crate::tbc_policies::VelocityCommand;

pub const TRACE_FILE: &str = "trace.csv";
pub const COMMANDS_FILE: &str = "commands.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SCENARIO_FILE: &str = "scenario.toml";

pub const TRACE_COLUMNS: [&str; 26] = [
    "t", "agent_id", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz", "thrust_cmd",
    "wdes_x", "wdes_y", "wdes_z", "h_world", "h_I", "lambda", "phase", "maneuver_idx", "reset_flag", "switch_flag",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub t: f64,
    pub agent_id: u32,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub thrust_cmd: f64,
    pub wdes_x: f64,
    pub wdes_y: f64,
    pub wdes_z: f64,
    pub h_world: f64,
    #[serde(rename = "h_I")]
    pub h_i: f64,
    pub lambda: f64,
    pub phase: f64,
    pub maneuver_idx: usize,
    pub reset_flag: u8,
    pub switch_flag: u8,
}

impl TraceRow {
    pub fn new(x: &DroneState, tel: &Telemetry) -> Self {
        Self {
            t: tel.t,
            agent_id: tel.agent_id,
            px: x.p.x,
            py: x.p.y,
            pz: x.p.z,
            qw: x.q.w,
            qx: x.q.x,
            qy: x.q.y,
            qz: x.q.z,
            vx: x.v.x,
            vy: x.v.y,
            vz: x.v.z,
            wx: x.w.x,
            wy: x.w.y,
            wz: x.w.z,
            thrust_cmd: tel.u_act.thrust,
            wdes_x: tel.u_act.w_des.x,
            wdes_y: tel.u_act.w_des.y,
            wdes_z: tel.u_act.w_des.z,
            h_world: tel.h_world,
            h_i: tel.h_i,
            lambda: tel.lambda,
            phase: tel.phase,
            maneuver_idx: tel.maneuver_idx,
            reset_flag: tel.reset as u8,
            switch_flag: tel.switched as u8,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.px, self.py, self.pz)
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.vx, self.vy, self.vz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRow {
    pub tick: u64,
    pub t: f64,
    pub agent_id: u32,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl CommandRow {
    pub fn new(tick: u64, t: f64, agent_id: u32, c: &VelocityCommand) -> Self {
        Self { tick, t, agent_id, vx: c.v_des.x, vy: c.v_des.y, vz: c.v_des.z, yaw_rate: c.yaw_rate }
    }

    pub fn command(&self) -> VelocityCommand {
        VelocityCommand::new(Vec3::new(self.vx, self.vy, self.vz), self.yaw_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRow {
    pub t: f64,
    pub agent_id: u32,
    pub filter_nanos: u64,
}

impl From<&Telemetry> for TimingRow {
    fn from(tel: &Telemetry) -> Self {
        Self { t: tel.t, agent_id: tel.agent_id, filter_nanos: tel.filter_nanos }
    }
}

/// Output of a run. `telemetry` is only populated in memory; runs read
/// back from disk carry the CSV tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub scenario: ScenarioConfig,
    pub rows: Vec<TraceRow>,
    pub commands: Vec<CommandRow>,
    pub timing: Vec<TimingRow>,
    pub telemetry: Vec<Telemetry>,
}

impl TraceSet {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self { scenario, rows: Vec::new(), commands: Vec::new(), timing: Vec::new(), telemetry: Vec::new() }
    }

    /// Rows of one agent in time order.
    pub fn agent_rows(&self, agent_id: u32) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.agent_id == agent_id)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SCENARIO_FILE), self.scenario.to_toml_string())?;
        write_csv(&dir.join(TRACE_FILE), &self.rows, &TRACE_COLUMNS)?;
        write_csv(&dir.join(COMMANDS_FILE), &self.commands, &["tick", "t", "agent_id", "vx", "vy", "vz", "yaw_rate"])?;
        write_csv(&dir.join(TIMING_FILE), &self.timing, &["t", "agent_id", "filter_nanos"])?;
        Ok(())
    }

    /// Reads a run directory. `timing.csv` is optional.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let scenario_text = fs::read_to_string(dir.join(SCENARIO_FILE))?;
        let scenario = ScenarioConfig::from_toml_str(&scenario_text)?;
        let rows = read_trace(fs::File::open(dir.join(TRACE_FILE))?)?;
        let commands = read_rows(fs::File::open(dir.join(COMMANDS_FILE))?)?;
        let timing = match fs::File::open(dir.join(TIMING_FILE)) {
            Ok(f) => read_rows(f)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { scenario, rows, commands, timing, telemetry: Vec::new() })
    }
}

/// Writes `rows` with `header`; an empty table still gets its header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_csv_to(&mut f, rows, header)
}

pub fn write_csv_to<W: Write, T: Serialize>(out: W, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV, requiring the exact column order.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Trace(format!("unexpected trace header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let rows: Vec<TraceRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(w) = rows.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(Error::Trace(format!("time goes backwards at t = {}", w[1].t)));
    }
    Ok(rows)
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(input);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TraceRow {
        let tel = Telemetry {
            t,
            agent_id: 3,
            h_world: 1.5,
            h_i: 0.1,
            lambda: 0.25,
            phase: 0.7,
            maneuver_idx: 1,
            u_act: crate::rigid_body::DroneInput::new(9.81, Vec3::new(0.1, -0.2, 0.3)),
            u_tbc: Default::default(),
            reset: true,
            switched: false,
            switch_attempted: false,
            bookkeeping_jump: 0.0,
            rollout_pair_min: None,
            rollouts: 2,
            filter_nanos: 5,
        };
        TraceRow::new(&DroneState::at_rest(Vec3::new(1.0, 2.0, 3.0)), &tel)
    }

    #[test]
    fn header_matches_columns_and_round_trips() {
        let rows = vec![row(0.0), row(0.01)];
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &rows, &TRACE_COLUMNS).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(read_trace(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_csv_to::<_, TraceRow>(&mut buf, &[], &TRACE_COLUMNS).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn rejects_reordered_columns() {
        let text = "agent_id,t\n0,0\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Trace(_))));
    }
}
