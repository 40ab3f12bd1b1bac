//! Fixed-step batch and live simulation driver.

use crate::error::Result;
use crate::multi_agent::{tick_with, Agent, Broadcast, FaultyLink};
use crate::rigid_body::DroneState;
use crate::safety_filter::{FilterConfig, FilterState, Telemetry, VehicleModel};
use crate::safety_sets::World;
use crate::scenario::config::ScenarioConfig;
use crate::scenario::pilot::{commands_to_script, PilotRunner};
use crate::scenario::trace::{CommandRow, TimingRow, TraceRow, TraceSet};
use crate::tbc_policies::VelocityCommand;

/// Everything produced by one control period.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    /// State at the start of the period with the input applied over it.
    pub rows: Vec<TraceRow>,
    pub commands: Vec<CommandRow>,
    pub telemetry: Vec<Telemetry>,
}

/// A scenario in progress. Time advances only through [`Simulation::step`],
/// so the same inputs always produce the same trajectory.
pub struct Simulation {
    cfg: ScenarioConfig,
    world: World,
    filter: FilterConfig,
    agents: Vec<Agent>,
    pilots: Vec<PilotRunner>,
    net: Broadcast,
    tick: u64,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.world();
        let filter = cfg.filter_config();
        let mut pilots: Vec<PilotRunner> = cfg.agents.iter().map(|a| PilotRunner::new(a.pilot.clone())).collect();
        let agents = cfg
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let x0: DroneState = a.initial_state();
                let pilot = pilots[i].command(0.0, &x0).clamped(a.v_cmd_max);
                Agent {
                    id: cfg.agent_id(i),
                    state: x0,
                    filter: FilterState::new(&a.maneuvers, &x0, pilot, &filter),
                    maneuvers: a.maneuvers.clone(),
                    vehicle: VehicleModel { params: a.params, gains: a.gains },
                }
            })
            .collect();
        // Waypoint progress must not depend on the probe above.
        for (p, a) in pilots.iter_mut().zip(&cfg.agents) {
            *p = PilotRunner::new(a.pilot.clone());
        }
        let net = if cfg.faults.is_active() {
            Broadcast::Faulty(FaultyLink::new(cfg.faults.drop_probability, cfg.faults.delay_ticks, cfg.seed))
        } else {
            Broadcast::Perfect
        };
        Ok(Self { cfg, world, filter, agents, pilots, net, tick: 0 })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn filter_config(&self) -> &FilterConfig {
        &self.filter
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Simulated time at the start of the next period.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.filter.period
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.cfg.total_ticks()
    }

    /// Index of the agent with the given id.
    pub fn agent_index(&self, id: u32) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    /// Advances one control period. `live` replaces the scripted pilot of
    /// one agent (by index) for this period.
    pub fn step(&mut self, live: Option<(usize, VelocityCommand)>) -> TickRecord {
        let t = self.time();
        let pilots: Vec<VelocityCommand> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let scripted = self.pilots[i].command(t, &a.state);
                let raw = match live {
                    Some((j, cmd)) if j == i => cmd,
                    _ => scripted,
                };
                raw.clamped(self.cfg.agents[i].v_cmd_max)
            })
            .collect();
        let before: Vec<DroneState> = self.agents.iter().map(|a| a.state).collect();
        let telemetry = tick_with(&mut self.agents, &pilots, &self.world, &self.filter, self.tick, t, &mut self.net);

        let rows = before.iter().zip(&telemetry).map(|(x, tel)| TraceRow::new(x, tel)).collect();
        let commands = self
            .agents
            .iter()
            .zip(&pilots)
            .map(|(a, c)| CommandRow::new(self.tick, t, a.id, c))
            .collect();
        let record = TickRecord { tick: self.tick, t, rows, commands, telemetry };
        self.tick += 1;
        record
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TraceSet> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut out = TraceSet::new(cfg.clone());
    while !sim.is_finished() {
        out.push(sim.step(None));
    }
    Ok(out)
}

/// Copy of `cfg` whose agent `agent_id` replays a recorded command log and
/// whose duration covers exactly the recorded periods.
pub fn with_recorded_pilot(cfg: &ScenarioConfig, commands: &[CommandRow], agent_id: u32) -> ScenarioConfig {
    let mut out = cfg.clone();
    let log: Vec<(u64, VelocityCommand)> =
        commands.iter().filter(|c| c.agent_id == agent_id).map(|c| (c.tick, c.command())).collect();
    let ticks = commands.iter().map(|c| c.tick + 1).max().unwrap_or(0);
    let period = cfg.filter.period;
    if let Some(i) = (0..cfg.agents.len()).find(|&i| cfg.agent_id(i) == agent_id) {
        out.agents[i].pilot = commands_to_script(&log, period);
    }
    out.duration = ticks as f64 * period;
    out
}

impl TraceSet {
    pub fn push(&mut self, rec: TickRecord) {
        self.timing.extend(rec.telemetry.iter().map(TimingRow::from));
        self.rows.extend(rec.rows);
        self.commands.extend(rec.commands);
        self.telemetry.extend(rec.telemetry);
    }
}
