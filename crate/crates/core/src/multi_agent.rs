//! Decentralized multi-agent filtering.
//!
//! Every agent broadcasts its state and active TBC (maneuver, bound
//! context, phase, vehicle model). Each agent then rolls out the joint
//! system, itself under its own candidate policy and every peer under the
//! peer's broadcast policy, and includes the pairwise barriers in its
//! rollout checks.
//!
//! A control period is a synchronized round:
//!
//! 1. snapshot every agent;
//! 2. every agent decides its maneuver bookkeeping against the snapshot,
//!    with peers advanced one period along their broadcast policies;
//! 3. the new bookkeeping is broadcast;
//! 4. every agent rolls out the committed joint policy, regulates its
//!    pilot input, and integrates one period.
//!
//! No agent observes another agent's same-round update before step 3, so
//! the result is independent of agent order.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::{integrate_step, DroneState, Vec3};
use crate::safety_filter::{
    decide, finish_step, rollout, FilterConfig, FilterState, RolloutResult, Telemetry, VehicleModel,
};
use crate::safety_sets::World;
use crate::tbc_policies::{tbc_evaluate, ManeuverKind, ManeuverTemplate, VelocityCommand};

/// Broadcast record of one agent at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub tick: u64,
    pub id: u32,
    pub state: DroneState,
    pub maneuver_idx: usize,
    pub maneuver_ctx: ManeuverKind,
    pub phase: f64,
    pub vehicle: VehicleModel,
}

/// Peers visible to one agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoAgentModel {
    pub snapshots: Vec<AgentSnapshot>,
}

impl CoAgentModel {
    /// All snapshots except `self_id`'s.
    pub fn excluding(all: &[AgentSnapshot], self_id: u32) -> Self {
        Self { snapshots: all.iter().filter(|s| s.id != self_id).copied().collect() }
    }

    fn advanced(mut self, dt: f64) -> Self {
        for s in &mut self.snapshots {
            s.phase += dt;
        }
        self
    }
}

/// Rolls out `me` under its broadcast policy together with every peer.
pub fn joint_rollout(
    me: &AgentSnapshot,
    co: &CoAgentModel,
    world: &World,
    cfg: &FilterConfig,
) -> Result<RolloutResult> {
    if let Some(s) = co.snapshots.iter().find(|s| s.tick != me.tick) {
        return Err(Error::StaleSnapshot { expected: me.tick, agent: s.id, found: s.tick });
    }
    debug_assert!(co.snapshots.iter().all(|s| s.id != me.id));
    Ok(rollout(&me.state, &me.maneuver_ctx, me.phase, world, cfg, &me.vehicle, co))
}

/// One simulated vehicle with its filter memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub state: DroneState,
    pub filter: FilterState,
    pub maneuvers: Vec<ManeuverTemplate>,
    pub vehicle: VehicleModel,
}

impl Agent {
    pub fn snapshot(&self, tick: u64) -> AgentSnapshot {
        AgentSnapshot {
            tick,
            id: self.id,
            state: self.state,
            maneuver_idx: self.filter.maneuver_idx,
            maneuver_ctx: self.filter.maneuver_ctx,
            phase: self.filter.phase,
            vehicle: self.vehicle,
        }
    }
}

/// Advances every agent by one control period over a lossless, synchronous
/// broadcast.
///
/// `pilots[i]` is the (already clamped) pilot command of `agents[i]`.
/// Returns one telemetry record per agent, in input order, stamped with
/// the time at the start of the period.
pub fn tick(
    agents: &mut [Agent],
    pilots: &[VelocityCommand],
    world: &World,
    cfg: &FilterConfig,
    tick_idx: u64,
    t: f64,
) -> Vec<Telemetry> {
    tick_with(agents, pilots, world, cfg, tick_idx, t, &mut Broadcast::Perfect)
}

/// [`tick`] over an arbitrary broadcast channel.
pub fn tick_with(
    agents: &mut [Agent],
    pilots: &[VelocityCommand],
    world: &World,
    cfg: &FilterConfig,
    tick_idx: u64,
    t: f64,
    net: &mut Broadcast,
) -> Vec<Telemetry> {
    assert_eq!(agents.len(), pilots.len(), "one pilot command per agent");
    let pre: Vec<AgentSnapshot> = agents.iter().map(|a| a.snapshot(tick_idx)).collect();

    let decision_views: Vec<CoAgentModel> = match net {
        Broadcast::Perfect => pre
            .iter()
            .map(|s| CoAgentModel::excluding(&pre, s.id).advanced(cfg.period))
            .collect(),
        Broadcast::Faulty(link) => {
            link.prime(&pre);
            pre.iter().map(|s| link.view(s.id, tick_idx, world, cfg)).collect()
        }
    };

    let decisions: Vec<_> = agents
        .par_iter()
        .zip(pilots.par_iter())
        .zip(decision_views.into_par_iter())
        .map(|((a, &pilot), co)| {
            let t0 = Instant::now();
            let d = decide(&a.filter, &a.state, pilot, &a.maneuvers, world, cfg, &a.vehicle, &co);
            (d, t0.elapsed())
        })
        .collect();

    let committed: Vec<AgentSnapshot> = agents
        .iter()
        .zip(&decisions)
        .map(|(a, (d, _))| AgentSnapshot {
            maneuver_idx: d.state.maneuver_idx,
            maneuver_ctx: d.state.maneuver_ctx,
            phase: d.state.phase,
            ..a.snapshot(tick_idx)
        })
        .collect();

    let commit_views: Vec<CoAgentModel> = match net {
        Broadcast::Perfect => committed.iter().map(|s| CoAgentModel::excluding(&committed, s.id)).collect(),
        Broadcast::Faulty(link) => {
            link.send(&committed, tick_idx);
            committed.iter().map(|s| link.view(s.id, tick_idx, world, cfg)).collect()
        }
    };

    let results: Vec<(FilterState, Telemetry)> = agents
        .par_iter()
        .zip(pilots.par_iter())
        .zip(decisions.into_par_iter().zip(commit_views.into_par_iter()))
        .map(|((a, &pilot), ((d, decide_time), co))| {
            let t0 = Instant::now();
            let (fs, mut tel) = finish_step(&a.filter, d, &a.state, t, a.id, pilot, world, cfg, &a.vehicle, &co);
            tel.filter_nanos = (decide_time + t0.elapsed()).as_nanos() as u64;
            (fs, tel)
        })
        .collect();

    let mut out = Vec::with_capacity(agents.len());
    for (a, (fs, tel)) in agents.iter_mut().zip(results) {
        a.filter = fs;
        a.state = integrate_step(&a.state, &tel.u_act, cfg.period, &a.vehicle.params);
        out.push(tel);
    }
    out
}

/// Broadcast channel between agents.
#[derive(Debug, Clone)]
pub enum Broadcast {
    /// Every snapshot reaches every peer within the same round.
    Perfect,
    /// Lossy, delayed delivery. Safety guarantees do not cover this mode.
    Faulty(FaultyLink),
}

/// Drops each committed snapshot with probability `drop_probability` and
/// delivers the rest `delay_ticks` rounds late. Receivers dead-reckon the
/// latest delivered snapshot of each peer along its broadcast policy.
#[derive(Debug, Clone)]
pub struct FaultyLink {
    pub drop_probability: f64,
    pub delay_ticks: u64,
    seed: u64,
    in_flight: BTreeMap<(u32, u32), VecDeque<(u64, AgentSnapshot)>>,
    latest: BTreeMap<(u32, u32), AgentSnapshot>,
}

impl FaultyLink {
    pub fn new(drop_probability: f64, delay_ticks: u64, seed: u64) -> Self {
        Self { drop_probability, delay_ticks, seed, in_flight: BTreeMap::new(), latest: BTreeMap::new() }
    }

    /// Initial states are known to everyone.
    fn prime(&mut self, pre: &[AgentSnapshot]) {
        for r in pre {
            for s in pre.iter().filter(|s| s.id != r.id) {
                self.latest.entry((r.id, s.id)).or_insert(*s);
            }
        }
    }

    fn dropped(&self, tick: u64, receiver: u32, sender: u32) -> bool {
        if self.drop_probability <= 0.0 {
            return false;
        }
        // Seeded per message so the outcome does not depend on agent order.
        let key = self.seed
            ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (u64::from(receiver) << 32 | u64::from(sender)).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        ChaCha8Rng::seed_from_u64(key).gen::<f64>() < self.drop_probability
    }

    fn send(&mut self, committed: &[AgentSnapshot], tick: u64) {
        for r in committed {
            for s in committed.iter().filter(|s| s.id != r.id) {
                if !self.dropped(tick, r.id, s.id) {
                    self.in_flight.entry((r.id, s.id)).or_default().push_back((tick + self.delay_ticks, *s));
                }
            }
        }
        for (key, queue) in self.in_flight.iter_mut() {
            while queue.front().is_some_and(|(due, _)| *due <= tick) {
                let (_, snap) = queue.pop_front().expect("front checked");
                self.latest.insert(*key, snap);
            }
        }
    }

    fn view(&self, receiver: u32, tick: u64, world: &World, cfg: &FilterConfig) -> CoAgentModel {
        let snapshots = self
            .latest
            .iter()
            .filter(|((r, _), _)| *r == receiver)
            .map(|(_, s)| dead_reckon(s, tick, world, cfg))
            .collect();
        CoAgentModel { snapshots }
    }
}

/// Propagates a snapshot along its own policy up to `tick`.
fn dead_reckon(s: &AgentSnapshot, tick: u64, world: &World, cfg: &FilterConfig) -> AgentSnapshot {
    let mut out = *s;
    for _ in s.tick..tick {
        let m = &out.vehicle;
        let u = tbc_evaluate(&out.maneuver_ctx, &out.state, out.phase, world, &cfg.timing, &m.params, &m.gains);
        out.state = integrate_step(&out.state, &u, cfg.period, &m.params);
        out.phase += cfg.period;
    }
    out.tick = tick;
    out
}

/// Deadlock assessment over the final window of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlockReport {
    pub window_start: f64,
    pub window_end: f64,
    pub max_speed: f64,
    /// Per agent: displacement over the window along the commanded direction.
    pub progress: Vec<(u32, f64)>,
    pub deadlocked: bool,
}

/// One `(t, agent, position, velocity, command)` sample for deadlock checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub t: f64,
    pub agent_id: u32,
    pub p: Vec3,
    pub v: Vec3,
    pub v_cmd: Vec3,
}

/// Flags a deadlock when, over the final `window` seconds, every agent is
/// slower than `1.5·v_stop` and none made more than 0.1 m of progress
/// along its commanded direction.
pub fn deadlock_metric(samples: &[MotionSample], v_stop: f64, window: f64) -> DeadlockReport {
    let t_end = samples.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    let t_start = t_end - window;
    let in_window: Vec<&MotionSample> = samples.iter().filter(|s| s.t >= t_start - 1e-9).collect();
    let max_speed = in_window.iter().map(|s| s.v.norm()).fold(0.0, f64::max);

    let mut ids: Vec<u32> = in_window.iter().map(|s| s.agent_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let progress: Vec<(u32, f64)> = ids
        .iter()
        .map(|&id| {
            let mine: Vec<&&MotionSample> = in_window.iter().filter(|s| s.agent_id == id).collect();
            // Integrate velocity along the instantaneous command direction.
            let mut prog = 0.0;
            for w in mine.windows(2) {
                if let Some(dir) = w[0].v_cmd.try_normalize(1e-9) {
                    prog += (w[1].p - w[0].p).dot(dir);
                }
            }
            (id, prog)
        })
        .collect();
    let deadlocked = max_speed < 1.5 * v_stop && progress.iter().all(|&(_, p)| p < 0.1);
    DeadlockReport { window_start: t_start, window_end: t_end, max_speed, progress, deadlocked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rigid_body::{DroneParams, Vec3};
    use crate::safety_filter::filter_step;
    use crate::safety_sets::BoxRegion;
    use crate::tbc_policies::BackupGains;

    fn world() -> World {
        World::new(BoxRegion::new(Vec3::new(0.0, 0.0, 2.0), Vec3::new(80.0, 10.0, 2.0)))
    }

    fn cfg() -> FilterConfig {
        FilterConfig { beta: 20.0, ..FilterConfig::default() }
    }

    fn agent(id: u32, p: Vec3, maneuvers: Vec<ManeuverTemplate>) -> Agent {
        let x = DroneState::at_rest(p);
        let filter = FilterState::new(&maneuvers, &x, VelocityCommand::hover(), &cfg());
        Agent {
            id,
            state: x,
            filter,
            maneuvers,
            vehicle: VehicleModel { params: DroneParams::default(), gains: BackupGains::default() },
        }
    }

    #[test]
    fn far_apart_agents_match_single_agent_rollout() {
        let a = agent(0, Vec3::new(-50.0, 0.0, 2.0), vec![ManeuverTemplate::CarryOn]);
        let b = agent(1, Vec3::new(50.0, 0.0, 2.0), vec![ManeuverTemplate::evade_up(1.0, 1.0)]);
        let sa = a.snapshot(3);
        let co = CoAgentModel { snapshots: vec![b.snapshot(3)] };
        let joint = joint_rollout(&sa, &co, &world(), &cfg()).unwrap();
        let alone = joint_rollout(&sa, &CoAgentModel::default(), &world(), &cfg()).unwrap();
        assert_eq!(joint.h_i, alone.h_i);
        assert_eq!(joint.samples, alone.samples);
        assert!(joint.pair_min.unwrap() > 1000.0);
    }

    #[test]
    fn stale_snapshot_is_rejected() {
        let a = agent(0, Vec3::new(-5.0, 0.0, 2.0), vec![ManeuverTemplate::CarryOn]);
        let b = agent(1, Vec3::new(5.0, 0.0, 2.0), vec![ManeuverTemplate::CarryOn]);
        let co = CoAgentModel { snapshots: vec![b.snapshot(2)] };
        let err = joint_rollout(&a.snapshot(3), &co, &world(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::StaleSnapshot { expected: 3, agent: 1, found: 2 }));
    }

    #[test]
    fn peers_compute_identical_pairwise_minima() {
        let a = agent(0, Vec3::new(-2.0, 0.0, 2.0), vec![ManeuverTemplate::CarryOn]);
        let mut b = agent(1, Vec3::new(2.0, 0.0, 2.0), vec![ManeuverTemplate::evade_up(1.0, 1.0)]);
        b.state.v = Vec3::new(-1.0, 0.0, 0.0);
        let all = [a.snapshot(0), b.snapshot(0)];
        let ra = joint_rollout(&all[0], &CoAgentModel::excluding(&all, 0), &world(), &cfg()).unwrap();
        let rb = joint_rollout(&all[1], &CoAgentModel::excluding(&all, 1), &world(), &cfg()).unwrap();
        assert!((ra.pair_min.unwrap() - rb.pair_min.unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn single_agent_tick_matches_filter_step() {
        let mut agents = vec![agent(0, Vec3::new(0.0, 0.0, 2.0), vec![ManeuverTemplate::CarryOn])];
        let pilot = VelocityCommand::new(Vec3::new(1.0, 0.0, 0.0), 0.0);
        let a0 = agents[0].clone();
        let tel = tick(&mut agents, &[pilot], &world(), &cfg(), 0, 0.0);
        let (u, fs, tel1) = filter_step(&a0.filter, &a0.state, 0.0, pilot, &a0.maneuvers, &world(), &cfg(), &a0.vehicle);
        assert_eq!(tel[0].u_act, u);
        assert_eq!(agents[0].filter, fs);
        assert_eq!(tel[0].h_i, tel1.h_i);
    }

    #[test]
    fn deadlock_definition() {
        let mut parked = Vec::new();
        let mut moving = Vec::new();
        for k in 0..=1000 {
            let t = k as f64 * 0.01;
            for (id, x, cmd) in [(0, -1.0, 3.0), (1, 1.0, -1.0)] {
                parked.push(MotionSample { t, agent_id: id, p: Vec3::new(x, 0.0, 1.0), v: Vec3::ZERO, v_cmd: Vec3::new(cmd, 0.0, 0.0) });
                moving.push(MotionSample {
                    t,
                    agent_id: id,
                    p: Vec3::new(x + cmd * t, 0.0, 1.0),
                    v: Vec3::new(cmd, 0.0, 0.0),
                    v_cmd: Vec3::new(cmd, 0.0, 0.0),
                });
            }
        }
        assert!(deadlock_metric(&parked, 0.1, 5.0).deadlocked);
        let r = deadlock_metric(&moving, 0.1, 5.0);
        assert!(!r.deadlocked);
        assert!((r.progress[0].1 - 15.0).abs() < 1e-9);
    }
}
