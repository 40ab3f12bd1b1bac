//! Rollout-based safety filter.
//!
//! Each control period the filter
//!
//! 1. decides the maneuver bookkeeping: a single fresh rollout with the
//!    maneuver restarted from phase zero decides whether the phase may be
//!    reset. While the policy is in its pure-backup region the candidate is
//!    the next maneuver in cyclic order, otherwise it is the current one;
//! 2. rolls out the committed policy from the current phase to obtain the
//!    implicit barrier `h_I`;
//! 3. mixes the pilot input with the policy output using
//!    `λ = 1 − exp(−β·max(0, h_I))`.
//!
//! The phase is the time elapsed since the active maneuver was (re)started,
//! so the time offset of the policy is `τ₀ = t − phase`.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::multi_agent::CoAgentModel;
use crate::rigid_body::{clamp_input, integrate_step, DroneInput, DroneParams, DroneState, Vec3};
use crate::safety_sets::{h_backup, h_pair, h_world_at, World};
use crate::tbc_policies::{
    tbc_evaluate, velocity_controller, BackupGains, ManeuverKind, ManeuverTemplate, TbcTiming,
    VelocityCommand,
};

/// Phase comparisons tolerate accumulated rounding of repeated `+= Δ`.
const PHASE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub timing: TbcTiming,
    /// Control period Δ (s).
    pub period: f64,
    /// Rollout integration step (s).
    pub dt_roll: f64,
    /// Regulation sharpness β.
    pub beta: f64,
    /// Margin every rollout sample must clear for a reset to be accepted.
    pub epsilon_margin: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            timing: TbcTiming::new(0.5, 0.2, 2.0),
            period: 0.01,
            dt_roll: 0.02,
            beta: 2.0,
            epsilon_margin: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, errs: &mut Vec<ConfigError>) {
        self.timing.validate(errs);
        if !(self.period > 0.0) || !self.period.is_finite() {
            errs.push(ConfigError::invalid("filter", "period", "must be finite and > 0"));
        }
        if !(self.dt_roll > 0.0 && self.dt_roll <= 0.05) {
            errs.push(ConfigError::invalid("filter", "dt_roll", "must lie in (0, 0.05]"));
        } else if self.timing.horizon.is_finite() {
            let n = self.timing.horizon / self.dt_roll;
            if (n - n.round()).abs() > 1e-6 {
                errs.push(ConfigError::invalid("filter", "dt_roll", "horizon must be a whole number of rollout steps"));
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            errs.push(ConfigError::invalid("filter", "beta", "must be finite and > 0"));
        }
        if !(self.epsilon_margin >= 0.0) || !self.epsilon_margin.is_finite() {
            errs.push(ConfigError::invalid("filter", "epsilon_margin", "must be finite and >= 0"));
        }
    }

    pub fn rollout_steps(&self) -> usize {
        (self.timing.horizon / self.dt_roll).round() as usize
    }
}

/// Per-agent filter memory carried between control periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// Time since the active maneuver started (s).
    pub phase: f64,
    /// Zero-based index into the agent's maneuver list.
    pub maneuver_idx: usize,
    pub maneuver_ctx: ManeuverKind,
    pub last_h_i: f64,
    pub last_lambda: f64,
}

impl FilterState {
    /// Starts in the backup region of the last maneuver, so the first period
    /// tries the first maneuver from scratch.
    pub fn new(
        templates: &[ManeuverTemplate],
        x: &DroneState,
        pilot: VelocityCommand,
        cfg: &FilterConfig,
    ) -> Self {
        Self {
            phase: cfg.timing.backup_start(),
            maneuver_idx: templates.len() - 1,
            maneuver_ctx: templates[templates.len() - 1].instantiate(x, pilot),
            last_h_i: 0.0,
            last_lambda: 0.0,
        }
    }

    /// Time offset `τ₀ = t − phase`.
    pub fn tau0(&self, t: f64) -> f64 {
        t - self.phase
    }

    pub fn in_backup_region(&self, timing: &TbcTiming) -> bool {
        self.phase >= timing.backup_start() - PHASE_EPS
    }
}

/// Outcome of one closed-loop rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Minimum of the safe-set barrier over all samples.
    pub h_min: f64,
    /// Backup-set barrier at the final sample.
    pub h_terminal: f64,
    /// `min(h_min, h_terminal)`.
    pub h_i: f64,
    /// Minimum pairwise barrier against co-agents, if any.
    pub pair_min: Option<f64>,
    /// `(τ, state)` at every rollout step, `τ = 0` included.
    pub samples: Vec<(f64, DroneState)>,
}

impl RolloutResult {
    pub fn feasible(&self, margin: f64) -> bool {
        self.h_min >= margin && self.h_terminal >= 0.0
    }

    pub fn final_state(&self) -> &DroneState {
        &self.samples.last().expect("rollout has at least one sample").1
    }
}

/// The dynamic model and backup gains of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleModel {
    pub params: DroneParams,
    pub gains: BackupGains,
}

/// Integrates the closed loop under the TBC `kind` starting at phase
/// `phase0`, alongside every co-agent under its own broadcast TBC.
pub fn rollout(
    x0: &DroneState,
    kind: &ManeuverKind,
    phase0: f64,
    world: &World,
    cfg: &FilterConfig,
    vehicle: &VehicleModel,
    co: &CoAgentModel,
) -> RolloutResult {
    let steps = cfg.rollout_steps();
    let dt = cfg.dt_roll;
    let timing = &cfg.timing;
    let r = world.agent_radius;

    let mut x = *x0;
    let mut co_states: Vec<DroneState> = co.snapshots.iter().map(|s| s.state).collect();
    let mut others: Vec<Vec3> = co_states.iter().map(|s| s.p).collect();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut h_min = f64::INFINITY;
    let mut pair_min: Option<f64> = None;

    for k in 0..=steps {
        let tau = k as f64 * dt;
        samples.push((tau, x));
        h_min = h_min.min(h_world_at(x.p, world, &others));
        for &o in &others {
            let h = h_pair(x.p, o, r);
            pair_min = Some(pair_min.map_or(h, |m: f64| m.min(h)));
        }
        if k == steps {
            break;
        }
        let u = tbc_evaluate(kind, &x, phase0 + tau, world, timing, &vehicle.params, &vehicle.gains);
        x = integrate_step(&x, &u, dt, &vehicle.params);
        for (snap, cx) in co.snapshots.iter().zip(co_states.iter_mut()) {
            let m = &snap.vehicle;
            let uc = tbc_evaluate(&snap.maneuver_ctx, cx, snap.phase + tau, world, timing, &m.params, &m.gains);
            *cx = integrate_step(cx, &uc, dt, &m.params);
        }
        for (o, cx) in others.iter_mut().zip(&co_states) {
            *o = cx.p;
        }
    }

    let h_terminal = h_backup(x.v, world.v_stop);
    RolloutResult { h_min, h_terminal, h_i: h_min.min(h_terminal), pair_min, samples }
}

/// Largest `f64` below one.
const LAMBDA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// `λ = 1 − exp(−β·max(0, h_I))`.
///
/// Capped just below one: past `β·h_I ≈ 37` the exact value rounds to 1.0,
/// which would drop the policy from the blend entirely.
pub fn regulation_lambda(h_i: f64, beta: f64) -> f64 {
    if !(h_i > 0.0) {
        return 0.0;
    }
    (-(-beta * h_i).exp_m1()).min(LAMBDA_MAX)
}

/// Result of the bookkeeping half of a filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub state: FilterState,
    /// The phase was reset to zero.
    pub reset: bool,
    /// A different maneuver was adopted.
    pub switched: bool,
    /// A cyclic switch candidate was evaluated.
    pub switch_attempted: bool,
    /// Phase before this decision was taken.
    pub previous_phase: f64,
    pub fresh: RolloutResult,
}

/// Maneuver switching followed by the time-offset reset check.
///
/// Exactly one fresh rollout is evaluated. In the pure-backup region the
/// candidate is the next maneuver cyclically and the index advances whether
/// or not it is feasible; outside it the candidate is the active maneuver
/// re-bound to the current state and pilot command.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    fs: &FilterState,
    x: &DroneState,
    pilot: VelocityCommand,
    templates: &[ManeuverTemplate],
    world: &World,
    cfg: &FilterConfig,
    vehicle: &VehicleModel,
    co: &CoAgentModel,
) -> Decision {
    assert!(!templates.is_empty(), "at least one maneuver is required");
    let cycling = fs.in_backup_region(&cfg.timing) && templates.len() > 1;
    let candidate = if cycling { (fs.maneuver_idx + 1) % templates.len() } else { fs.maneuver_idx };
    let ctx = templates[candidate].instantiate(x, pilot);
    let fresh = rollout(x, &ctx, 0.0, world, cfg, vehicle, co);

    let mut next = *fs;
    let reset = fresh.feasible(cfg.epsilon_margin);
    if reset {
        next.phase = 0.0;
        next.maneuver_idx = candidate;
        next.maneuver_ctx = ctx;
    } else {
        next.phase = fs.phase + cfg.period;
        if cycling {
            // Every maneuver shares the backup controller here, so advancing
            // the index does not change the applied input.
            next.maneuver_idx = candidate;
            next.maneuver_ctx = ctx;
        }
    }
    Decision {
        state: next,
        reset,
        switched: reset && candidate != fs.maneuver_idx,
        switch_attempted: cycling,
        previous_phase: fs.phase,
        fresh,
    }
}

/// Per-step filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct Regulated {
    pub u_act: DroneInput,
    pub u_tbc: DroneInput,
    pub u_pilot: DroneInput,
    pub lambda: f64,
    pub current: RolloutResult,
}

/// Rolls out the committed policy and mixes pilot and policy inputs.
#[allow(clippy::too_many_arguments)]
pub fn regulate(
    fs: &FilterState,
    x: &DroneState,
    pilot: VelocityCommand,
    world: &World,
    cfg: &FilterConfig,
    vehicle: &VehicleModel,
    co: &CoAgentModel,
) -> Regulated {
    let current = rollout(x, &fs.maneuver_ctx, fs.phase, world, cfg, vehicle, co);
    let lambda = regulation_lambda(current.h_i, cfg.beta);
    let u_tbc = tbc_evaluate(&fs.maneuver_ctx, x, fs.phase, world, &cfg.timing, &vehicle.params, &vehicle.gains);
    let u_pilot = velocity_controller(x, &pilot, &vehicle.params, &vehicle.gains);
    let u_act = if lambda == 0.0 {
        u_tbc
    } else {
        clamp_input(u_tbc.lerp(u_pilot, lambda), &vehicle.params)
    };
    Regulated { u_act, u_tbc, u_pilot, lambda, current }
}

/// Per-agent, per-period filter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub t: f64,
    pub agent_id: u32,
    /// Safe-set barrier at the true current state.
    pub h_world: f64,
    pub h_i: f64,
    pub lambda: f64,
    pub phase: f64,
    pub maneuver_idx: usize,
    pub u_act: DroneInput,
    pub u_tbc: DroneInput,
    pub reset: bool,
    pub switched: bool,
    pub switch_attempted: bool,
    /// Size of the input discontinuity caused by this period's bookkeeping
    /// change: the applied input under the new bookkeeping minus the applied
    /// input had the previous maneuver simply continued.
    pub bookkeeping_jump: f64,
    /// Minimum pairwise barrier along the committed joint rollout.
    pub rollout_pair_min: Option<f64>,
    /// Number of rollouts evaluated this period.
    pub rollouts: u32,
    /// Wall time spent in the filter (ns).
    pub filter_nanos: u64,
}

/// One full filter period for a single agent without co-agents.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    fs: &FilterState,
    x: &DroneState,
    t: f64,
    pilot: VelocityCommand,
    templates: &[ManeuverTemplate],
    world: &World,
    cfg: &FilterConfig,
    vehicle: &VehicleModel,
) -> (DroneInput, FilterState, Telemetry) {
    let co = CoAgentModel::default();
    let start = std::time::Instant::now();
    let decision = decide(fs, x, pilot, templates, world, cfg, vehicle, &co);
    let (fs2, tel) = finish_step(fs, decision, x, t, 0, pilot, world, cfg, vehicle, &co);
    let mut tel = tel;
    tel.filter_nanos = start.elapsed().as_nanos() as u64;
    (tel.u_act, fs2, tel)
}

/// Second half of a filter step, shared by single- and multi-agent loops.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_step(
    before: &FilterState,
    decision: Decision,
    x: &DroneState,
    t: f64,
    agent_id: u32,
    pilot: VelocityCommand,
    world: &World,
    cfg: &FilterConfig,
    vehicle: &VehicleModel,
    co: &CoAgentModel,
) -> (FilterState, Telemetry) {
    let mut fs = decision.state;
    let reg = regulate(&fs, x, pilot, world, cfg, vehicle, co);
    fs.last_h_i = reg.current.h_i;
    fs.last_lambda = reg.lambda;

    let continued = tbc_evaluate(
        &before.maneuver_ctx,
        x,
        before.phase + cfg.period,
        world,
        &cfg.timing,
        &vehicle.params,
        &vehicle.gains,
    );
    let bookkeeping_jump = (1.0 - reg.lambda) * reg.u_tbc.max_abs_diff(&continued);

    let others: Vec<Vec3> = co.snapshots.iter().map(|s| s.state.p).collect();
    let tel = Telemetry {
        t,
        agent_id,
        h_world: h_world_at(x.p, world, &others),
        h_i: reg.current.h_i,
        lambda: reg.lambda,
        phase: fs.phase,
        maneuver_idx: fs.maneuver_idx,
        u_act: reg.u_act,
        u_tbc: reg.u_tbc,
        reset: decision.reset,
        switched: decision.switched,
        switch_attempted: decision.switch_attempted,
        bookkeeping_jump,
        rollout_pair_min: reg.current.pair_min,
        rollouts: 2,
        filter_nanos: 0,
    };
    (fs, tel)
}
