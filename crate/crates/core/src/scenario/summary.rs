//! Run summaries computed from trace tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::multi_agent::{deadlock_metric, DeadlockReport, MotionSample};
use crate::rigid_body::Vec3;
use crate::safety_sets::barrier_breakdown;
use crate::scenario::trace::TraceSet;

/// Lowest tolerated barrier value along a simulated trajectory.
pub const SAFETY_TOLERANCE: f64 = -1e-3;

/// Length of the trailing window inspected for deadlocks (s).
pub const DEADLOCK_WINDOW: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierMinima {
    pub geofence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<f64>,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of periods with λ = 0, i.e. the policy alone in control.
    pub zero_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reset,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub agent_id: u32,
    pub kind: EventKind,
    pub maneuver_idx: usize,
    /// Time since this agent's previous event of the same kind.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub name: String,
    pub duration: f64,
    pub agents: usize,
    pub min_h: BarrierMinima,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_pairwise_distance: Option<f64>,
    pub lambda: LambdaStats,
    pub resets: usize,
    pub switches: usize,
    /// Reset events are only listed when they start a different maneuver
    /// instance than a plain continuation would, i.e. at switches and at
    /// restarts out of the backup region.
    pub events: Vec<Event>,
    pub deadlock: DeadlockReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_step: Option<TimingStats>,
    pub safety_ok: bool,
}

pub fn summarize(tr: &TraceSet) -> SummaryReport {
    let world = tr.scenario.world();
    let period = tr.scenario.filter.period;
    let backup_start = tr.scenario.filter.maneuver_time + tr.scenario.filter.smoothing_time;

    // Rows are grouped by tick in agent order.
    let mut by_tick: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in tr.rows.iter().enumerate() {
        by_tick.entry(tick_of(r.t, period)).or_default().push(i);
    }

    let mut geofence = f64::INFINITY;
    let mut obstacle: Option<f64> = None;
    let mut pair: Option<f64> = None;
    let mut min_dist: Option<f64> = None;
    for idx in by_tick.values() {
        let positions: Vec<Vec3> = idx.iter().map(|&i| tr.rows[i].position()).collect();
        for (k, &p) in positions.iter().enumerate() {
            let others: Vec<Vec3> = positions.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, &q)| q).collect();
            let b = barrier_breakdown(p, &world, &others);
            geofence = geofence.min(b.geofence);
            obstacle = min_opt(obstacle, b.obstacle);
            pair = min_opt(pair, b.pair);
            for q in &positions[k + 1..] {
                min_dist = min_opt(min_dist, Some((p - *q).norm()));
            }
        }
    }
    let mut overall = geofence;
    for v in [obstacle, pair].into_iter().flatten() {
        overall = overall.min(v);
    }
    if tr.rows.is_empty() {
        overall = f64::NAN;
        geofence = f64::NAN;
    }

    let n = tr.rows.len().max(1) as f64;
    let lambda = LambdaStats {
        mean: tr.rows.iter().map(|r| r.lambda).sum::<f64>() / n,
        min: tr.rows.iter().map(|r| r.lambda).fold(f64::INFINITY, f64::min),
        max: tr.rows.iter().map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max),
        zero_fraction: tr.rows.iter().filter(|r| r.lambda == 0.0).count() as f64 / n,
    };

    let mut events = Vec::new();
    let mut last: BTreeMap<(u32, EventKind), f64> = BTreeMap::new();
    let mut prev_phase: BTreeMap<u32, f64> = BTreeMap::new();
    for r in &tr.rows {
        let from_backup = prev_phase.get(&r.agent_id).is_none_or(|&p| p >= backup_start - 1e-9);
        prev_phase.insert(r.agent_id, r.phase);
        let kind = if r.switch_flag == 1 {
            EventKind::Switch
        } else if r.reset_flag == 1 && from_backup {
            EventKind::Reset
        } else {
            continue;
        };
        let gap = last.insert((r.agent_id, kind), r.t).map(|t0| r.t - t0);
        events.push(Event { t: r.t, agent_id: r.agent_id, kind, maneuver_idx: r.maneuver_idx, gap });
    }

    let cmd: BTreeMap<(u64, u32), Vec3> =
        tr.commands.iter().map(|c| ((c.tick, c.agent_id), Vec3::new(c.vx, c.vy, c.vz))).collect();
    let samples: Vec<MotionSample> = tr
        .rows
        .iter()
        .map(|r| MotionSample {
            t: r.t,
            agent_id: r.agent_id,
            p: r.position(),
            v: r.velocity(),
            v_cmd: cmd.get(&(tick_of(r.t, period), r.agent_id)).copied().unwrap_or(Vec3::ZERO),
        })
        .collect();
    let deadlock = deadlock_metric(&samples, world.v_stop, DEADLOCK_WINDOW);

    let filter_step = timing_stats(tr.timing.iter().map(|t| t.filter_nanos));

    SummaryReport {
        name: tr.scenario.name.clone(),
        duration: tr.scenario.duration,
        agents: tr.scenario.agents.len(),
        min_h: BarrierMinima { geofence, obstacle, pair, overall },
        min_pairwise_distance: min_dist,
        lambda,
        resets: tr.rows.iter().filter(|r| r.reset_flag == 1).count(),
        switches: tr.rows.iter().filter(|r| r.switch_flag == 1).count(),
        events,
        deadlock,
        filter_step,
        safety_ok: overall >= SAFETY_TOLERANCE,
    }
}

/// Mean, 99th percentile and maximum of nanosecond samples, in ms.
pub fn timing_stats(nanos: impl Iterator<Item = u64>) -> Option<TimingStats> {
    let mut v: Vec<u64> = nanos.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let ms = |n: u64| n as f64 * 1e-6;
    let p99_idx = ((v.len() as f64 * 0.99).ceil() as usize).clamp(1, v.len()) - 1;
    Some(TimingStats {
        samples: v.len(),
        mean_ms: v.iter().map(|&n| ms(n)).sum::<f64>() / v.len() as f64,
        p99_ms: ms(v[p99_idx]),
        max_ms: ms(v[v.len() - 1]),
    })
}

fn tick_of(t: f64, period: f64) -> u64 {
    (t / period).round() as u64
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}
