//! Brute-force set-inclusion check on a one-dimensional "truck" toy.
//!
//! A truck drives in lane 0 toward a stopped obstacle at `p = 0`. The
//! backup brakes at `a_max`. The maneuver changes to lane 1 over `T_M`
//! seconds while braking at the gentler `a_reduced`; the lane flips when the
//! maneuver completes. Lane 1 is assumed clear.
//!
//! A state belongs to the implicit safe set of a time offset when the
//! rollout never enters lane 0 at `p > 0` and ends with `v ≤ v_stop`. The
//! pure backup fixes the phase at `T_M + δ`; the optimal offset scans every
//! phase on a `dt` grid, pure backup included. The inclusion
//! `S_I(u_B) ⊆ S_I(τ₀*)` is then checked cell by cell.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lane {
    Blocked,
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyState {
    pub lane: Lane,
    /// Position relative to the obstacle (m).
    pub p: f64,
    /// Speed (m/s), never negative.
    pub v: f64,
}

impl ToyState {
    pub fn blocked(p: f64, v: f64) -> Self {
        Self { lane: Lane::Blocked, p, v }
    }

    pub fn is_safe(&self) -> bool {
        self.lane == Lane::Clear || self.p <= 0.0
    }
}

/// What the truck does during the maneuver window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyManeuver {
    /// Change to the clear lane while braking at `a_reduced`.
    LaneChange,
    /// Stay in lane and accelerate at `a_reduced` toward the obstacle.
    Accelerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub a_max: f64,
    pub a_reduced: f64,
    pub maneuver_time: f64,
    pub smoothing_time: f64,
    pub horizon: f64,
    pub v_stop: f64,
    /// Phase scan and blend subdivision step (s).
    pub dt: f64,
    pub maneuver: ToyManeuver,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            a_reduced: 0.5,
            maneuver_time: 1.0,
            smoothing_time: 0.2,
            horizon: 10.0,
            v_stop: 0.1,
            dt: 0.01,
            maneuver: ToyManeuver::LaneChange,
        }
    }
}

impl ToyParams {
    pub fn validate(&self) -> Result<(), crate::error::ConfigErrors> {
        let mut errs = Vec::new();
        if !(self.a_max > 0.0) || !self.a_max.is_finite() {
            errs.push(ConfigError::invalid("toy", "a_max", "must be finite and > 0"));
        }
        if !(self.a_reduced > 0.0 && self.a_reduced <= self.a_max) {
            errs.push(ConfigError::invalid("toy", "a_reduced", "must lie in (0, a_max]"));
        }
        if !(self.maneuver_time >= 0.0) || !(self.smoothing_time > 0.0) {
            errs.push(ConfigError::invalid("toy", "maneuver_time", "need T_M >= 0 and smoothing > 0"));
        }
        if !(self.horizon > self.maneuver_time + self.smoothing_time) || !self.horizon.is_finite() {
            errs.push(ConfigError::invalid("toy", "horizon", "must exceed T_M + smoothing"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            errs.push(ConfigError::invalid("toy", "dt", "must lie in (0, 0.01]"));
        }
        if !(self.v_stop >= 0.0) {
            errs.push(ConfigError::invalid("toy", "v_stop", "must be >= 0"));
        }
        crate::error::ConfigErrors::check(errs)
    }

    fn backup_start(&self) -> f64 {
        self.maneuver_time + self.smoothing_time
    }

    fn maneuver_accel(&self) -> f64 {
        match self.maneuver {
            ToyManeuver::LaneChange => -self.a_reduced,
            ToyManeuver::Accelerate => self.a_reduced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    PureBackup,
    TbcOptimal,
}

/// Exact motion under constant acceleration `a` for `h` seconds; a braking
/// truck stops at `v = 0` and stays there.
fn advance(s: &mut ToyState, a: f64, h: f64) {
    if a < 0.0 && s.v + a * h < 0.0 {
        let ts = s.v / -a;
        s.p += s.v * ts + 0.5 * a * ts * ts;
        s.v = 0.0;
    } else {
        s.p += s.v * h + 0.5 * a * h * h;
        s.v += a * h;
    }
}

/// Rolls the toy out from phase `phase0`. `None` as soon as it leaves the
/// safe set; otherwise the terminal state.
pub fn toy_rollout(x0: &ToyState, params: &ToyParams, phase0: f64) -> Option<ToyState> {
    let mut s = *x0;
    if !s.is_safe() {
        return None;
    }
    let t_m = params.maneuver_time;
    let t_b = params.backup_start();
    let mut elapsed = 0.0;

    // Position only grows with time, so checking segment ends suffices.
    if phase0 < t_m {
        let h = t_m - phase0;
        advance(&mut s, params.maneuver_accel(), h);
        elapsed += h;
        if !s.is_safe() {
            return None;
        }
        if params.maneuver == ToyManeuver::LaneChange {
            s.lane = Lane::Clear;
        }
    }
    // With no maneuver window the policy is pure braking.
    let mut tau = if t_m > 0.0 { phase0.max(t_m) } else { t_b };
    while tau < t_b - 1e-12 {
        let h = params.dt.min(t_b - tau);
        let mid = (tau + 0.5 * h - t_m) / params.smoothing_time;
        let a = (1.0 - mid) * params.maneuver_accel() + mid * -params.a_max;
        advance(&mut s, a, h);
        elapsed += h;
        tau += h;
        if !s.is_safe() {
            return None;
        }
    }
    advance(&mut s, -params.a_max, (params.horizon - elapsed).max(0.0));
    s.is_safe().then_some(s)
}

/// Feasibility of one offset: safe throughout and stopped at the horizon.
pub fn toy_feasible(x0: &ToyState, params: &ToyParams, phase0: f64) -> bool {
    toy_rollout(x0, params, phase0).is_some_and(|s| s.v <= params.v_stop)
}

/// Phases scanned by the optimal offset: `0, dt, 2dt, …` and exactly `T_M + δ`.
pub fn phase_grid(params: &ToyParams) -> Vec<f64> {
    let t_b = params.backup_start();
    let n = (t_b / params.dt).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|k| k as f64 * params.dt).filter(|&p| p < t_b).collect();
    g.push(t_b);
    g
}

/// Membership of `x0` in the implicit safe set under the chosen offset rule.
pub fn toy_membership(x0: &ToyState, params: &ToyParams, mode: OffsetMode) -> bool {
    match mode {
        OffsetMode::PureBackup => toy_feasible(x0, params, params.backup_start()),
        OffsetMode::TbcOptimal => phase_grid(params).into_iter().any(|ph| toy_feasible(x0, params, ph)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyGrid {
    pub p_min: f64,
    pub p_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub n_p: usize,
    pub n_v: usize,
}

impl ToyGrid {
    pub fn new(n_p: usize, n_v: usize) -> Self {
        Self { p_min: -6.0, p_max: 0.0, v_min: 0.0, v_max: 3.0, n_p, n_v }
    }

    pub fn p(&self, i: usize) -> f64 {
        self.p_min + (self.p_max - self.p_min) * i as f64 / (self.n_p - 1) as f64
    }

    pub fn v(&self, j: usize) -> f64 {
        self.v_min + (self.v_max - self.v_min) * j as f64 / (self.n_v - 1) as f64
    }

    pub fn cell_p(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_p - 1) as f64
    }
}

/// Parses `"200x200"`.
pub fn parse_grid(s: &str) -> Option<ToyGrid> {
    let (a, b) = s.split_once(['x', 'X'])?;
    let n_p: usize = a.trim().parse().ok()?;
    let n_v: usize = b.trim().parse().ok()?;
    (n_p >= 2 && n_v >= 2 && n_p * n_v <= 25_000_000).then(|| ToyGrid::new(n_p, n_v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub p: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub cells: usize,
    pub pure_backup_safe: usize,
    pub tbc_safe: usize,
    /// `|S_I(τ₀*)| − |S_I(u_B)|` in cells.
    pub improvement: i64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub params: ToyParams,
    pub grid: ToyGrid,
    pub counts: OracleCounts,
    /// Cells safe under pure backup but not under the optimal offset.
    pub violations: Vec<Cell>,
    /// Largest distance between the pure-backup boundary found on the grid
    /// and the closed form `p = −v²/(2·a_max)`, per speed column (m).
    pub boundary_max_error: f64,
    pub cell_size_p: f64,
    pub runtime_s: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.counts.violations == 0
    }
}

/// Enumerates the grid (lane 0) and checks the inclusion cell by cell.
pub fn verify_inclusion(grid: &ToyGrid, params: &ToyParams) -> OracleReport {
    let start = Instant::now();
    let cells: Vec<(bool, bool)> = (0..grid.n_v)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..grid.n_p).map(move |i| {
                let x = ToyState::blocked(grid.p(i), grid.v(j));
                (toy_membership(&x, params, OffsetMode::PureBackup), toy_membership(&x, params, OffsetMode::TbcOptimal))
            })
        })
        .collect();

    let mut violations = Vec::new();
    let (mut pure, mut tbc) = (0usize, 0usize);
    let mut boundary_max_error = 0.0_f64;
    for j in 0..grid.n_v {
        let mut last_safe_p: Option<f64> = None;
        for i in 0..grid.n_p {
            let (b, t) = cells[j * grid.n_p + i];
            pure += b as usize;
            tbc += t as usize;
            if b && !t {
                violations.push(Cell { p: grid.p(i), v: grid.v(j) });
            }
            if b {
                last_safe_p = Some(grid.p(i));
            }
        }
        let v = grid.v(j);
        if v <= params.v_stop || params.horizon * params.a_max < v - params.v_stop {
            continue;
        }
        let analytic = -v * v / (2.0 * params.a_max);
        if analytic >= grid.p_min {
            let err = last_safe_p.map_or(f64::INFINITY, |p| (p - analytic).abs());
            boundary_max_error = boundary_max_error.max(err);
        }
    }

    OracleReport {
        params: *params,
        grid: *grid,
        counts: OracleCounts {
            cells: cells.len(),
            pure_backup_safe: pure,
            tbc_safe: tbc,
            improvement: tbc as i64 - pure as i64,
            violations: violations.len(),
        },
        violations,
        boundary_max_error,
        cell_size_p: grid.cell_p(),
        runtime_s: start.elapsed().as_secs_f64(),
    }
}
