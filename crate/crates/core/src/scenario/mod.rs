//! Configuration-driven batch simulation.

pub mod config;
pub mod pilot;
pub mod runner;
pub mod summary;
pub mod trace;

pub use config::{apply_override, AgentSection, FaultSection, FilterSection, ScenarioConfig, WorldSection};
pub use pilot::{commands_to_script, CommandHold, PilotRunner, PilotScript, Segment};
pub use runner::{run_scenario, with_recorded_pilot, Simulation, TickRecord};
pub use summary::{summarize, timing_stats, SummaryReport, TimingStats, SAFETY_TOLERANCE, DEADLOCK_WINDOW};
pub use trace::{read_trace, write_csv_to, CommandRow, TimingRow, TraceRow, TraceSet, TRACE_COLUMNS};

/// Scenario files shipped with the library, by name.
pub const BUILTINS: [(&str, &str); 4] = [
    ("carry_on_box", include_str!("../../scenarios/carry_on_box.toml")),
    ("evade_sphere", include_str!("../../scenarios/evade_sphere.toml")),
    ("switching", include_str!("../../scenarios/switching.toml")),
    ("head_on", include_str!("../../scenarios/head_on.toml")),
];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a builtin with optional overrides.
pub fn builtin(name: &str, overrides: &[String]) -> crate::Result<ScenarioConfig> {
    let text = builtin_source(name).ok_or_else(|| crate::Error::Parse(format!("no builtin scenario named `{name}`")))?;
    ScenarioConfig::from_toml_with_overrides(text, overrides)
}
