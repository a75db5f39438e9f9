//! Scenario orchestration: configuration, timelines, seeding, and output.

pub mod config;
pub mod output;
pub mod seed;
pub mod sim;

pub use config::{
    parse_config, print_defaults, render_config, EventKind, InsetSpec, PmSetting, ScanSpec, SimConfig, Timeline,
    TimelineEvent,
};
pub use sim::{
    inset_sweep, run_replicas, run_scenario, scan_voltage, worker_pool, BinDiagnostics, FringePoint, InsetPoint,
    LogEntry, LogKind, ScanOutcome, ScenarioOutput, Simulator, MONITOR_BAND,
};
