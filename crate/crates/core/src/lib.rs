//! Pre-deployment reliability and oversight-cost auditing for case-based
//! workflow event logs.
//!
//! The pipeline: ingest a log ([`eventlog`]), abstract events into states
//! ([`abstraction`]), count states, decisions and transitions ([`model`]),
//! then audit support, entropy and risk ([`audit`]), price the resulting
//! escalation policy ([`economics`]) and replay a greedy agent on held-out
//! cases ([`agent`]). [`synth`] generates logs from a known process for
//! checking all of the above.

pub mod abstraction;
pub mod agent;
pub mod audit;
pub mod economics;
pub mod error;
pub mod eventlog;
pub mod model;
pub mod synth;
pub mod trace;

pub use abstraction::{
    abstract_state, classify_actor, Abstraction, AbstractionConfig, AbstractionLevel, ActionKey,
    ActorClass, ActorPattern, StateKey, ValueBin, ValueBinning,
};
pub use agent::{
    run_agent, surrogates, validate, AgentRun, Evaluator, ValidationReport, ValidationSummary,
};
pub use audit::{
    autonomy_shares, blind_mass_curve, blind_mass_curve_against, coverage_decomposition, gate,
    gateway_band_analysis, risk_weights, AutonomyShares, BlindMassCurve, GateConfig, GateDecision,
    RiskWeights,
};
pub use economics::{cost_with_error, expected_cost, sweep_frontier, CostParams, FrontierPoint};
pub use error::{Error, Result};
pub use eventlog::{
    chronological_split, compute_log_stats, ingest_csv, Case, EventLog, EventRecord, LogStats,
    SchemaMapping,
};
pub use model::{build_counts, occupancy, CountModel, OccupancyMeasure};
pub use synth::{generate, GroundTruthProcess};
