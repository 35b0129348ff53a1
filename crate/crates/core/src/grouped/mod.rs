//! Grouped-data IV designs with group-indicator instruments: design files,
//! sampling, per-replication statistics and Monte Carlo summaries.

pub mod design;
pub mod generate;
pub mod random_design;
pub mod sim;
pub mod stats;

pub use design::{Group, GroupSizes, GroupedDesign, Structural};
pub use generate::{generate, generate_sample, GroupedSample};
pub use random_design::{random_design_comparison, Constraints, RandomDesignLaw, RandomDesignOutcome};
pub use sim::{run_rep, run_sim, run_sim_with_reps, sweep_scale, CurveRow, Moments, RepStats, SimConfig, SimSummary, StructuralRep, StructuralSummary};
pub use stats::{group_stats, GroupStats};
