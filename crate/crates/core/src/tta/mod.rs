//! Online test-time adaptation: the NCTTA objective, baselines and stream scenarios.

mod config;
mod engine;
mod objective;
mod scenario;

pub use config::{AdaptConfig, LossVariant, Method, Objective, UpdatePolicy};
pub use engine::{Adapter, StepLog};
pub use objective::{
    entropy, entropy_filter, hybrid_target, loss_nc, loss_nc_from_distances, loss_nc_rows, plan_batch, sample_weight,
    total_loss_with_plan, unit_classifier, BatchPlan, HybridTarget, LossParts, SampleDecision,
};
pub use scenario::{read_steps_csv, run_scenario, segment_order, write_steps_csv, RunLog, Scenario, SegmentSummary};
