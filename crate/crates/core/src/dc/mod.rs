//! Divide-and-conquer melding: stage plan, merges, node targets and the
//! multi-stage sampler.

pub mod ledger;
pub mod merge;
pub mod node;
pub mod plan;
pub mod sampler;

pub use ledger::{extract_joint_samples, Ledger, LedgerNode};
pub use merge::{MergeConfig, MergeMode, MuTilde};
pub use plan::{plan_stages, PlanCase, PlanNode, StagePlan};
pub use sampler::{dc_melding_3, dc_melding_multi, run_leaf, DcConfig, DcOutput, NodeDiagnostics, TrajectoryMode};
