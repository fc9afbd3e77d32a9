//! Contiguity-preserving local search for districting and redistricting.
//!
//! Units are aggregated into districts; the search moves single units and
//! composite sets (a cut point together with the parts it would otherwise
//! disconnect) between adjacent districts, and exchanges pairs of moves,
//! under a Tabu search that minimizes a weighted sum of population
//! deviation and Polsby-Popper compactness.
//!
//! Geometry is generic over [`Real`]; populations are always `i64`.

pub mod contiguity;
pub mod error;
pub mod experiment;
pub mod instance;
pub mod moves;
pub mod objective;
pub mod plan;
pub mod scalar;
pub mod search;
pub mod stats;

pub use contiguity::{analyze_district, composite_moves, minimal_move_oracle, BlockCutTree, SizeMeasure};
pub use error::{Error, Result};
pub use experiment::{run_experiment, validate_plan, ExperimentConfig, PlanReport};
pub use instance::{generate_grid, load_instance_path, InstanceData, PopulationModel, UnitId, Violation};
pub use moves::{best_switch, switch_valid, BorderRule, MoveKey, PoolOptions};
pub use objective::{evaluate, pop_dev, ppi, ObjectiveValue};
pub use plan::{build_aggregates, is_plan_contiguous, Plan};
pub use scalar::Real;
pub use search::{init_plan, multi_restart, run, Method, Preset, SearchConfig, StopReason};
pub use stats::{rank_sum_test, summarize, RankSumResult, RunStats};

pub type Instance = instance::Instance<f64>;
pub type Instance32 = instance::Instance<f32>;
pub type Move = moves::Move<f64>;
pub type Move32 = moves::Move<f32>;
pub type CandidatePool = moves::CandidatePool<f64>;
pub type CandidatePool32 = moves::CandidatePool<f32>;
pub type DistrictAggregate = plan::DistrictAggregate<f64>;
pub type DistrictAggregate32 = plan::DistrictAggregate<f32>;
pub type ObjectiveConfig = objective::ObjectiveConfig<f64>;
pub type ObjectiveConfig32 = objective::ObjectiveConfig<f32>;
pub type RunResult = search::RunResult<f64>;
pub type RunResult32 = search::RunResult<f32>;
