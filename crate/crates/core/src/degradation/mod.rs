//! The nine degradation operators and the skip / shuffle / high-order
//! composition sampler built on them.

pub mod jpeg;
mod ops;
mod plan;
mod space;

pub use jpeg::jpeg_roundtrip;
pub use ops::{apply_op, Category, OpInstance, OpKind, OpParams, MAX_SIDE, MIN_SIDE};
pub use plan::{
    apply_plan, read_plan_manifest, sample_plan, write_plan_manifest, DegradationPlan, ParamRanges, PlanRecord,
    SpaceConfig,
};
pub use space::count_space;
