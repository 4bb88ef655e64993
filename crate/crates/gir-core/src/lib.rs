//! Anchor-based graph embeddings: frontier propagation over anchor sets,
//! exact position certification, a small dense autodiff core, and decision
//! fusion of model families.

pub mod anchors;
pub mod certify;
pub mod fusion;
pub mod harness;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ndiff;
pub mod schedule;
pub mod synth;

pub use anchors::{select_anchors, AnchorError, AnchorSet, AnchorStrategy};
pub use schedule::{build_schedule, FrontierSchedule, ScheduleError, ScheduleMode};

pub use graph::{
    build_graph, multi_source_bfs, split_dataset, DistanceVector, Graph, GraphError, LabeledTask,
    NodeFeatures, SplitSpec, TaskKind,
};
