//! Dense keyframe depth estimation by fusing learned per-pixel depth
//! distributions with plane-sweep photometric evidence.
//!
//! Each keyframe carries a [`ProbabilityVolume`]: for every pixel, a discrete
//! distribution over log-spaced depth bins. The volume starts from a prior
//! (network output loaded from a file, or synthesised), is multiplied by the
//! photometric likelihood of every following frame, and is finally turned
//! into a depth map by gradient descent on the KDE-smoothed negative log
//! likelihood plus a normal-alignment regulariser. When a new keyframe is
//! created the old volume is carried over through an occupancy grid.

pub mod dataset_io;
pub mod error;
pub mod geometry;
pub mod kde;
pub mod maps;
pub mod metrics;
pub mod photometric;
pub mod pipeline;
pub mod regularizer;
pub mod solver;
pub mod synth;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{relative_pose, DepthBinning, Intrinsics, Pose};
pub use maps::{BoundaryProbMap, DepthMap, NormalMap, OcclusionMask};
pub use metrics::{evaluate, EvalReport, ReportTable};
pub use photometric::{normalize_image, CostConversion, GrayImage, PhotoCostVolume};
pub use pipeline::{
    run_frames, run_sequence, FrameSource, FusionMode, KeyframeState, PipelineConfig, SequenceResult,
};
pub use solver::{extract_depth, Init, RegularizerKind, SolverConfig, SolverDiagnostics};
pub use volume::{synth_prior, PriorModel, ProbabilityVolume};
pub use warp::{propagate_keyframe, OccupancyVolume};
