//! Self-supervised point cloud completion.
//!
//! A completion network maps a partial cloud to a fixed-size complete cloud.
//! Training needs no ground truth: the network's own completion is re-viewed
//! from random cameras, the synthetic partials are completed again, and the
//! results are pulled toward the original completion, while a weighted Chamfer
//! term keeps the completion faithful to the observed points.

pub mod cloud;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod spatial;
pub mod train;
pub mod view;

pub use cloud::{center_and_scale, resample, Point3, PointCloud, SeededRng};
pub use error::{Error, Result};
pub use loss::{
    consistency_chamfer, consistency_mse, total_loss, weighted_chamfer, LossBreakdown, LossWeights,
};
pub use metrics::{
    chamfer_eval, evaluate_dataset, ucd, uhd, ChamferEval, DatasetReport, EvalSample, MetricsReport,
};
pub use model::{
    decode, encode, forward_complete, forward_complete_batch, init_params, load_params,
    save_params, Architecture, FeatureVector, ModelParams,
};
pub use spatial::{brute_force_nearest, build_index, query_nearest, Nearest, NearestNeighborIndex};
pub use train::{
    acl_forward, adam_step, lr_at_epoch, test_time_adapt, train, AdamState, Checkpoint,
    ConsistencyMode, EpochRecord, TrainConfig, TrainOutcome, Trainer,
};
pub use view::{
    project_to_depth_grid, sample_view, synthesize_partial, visible_points, DepthGrid, ViewParams,
};
