//! Synthetic scenes with ground truth, and the oracles used to check the
//! analytic machinery against it.

pub mod oracle;
pub mod problems;
pub mod eval;
pub mod scene;

pub use oracle::{fd_jacobian, mc_line_covariance, mc_point_covariance, relative_frobenius, McEstimate};
pub use problems::{default_intrinsics, look_at, random_line_problem, LineProblem};
pub use scene::{generate, GroundTruth, Layout, OutlierRates, SceneSpec, Trajectory};
pub use eval::{align_views, evaluate_map, evaluate_poses, umeyama, MapMetrics, PoseMetrics, PoseThresholds, Similarity};
