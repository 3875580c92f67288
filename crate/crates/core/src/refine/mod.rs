//! Nonlinear refinement: single-line optimization, fixed-pose track
//! refinement, joint bundle adjustment and the two-step schedule.

pub mod ba;
pub mod line;
pub mod schedule;
pub mod track;

#[cfg(test)]
mod tests;

pub use ba::{bundle_adjust, BaOptions, BaProblem, BaReport};
pub use line::{optimize_line, LineFit};
pub use schedule::{
    classify_reliability, global_ba, line_uncertainty, line_uncertainty_in_place, point_uncertainty, local_ba, two_step_refine, update_active_labels, RefineConfig, RefineReport,
    ReliabilityState, TrackSet,
};
pub use track::{recompute_endpoints, refine_line_track, refine_point_track};
