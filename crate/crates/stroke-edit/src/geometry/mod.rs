//! Spatial machinery for pre-transformation: control points, thin-plate-
//! spline warping, background filtering and style augmentation.

mod points;
mod prep;
mod tps;

pub use points::ControlPointSet;
pub use prep::{background_filter, style_augment, style_augment_with, AugmentParams, FILL_VALUE, MAX_AUGMENT_ANGLE_DEG};
pub use tps::{tps_grid, tps_warp, TPS_REGULARIZATION};
