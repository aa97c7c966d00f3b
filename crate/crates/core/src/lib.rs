//! Monocular face video fitting with a linear 3D morphable model, and the
//! conditioning images used for head-to-head reenactment.

pub mod camera;
pub mod conditioning;
pub mod error;
pub mod fitting;
pub mod model;
pub mod numeric;
pub mod reenactment;
pub mod synthetic;

pub use camera::{estimate_pose, project, CameraParams};
pub use error::{Error, ErrorKind, Result};
pub use fitting::{
    fit_video, FitConfig, FitResult, LandmarkFrame, LandmarkSequence, ShapeTrajectory,
};
pub use model::{MorphableModel, ShapeParams};
