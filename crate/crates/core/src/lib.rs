//! Multi-camera target localization that stays accurate under camera
//! calibration error by cancelling it against surveyed anchor points.
//!
//! The pipeline is: [`init`] maps observed pixels onto a reference plane to
//! get a starting point, [`weights`] expresses that point as an affine
//! combination of each camera's anchors, and [`localizer`] minimizes the
//! anchor-adjusted reprojection error, optionally over windows of frames with
//! a smoothness penalty. [`sim`] and [`eval`] reproduce synthetic
//! calibration-error experiments; [`io`], [`pipeline`] and [`commands`]
//! wire everything to files.

pub mod camera;
pub mod commands;
pub mod error;
pub mod eval;
pub mod init;
pub mod io;
pub mod localizer;
pub mod observation;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod theory;
pub mod weights;

pub use camera::{CameraParams, Distortion, Extrinsics, Intrinsics, Pixel2D, Position3D};
pub use error::{Error, Result};
pub use localizer::{LocalizationResult, Method, Mode, SmoothingConfig, SolverConfig};
pub use observation::{CameraSet, FrameObservations, ObservationEntry, Representative};
pub use weights::{Anchor, AnchorSet, AnchorWeights};
