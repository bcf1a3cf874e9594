use thiserror::Error;

/// Errors produced by the localization engine and its harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind camera {camera_id} (depth {depth:.3e} m)")]
    PointBehindCamera { camera_id: u32, depth: f64 },

    #[error("undistortion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("plane homography for camera {camera_id} is degenerate (condition number {condition:.3e})")]
    DegenerateHomography { camera_id: u32, condition: f64 },

    #[error("no visible camera for frame {frame} target {target_id}")]
    NoVisibleCamera { frame: u64, target_id: u32 },

    #[error("anchor list for camera {camera_id} is empty")]
    EmptyAnchorList { camera_id: u32 },

    #[error("camera {camera_id} has {count} anchors, at most {max} are supported")]
    TooManyAnchors { camera_id: u32, count: usize, max: usize },

    #[error("weight system for camera {camera_id} is singular")]
    SingularSystem { camera_id: u32 },

    #[error("no anchor weights for visible camera {camera_id}")]
    MissingWeights { camera_id: u32 },

    #[error("unknown camera id {0}")]
    UnknownCamera(u32),

    #[error("rejection sampling of anchors for camera {camera_id} exhausted after {draws} draws")]
    FovSamplingExhausted { camera_id: u32, draws: usize },

    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),

    #[error("no probe point is visible in both cameras")]
    NoValidProbes,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PointBehindCamera { .. } => "point_behind_camera",
            Error::NoConvergence { .. } => "no_convergence",
            Error::DegenerateHomography { .. } => "degenerate_homography",
            Error::NoVisibleCamera { .. } => "no_visible_camera",
            Error::EmptyAnchorList { .. } => "empty_anchor_list",
            Error::TooManyAnchors { .. } => "too_many_anchors",
            Error::SingularSystem { .. } => "singular_system",
            Error::MissingWeights { .. } => "missing_weights",
            Error::UnknownCamera(_) => "unknown_camera",
            Error::FovSamplingExhausted { .. } => "fov_sampling_exhausted",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::NoValidProbes => "no_valid_probes",
            Error::Invalid(_) => "invalid",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
