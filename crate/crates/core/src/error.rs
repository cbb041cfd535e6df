use thiserror::Error;

/// Errors raised across the planning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("distance to an empty edge set is undefined")]
    EmptyEdgeSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible routing instance; offending nodes {nodes:?}: {reason}")]
    InfeasibleInstance { nodes: Vec<usize>, reason: String },

    #[error("instance too large for exhaustive search: {nodes} nodes, {vehicles} vehicles")]
    InstanceTooLarge { nodes: usize, vehicles: usize },

    #[error("time {t} outside spline horizon [{t0}, {tf}]")]
    OutsideHorizon { t: f64, t0: f64, tf: f64 },

    #[error("velocity magnitude {0} too small for turn rate and curvature")]
    DegenerateVelocity(f64),

    #[error("posterior evidence vanished")]
    ZeroEvidence,

    #[error("rejection sampler stalled after {0} rejections")]
    SamplerStalled(usize),

    #[error("negative marginal budget for vehicle {vehicle}: {margin} m")]
    NegativeMargin { vehicle: usize, margin: f64 },

    #[error("initial trajectory violates the path budget: length {length} m vs budget {budget} m")]
    InfeasibleInit { length: f64, budget: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
