use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("zone graph is disconnected: zone {unreachable} cannot be reached from zone 0")]
    DisconnectedGraph { unreachable: usize },

    #[error("zone id {0} appears more than once")]
    DuplicateZoneId(usize),

    #[error("zone ids must be contiguous 0..{expected}, found {found}")]
    NonContiguousZoneIds { expected: usize, found: usize },

    #[error("edge ({from}, {to}) references a zone that does not exist")]
    UnknownZone { from: usize, to: usize },

    #[error("edge ({0}, {0}) is a self loop")]
    SelfLoop(usize),

    #[error("edge ({from}, {to}) is listed more than once")]
    DuplicateEdge { from: usize, to: usize },

    #[error("{what} must be strictly positive, got {value}")]
    NonPositiveDistance { what: String, value: f64 },

    #[error("speed must be strictly positive, got {0}")]
    NonPositiveSpeed(f64),

    #[error("{0} must be nonnegative")]
    NegativeInput(&'static str),

    #[error("idle vehicle count must be strictly positive, got {0}")]
    NonPositiveIdleVehicles(f64),

    #[error("waiting time must be strictly positive, got {0}")]
    NonPositiveWait(f64),

    #[error("cordon charges need at least one congested and one remote zone")]
    EmptyCordonSet,

    #[error("zone {zone} has no potential passenger demand")]
    DegenerateDemand { zone: usize },

    #[error("no equilibrium found after {iterations} iterations (residual {residual:.3e})")]
    NoEquilibriumFound {
        iterations: usize,
        residual: f64,
        /// Pricing decision at which the solve failed, when known.
        decision: Option<Box<crate::equilibrium::PricingDecision>>,
    },

    #[error("pickup-time cap cannot be met: {0}")]
    InfeasibleWaitCap(String),

    #[error("target {target} is outside the range [{low}, {high}] reachable in the charge bracket")]
    TargetOutOfRange { target: f64, low: f64, high: f64 },

    #[error("charge response is not monotone over the probe levels {levels:?}")]
    NonMonotoneTarget { levels: Vec<f64> },

    #[error("brute-force reference is limited to {max} zones, got {zones}")]
    TooLarge { zones: usize, max: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("validation failed ({invariant})")]
    Validation { invariant: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by malformed inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NoEquilibriumFound { .. }
                | Error::InfeasibleWaitCap(_)
                | Error::TargetOutOfRange { .. }
                | Error::NonMonotoneTarget { .. }
                | Error::Io(_)
        )
    }

    /// Short machine-readable tag.
    /// Attaches the failing decision to an equilibrium failure.
    pub fn with_decision(self, d: &crate::equilibrium::PricingDecision) -> Self {
        match self {
            Error::NoEquilibriumFound { iterations, residual, decision: None } => {
                Error::NoEquilibriumFound { iterations, residual, decision: Some(Box::new(d.clone())) }
            }
            e => e,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::DuplicateZoneId(_) => "DuplicateZoneId",
            Error::NonContiguousZoneIds { .. } => "NonContiguousZoneIds",
            Error::UnknownZone { .. } => "UnknownZone",
            Error::SelfLoop(_) => "SelfLoop",
            Error::DuplicateEdge { .. } => "DuplicateEdge",
            Error::NonPositiveDistance { .. } => "NonPositiveDistance",
            Error::NonPositiveSpeed(_) => "NonPositiveSpeed",
            Error::NegativeInput(_) => "NegativeInput",
            Error::NonPositiveIdleVehicles(_) => "NonPositiveIdleVehicles",
            Error::NonPositiveWait(_) => "NonPositiveWait",
            Error::EmptyCordonSet => "EmptyCordonSet",
            Error::DegenerateDemand { .. } => "DegenerateDemand",
            Error::NoEquilibriumFound { .. } => "NoEquilibriumFound",
            Error::InfeasibleWaitCap(_) => "InfeasibleWaitCap",
            Error::TargetOutOfRange { .. } => "TargetOutOfRange",
            Error::NonMonotoneTarget { .. } => "NonMonotoneTarget",
            Error::TooLarge { .. } => "TooLarge",
            Error::Parse(_) => "ParseError",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::Validation { .. } => "ValidationError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
