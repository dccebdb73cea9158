use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("no route between nodes {0} and {1}")]
    NoRoute(u32, u32),
    #[error("scheduling into the past: event at {event_time} < clock {clock}")]
    SchedulePast { event_time: f64, clock: f64 },
    #[error("invalid failure schedule: {0}")]
    InvalidSchedule(String),
    #[error("no candidate node for job")]
    NoCandidate,
    #[error("insufficient shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("share version conflict: {0:?}")]
    VersionConflict(Vec<u64>),
    #[error("corrupt share: {0}")]
    CorruptShare(String),
    #[error("incomparable inputs: {0}")]
    Incomparable(String),
    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;
