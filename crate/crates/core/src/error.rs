use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("backward called before a forward pass was recorded")]
    BackwardBeforeForward,
    #[error("track {track} has no box at frame {frame}")]
    MissingBox { track: u64, frame: u32 },
    #[error("cannot normalize a zero vector")]
    ZeroNorm,
    #[error("zero-height box")]
    ZeroHeight,
    #[error("coincident head centers")]
    CoincidentHeads,
    #[error("average precision is undefined without positives")]
    NoPositives,
    #[error("protocol {protocol} cannot be evaluated on {what}")]
    ProtocolMismatch { protocol: &'static str, what: &'static str },
    #[error("could not sample a {want} pair in {attempts} attempts")]
    Unsatisfiable { want: &'static str, attempts: usize },
    #[error("characters never co-exist in shot {0}")]
    NoCoexistence(String),
}
