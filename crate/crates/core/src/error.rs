use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tracked parameter")]
    DetachedGraph,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("not a rotation matrix: {0}")]
    NotRotation(String),
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("missing weight for neighbor pair ({bone}, {neighbor})")]
    MissingWeight { bone: usize, neighbor: usize },
    #[error("degenerate frame {frame}: joints are collinear")]
    DegenerateFrame { frame: usize },
    #[error("BVH line {line}: {kind}")]
    Bvh { line: usize, kind: BvhErrorKind },
    #[error("CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("empty constraint mask")]
    EmptyMask,
    #[error("unknown body part `{0}`")]
    UnknownPart(String),
    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sequence of {len} frames is shorter than the window of {window}")]
    TooShort { len: usize, window: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BvhErrorKind {
    MissingSection(&'static str),
    UnknownChannel(String),
    ChannelCountMismatch { expected: usize, got: usize },
    FrameCountMismatch { expected: usize, got: usize },
    UnexpectedToken(String),
    UnexpectedEof,
    BadNumber(String),
}

impl std::fmt::Display for BvhErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BvhErrorKind::MissingSection(s) => write!(f, "missing {s} section"),
            BvhErrorKind::UnknownChannel(c) => write!(f, "unknown channel `{c}`"),
            BvhErrorKind::ChannelCountMismatch { expected, got } => {
                write!(f, "expected {expected} channel values per frame, got {got}")
            }
            BvhErrorKind::FrameCountMismatch { expected, got } => {
                write!(f, "header declares {expected} frames, found {got}")
            }
            BvhErrorKind::UnexpectedToken(t) => write!(f, "unexpected token `{t}`"),
            BvhErrorKind::UnexpectedEof => write!(f, "unexpected end of file"),
            BvhErrorKind::BadNumber(t) => write!(f, "cannot parse number `{t}`"),
        }
    }
}

pub(crate) fn shape_err(op: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::Shape {
        op,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
