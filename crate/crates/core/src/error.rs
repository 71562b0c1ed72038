use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mask has zero total weight")]
    EmptyMask,
    #[error("prototype has zero norm")]
    DegeneratePrototype,
    #[error("malformed label map: {0}")]
    MalformedLabel(String),
    #[error("class(es) absent from every support item: {}", .0.join(", "))]
    MissingClass(Vec<String>),
    #[error("class registry error: {0}")]
    Registry(String),
    #[error("unsupported forward graph: {0}")]
    UnsupportedGraph(&'static str),
    #[error("insufficient data: need {needed} items, pool has {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("marker {label} at ({x}, {y}) lies outside the binarized foreground")]
    InconsistentMarker { label: u32, x: usize, y: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
