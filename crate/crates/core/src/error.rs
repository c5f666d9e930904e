use thiserror::Error;

use crate::bitserial::Precision;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("value {value} does not fit {precision}")]
    OutOfRange { value: i64, precision: Precision },
    #[error("invalid precision: {bits} bits (expected 1..=16)")]
    BadPrecision { bits: u32 },
    #[error("malformed bit-transposed tensor: {0}")]
    MalformedTensor(String),
    #[error("lane mismatch: expected {expected} lanes, got {actual}")]
    LaneMismatch { expected: usize, actual: usize },
    #[error("address {addr} out of range for RAM of depth {depth}")]
    AddressOutOfRange { addr: i64, depth: usize },
    #[error("precision mismatch: {0}")]
    PrecisionMismatch(String),
    #[error("MVP output {0} exceeds the 27-bit scaler input")]
    MvpOverflow(i64),
    #[error("value {0} exceeds the 32-bit quantizer input")]
    QuantOverflow(i64),
    #[error("bad pooling window: stream of {len} values, window {window}")]
    BadWindow { len: usize, window: usize },
    #[error("bad quantizer window: msb {msb}, {bits} bits")]
    BadQuantWindow { msb: u32, bits: u32 },
    #[error("invalid job configuration: {0}")]
    JobConfig(String),
    #[error("illegal instruction {word:#010x} at pc {pc:#x}")]
    IllegalInstruction { word: u32, pc: u32 },
    #[error("misaligned access at {addr:#x}")]
    MisalignedAccess { addr: u32 },
    #[error("access fault at {addr:#x}")]
    AccessFault { addr: u32 },
    #[error("unknown CSR {0:#x}")]
    UnknownCsr(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: immediate {value} out of range")]
    Range { line: usize, value: i64 },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("simulation did not finish: {0}")]
    Timeout(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable code used on the CLI `ERROR <code>: <message>` line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfRange { .. } => "OutOfRange",
            Error::BadPrecision { .. } => "BadPrecision",
            Error::MalformedTensor(_) => "MalformedTensor",
            Error::LaneMismatch { .. } => "LaneMismatch",
            Error::AddressOutOfRange { .. } => "AddressOutOfRange",
            Error::PrecisionMismatch(_) => "PrecisionMismatch",
            Error::MvpOverflow(_) => "MvpOverflow",
            Error::QuantOverflow(_) => "QuantOverflow",
            Error::BadWindow { .. } => "BadWindow",
            Error::BadQuantWindow { .. } => "BadQuantWindow",
            Error::JobConfig(_) => "JobConfig",
            Error::IllegalInstruction { .. } => "IllegalInstruction",
            Error::MisalignedAccess { .. } => "MisalignedAccess",
            Error::AccessFault { .. } => "AccessFault",
            Error::UnknownCsr(_) => "UnknownCsr",
            Error::Parse { .. } => "ParseError",
            Error::Range { .. } => "RangeError",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::UnsupportedShape(_) => "UnsupportedShape",
            Error::UnsupportedOp(_) => "UnsupportedOp",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::CapacityExceeded(_) => "CapacityExceeded",
            Error::InvalidModel(_) => "InvalidModel",
            Error::Timeout(_) => "Timeout",
            Error::Io(_) => "Io",
            Error::Format(_) => "Format",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
