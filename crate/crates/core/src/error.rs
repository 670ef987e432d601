use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Layer inputs or weights disagree on channel count.
    ChannelMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    /// Tensor or weight shape does not match what the operation needs.
    Shape(String),
    /// Kernel geometry the PE fabric cannot schedule.
    UnsupportedKernel { layer: String, kh: usize, kw: usize },
    /// Invalid model configuration.
    Config(String),
    /// An on-chip buffer would overflow.
    Capacity {
        layer: String,
        buffer: &'static str,
        needed: u64,
        capacity: u64,
    },
    /// Tiles missing, duplicated or of the wrong size at stitch time.
    Integrity(String),
    UnknownAccessKind(String),
    /// Intermediate features were sent to external memory.
    IntermediateTraffic(u64),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ChannelMismatch {
                layer,
                expected,
                found,
            } => write!(f, "{layer}: expected {expected} input channels, found {found}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::UnsupportedKernel { layer, kh, kw } => {
                write!(f, "{layer}: kernel {kh}x{kw} does not fit the 6x6 PE array")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Capacity {
                layer,
                buffer,
                needed,
                capacity,
            } => write!(
                f,
                "{layer}: {buffer} buffer needs {needed} bytes, capacity is {capacity}"
            ),
            Error::Integrity(msg) => write!(f, "tile integrity error: {msg}"),
            Error::UnknownAccessKind(kind) => write!(f, "unknown access kind `{kind}`"),
            Error::IntermediateTraffic(bytes) => {
                write!(f, "{bytes} bytes of intermediate features reached external memory")
            }
        }
    }
}

impl core::error::Error for Error {}
