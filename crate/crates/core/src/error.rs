use std::fmt;
use std::path::PathBuf;

/// Error type shared across the crate.
///
/// Numerical routines return structured variants so callers (and the CLI's
/// exit-code mapping) can distinguish configuration problems, file problems
/// and numerical failures without string matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Buffer length does not match rows * cols.
    DataLength { rows: usize, cols: usize, got: usize },
    /// A value that must be finite is NaN or infinite.
    NonFinite { context: &'static str },
    /// A linear system required by the operation has no solution.
    Singular { context: &'static str },
    /// A configuration value is out of its documented range, or required
    /// sections are missing/inconsistent.
    InvalidConfig(String),
    /// An input collection that must be non-empty is empty.
    EmptyInput(&'static str),
    /// The alignment term 1 + W_ii * S_ii fell below the positivity floor.
    PositiveTermTooSmall { index: usize, value: f64 },
    /// The memory bank has too few entries to answer k-nearest queries
    /// after excluding the anchor pair's own rows.
    BankTooSmall { bank_len: usize, required: usize },
    /// Fewer eligible points than requested neighbours.
    NotEnoughNeighbours { k: usize, usable: usize },
    /// Training produced a non-finite loss or gradient and was aborted.
    TrainingDiverged { epoch: usize, step: usize, what: &'static str },
    /// Filesystem failure wrapping the offending path.
    Io { path: PathBuf, message: String },
    /// Feature file does not start with the expected magic bytes.
    BadMagic { found: [u8; 4] },
    /// Feature file has an unsupported format version.
    VersionMismatch { found: u32, expected: u32 },
    /// Feature file payload is shorter than the header promises.
    TruncatedPayload { expected_bytes: u64, actual_bytes: u64 },
    /// A manifest or config file failed to parse.
    Parse { path: PathBuf, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, expected, got } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::DataLength { rows, cols, got } => write!(
                f,
                "buffer of length {got} cannot back a {rows}x{cols} matrix"
            ),
            Error::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            Error::Singular { context } => {
                write!(f, "singular linear system in {context}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::PositiveTermTooSmall { index, value } => write!(
                f,
                "alignment term 1 + W*S = {value:e} at pair {index} is below the 1e-9 floor"
            ),
            Error::BankTooSmall { bank_len, required } => write!(
                f,
                "memory bank holds {bank_len} entries but at least {required} are required"
            ),
            Error::NotEnoughNeighbours { k, usable } => write!(
                f,
                "requested {k} neighbours but only {usable} eligible points remain"
            ),
            Error::TrainingDiverged { epoch, step, what } => write!(
                f,
                "training aborted: non-finite {what} at epoch {epoch}, step {step}"
            ),
            Error::Io { path, message } => {
                write!(f, "io error on {}: {message}", path.display())
            }
            Error::BadMagic { found } => write!(
                f,
                "bad magic: expected \"EMBF\", found bytes {:02x} {:02x} {:02x} {:02x}",
                found[0], found[1], found[2], found[3]
            ),
            Error::VersionMismatch { found, expected } => write!(
                f,
                "unsupported feature file version {found} (this build reads version {expected})"
            ),
            Error::TruncatedPayload { expected_bytes, actual_bytes } => write!(
                f,
                "truncated payload: header promises {expected_bytes} bytes, file holds {actual_bytes}"
            ),
            Error::Parse { path, message } => {
                write!(f, "failed to parse {}: {message}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
