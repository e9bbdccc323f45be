use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the workbench.
///
/// Variants fall into two groups: validation failures (bad inputs, violated
/// invariants) and numeric failures (quadrature coverage, non-convergence,
/// budget caps). [`Error::is_numeric`] tells them apart.
#[derive(Debug)]
pub enum Error {
    /// A sequence or configuration invariant does not hold.
    InvalidSpec(String),
    /// Trace sampling is too coarse for the sequence features.
    Sampling { rate: f64, required: f64 },
    /// An argument is outside its documented domain.
    InvalidInput(String),
    /// A frequency grid extends beyond the trace Nyquist frequency.
    GridBeyondNyquist { omega: f64, nyquist: f64 },
    /// The filter maximum sits on the grid boundary.
    PeakAtGridEdge,
    /// The integration range does not cover the integrand support.
    Coverage { tail_fraction: f64 },
    /// A fit window or curve does not contain the required feature.
    NoPeak(String),
    /// A least-squares problem could not be set up or solved.
    Fit(String),
    /// Requested Monte Carlo work exceeds the configured cap.
    Budget { requested: f64, cap: f64 },
    /// Malformed input file.
    Parse { line: usize, message: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl Error {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Coverage { .. }
                | Error::Fit(_)
                | Error::NoPeak(_)
                | Error::Budget { .. }
                | Error::PeakAtGridEdge
        )
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSpec(msg) => write!(f, "invalid sequence spec: {msg}"),
            Error::Sampling { rate, required } => write!(
                f,
                "sampling too coarse: {rate:.6e} Hz given, at least {required:.6e} Hz required"
            ),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::GridBeyondNyquist { omega, nyquist } => write!(
                f,
                "frequency grid reaches {omega:.6e} rad/s, beyond the trace Nyquist limit {nyquist:.6e} rad/s"
            ),
            Error::PeakAtGridEdge => write!(f, "filter peak lies at the grid edge; widen the grid"),
            Error::Coverage { tail_fraction } => write!(
                f,
                "integration range does not cover the integrand: tail estimate {tail_fraction:.3e} of the total"
            ),
            Error::NoPeak(msg) => write!(f, "no peak found: {msg}"),
            Error::Fit(msg) => write!(f, "fit failed: {msg}"),
            Error::Budget { requested, cap } => {
                write!(f, "Monte Carlo budget exceeded: {requested:.3e} steps requested, cap {cap:.3e}")
            }
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
