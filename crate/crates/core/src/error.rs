use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid device parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("bias out of range for operating mode {row}: {constraint} (got {value} V)")]
    BiasRange {
        row: u8,
        constraint: &'static str,
        value: f64,
    },

    #[error("ill-posed bias: {0}")]
    IllPosedBias(&'static str),

    #[error("DC operating point did not converge (last KCL residual {residual:e} A)")]
    NoConvergence { residual: f64 },

    #[error("transient step size underflow at t = {time:e} s")]
    StepUnderflow { time: f64 },

    #[error("implicit solve failed at t = {time:e} s")]
    ImplicitSolve { time: f64 },

    #[error("{phase} did not reach its threshold within {pulses} pulses")]
    BudgetExceeded { phase: &'static str, pulses: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cell ({row}, {col}): {source}")]
    Cell {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("device {index}: {source}")]
    Device {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate calibration data: {0}")]
    DegenerateData(&'static str),

    #[error("calibration rejected: RMS residual {rms_decades:.3} decades (limit {limit}), best fit {best:?}")]
    FitRejected {
        rms_decades: f64,
        limit: f64,
        best: crate::device::TransistorParams,
    },

    #[error("trace file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical engines (DC solver, integrator,
    /// pulse budgets), as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoConvergence { .. }
            | Error::StepUnderflow { .. }
            | Error::ImplicitSolve { .. }
            | Error::BudgetExceeded { .. }
            | Error::FitRejected { .. } => true,
            Error::Cell { source, .. } | Error::Device { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Csv(_) => true,
            Error::Cell { source, .. } | Error::Device { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
