use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("dwell {dwell} s exceeds a tenth of the sweep period {period} s")]
    UndersampledSweep { dwell: f64, period: f64 },

    #[error("duration must be non-negative, got {0} s")]
    NegativeDuration(f64),

    #[error("trace of {bins} bins does not span an integer number of modulation periods ({bins_per_period} bins each)")]
    PeriodMisaligned { bins: usize, bins_per_period: f64 },

    #[error("frequency {frequency} Hz is at or above the bin Nyquist rate {nyquist} Hz")]
    AboveNyquist { frequency: f64, nyquist: f64 },

    #[error("frequency {frequency} Hz is not commensurate with the segment length {duration} s")]
    Incommensurate { frequency: f64, duration: f64 },

    #[error("oscillator frequency {f_tf} Hz must exceed the modulation rate {f_mod} Hz")]
    SidebandAlias { f_tf: f64, f_mod: f64 },

    #[error("carrier is not locked: |a1| below the noise-floor threshold")]
    NoLock,

    #[error("oscillation amplitude x0 is zero; the field gradient is undefined")]
    ZeroAmplitude,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
