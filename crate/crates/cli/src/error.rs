use std::fmt;
use std::path::Path;

use wdro::data::DataError;
use wdro::dual::DualError;
use wdro::ope::OpeError;
use wdro::opl::OplError;
use wdro::synth::SynthError;
use wdro::transport::TransportError;

pub const EXIT_IO: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }

    pub fn file(path: &Path, e: std::io::Error) -> Self {
        Self::io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn dual_code(e: &DualError) -> i32 {
    match e {
        DualError::Lp(_) => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn ope_code(e: &OpeError) -> i32 {
    match e {
        OpeError::Dual(d) => dual_code(d),
        _ => EXIT_VALIDATION,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        _ if e.is_io() => EXIT_IO,
        DataError::Ope(o) => ope_code(o),
        _ => EXIT_VALIDATION,
    }
}

macro_rules! classify {
    ($t:ty, $f:expr) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                let code: i32 = $f(&e);
                Self { code, message: e.to_string() }
            }
        }
    };
}

classify!(DataError, data_code);
classify!(OpeError, ope_code);
classify!(DualError, dual_code);
classify!(OplError, |e: &OplError| match e {
    OplError::Ope(o) => ope_code(o),
    OplError::Dual(d) => dual_code(d),
    _ => EXIT_VALIDATION,
});
classify!(SynthError, |e: &SynthError| match e {
    SynthError::Data(d) => data_code(d),
    SynthError::Ope(o) => ope_code(o),
    _ => EXIT_VALIDATION,
});
classify!(TransportError, |e: &TransportError| match e {
    TransportError::NoConvergence(_) => EXIT_NUMERICAL,
    _ => EXIT_VALIDATION,
});
classify!(wdro::dist::DistError, |_: &wdro::dist::DistError| EXIT_VALIDATION);
classify!(csv::Error, |e: &csv::Error| if e.is_io_error() { EXIT_IO } else { EXIT_VALIDATION });
classify!(serde_json::Error, |e: &serde_json::Error| if e.is_io() { EXIT_IO } else { EXIT_VALIDATION });
classify!(wdro::compare::CompareError, |e: &wdro::compare::CompareError| match e {
    wdro::compare::CompareError::Dual(d) => dual_code(d),
    wdro::compare::CompareError::Transport(TransportError::NoConvergence(_)) => EXIT_NUMERICAL,
    _ => EXIT_VALIDATION,
});
