//! Error classification into process exit codes.

use std::fmt;

use litese_core::Error as CoreError;
use litese_nas::NasError;

pub const INPUT: i32 = 2;
pub const MISMATCH: i32 = 3;
pub const RUNTIME: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Self {
            code: INPUT,
            msg: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            code: RUNTIME,
            msg: msg.into(),
        }
    }

    /// Prefixes the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.msg = format!("{}: {}", what, self.msg);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Mismatch(_) => MISMATCH,
        CoreError::Diverged(_) => RUNTIME,
        CoreError::Io(io)
            if io.kind() != std::io::ErrorKind::NotFound
                && io.kind() != std::io::ErrorKind::InvalidData =>
        {
            RUNTIME
        }
        _ => INPUT,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self {
            code: core_code(&e),
            msg: e.to_string(),
        }
    }
}

impl From<NasError> for Failure {
    fn from(e: NasError) -> Self {
        let code = match &e {
            NasError::Core(c) => core_code(c),
            NasError::Evaluation(_) => RUNTIME,
            NasError::Io(io) if io.kind() != std::io::ErrorKind::NotFound => RUNTIME,
            _ => INPUT,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            INPUT
        } else {
            RUNTIME
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
