//! Errors carrying the process exit code.

use std::fmt;
use std::path::Path;

pub const PARSE: u8 = 1;
pub const PIPELINE: u8 = 2;
pub const IO: u8 = 3;
pub const USAGE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure { code, error: error.into() }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::new(USAGE, anyhow::anyhow!("{msg}"))
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::new(IO, anyhow::Error::new(e).context(format!("{}", path.display())))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<mscale::Error> for Failure {
    fn from(e: mscale::Error) -> Self {
        let code = match &e {
            mscale::Error::Parse { .. } => PARSE,
            mscale::Error::InvalidArgument(_) | mscale::Error::GridMismatch(_) => USAGE,
            _ if e.is_pipeline_rejection() => PIPELINE,
            _ => USAGE,
        };
        Failure::new(code, e)
    }
}
