pub mod commands;
pub mod config;
pub mod rundir;

use tfga_core::Error;

/// Bad flags, bad config or a refused overwrite; exits with code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 1 for usage and configuration problems, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            if matches!(e.root(), Error::Config(_) | Error::Validation(_)) {
                return 1;
            }
        }
    }
    2
}
