//! Crate-wide error type, categorized so the CLI can map failures to exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("fixed-point overflow: {0}")]
    Overflow(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("channel closed")]
    ChannelClosed,

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("handshake mismatch: {0}")]
    ConfigMismatch(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 protocol/transport, 5 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigMismatch(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 3,
            Error::Dimension(_)
            | Error::Overflow(_)
            | Error::Protocol(_)
            | Error::Transport(_)
            | Error::ChannelClosed
            | Error::MalformedFrame(_) => 4,
            Error::Divergence(_) => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_distinct_nonzero_codes() {
        let codes = [
            Error::Config("x".into()).exit_code(),
            Error::Data("x".into()).exit_code(),
            Error::Protocol("x".into()).exit_code(),
            Error::Divergence("x".into()).exit_code(),
        ];
        for &c in &codes {
            assert!(c != 0);
        }
        let mut unique = codes.to_vec();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), codes.len());
    }
}
