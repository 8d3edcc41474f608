use std::fmt;
use std::io;

use thiserror::Error;

use crate::dp::DpError;
use crate::model::ModelError;
use crate::ring::RingError;
use crate::transport::FrameError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Violations of the message choreography or of share/material contracts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("share holders do not form an A/B pair")]
    Unpaired,
    #[error("operands held by different workers")]
    HolderMismatch,
    #[error("operands belong to different sessions")]
    SessionMismatch,
    #[error("material {0} was already consumed")]
    MaterialReused(u64),
    #[error("material {0} belongs to the other worker")]
    WrongHolder(u64),
    #[error("preprocessed material exhausted: {0}")]
    MaterialExhausted(String),
    #[error("operand shapes {left:?} and {right:?} do not fit the material")]
    Shape { left: Vec<usize>, right: Vec<usize> },
    #[error("sequence desync: expected {expected}, got {got}")]
    Desync { expected: u64, got: u64 },
    #[error("frame for session {got} arrived on session {expected}")]
    ForeignSession { expected: String, got: String },
    #[error("unexpected message: wanted {expected}, got {got}")]
    Unexpected { expected: String, got: String },
    #[error("{role} may not receive {tag} messages")]
    Forbidden { role: String, tag: String },
    #[error("session configuration hash mismatch with {peer}")]
    ConfigMismatch { peer: String },
    #[error("duplicate partial result for owner {owner} from worker {worker}")]
    DuplicatePartial { owner: u32, worker: String },
    #[error("dealer unavailable: {0}")]
    DealerUnavailable(String),
    #[error("sealed result failed authentication")]
    Tamper,
    #[error("peer aborted: {0}")]
    Aborted(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("transport error at {endpoint}: {source}")]
    Transport {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{party}: {source}")]
    Party {
        party: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Protocol,
    Transport,
    Budget,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Protocol => 3,
            ErrorKind::Transport => 4,
            ErrorKind::Budget => 5,
            ErrorKind::Io => 6,
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Ring(_) | Error::Protocol(_) | Error::Frame(_) => ErrorKind::Protocol,
            Error::Dp(DpError::BudgetExhausted { .. }) => ErrorKind::Budget,
            Error::Dp(_) | Error::Config(_) => ErrorKind::Usage,
            Error::Model(ModelError::Io(_)) | Error::Io(_) => ErrorKind::Io,
            Error::Model(_) => ErrorKind::Usage,
            Error::Transport { .. } | Error::Timeout(_) => ErrorKind::Transport,
            Error::Party { source, .. } => source.kind(),
        }
    }

    /// Transport failures may succeed on retry; protocol failures will not.
    pub fn is_retryable(&self) -> bool {
        self.kind() == ErrorKind::Transport
    }

    /// Attributes the error to a party.
    pub fn at(self, party: impl fmt::Display) -> Self {
        Error::Party {
            party: party.to_string(),
            source: Box::new(self),
        }
    }

    pub fn transport(endpoint: impl Into<String>, source: io::Error) -> Self {
        Error::Transport {
            endpoint: endpoint.into(),
            source,
        }
    }
}
