use std::io;

use thiserror::Error;

use crate::transport::MsgType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no w <= {limit} satisfies the occupancy bound (N={set_size}, d={d}, sigma={sigma})")]
    Infeasible {
        set_size: u64,
        d: u32,
        sigma: u32,
        limit: u32,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row index {index} out of range for column {column} (m={rows})")]
    IndexOutOfRange {
        column: usize,
        index: u32,
        rows: usize,
    },

    #[error("set has {len} distinct elements, bound is {bound}")]
    OversizeSet { len: usize, bound: usize },

    #[error("parameter mismatch on `{field}`: ours={ours}, peer={theirs}")]
    ParamsMismatch {
        field: String,
        ours: String,
        theirs: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("peer disconnected")]
    Disconnected,

    #[error("timed out: {0}")]
    Timeout(String),

    #[error("unknown frame type 0x{0:02x}")]
    UnknownMsgType(u8),

    #[error("expected {expected:?} frame, got {got:?}")]
    UnexpectedFrame { expected: MsgType, got: MsgType },

    #[error("frame payload of {0} bytes exceeds the 2^31 limit")]
    FrameTooLarge(u64),

    #[error("peer aborted: {0}")]
    Aborted(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
