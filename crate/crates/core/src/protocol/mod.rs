//! Wire format and transports for every message exchanged between roles.
//!
//! A frame is a 16-byte little-endian header followed by a payload:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SPLN`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 1    | frame type (1..=6)                      |
//! | 6      | 4    | step, u32                               |
//! | 10     | 2    | sender role tag, u16                    |
//! | 12     | 4    | payload length, u32                     |
//!
//! Tensor-carrying frames (activation, gradient, weights, logits) hold a
//! sequence of tensor payloads: `rank: u32`, `rank` dims as u32, then the
//! values as f32. Labels are `count: u32` followed by u16 class ids. Control
//! frames hold an opcode byte and its operands.

mod frame;
mod transport;

use thiserror::Error;

pub use frame::{
    control_frame_len, decode, encode, frame_len, labels_frame_len, tensor_payload_len,
    tensors_frame_len, ControlOp, Frame, FrameType, Message, HEADER_LEN, MAGIC, VERSION,
};
pub use transport::{
    in_process_pair, receive, send, tcp_pair, Binding, InProcessEndpoint, TcpEndpoint, Transport,
    DEFAULT_RECV_TIMEOUT,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic {found:?} at offset {offset}")]
    BadMagic { offset: usize, found: [u8; 4] },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u8 },
    #[error("unknown frame type {value} at offset {offset}")]
    UnknownFrameType { offset: usize, value: u8 },
    #[error("length mismatch at offset {offset}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed payload at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("channel closed")]
    ChannelClosed,
    #[error("no frame arrived within {0:?}")]
    Timeout(std::time::Duration),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}
