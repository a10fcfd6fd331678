use std::io;

use thiserror::Error;

use crate::wire::MessageType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus {0} is not a prime below 2^62")]
    InvalidModulus(u64),
    #[error("order {order} does not divide {modulus} - 1")]
    OrderNotDividing { order: u64, modulus: u64 },
    #[error("no prime found in the search range")]
    SearchExhausted,
    #[error("{root} is not a primitive {order}-th root of unity")]
    BadRoot { root: u64, order: u64 },
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("ring element domain mismatch")]
    DomainMismatch,
    #[error("noise budget exhausted ({0:.2} bits left)")]
    NoiseExhausted(f64),
    #[error("modulus chain violation: {0}")]
    ChainViolation(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("activation output {value} does not fit the centered range of {modulus}")]
    RangeOverflow { value: i128, modulus: u64 },
    #[error("parameter range violation: {0}")]
    RangeViolation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
    #[error("transport closed by peer")]
    TransportClosed,
    #[error("protocol order violation: expected {expected:?}, got {got:?}")]
    ProtocolOrderViolation {
        expected: MessageType,
        got: MessageType,
    },
    #[error("handshake digest mismatch")]
    DigestMismatch,
    #[error("peer reported error: {0}")]
    Peer(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}
