//! Framed public channel.
//!
//! Wire format (all integers little-endian):
//!
//! ```text
//! ┌──────────────┬──────────┬─────────────────┬─────────────┐
//! │ length (u32) │ type (u8)│ session id (u64)│ payload     │
//! └──────────────┴──────────┴─────────────────┴─────────────┘
//! ```
//!
//! `length` counts the type byte, the session id and the payload, so an
//! empty payload gives `length = 9` and a 13-byte frame. Payloads are capped
//! at [`MAX_PAYLOAD`].

mod stream;

use thiserror::Error;

pub use stream::{loopback_pair, FramedStream, LoopbackStream, Transcript};

pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Bytes covered by `length` besides the payload.
pub const LENGTH_OVERHEAD: usize = 9;
pub const HEADER_LEN: usize = 4 + LENGTH_OVERHEAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    BasisAnnounce = 2,
    SiftMask = 3,
    SampleRequest = 4,
    SampleReveal = 5,
    ParityQuery = 6,
    ParityReply = 7,
    PaSeed = 8,
    KeyDigest = 9,
    Abort = 255,
}

impl TryFrom<u8> for MessageType {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        Ok(match v {
            1 => MessageType::Hello,
            2 => MessageType::BasisAnnounce,
            3 => MessageType::SiftMask,
            4 => MessageType::SampleRequest,
            5 => MessageType::SampleReveal,
            6 => MessageType::ParityQuery,
            7 => MessageType::ParityReply,
            8 => MessageType::PaSeed,
            9 => MessageType::KeyDigest,
            255 => MessageType::Abort,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("declared frame length {0} is shorter than the fixed header")]
    MalformedLength(u32),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("connection closed mid-frame ({0} bytes pending)")]
    Truncated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub session_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, session_id: u64, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            session_id,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_frame_into(frame, &mut out)?;
    Ok(out)
}

pub fn encode_frame_into(frame: &Frame, out: &mut Vec<u8>) -> Result<(), FrameError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(frame.payload.len()));
    }
    let length = (frame.payload.len() + LENGTH_OVERHEAD) as u32;
    out.extend_from_slice(&length.to_le_bytes());
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&frame.session_id.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(())
}

/// Decodes one frame from the front of `buf`.
///
/// Returns `Ok(None)` when `buf` holds only part of a frame; nothing is
/// consumed in that case. On success the second element is the number of
/// bytes the frame occupied.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let length = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
    if (length as usize) < LENGTH_OVERHEAD {
        return Err(FrameError::MalformedLength(length));
    }
    let payload_len = length as usize - LENGTH_OVERHEAD;
    if payload_len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload_len));
    }
    if buf.len() < 5 {
        return Ok(None);
    }
    let msg_type = MessageType::try_from(buf[4])?;
    let total = HEADER_LEN + payload_len;
    if buf.len() < total {
        return Ok(None);
    }
    let session_id = u64::from_le_bytes(buf[5..13].try_into().expect("8 bytes"));
    let frame = Frame::new(msg_type, session_id, buf[HEADER_LEN..total].to_vec());
    Ok(Some((frame, total)))
}

/// Incremental decoder tolerating arbitrary chunk boundaries.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        match decode_frame(&self.buf[self.start..])? {
            Some((frame, used)) => {
                self.start += used;
                if self.start > 64 * 1024 && self.start * 2 > self.buf.len() {
                    self.buf.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(frame))
            }
            None => Ok(None),
        }
    }

    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }
}

/// Decodes a complete byte sequence (for example a transcript file) into
/// frames. Trailing partial frames are an error.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
    let mut decoder = FrameDecoder::new();
    decoder.push(bytes);
    let mut frames = Vec::new();
    while let Some(frame) = decoder.next_frame()? {
        frames.push(frame);
    }
    match decoder.pending() {
        0 => Ok(frames),
        n => Err(FrameError::Truncated(n)),
    }
}
