//! Typed payloads for each frame type. All integers are little-endian and
//! bit vectors are packed LSB-first behind a `u32` bit count.

use crate::bits::{pack, unpack};
use crate::distill::ParityQuery;
use crate::error::{Error, Result};
use crate::optics::Basis;
use crate::transport::{Frame, MessageType};

pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello { version: u8, role: u8, n_slots: u64 },
    /// Bob's accepted slots with the basis he measured in.
    BasisAnnounce(Vec<(u64, Basis)>),
    /// One flag per announced slot: `true` where the bases agree.
    SiftMask(Vec<bool>),
    SampleRequest { positions: Vec<u32>, bob_bits: Vec<bool> },
    SampleReveal(Vec<bool>),
    ParityQuery(ParityQuery),
    ParityReply(bool),
    PaSeed(Vec<bool>),
    KeyDigest { digest: [u8; 32], count: u32 },
    Abort(String),
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::BasisAnnounce(_) => MessageType::BasisAnnounce,
            Message::SiftMask(_) => MessageType::SiftMask,
            Message::SampleRequest { .. } => MessageType::SampleRequest,
            Message::SampleReveal(_) => MessageType::SampleReveal,
            Message::ParityQuery(_) => MessageType::ParityQuery,
            Message::ParityReply(_) => MessageType::ParityReply,
            Message::PaSeed(_) => MessageType::PaSeed,
            Message::KeyDigest { .. } => MessageType::KeyDigest,
            Message::Abort(_) => MessageType::Abort,
        }
    }

    pub fn to_frame(&self, session_id: u64) -> Frame {
        let mut p = Vec::new();
        match self {
            Message::Hello { version, role, n_slots } => {
                p.push(*version);
                p.push(*role);
                p.extend_from_slice(&n_slots.to_le_bytes());
            }
            Message::BasisAnnounce(entries) => {
                p.extend_from_slice(&(entries.len() as u32).to_le_bytes());
                for (slot, basis) in entries {
                    p.extend_from_slice(&slot.to_le_bytes());
                    p.push(basis.as_u8());
                }
            }
            Message::SiftMask(bits) | Message::SampleReveal(bits) | Message::PaSeed(bits) => put_bits(&mut p, bits),
            Message::SampleRequest { positions, bob_bits } => {
                p.extend_from_slice(&(positions.len() as u32).to_le_bytes());
                for pos in positions {
                    p.extend_from_slice(&pos.to_le_bytes());
                }
                p.extend_from_slice(&pack(bob_bits));
            }
            Message::ParityQuery(q) => {
                p.push(q.pass);
                p.extend_from_slice(&q.block.to_le_bytes());
                p.extend_from_slice(&q.start.to_le_bytes());
                p.extend_from_slice(&q.end.to_le_bytes());
            }
            Message::ParityReply(bit) => p.push(u8::from(*bit)),
            Message::KeyDigest { digest, count } => {
                p.extend_from_slice(digest);
                p.extend_from_slice(&count.to_le_bytes());
            }
            Message::Abort(reason) => p.extend_from_slice(reason.as_bytes()),
        }
        Frame::new(self.msg_type(), session_id, p)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let mut r = Reader::new(&frame.payload, frame.msg_type);
        let msg = match frame.msg_type {
            MessageType::Hello => Message::Hello {
                version: r.u8()?,
                role: r.u8()?,
                n_slots: r.u64()?,
            },
            MessageType::BasisAnnounce => {
                let n = r.u32()? as usize;
                r.expect_remaining(n.checked_mul(9))?;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let slot = r.u64()?;
                    let raw = r.u8()?;
                    let basis = Basis::from_u8(raw).ok_or_else(|| Error::Protocol(format!("bad basis byte {raw}")))?;
                    entries.push((slot, basis));
                }
                Message::BasisAnnounce(entries)
            }
            MessageType::SiftMask => Message::SiftMask(r.bits()?),
            MessageType::SampleReveal => Message::SampleReveal(r.bits()?),
            MessageType::PaSeed => Message::PaSeed(r.bits()?),
            MessageType::SampleRequest => {
                let n = r.u32()? as usize;
                r.expect_remaining(n.checked_mul(4).map(|b| b + n.div_ceil(8)))?;
                let positions = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let bob_bits = r.packed(n)?;
                Message::SampleRequest { positions, bob_bits }
            }
            MessageType::ParityQuery => Message::ParityQuery(ParityQuery {
                pass: r.u8()?,
                block: r.u32()?,
                start: r.u32()?,
                end: r.u32()?,
            }),
            MessageType::ParityReply => match r.u8()? {
                0 => Message::ParityReply(false),
                1 => Message::ParityReply(true),
                other => return Err(Error::Protocol(format!("parity reply byte {other}"))),
            },
            MessageType::KeyDigest => {
                let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
                Message::KeyDigest { digest, count: r.u32()? }
            }
            MessageType::Abort => {
                let s = String::from_utf8_lossy(r.take(frame.payload.len())?).into_owned();
                Message::Abort(s)
            }
        };
        r.finish()?;
        Ok(msg)
    }
}

fn put_bits(p: &mut Vec<u8>, bits: &[bool]) {
    p.extend_from_slice(&(bits.len() as u32).to_le_bytes());
    p.extend_from_slice(&pack(bits));
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    ty: MessageType,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], ty: MessageType) -> Self {
        Self { buf, pos: 0, ty }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Protocol(format!("{:?} payload too short", self.ty)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn packed(&mut self, n: usize) -> Result<Vec<bool>> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok(unpack(bytes, n).expect("length checked"))
    }

    fn bits(&mut self) -> Result<Vec<bool>> {
        let n = self.u32()? as usize;
        self.packed(n)
    }

    /// Rejects counts whose declared size disagrees with the payload before
    /// anything is allocated.
    fn expect_remaining(&self, need: Option<usize>) -> Result<()> {
        match need {
            Some(n) if n == self.buf.len() - self.pos => Ok(()),
            _ => Err(Error::Protocol(format!("{:?} payload length mismatch", self.ty))),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{:?} payload has {} trailing bytes",
                self.ty,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
