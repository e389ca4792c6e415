use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::{encode_frame, Frame, FrameDecoder, FrameError};
use crate::error::{Error, Result};

/// Shared record of every frame sent through the streams it is attached to,
/// in send order. Its bytes are a valid frame sequence.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<u8>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn append(&self, bytes: &[u8]) {
        self.0.lock().expect("transcript lock").extend_from_slice(bytes);
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("transcript lock").clone()
    }

    pub fn frames(&self) -> std::result::Result<Vec<Frame>, FrameError> {
        super::decode_stream(&self.bytes())
    }
}

/// Frame-level view of a reliable ordered byte stream (loopback pipe, TCP
/// socket, ...).
pub struct FramedStream<S> {
    inner: S,
    decoder: FrameDecoder,
    transcript: Option<Transcript>,
    read_buf: Box<[u8]>,
    sent: u64,
    received: u64,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            decoder: FrameDecoder::new(),
            transcript: None,
            read_buf: vec![0; 8192].into_boxed_slice(),
            sent: 0,
            received: 0,
        }
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        let bytes = encode_frame(frame)?;
        if let Some(t) = &self.transcript {
            t.append(&bytes);
        }
        self.inner.write_all(&bytes)?;
        self.inner.flush()?;
        self.sent += 1;
        Ok(())
    }

    /// Blocks until a whole frame has arrived.
    pub fn recv(&mut self) -> Result<Frame> {
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                self.received += 1;
                return Ok(frame);
            }
            let n = self.inner.read(&mut self.read_buf)?;
            if n == 0 {
                return match self.decoder.pending() {
                    0 => Err(Error::Io(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "peer closed the connection",
                    ))),
                    pending => Err(FrameError::Truncated(pending).into()),
                };
            }
            self.decoder.push(&self.read_buf[..n]);
        }
    }

    pub fn frames_sent(&self) -> u64 {
        self.sent
    }

    pub fn frames_received(&self) -> u64 {
        self.received
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

/// One end of an in-process byte pipe.
pub struct LoopbackStream {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

/// Two connected in-process byte streams.
pub fn loopback_pair() -> (LoopbackStream, LoopbackStream) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        LoopbackStream {
            tx: Some(a_tx),
            rx: a_rx,
            pending: Vec::new(),
            offset: 0,
        },
        LoopbackStream {
            tx: Some(b_tx),
            rx: b_rx,
            pending: Vec::new(),
            offset: 0,
        },
    )
}

impl LoopbackStream {
    /// Closes the sending half; the peer then reads end-of-stream.
    pub fn shutdown(&mut self) {
        self.tx = None;
    }
}

impl Read for LoopbackStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.offset == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for LoopbackStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "stream shut down"))?;
        tx.send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
