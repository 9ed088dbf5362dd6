use std::io::{self, Read, Write};

use thiserror::Error;

/// Upper bound on `length` accepted by decoders.
pub const MAX_FRAME_LEN: u32 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 0x01,
    Spec = 0x02,
    Reset = 0x03,
    Obs = 0x04,
    Step = 0x05,
    Transition = 0x06,
    Seed = 0x07,
    Close = 0x08,
    Error = 0x7F,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        use FrameType::*;
        Some(match b {
            0x01 => Hello,
            0x02 => Spec,
            0x03 => Reset,
            0x04 => Obs,
            0x05 => Step,
            0x06 => Transition,
            0x07 => Seed,
            0x08 => Close,
            0x7F => Error,
            _ => return None,
        })
    }
}

/// A decoded frame. `kind` is the raw type byte so that unknown types survive
/// decoding and can be answered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Self { kind: kind as u8, payload }
    }

    pub fn frame_type(&self) -> Option<FrameType> {
        FrameType::from_byte(self.kind)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_frame(self.kind, &self.payload)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame needs at least 5 bytes, got {0}")]
    Short(usize),
    #[error("frame length field is zero")]
    ZeroLength,
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN} byte limit")]
    TooLong(u32),
    #[error("frame declares {declared} bytes after the prefix but {actual} follow")]
    LengthMismatch { declared: u32, actual: usize },
}

/// `[len: u32 LE][kind][payload]` with `len = 1 + payload.len()`.
pub fn encode_frame(kind: u8, payload: &[u8]) -> Vec<u8> {
    let len = u32::try_from(payload.len() + 1).expect("payload fits in u32");
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.extend_from_slice(&len.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(payload);
    out
}

fn check_len(len: u32) -> Result<(), FrameError> {
    match len {
        0 => Err(FrameError::ZeroLength),
        l if l > MAX_FRAME_LEN => Err(FrameError::TooLong(l)),
        _ => Ok(()),
    }
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < 5 {
        return Err(FrameError::Short(bytes.len()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    check_len(len)?;
    if bytes.len() - 4 != len as usize {
        return Err(FrameError::LengthMismatch { declared: len, actual: bytes.len() - 4 });
    }
    Ok(Frame { kind: bytes[4], payload: bytes[5..].to_vec() })
}

/// Incremental reassembly of a byte stream into frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// The next complete frame, `Ok(None)` if more bytes are needed. A zero or
    /// oversized length is an error; the buffer is left untouched.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.buf[..4].try_into().expect("4 bytes"));
        check_len(len)?;
        let total = 4 + len as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        let frame = Frame { kind: self.buf[4], payload: self.buf[5..total].to_vec() };
        self.buf.drain(..total);
        Ok(Some(frame))
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the prefix.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Result<Frame, FrameError>>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(prefix);
    if let Err(e) = check_len(len) {
        return Ok(Some(Err(e)));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let kind = body[0];
    body.remove(0);
    Ok(Some(Ok(Frame { kind, payload: body })))
}

/// Little-endian payload helpers.
pub(crate) fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) fn get_f64s(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
