//! Frame layout, all integers little-endian:
//!
//! ```text
//! "CVF1" | kind u8 | batch_id u64 | rows u32 | cols u32 | rows*cols f32 (row-major)
//! ```

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 4] = *b"CVF1";
pub const HEADER_LEN: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    /// Party A's bottom-model activations for a batch.
    ForwardAct = 0,
    /// Party B's derivatives of the loss with respect to those activations.
    BackwardDer = 1,
    /// Start/stop handshakes.
    Control = 2,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(MessageKind::ForwardAct),
            1 => Some(MessageKind::BackwardDer),
            2 => Some(MessageKind::Control),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub batch_id: u64,
    pub payload: Matrix<f32>,
}

impl Message {
    /// Rounds a double-precision payload to the wire's single precision.
    pub fn from_f64(kind: MessageKind, batch_id: u64, payload: &Matrix<f64>) -> Self {
        Message {
            kind,
            batch_id,
            payload: payload.cast(),
        }
    }

    pub fn control(batch_id: u64) -> Self {
        Message {
            kind: MessageKind::Control,
            batch_id,
            payload: Matrix::zeros(0, 0),
        }
    }

    pub fn payload_f64(&self) -> Matrix<f64> {
        self.payload.cast()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.payload.len()
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let (rows, cols) = msg.payload.shape();
    let size_err = || Error::Size { rows, cols };
    let r32 = u32::try_from(rows).map_err(|_| size_err())?;
    let c32 = u32::try_from(cols).map_err(|_| size_err())?;
    r32.checked_mul(c32).ok_or_else(size_err)?;

    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.batch_id.to_le_bytes());
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    for v in msg.payload.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Protocol(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &bytes[..4])));
    }
    let kind = MessageKind::from_byte(bytes[4])
        .ok_or_else(|| Error::Protocol(format!("unknown message kind {}", bytes[4])))?;
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let batch_id = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let rows = u32_at(13) as usize;
    let cols = u32_at(17) as usize;
    let elems = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Protocol(format!("payload {rows}x{cols} overflows")))?;
    let expected = HEADER_LEN + 4 * elems;
    if bytes.len() != expected {
        return Err(Error::Protocol(format!(
            "frame is {} bytes, header announces {expected}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Message {
        kind,
        batch_id,
        payload: Matrix::from_vec(rows, cols, data)?,
    })
}
