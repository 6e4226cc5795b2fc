//! Length-prefixed frames: `len u32 | type u8 | round u32 | client u32 | payload`.
//! `len` counts every byte after itself.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Bytes a frame adds on top of its payload.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 4 + 4;
/// Frames claiming more than this are rejected before allocation.
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    GlobalParams = 2,
    LocalParams = 3,
    Metrics = 4,
    Bye = 5,
}

impl MessageType {
    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            1 => MessageType::Hello,
            2 => MessageType::GlobalParams,
            3 => MessageType::LocalParams,
            4 => MessageType::Metrics,
            5 => MessageType::Bye,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: MessageType,
    pub round: u32,
    pub client: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, round: u32, client: u32, payload: Vec<u8>) -> Self {
        Frame {
            kind,
            round,
            client,
            payload,
        }
    }

    /// Bytes on the wire.
    pub fn wire_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }
}

/// Writes one frame and returns the number of bytes sent.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<usize> {
    let len = frame.wire_len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut head = [0u8; FRAME_OVERHEAD];
    head[..4].copy_from_slice(&(len as u32).to_le_bytes());
    head[4] = frame.kind as u8;
    head[5..9].copy_from_slice(&frame.round.to_le_bytes());
    head[9..13].copy_from_slice(&frame.client.to_le_bytes());
    w.write_all(&head)?;
    w.write_all(&frame.payload)?;
    w.flush()?;
    Ok(frame.wire_len())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len < FRAME_OVERHEAD - 4 {
        return Err(Error::Protocol(format!("frame length {len} is shorter than its header")));
    }
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame length {len} exceeds the limit")));
    }
    let mut head = [0u8; FRAME_OVERHEAD - 4];
    r.read_exact(&mut head)?;
    let kind = MessageType::from_u8(head[0])?;
    let round = u32::from_le_bytes(head[1..5].try_into().expect("4 bytes"));
    let client = u32::from_le_bytes(head[5..9].try_into().expect("4 bytes"));
    let mut payload = vec![0u8; len - (FRAME_OVERHEAD - 4)];
    r.read_exact(&mut payload)?;
    Ok(Frame {
        kind,
        round,
        client,
        payload,
    })
}
