use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `"SPNN"`, written in that byte order.
pub const MAGIC: u32 = 0x5350_4E4E;
/// magic (4) + length (4) + session id (8) + step (8) + type (1).
pub const HEADER_LEN: usize = 25;
pub const MAX_PAYLOAD: usize = 1 << 31;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("corrupt frame: {0}")]
    Corrupt(String),
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    TripleDeal = 0,
    ShareTransfer = 1,
    HiddenLayerUp = 2,
    LastHiddenToA = 3,
    HeadGradDown = 4,
    InputGradDown = 5,
    Control = 6,
    CiphertextTransfer = 7,
    KeyDistribution = 8,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::TripleDeal,
        MsgType::ShareTransfer,
        MsgType::HiddenLayerUp,
        MsgType::LastHiddenToA,
        MsgType::HeadGradDown,
        MsgType::InputGradDown,
        MsgType::Control,
        MsgType::CiphertextTransfer,
        MsgType::KeyDistribution,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        MsgType::ALL.get(v as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session_id: u64,
    pub step: u64,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(session_id: u64, step: u64, msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame {
            session_id,
            step,
            msg_type,
            payload,
        }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        let (header, len) = parse_header(bytes.get(..HEADER_LEN).ok_or(FrameError::Truncated)?)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < len {
            return Err(FrameError::Truncated);
        }
        if body.len() > len {
            return Err(FrameError::Corrupt(format!("{} trailing bytes", body.len() - len)));
        }
        Ok(Frame {
            payload: body.to_vec(),
            ..header
        })
    }

    /// Reads one frame from a byte stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
        let mut head = [0u8; HEADER_LEN];
        read_exact(r, &mut head)?;
        let (header, len) = parse_header(&head)?;
        let mut payload = vec![0u8; len];
        read_exact(r, &mut payload)?;
        Ok(Frame { payload, ..header })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FrameError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e.to_string()),
    })
}

fn parse_header(h: &[u8]) -> Result<(Frame, usize), FrameError> {
    let magic = u32::from_be_bytes(h[..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(FrameError::Corrupt(format!("bad magic {magic:#010x}")));
    }
    let len = u32::from_le_bytes(h[4..8].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    let msg_type = MsgType::from_u8(h[24]).ok_or_else(|| FrameError::Corrupt(format!("unknown message type {}", h[24])))?;
    Ok((
        Frame {
            session_id: u64::from_le_bytes(h[8..16].try_into().unwrap()),
            step: u64::from_le_bytes(h[16..24].try_into().unwrap()),
            msg_type,
            payload: Vec::new(),
        },
        len,
    ))
}
