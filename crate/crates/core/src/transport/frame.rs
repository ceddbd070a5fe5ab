//! Wire frame: 4-byte big-endian length, 1-byte message type, 8-byte session
//! id, payload. The length counts every byte after the length field.

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 4 + 1 + 8;
/// Upper bound on a single frame body (1 GiB).
pub const MAX_BODY: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Data = 2,
    Open = 3,
    Beaver = 4,
    Reshare = 5,
    Sacrifice = 6,
    Commit = 7,
    Reveal = 8,
    Echo = 9,
    Input = 10,
    Output = 11,
    Arch = 12,
    InputCheck = 13,
}

impl TryFrom<u8> for MsgType {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        use MsgType::*;
        Ok(match b {
            1 => Hello,
            2 => Data,
            3 => Open,
            4 => Beaver,
            5 => Reshare,
            6 => Sacrifice,
            7 => Commit,
            8 => Reveal,
            9 => Echo,
            10 => Input,
            11 => Output,
            12 => Arch,
            13 => InputCheck,
            _ => return Err(Error::Protocol(format!("unknown message type {b}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let body = 1 + 8 + self.payload.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decode one complete frame. Any length disagreement is a protocol error;
    /// nothing is delivered from a partial frame.
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Protocol(format!(
                "truncated frame: {} bytes",
                bytes.len()
            )));
        }
        let body = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if body < 9 || body > MAX_BODY {
            return Err(Error::Protocol(format!("bad frame length {body}")));
        }
        if bytes.len() - 4 != body {
            return Err(Error::Protocol(format!(
                "frame length {body} but {} body bytes present",
                bytes.len() - 4
            )));
        }
        let msg_type = MsgType::try_from(bytes[4])?;
        let session = u64::from_be_bytes(bytes[5..13].try_into().expect("8 bytes"));
        Ok(Frame {
            msg_type,
            session,
            payload: bytes[13..].to_vec(),
        })
    }
}
