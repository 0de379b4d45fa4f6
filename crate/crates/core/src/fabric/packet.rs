//! Traversal packet wire format.
//!
//! Header, little-endian:
//!
//! | off | size | field       |
//! |-----|------|-------------|
//! | 0   | 4    | magic `CHSE`|
//! | 4   | 1    | version     |
//! | 5   | 1    | msg_type    |
//! | 6   | 2    | flags       |
//! | 8   | 8    | request_id  |
//! | 16  | 8    | cur_ptr     |
//! | 24  | 2    | iter_used   |
//! | 26  | 2    | code_len    |
//! | 28  | 2    | scratch_len |
//! | 30  | 2    | reserved    |
//!
//! followed by `code_len` code bytes and `scratch_len` scratch bytes.
//! Flag bit 0 marks a continuation that must detour through the CPU node;
//! bits 8..16 hold a [`FaultCode`] on fault responses.

use alloc::vec::Vec;
use core::fmt;

use crate::memory::VirtualAddress;

pub const MAGIC: [u8; 4] = *b"CHSE";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 32;
pub const FLAG_DETOUR: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(u8)]
pub enum MsgType {
    Request = 0,
    ResponseDone = 1,
    ResponseIterLimit = 2,
    ResponseFault = 3,
    ResponseInvalidAddr = 4,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<MsgType> {
        Some(match b {
            0 => MsgType::Request,
            1 => MsgType::ResponseDone,
            2 => MsgType::ResponseIterLimit,
            3 => MsgType::ResponseFault,
            4 => MsgType::ResponseInvalidAddr,
            _ => return None,
        })
    }

    pub fn is_response(self) -> bool {
        self != MsgType::Request
    }
}

/// Why an accelerator refused or aborted a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(u8)]
pub enum FaultCode {
    Unknown = 0,
    Permission = 1,
    Straddle = 2,
    DivByZero = 3,
    OperandBounds = 4,
    InvalidProgram = 5,
    StoreMiss = 6,
}

impl FaultCode {
    pub fn from_byte(b: u8) -> FaultCode {
        match b {
            1 => FaultCode::Permission,
            2 => FaultCode::Straddle,
            3 => FaultCode::DivByZero,
            4 => FaultCode::OperandBounds,
            5 => FaultCode::InvalidProgram,
            6 => FaultCode::StoreMiss,
            _ => FaultCode::Unknown,
        }
    }
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultCode::Unknown => "unknown fault",
            FaultCode::Permission => "permission fault",
            FaultCode::Straddle => "load straddles a translation entry",
            FaultCode::DivByZero => "division by zero",
            FaultCode::OperandBounds => "operand out of bounds",
            FaultCode::InvalidProgram => "invalid program",
            FaultCode::StoreMiss => "store to non-local memory",
        };
        f.write_str(s)
    }
}

/// 16-bit CPU node id in the high bits, 48-bit per-CPU counter below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RequestId(pub u64);

impl RequestId {
    pub const COUNTER_BITS: u32 = 48;

    pub fn new(cpu: u16, counter: u64) -> RequestId {
        assert!(counter < 1 << Self::COUNTER_BITS, "request counter overflow");
        RequestId(((cpu as u64) << Self::COUNTER_BITS) | counter)
    }

    pub fn cpu(self) -> u16 {
        (self.0 >> Self::COUNTER_BITS) as u16
    }

    pub fn counter(self) -> u64 {
        self.0 & ((1 << Self::COUNTER_BITS) - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversalPacket {
    pub msg_type: MsgType,
    pub flags: u16,
    pub request_id: RequestId,
    pub cur_ptr: VirtualAddress,
    pub iter_used: u16,
    pub code: Vec<u8>,
    pub scratch: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeserializeError {
    #[error("packet truncated: {len} bytes is shorter than the header")]
    Truncated { len: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadMsgType(u8),
    #[error("length mismatch: header declares {declared} payload bytes, buffer holds {actual}")]
    LengthMismatch { declared: usize, actual: usize },
}

impl TraversalPacket {
    pub fn request(request_id: RequestId, cur_ptr: VirtualAddress, code: Vec<u8>, scratch: Vec<u8>) -> Self {
        TraversalPacket { msg_type: MsgType::Request, flags: 0, request_id, cur_ptr, iter_used: 0, code, scratch }
    }

    pub fn detour(&self) -> bool {
        self.flags & FLAG_DETOUR != 0
    }

    pub fn fault_code(&self) -> FaultCode {
        FaultCode::from_byte((self.flags >> 8) as u8)
    }

    pub fn set_fault_code(&mut self, code: FaultCode) {
        self.flags = (self.flags & 0x00FF) | ((code as u16) << 8);
    }

    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + self.code.len() + self.scratch.len()
    }

    /// Panics if code or scratch exceed 65535 bytes.
    pub fn serialize(&self) -> Vec<u8> {
        let code_len = u16::try_from(self.code.len()).expect("code too long for packet");
        let scratch_len = u16::try_from(self.scratch.len()).expect("scratch too long for packet");
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.request_id.0.to_le_bytes());
        out.extend_from_slice(&self.cur_ptr.0.to_le_bytes());
        out.extend_from_slice(&self.iter_used.to_le_bytes());
        out.extend_from_slice(&code_len.to_le_bytes());
        out.extend_from_slice(&scratch_len.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.code);
        out.extend_from_slice(&self.scratch);
        out
    }

    /// The request id of a serialized packet, without validating the rest.
    pub fn peek_request_id(bytes: &[u8]) -> Option<u64> {
        Some(u64::from_le_bytes(bytes.get(8..16)?.try_into().ok()?))
    }

    pub fn deserialize(bytes: &[u8]) -> Result<TraversalPacket, DeserializeError> {
        if bytes.len() < HEADER_BYTES {
            return Err(DeserializeError::Truncated { len: bytes.len() });
        }
        if bytes[0..4] != MAGIC {
            return Err(DeserializeError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(DeserializeError::BadVersion(bytes[4]));
        }
        let msg_type = MsgType::from_byte(bytes[5]).ok_or(DeserializeError::BadMsgType(bytes[5]))?;
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u64_at = |o: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[o..o + 8]);
            u64::from_le_bytes(b)
        };
        let code_len = u16_at(26) as usize;
        let scratch_len = u16_at(28) as usize;
        let actual = bytes.len() - HEADER_BYTES;
        if code_len + scratch_len != actual {
            return Err(DeserializeError::LengthMismatch { declared: code_len + scratch_len, actual });
        }
        let code_end = HEADER_BYTES + code_len;
        Ok(TraversalPacket {
            msg_type,
            flags: u16_at(6),
            request_id: RequestId(u64_at(8)),
            cur_ptr: VirtualAddress(u64_at(16)),
            iter_used: u16_at(24),
            code: bytes[HEADER_BYTES..code_end].to_vec(),
            scratch: bytes[code_end..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{encode, Instruction};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn minimal_request_is_header_plus_one_instruction() {
        let code = encode(&crate::Program::new(vec![Instruction::ret()]));
        let p = TraversalPacket::request(RequestId::new(0, 1), VirtualAddress(1 << 40), code, Vec::new());
        let bytes = p.serialize();
        assert_eq!(bytes.len(), 32 + 16);
        assert_eq!(&bytes[0..4], b"CHSE");
        assert_eq!(TraversalPacket::deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn header_field_offsets() {
        let mut p =
            TraversalPacket::request(RequestId(0x0102_0304_0506_0708), VirtualAddress(0xAABB), vec![7; 3], vec![9; 2]);
        p.msg_type = MsgType::ResponseIterLimit;
        p.iter_used = 0x1234;
        p.flags = FLAG_DETOUR;
        let b = p.serialize();
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..8], &[1, 0]);
        assert_eq!(b[8], 0x08);
        assert_eq!(&b[16..18], &[0xBB, 0xAA]);
        assert_eq!(&b[24..26], &[0x34, 0x12]);
        assert_eq!(&b[26..28], &[3, 0]);
        assert_eq!(&b[28..30], &[2, 0]);
        assert_eq!(&b[32..35], &[7, 7, 7]);
        assert_eq!(&b[35..], &[9, 9]);
    }

    #[test]
    fn scratch_len_beyond_buffer_is_length_mismatch() {
        let p = TraversalPacket::request(RequestId(1), VirtualAddress(0), vec![], vec![0; 8]);
        let mut b = p.serialize();
        b[28] = 200;
        assert!(matches!(
            TraversalPacket::deserialize(&b),
            Err(DeserializeError::LengthMismatch { declared: 200, actual: 8 })
        ));
        b.push(0);
        b[28] = 8;
        assert!(matches!(TraversalPacket::deserialize(&b), Err(DeserializeError::LengthMismatch { .. })));
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let good = TraversalPacket::request(RequestId(1), VirtualAddress(0), vec![], vec![]).serialize();
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(TraversalPacket::deserialize(&b), Err(DeserializeError::BadMagic));
        let mut b = good.clone();
        b[4] = 9;
        assert_eq!(TraversalPacket::deserialize(&b), Err(DeserializeError::BadVersion(9)));
        assert_eq!(TraversalPacket::deserialize(&good[..31]), Err(DeserializeError::Truncated { len: 31 }));
    }

    #[test]
    fn request_id_splits_cpu_and_counter() {
        let id = RequestId::new(3, 77);
        assert_eq!((id.cpu(), id.counter()), (3, 77));
    }

    fn packet() -> impl Strategy<Value = TraversalPacket> {
        (
            0u8..5,
            any::<u16>(),
            any::<u64>(),
            any::<u64>(),
            any::<u16>(),
            proptest::collection::vec(any::<u8>(), 0..200),
            proptest::collection::vec(any::<u8>(), 0..300),
        )
            .prop_map(|(m, flags, id, ptr, iter_used, code, scratch)| TraversalPacket {
                msg_type: MsgType::from_byte(m).unwrap(),
                flags,
                request_id: RequestId(id),
                cur_ptr: VirtualAddress(ptr),
                iter_used,
                code,
                scratch,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip(p in packet()) {
            prop_assert_eq!(TraversalPacket::deserialize(&p.serialize()).unwrap(), p);
        }

        #[test]
        fn deserialize_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..128), magic in any::<bool>()) {
            let mut bytes = bytes;
            if magic && bytes.len() >= 5 {
                bytes[..4].copy_from_slice(&MAGIC);
                bytes[4] = VERSION;
            }
            if let Ok(p) = TraversalPacket::deserialize(&bytes) {
                prop_assert_eq!(p.wire_len(), bytes.len());
                prop_assert_eq!(&p.serialize()[..30], &bytes[..30]);
            }
        }
    }
}
