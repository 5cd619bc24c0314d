//! Byte-exact framing of discrete messages.
//!
//! ```text
//! offset size field
//!      0    1 magic           0xD7
//!      1    1 version         0x01
//!      2    4 edge_id         u32 big-endian
//!      6    4 timestep        u32 big-endian
//!     10    2 dim_count       u16 big-endian
//!     12    4 payload_bit_len u32 big-endian
//!     16    n payload         ⌈payload_bit_len / 8⌉ bytes, zero padded
//! ```
//!
//! The payload is the concatenation of one prefix codeword per dim. The
//! edge and timestep travel in the header so a receiver can derive the
//! noise key for reconstruction without any side channel.

use std::io::{Read, Write};

use crate::channel::DiscreteMessage;
use crate::codec::{self, BitString};
use crate::error::{DdclError, FrameError, Result};

pub const MAGIC: u8 = 0xD7;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 16;

/// A parsed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedFrame {
    pub message: DiscreteMessage,
    pub edge_id: u32,
    pub timestep: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Header {
    edge_id: u32,
    timestep: u32,
    dim_count: u16,
    payload_bit_len: u32,
}

impl Header {
    fn payload_len(&self) -> usize {
        (self.payload_bit_len as usize).div_ceil(8)
    }

    fn parse(bytes: &[u8]) -> Result<Self, FrameError> {
        if let Some(&magic) = bytes.first() {
            if magic != MAGIC {
                return Err(FrameError::MagicMismatch(magic));
            }
        }
        if let Some(&version) = bytes.get(1) {
            if version != VERSION {
                return Err(FrameError::VersionMismatch(version));
            }
        }
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated {
                offset: bytes.len(),
            });
        }
        let be32 = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
        Ok(Self {
            edge_id: be32(2),
            timestep: be32(6),
            dim_count: u16::from_be_bytes([bytes[10], bytes[11]]),
            payload_bit_len: be32(12),
        })
    }
}

/// Serializes a message into a canonical frame.
pub fn encode_frame(m: &DiscreteMessage, edge_id: u32, timestep: u32) -> Result<Vec<u8>> {
    let dim_count = u16::try_from(m.dim()).map_err(|_| FrameError::DimOverflow(m.dim()))?;
    let payload = codec::encode_all(&m.ints)?;
    let bit_len =
        u32::try_from(payload.len()).map_err(|_| FrameError::PayloadOverflow(payload.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.as_bytes().len());
    out.push(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&edge_id.to_be_bytes());
    out.extend_from_slice(&timestep.to_be_bytes());
    out.extend_from_slice(&dim_count.to_be_bytes());
    out.extend_from_slice(&bit_len.to_be_bytes());
    out.extend_from_slice(payload.as_bytes());
    Ok(out)
}

fn decode_payload(header: Header, payload: &[u8]) -> Result<DiscreteMessage, FrameError> {
    let bit_len = header.payload_bit_len as usize;
    if !bit_len.is_multiple_of(8) {
        let mask = 0xFFu8 >> (bit_len % 8);
        if payload[payload.len() - 1] & mask != 0 {
            return Err(FrameError::NonZeroPadding);
        }
    }
    let mismatch = |reason: String| FrameError::PayloadMismatch {
        dims: header.dim_count,
        bits: header.payload_bit_len,
        reason,
    };
    let bits = BitString::from_bytes(payload.to_vec(), bit_len);
    let (ints, used) = codec::decode_all(&bits, usize::from(header.dim_count))
        .map_err(|e| mismatch(e.to_string()))?;
    if used != bit_len {
        return Err(mismatch(format!("{} bits left over", bit_len - used)));
    }
    DiscreteMessage::from_ints(ints).map_err(|e| mismatch(e.to_string()))
}

/// Parses exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<DecodedFrame, FrameError> {
    let (frame, used) = decode_frame_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}

/// Parses one frame from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_frame_prefix(bytes: &[u8]) -> Result<(DecodedFrame, usize), FrameError> {
    let header = Header::parse(bytes)?;
    let end = HEADER_LEN + header.payload_len();
    if bytes.len() < end {
        return Err(FrameError::Truncated {
            offset: bytes.len(),
        });
    }
    let message = decode_payload(header, &bytes[HEADER_LEN..end])?;
    Ok((
        DecodedFrame {
            message,
            edge_id: header.edge_id,
            timestep: header.timestep,
        },
        end,
    ))
}

/// Writes one frame to a byte stream.
pub fn write_frame<W: Write>(
    w: &mut W,
    m: &DiscreteMessage,
    edge_id: u32,
    timestep: u32,
) -> Result<()> {
    w.write_all(&encode_frame(m, edge_id, timestep)?)?;
    Ok(())
}

/// Reads one frame from a byte stream. Returns `Ok(None)` on a clean end of
/// stream before the first header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<DecodedFrame>> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(r, &mut header)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        // Surface magic/version problems before reporting truncation.
        Header::parse(&header[..got])?;
        return Err(FrameError::Truncated { offset: got }.into());
    }
    let parsed = Header::parse(&header)?;
    let mut payload = vec![0u8; parsed.payload_len()];
    let got = read_up_to(r, &mut payload)?;
    if got < payload.len() {
        return Err(DdclError::Frame(FrameError::Truncated {
            offset: HEADER_LEN + got,
        }));
    }
    let message = decode_payload(parsed, &payload)?;
    Ok(Some(DecodedFrame {
        message,
        edge_id: parsed.edge_id,
        timestep: parsed.timestep,
    }))
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(ints: &[i64]) -> DiscreteMessage {
        DiscreteMessage::from_ints(ints.to_vec()).unwrap()
    }

    #[test]
    fn single_zero_layout() {
        let bytes = encode_frame(&msg(&[0]), 0, 0).unwrap();
        assert_eq!(
            bytes,
            [0xD7, 0x01, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0x80]
        );
    }

    #[test]
    fn empty_message() {
        let bytes = encode_frame(&msg(&[]), 3, 4).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        let f = decode_frame(&bytes).unwrap();
        assert!(f.message.ints.is_empty());
        assert_eq!((f.edge_id, f.timestep), (3, 4));
    }

    #[test]
    fn error_codes_are_distinct() {
        let good = encode_frame(&msg(&[1, -1, 7]), 9, 2).unwrap();

        let mut bad = good.clone();
        bad[0] = 0x00;
        assert_eq!(decode_frame(&bad), Err(FrameError::MagicMismatch(0)));

        let mut bad = good.clone();
        bad[1] = 0x02;
        assert_eq!(decode_frame(&bad), Err(FrameError::VersionMismatch(2)));

        assert_eq!(
            decode_frame(&good[..good.len() - 1]),
            Err(FrameError::Truncated {
                offset: good.len() - 1
            })
        );
        assert_eq!(
            decode_frame(&good[..5]),
            Err(FrameError::Truncated { offset: 5 })
        );

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] |= 0x01;
        assert_eq!(decode_frame(&bad), Err(FrameError::NonZeroPadding));

        let mut bad = good.clone();
        bad[11] = 4;
        assert!(matches!(
            decode_frame(&bad),
            Err(FrameError::PayloadMismatch { dims: 4, .. })
        ));

        let mut bad = good.clone();
        bad[11] = 2;
        assert!(matches!(
            decode_frame(&bad),
            Err(FrameError::PayloadMismatch { dims: 2, .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode_frame(&bad), Err(FrameError::TrailingBytes(1)));

        let codes = [
            FrameError::MagicMismatch(0).code(),
            FrameError::VersionMismatch(0).code(),
            FrameError::Truncated { offset: 0 }.code(),
            FrameError::NonZeroPadding.code(),
            FrameError::TrailingBytes(0).code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }

    #[test]
    fn dim_overflow() {
        let m = msg(&vec![0; 65_536]);
        assert!(matches!(
            encode_frame(&m, 0, 0),
            Err(DdclError::Frame(FrameError::DimOverflow(65_536)))
        ));
        assert!(encode_frame(&msg(&vec![0; 65_535]), 0, 0).is_ok());
    }

    #[test]
    fn stream_reads_frames_in_sequence() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &msg(&[0, 1]), 1, 0).unwrap();
        write_frame(&mut buf, &msg(&[-5]), 1, 1).unwrap();
        let mut cursor = std::io::Cursor::new(buf);
        let a = read_frame(&mut cursor).unwrap().unwrap();
        let b = read_frame(&mut cursor).unwrap().unwrap();
        assert_eq!(a.message.ints, vec![0, 1]);
        assert_eq!((b.message.ints.clone(), b.timestep), (vec![-5], 1));
        assert!(read_frame(&mut cursor).unwrap().is_none());

        let mut short = std::io::Cursor::new(vec![MAGIC, VERSION, 0]);
        assert!(matches!(
            read_frame(&mut short),
            Err(DdclError::Frame(FrameError::Truncated { offset: 3 }))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_and_canonical(
            ints in prop::collection::vec(-100_000i64..100_000, 0..40),
            edge: u32, t: u32,
        ) {
            let m = msg(&ints);
            let bytes = encode_frame(&m, edge, t).unwrap();
            let f = decode_frame(&bytes).unwrap();
            prop_assert_eq!(&f.message, &m);
            prop_assert_eq!((f.edge_id, f.timestep), (edge, t));
            prop_assert_eq!(encode_frame(&f.message, f.edge_id, f.timestep).unwrap(), bytes);
        }
    }
}
