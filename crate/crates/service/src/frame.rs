//! Binary slice-frame wire format.
//!
//! A frame is a 20-byte little-endian header followed by `width·height`
//! grayscale bytes and `ceil(width·height/8)` mask bytes:
//!
//! | offset | size | field                  |
//! |--------|------|------------------------|
//! | 0      | 4    | magic `"BSLC"`         |
//! | 4      | 1    | version (1)            |
//! | 5      | 1    | reserved (0)           |
//! | 6      | 2    | width                  |
//! | 8      | 2    | height                 |
//! | 10     | 2    | reserved (0)           |
//! | 12     | 8    | frame id               |
//!
//! Pixels and mask bits are row-major. Mask bit `i` is bit `i % 8` (least
//! significant first) of mask byte `i / 8`; padding bits are zero.
//! Decoding ignores the reserved fields.

use biopsim::volume::SliceImage;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"BSLC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceFrame {
    pub frame_id: u64,
    pub width: u16,
    pub height: u16,
    pub pixels: Vec<u8>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame too short: {0} bytes")]
    TooShort(usize),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("frame of {width}x{height} needs {expected} bytes, got {got}")]
    LengthMismatch {
        width: u16,
        height: u16,
        expected: usize,
        got: usize,
    },
    #[error("image of {0}x{1} px does not fit the frame header")]
    TooLarge(usize, usize),
    #[error("pixel or mask buffer does not match {width}x{height}")]
    BufferMismatch { width: u16, height: u16 },
}

/// Total encoded size of a `width × height` frame.
pub fn encoded_len(width: u16, height: u16) -> usize {
    let n = width as usize * height as usize;
    HEADER_LEN + n + n.div_ceil(8)
}

impl SliceFrame {
    pub fn from_image(img: &SliceImage, frame_id: u64) -> Result<Self, FrameError> {
        let (Ok(width), Ok(height)) = (u16::try_from(img.width), u16::try_from(img.height)) else {
            return Err(FrameError::TooLarge(img.width, img.height));
        };
        let frame = Self {
            frame_id,
            width,
            height,
            pixels: img.pixels.clone(),
            mask: img.mask.clone(),
        };
        frame.check()?;
        Ok(frame)
    }

    fn check(&self) -> Result<(), FrameError> {
        let n = self.width as usize * self.height as usize;
        if self.pixels.len() != n || self.mask.len() != n {
            return Err(FrameError::BufferMismatch {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        self.check().expect("frame buffers match its dimensions");
        let mut out = Vec::with_capacity(encoded_len(self.width, self.height));
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(0);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&self.pixels);
        for chunk in self.mask.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |b, (i, &m)| b | ((m as u8) << i));
            out.push(byte);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::TooShort(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(FrameError::UnsupportedVersion(bytes[4]));
        }
        let width = u16::from_le_bytes([bytes[6], bytes[7]]);
        let height = u16::from_le_bytes([bytes[8], bytes[9]]);
        let frame_id = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = encoded_len(width, height);
        if bytes.len() != expected {
            return Err(FrameError::LengthMismatch {
                width,
                height,
                expected,
                got: bytes.len(),
            });
        }
        let n = width as usize * height as usize;
        let pixels = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
        let bits = &bytes[HEADER_LEN + n..];
        let mask = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self {
            frame_id,
            width,
            height,
            pixels,
            mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::{any, Just, Strategy};

    fn frame(width: u16, height: u16, frame_id: u64) -> SliceFrame {
        let n = width as usize * height as usize;
        SliceFrame {
            frame_id,
            width,
            height,
            pixels: (0..n).map(|i| (i * 37 % 251) as u8).collect(),
            mask: (0..n).map(|i| i % 3 != 0).collect(),
        }
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let f = SliceFrame {
            frame_id: 0x0102_0304_0506_0708,
            width: 3,
            height: 2,
            pixels: vec![10, 20, 30, 40, 50, 60],
            mask: vec![true, false, true, true, false, false],
        };
        let bytes = f.encode();
        let expected: Vec<u8> = [
            &b"BSLC"[..],
            &[1, 0],
            &[3, 0],
            &[2, 0],
            &[0, 0],
            &[8, 7, 6, 5, 4, 3, 2, 1],
            &[10, 20, 30, 40, 50, 60],
            &[0b0000_1101],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), encoded_len(3, 2));
    }

    #[test]
    fn round_trip_for_odd_and_even_sizes() {
        for (w, h) in [(1, 1), (7, 3), (16, 16), (512, 512), (33, 17)] {
            let f = frame(w, h, w as u64 * 1000 + h as u64);
            assert_eq!(SliceFrame::decode(&f.encode()).unwrap(), f);
        }
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let good = frame(4, 4, 9).encode();
        assert_eq!(SliceFrame::decode(&good[..10]), Err(FrameError::TooShort(10)));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(SliceFrame::decode(&bad), Err(FrameError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(SliceFrame::decode(&bad), Err(FrameError::UnsupportedVersion(2)));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(SliceFrame::decode(&bad), Err(FrameError::LengthMismatch { .. })));
        assert!(matches!(
            SliceFrame::decode(&good[..good.len() - 1]),
            Err(FrameError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reserved_fields_are_ignored() {
        let f = frame(5, 5, 3);
        let mut bytes = f.encode();
        bytes[5] = 0xff;
        bytes[10] = 0xaa;
        assert_eq!(SliceFrame::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn oversized_images_are_refused() {
        let img = SliceImage {
            width: 70_000,
            height: 1,
            pixels: vec![0; 70_000],
            mask: vec![false; 70_000],
            frame_id: 0,
            frame: biopsim::probe::ImageFrame {
                origin: Default::default(),
                u: Default::default(),
                v: Default::default(),
                w: Default::default(),
            },
        };
        assert_eq!(SliceFrame::from_image(&img, 0), Err(FrameError::TooLarge(70_000, 1)));
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_round_trips(
            (width, height, pixels, mask) in (1u16..48, 1u16..48).prop_flat_map(|(w, h)| {
                let n = w as usize * h as usize;
                (Just(w), Just(h), vec(any::<u8>(), n), vec(any::<bool>(), n))
            }),
            frame_id in any::<u64>(),
        ) {
            let f = SliceFrame { frame_id, width, height, pixels, mask };
            let bytes = f.encode();
            proptest::prop_assert_eq!(bytes.len(), encoded_len(width, height));
            proptest::prop_assert_eq!(SliceFrame::decode(&bytes).unwrap(), f);
        }
    }
}
