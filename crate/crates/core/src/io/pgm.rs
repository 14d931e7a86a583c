//! Binary (P5) and ASCII (P2) PGM frames.

use crate::error::{Error, Result};
use crate::model::Frame;

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                parse_error(start, format!("unexpected end of data while reading {what}"))
            } else {
                parse_error(start, format!("expected a decimal {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_error(start, format!("{what} is out of range")))
    }
}

/// Decodes a P5 or P2 image into a frame with intensities divided by maxval.
pub fn read_frame_pgm(bytes: &[u8], index: usize) -> Result<Frame> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(parse_error(0, "missing P5/P2 magic")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_error(2, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_error(maxval_at, format!("maxval {maxval} is outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| parse_error(2, "image dimensions overflow"))?;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);

    if binary {
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(parse_error(cur.pos, "expected a single whitespace byte after maxval")),
        }
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let payload = &bytes[cur.pos..];
        if payload.len() < count * sample_bytes {
            return Err(parse_error(
                cur.pos + payload.len(),
                format!("truncated payload: need {} bytes, found {}", count * sample_bytes, payload.len()),
            ));
        }
        for k in 0..count {
            let v = if sample_bytes == 1 {
                payload[k] as u32
            } else {
                u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as u32
            };
            if v > maxval {
                return Err(parse_error(cur.pos + k * sample_bytes, format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64 / scale);
        }
    } else {
        for _ in 0..count {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(parse_error(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64 / scale);
        }
    }
    Frame::new(pixels, height, width, index)
}

/// Encodes `values` as P5 with maxval 255, mapping `v ↦ round(255·clamp(v, 0, 1))`
/// with halves rounded up.
pub fn write_frame_pgm(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width, "pixel count does not match dimensions");
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + values.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (255.0 * v + 0.5).floor() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_binary_8bit() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let f = read_frame_pgm(&bytes, 3).unwrap();
        assert_eq!((f.height, f.width, f.index), (2, 2, 3));
        assert_eq!(f.pixels.as_slice(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn ascii_matches_binary() {
        let mut bin = b"P5\n2 2\n255\n".to_vec();
        bin.extend_from_slice(&[0, 255, 128, 64]);
        let ascii = b"P2\n# a comment\n2 2\n255\n0 255\n128 64\n";
        assert_eq!(read_frame_pgm(&bin, 0).unwrap(), read_frame_pgm(ascii, 0).unwrap());
    }

    #[test]
    fn reads_16bit_big_endian() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        let f = read_frame_pgm(&bytes, 0).unwrap();
        assert_eq!(f.pixels[0], 32768.0 / 65535.0);
    }

    #[test]
    fn rejects_malformed_input() {
        let err = read_frame_pgm(b"P6\n1 1\n255\n\0", 0).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        let err = read_frame_pgm(b"P5\n2 2\n255\n\x01\x02", 0).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 13, .. }), "{err}");
        let err = read_frame_pgm(b"P5\n2 x\n255\n", 0).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 5, .. }), "{err}");
        assert!(read_frame_pgm(b"P2\n1 1\n70000\n5", 0).is_err());
        assert!(read_frame_pgm(b"P2\n2 1\n10\n5 11", 0).is_err());
        assert!(read_frame_pgm(b"P2\n2 1\n10\n5", 0).is_err());
    }

    #[test]
    fn quantization_rules() {
        let bytes = write_frame_pgm(&[0.0; 6], 2, 3);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert!(bytes[11..].iter().all(|&b| b == 0));
        let bytes = write_frame_pgm(&[0.5, -1.0, 2.0], 1, 3);
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 0, 255]);
    }

    proptest! {
        #[test]
        fn write_read_write_is_stable(values in prop::collection::vec(-0.2f64..1.2, 12)) {
            let first = write_frame_pgm(&values, 3, 4);
            let frame = read_frame_pgm(&first, 0).unwrap();
            let second = write_frame_pgm(frame.pixels.as_slice(), 3, 4);
            prop_assert_eq!(first, second);
        }
    }
}
