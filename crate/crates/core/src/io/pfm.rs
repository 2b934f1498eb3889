//! Grayscale Portable Float Map.
//!
//! Header: `Pf`, `width height`, then a scale whose sign selects the byte
//! order (negative is little-endian), each terminated by one whitespace
//! byte. Rows are stored bottom to top as 32-bit floats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{DepthMap, Space};

const WHAT: &str = "PFM";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, name: &str) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::malformed(WHAT, format!("header ends before the {name}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::malformed(WHAT, format!("{name} is not ASCII")))
    }
}

fn parse_dim(token: &str, name: &str) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::malformed(WHAT, format!("{name} {token:?} is not a positive integer"))),
    }
}

pub fn read_pfm(path: impl AsRef<Path>, space: Space) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pfm(&bytes, space).map_err(|e| match e {
        Error::Unsupported { detail, .. } => Error::Unsupported { path: path.to_path_buf(), detail },
        Error::Malformed { what, detail } => Error::malformed(format!("{what} {}", path.display()), detail),
        other => other,
    })
}

pub fn decode_pfm(bytes: &[u8], space: Space) -> Result<DepthMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    match cur.token("magic")? {
        "Pf" => {}
        "PF" => {
            return Err(Error::Unsupported { path: Default::default(), detail: "colour PFM (PF) is not a depth map".into() })
        }
        other => return Err(Error::malformed(WHAT, format!("bad magic {other:?}"))),
    }
    let width = parse_dim(cur.token("width")?, "width")?;
    let height = parse_dim(cur.token("height")?, "height")?;
    let scale_token = cur.token("scale")?;
    let scale: f64 = scale_token
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::malformed(WHAT, format!("scale {scale_token:?} is not a non-zero number")))?;
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::malformed(WHAT, "missing separator after the scale"));
    }
    let payload = &bytes[cur.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::malformed(WHAT, format!("{width}×{height} overflows")))?;
    if payload.len() != expected {
        return Err(Error::malformed(
            WHAT,
            format!("{width}×{height} needs {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (i / width, i % width);
        values[(height - 1 - row) * width + col] = f64::from(v);
    }
    DepthMap::new(height, width, values, space)
}

fn reads_invalid(v: f32, space: Space) -> bool {
    !v.is_finite() || (space == Space::Depth && v <= 0.0)
}

/// Little-endian encoding. Invalid pixels whose value would read back as
/// valid are written as NaN.
pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + 4 * map.values.len());
    out.extend_from_slice(header.as_bytes());
    for row in (0..map.height).rev() {
        for col in 0..map.width {
            let i = row * map.width + col;
            let v = map.values[i] as f32;
            let v = if map.valid[i] || reads_invalid(v, map.space) { v } else { f32::NAN };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(map: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_round_trip() {
        let m = DepthMap::new(1, 1, vec![3.5], Space::Depth).unwrap();
        let back = decode_pfm(&encode_pfm(&m), Space::Depth).unwrap();
        assert_eq!(back.values[0].to_bits(), 3.5f64.to_bits());
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let m = DepthMap::new(2, 1, vec![1.0, 2.0], Space::Depth).unwrap();
        let bytes = encode_pfm(&m);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn big_endian_is_read() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_be_bytes());
        let m = decode_pfm(&bytes, Space::Disparity).unwrap();
        assert_eq!(m.values, vec![1.5, -2.0]);
    }

    #[test]
    fn nan_marks_a_hole() {
        let mut bytes = b"Pf\n2 2\n-1\n".to_vec();
        for v in [1.0f32, f32::NAN, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(decode_pfm(&bytes, Space::Depth).unwrap().valid_count(), 3);
    }

    #[test]
    fn rejects_colour_and_damage() {
        let mut colour = b"PF\n1 1\n-1\n".to_vec();
        colour.extend_from_slice(&[0; 12]);
        assert!(matches!(decode_pfm(&colour, Space::Depth), Err(Error::Unsupported { .. })));
        let mut short = b"Pf\n2 2\n-1\n".to_vec();
        short.extend_from_slice(&[0; 12]);
        assert!(matches!(decode_pfm(&short, Space::Depth), Err(Error::Malformed { .. })));
        for bad in [&b""[..], b"P5\n1 1\n-1\n\0\0\0\0", b"Pf\n0 1\n-1\n", b"Pf\n1 1\nx\n\0\0\0\0", b"Pf\n1 1\n-1"] {
            assert!(matches!(decode_pfm(bad, Space::Depth), Err(Error::Malformed { .. })), "{bad:?}");
        }
    }
}
