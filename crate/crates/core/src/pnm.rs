//! Netpbm grey (PGM) and colour (PPM) images, ASCII and binary.
//!
//! Decoded images are `H×W×channels` tensors scaled to `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Largest accepted width or height.
pub const MAX_SIDE: usize = 1 << 14;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format(format!("{what} out of range")))
    }
}

/// Decodes P2, P3, P5 or P6.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("not a netpbm file".into()));
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        _ => return Err(Error::Format("unsupported netpbm variant".into())),
    };
    let mut r = Reader { buf: bytes, pos: 2 };
    let w = r.number("width")?;
    let h = r.number("height")?;
    let maxval = r.number("maxval")?;
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::Format(format!("bad image size {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad maxval {maxval}")));
    }
    let n = w * h * channels;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("missing raster separator".into()));
        }
        let start = r.pos + 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + n * width)
            .ok_or_else(|| Error::Format("truncated raster".into()))?;
        for s in raster.chunks_exact(width) {
            let v = if width == 1 {
                s[0] as usize
            } else {
                u16::from_be_bytes([s[0], s[1]]) as usize
            };
            if v > maxval {
                return Err(Error::Format("sample exceeds maxval".into()));
            }
            data.push(v as f64 / scale);
        }
    } else {
        for _ in 0..n {
            let v = r.number("sample")?;
            if v > maxval {
                return Err(Error::Format("sample exceeds maxval".into()));
            }
            data.push(v as f64 / scale);
        }
    }
    Tensor::new(vec![h, w, channels], data)
}

/// Binary 8-bit PGM (one channel) or PPM (three channels); values are
/// clamped to `[0, 1]`.
pub fn encode(img: &Tensor) -> Result<Vec<u8>> {
    let d = img.dims();
    if d.len() != 3 || !(d[2] == 1 || d[2] == 3) {
        return Err(Error::Dimension(format!(
            "netpbm needs H×W×1 or H×W×3, got {d:?}"
        )));
    }
    let magic = if d[2] == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", d[1], d[0]).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_grey_with_comments() {
        let t = decode(b"P2\n# c\n3 2\n# m\n4\n0 1 2\n3 4 0\n").unwrap();
        assert_eq!(t.dims(), &[2, 3, 1]);
        assert_eq!(t.data(), &[0.0, 0.25, 0.5, 0.75, 1.0, 0.0]);
    }

    #[test]
    fn binary_round_trip() {
        let img = Tensor::new(
            vec![2, 2, 3],
            (0..12).map(|i| i as f64 * 20.0 / 255.0).collect(),
        )
        .unwrap();
        let back = decode(&encode(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_samples() {
        let mut b = b"P5 1 1 65535\n".to_vec();
        b.extend_from_slice(&[0x80, 0x00]);
        let t = decode(&b).unwrap();
        assert!((t.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            &b"P7 1 1 1\n\0"[..],
            b"P5 0 1 255\n",
            b"P5 2 2 255\n\0\0",
            b"P2 1 1 3\n4",
            b"P6 1 1 70000\n",
            b"P2 99999999999999999999999 1 1\n",
        ] {
            assert!(matches!(decode(bad), Err(Error::Format(_))), "{bad:?}");
        }
    }
}
