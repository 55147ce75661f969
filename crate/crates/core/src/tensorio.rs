//! On-disk formats: raw tensors (`ILVRTEN1`) and 8-bit portable pixmaps.
//!
//! Tensor file layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "ILVRTEN1"
//! 8       4 (u32)     dtype code, 1 = f32
//! 12      4 (u32)     rank r
//! 16      8*r (u64)   dims, outermost first
//! 16+8r   4*prod      payload, f32, row-major
//! ```
//!
//! Pixmaps are binary P5 (grayscale, loads as `(1, H, W)`) or P6 (RGB, loads
//! as `(3, H, W)`) with maxval 255. Byte `v` maps to `2 v / 255 - 1`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"ILVRTEN1";
pub const DTYPE_F32: u32 = 1;

/// Serializes a tensor. Values are stored as f32.
pub fn encode_tensor(x: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * x.ndim() + 4 * x.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(x.ndim() as u32).to_le_bytes());
    for &d in x.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in x.as_standard_layout().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let header = |n: usize| {
        bytes.get(..n).ok_or(Error::Truncated {
            expected: n,
            found: bytes.len(),
        })
    };
    let magic = header(8)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(TENSOR_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let fixed = header(16)?;
    let dtype = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let rank = u32::from_le_bytes(fixed[12..16].try_into().expect("4 bytes")) as usize;
    let dims_end = rank
        .checked_mul(8)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::MalformedHeader(format!("rank {rank}")))?;
    let dims_bytes = header(dims_end)?;
    let shape: Vec<usize> = dims_bytes[16..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[dims_end..];
    let expected = count * 4;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Tensor::from_shape_vec(shape, data).expect("count matches shape"))
}

pub fn write_tensor(path: &Path, x: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(x))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&std::fs::read(path)?)
}

/// Byte to model value.
pub fn byte_to_unit(v: u8) -> f64 {
    2.0 * (v as f64 / 255.0) - 1.0
}

/// Model value to byte: clamp to `[-1, 1]`, round half away from zero.
pub fn unit_to_byte(x: f64) -> u8 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    ((x + 1.0) / 2.0 * 255.0).round() as u8
}

/// True when `shape` can be stored as a pixmap.
pub fn is_image_shape(shape: &[usize]) -> bool {
    matches!(shape, [1 | 3, h, w] if *h > 0 && *w > 0)
}

/// Encodes a `(1, H, W)` tensor as P5 or a `(3, H, W)` tensor as P6.
pub fn encode_pixmap(x: &Tensor) -> Result<Vec<u8>> {
    let (channels, h, w) = match *x.shape() {
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: vec![1, 0, 0],
                actual: x.shape().to_vec(),
            })
        }
    };
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(channels * h * w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..channels {
                out.push(unit_to_byte(x[[ch, r, c]]));
            }
        }
    }
    Ok(out)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
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
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("expected {what}")))
    }
}

pub fn decode_pixmap(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::MalformedHeader("expected P5 or P6 magic".into())),
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let w = rd.number("width")? as usize;
    let h = rd.number("height")? as usize;
    let maxval = rd.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader(format!("empty image {w}x{h}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if !bytes.get(rd.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader("missing whitespace after maxval".into()));
    }
    let data = &bytes[rd.pos + 1..];
    let expected = channels * h * w;
    if data.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: data.len(),
        });
    }
    let mut out = Tensor::zeros(vec![channels, h, w]);
    for (i, &v) in data[..expected].iter().enumerate() {
        let (pix, ch) = (i / channels, i % channels);
        out[[ch, pix / w, pix % w]] = byte_to_unit(v);
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    decode_pixmap(&std::fs::read(path)?)
}

pub fn save_image(path: &Path, x: &Tensor) -> Result<()> {
    write_atomic(path, &encode_pixmap(x)?)
}

/// Writes through a temporary sibling and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
