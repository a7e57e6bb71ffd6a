//! Image input: binary PPM (P6, 8-bit) or a raw f32 tensor.
//!
//! PPM pixels are scaled to [0, 1] and normalized per channel with
//! [`IMAGE_MEAN`] / [`IMAGE_STD`]. Raw tensors start with a 16-byte header of
//! four little-endian u32 extents `(n, c, h, w)` followed by little-endian
//! f32 elements, and are used as-is.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGE_STD: [f32; 3] = [0.229, 0.224, 0.225];

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("PPM header ends early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad number in PPM header".into()))
}

/// Decodes a P6 image into a normalized `(1, 3, h, w)` tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("not a binary PPM (P6)".into()));
    }
    let mut pos = 2;
    let w = header_token(bytes, &mut pos)? as usize;
    let h = header_token(bytes, &mut pos)? as usize;
    let maxval = header_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PPM header not terminated".into()));
    }
    pos += 1;
    let pixels = &bytes[pos..];
    if w == 0 || h == 0 || pixels.len() != w * h * 3 {
        return Err(Error::Format(format!(
            "PPM {w}x{h} needs {} pixel bytes, found {}",
            w * h * 3,
            pixels.len()
        )));
    }
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            let v = px[c] as f32 / maxval as f32;
            data[c * h * w + i] = (v - IMAGE_MEAN[c]) / IMAGE_STD[c];
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&read_bytes(path.as_ref())?)
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::shape("RGB buffer does not match the image size"));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn decode_raw_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 16 {
        return Err(Error::Format("raw tensor header is 16 bytes".into()));
    }
    let dims: Vec<usize> = bytes[..16]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let body = &bytes[16..];
    let n: usize = dims.iter().product();
    if body.len() != n * 4 {
        return Err(Error::Format(format!(
            "raw tensor {dims:?} needs {} payload bytes, found {}",
            n * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&dims, data)
}

pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_raw_tensor(&read_bytes(path.as_ref())?)
}

pub fn write_raw_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let (n, c, h, w) = t.dims4()?;
    let mut out = Vec::with_capacity(16 + 4 * t.len());
    for d in [n, c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// PPM when the file starts with `P6`, otherwise a raw tensor.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes = read_bytes(path.as_ref())?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        decode_raw_tensor(&bytes)
    }
}

/// Central crop of an NCHW tensor to the largest extents divisible by
/// `multiple`.
pub fn center_crop(t: &Tensor<f32>, multiple: usize) -> Result<Tensor<f32>> {
    let (n, c, h, w) = t.dims4()?;
    let (nh, nw) = (h / multiple * multiple, w / multiple * multiple);
    if nh == 0 || nw == 0 {
        return Err(Error::geometry(format!(
            "{h}x{w} image is smaller than {multiple}x{multiple}"
        )));
    }
    let (top, left) = ((h - nh) / 2, (w - nw) / 2);
    let mut data = Vec::with_capacity(n * c * nh * nw);
    for plane in t.data().chunks(h * w) {
        for y in top..top + nh {
            data.extend_from_slice(&plane[y * w + left..][..nw]);
        }
    }
    Tensor::from_vec(&[n, c, nh, nw], data)
}
