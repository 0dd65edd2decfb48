//! Netpbm (binary P6 / P5) and raw float-map readers and writers.
//!
//! Raw maps store probabilities losslessly: `"AEROMAP1"`, little-endian
//! `u32` height and width, then `height·width` little-endian `f32` values
//! (NaN marks no-data).

use std::path::Path;

use crate::data::image::{Mask, ProbMap, Region, RgbImage};
use crate::error::{Error, Result};

pub const RAW_MAP_MAGIC: &[u8; 8] = b"AEROMAP1";

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn pnm_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        kind: "netpbm",
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(pnm_err(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(pnm_err(pos, format!("expected header field {}", ["width", "height", "maxval"][k])));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| pnm_err(start, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(pnm_err(pos, "expected a single whitespace byte after maxval")),
    }
    if fields[2] != 255 {
        return Err(pnm_err(pos - 1, format!("only maxval 255 is supported, got {}", fields[2])));
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        data_offset: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6")?;
    let n = h.width * h.height * 3;
    let body = &bytes[h.data_offset..];
    if body.len() < n {
        return Err(pnm_err(bytes.len(), format!("pixel data truncated: need {n} bytes, have {}", body.len())));
    }
    RgbImage::from_raw(h.height, h.width, body[..n].to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Raw 8-bit gray values: `(height, width, bytes)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(bytes, b"P5")?;
    let n = h.width * h.height;
    let body = &bytes[h.data_offset..];
    if body.len() < n {
        return Err(pnm_err(bytes.len(), format!("pixel data truncated: need {n} bytes, have {}", body.len())));
    }
    Ok((h.height, h.width, body[..n].to_vec()))
}

pub fn encode_pgm(height: usize, width: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), height * width, "pgm size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// `{0,1}` ↔ `{0,255}`; on load any byte ≥ 128 is foreground.
pub fn mask_to_pgm(mask: &Mask) -> Vec<u8> {
    let gray: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_pgm(mask.height, mask.width, &gray)
}

pub fn mask_from_pgm(bytes: &[u8]) -> Result<Mask> {
    let (h, w, gray) = decode_pgm(bytes)?;
    Mask::from_raw(h, w, gray.into_iter().map(|v| (v >= 128) as u8).collect())
}

/// Probability → byte, `floor(p·255 + 0.5)` (round half up); no-data → 0.
pub fn quantize(p: f32) -> u8 {
    if p.is_nan() {
        return 0;
    }
    (p.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

pub fn probmap_to_pgm(map: &ProbMap) -> Vec<u8> {
    let gray: Vec<u8> = map.data.iter().map(|&p| quantize(p)).collect();
    encode_pgm(map.height, map.width, &gray)
}

pub fn encode_raw_map(map: &ProbMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.data.len() * 4);
    out.extend_from_slice(RAW_MAP_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a raw map; the valid region is the bounding box of non-NaN values.
pub fn decode_raw_map(bytes: &[u8]) -> Result<ProbMap> {
    let err = |offset, message: &str| Error::Format {
        kind: "raw map",
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != RAW_MAP_MAGIC {
        return Err(err(0, "bad magic (expected AEROMAP1)"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + h * w * 4;
    if bytes.len() != need {
        return Err(err(bytes.len().min(need), "payload length does not match header"));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..h {
        for c in 0..w {
            if !data[r * w + c].is_nan() {
                r0 = r0.min(r);
                r1 = r1.max(r + 1);
                c0 = c0.min(c);
                c1 = c1.max(c + 1);
            }
        }
    }
    let valid = if r0 == usize::MAX {
        Region { row: 0, col: 0, rows: 0, cols: 0 }
    } else {
        Region {
            row: r0,
            col: c0,
            rows: r1 - r0,
            cols: c1 - c0,
        }
    };
    Ok(ProbMap {
        height: h,
        width: w,
        data,
        valid,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read(path)?)
}

pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    mask_from_pgm(&read(path)?)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_bytes(path, &mask_to_pgm(mask))
}

pub fn load_raw_map(path: &Path) -> Result<ProbMap> {
    decode_raw_map(&read(path)?)
}

pub fn save_raw_map(path: &Path, map: &ProbMap) -> Result<()> {
    write_bytes(path, &encode_raw_map(map))
}

pub fn save_map_pgm(path: &Path, map: &ProbMap) -> Result<()> {
    write_bytes(path, &probmap_to_pgm(map))
}
