//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "AEROSEG1"  count
//! count × { name_len  name[name_len]  rank  extent[rank]  f32le[product(extents)] }
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AEROSEG1";

pub fn write_checkpoint<W: Write>(w: &mut W, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                kind: "checkpoint",
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: 0,
            message: "bad magic (expected AEROSEG1)".into(),
        });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = c.pos;
        let len = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format {
                kind: "checkpoint",
                offset: at + 4,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32("extent")?);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            kind: "checkpoint",
            offset: c.pos,
            message: "tensor size overflows".into(),
        })?, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: c.pos,
            message: "trailing bytes after last tensor".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::from_vec(&[2, 3], vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.0e-40, 7.0, -2.25]).unwrap();
        let b = Tensor::from_vec(&[4], vec![0.1f32, 0.2, 0.3, 0.4]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a.w".into(), &a), ("b".into(), &b)]).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a.w");
        assert_eq!(back[0].1.shape(), &[2, 3]);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back[0].1), bits(&a));
        assert_eq!(bits(&back[1].1), bits(&b));

        let mut again = Vec::new();
        let refs: Vec<(String, &Tensor<f32>)> = back.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_checkpoint(&mut again, &refs).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        assert!(matches!(
            read_checkpoint(&mut &b"NOTASEG1\0\0\0\0"[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        let t = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("x".into(), &t)]).unwrap();
        buf.truncate(buf.len() - 2);
        match read_checkpoint(&mut buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8 + 4 + 4 + 1 + 4 + 4),
            other => panic!("{other:?}"),
        }
    }
}
