//! Binary and CSV tensor serialization.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PSFT"
//! 4       1     precision tag: 4 = binary32, 8 = binary64
//! 5       16    dims N, C, H, W as u32
//! 21      ...   N*C*H*W elements, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Precision, Real, Shape, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PSFT";
const HEADER_LEN: usize = 21;

/// A tensor read from disk in whatever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn precision(&self) -> Precision {
        match self {
            StoredTensor::F32(_) => Precision::F32,
            StoredTensor::F64(_) => Precision::F64,
        }
    }

    pub fn into_precision<T: Real>(self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape();
        let width = T::PRECISION.tag() as usize;
        let mut out = Vec::with_capacity(HEADER_LEN + s.len() * width);
        out.extend_from_slice(MAGIC);
        out.push(T::PRECISION.tag());
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a tensor, converting from the stored precision if needed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Ok(read_tensor(r)?.into_precision())
    }
}

fn decode<T: Real>(shape: Shape, body: &[u8]) -> Result<Tensor<T>> {
    let width = T::PRECISION.tag() as usize;
    let data = body.chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

pub fn read_tensor(mut r: impl Read) -> Result<StoredTensor> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let precision = Precision::from_tag(header[4])
        .ok_or_else(|| Error::Format(format!("unknown precision tag {}", header[4])))?;
    let dim = |i: usize| u32::from_le_bytes(header[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
    let expected = shape
        .n
        .checked_mul(shape.c)
        .and_then(|v| v.checked_mul(shape.h))
        .and_then(|v| v.checked_mul(shape.w))
        .and_then(|v| v.checked_mul(precision.tag() as usize))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != expected {
        return Err(Error::Format(format!("expected {expected} data bytes, found {}", body.len())));
    }
    Ok(match precision {
        Precision::F32 => StoredTensor::F32(decode(shape, &body)?),
        Precision::F64 => StoredTensor::F64(decode(shape, &body)?),
    })
}

/// Debug export: one row per `(n, c)` plane holding `n, c` and then the
/// `H*W` values in row-major order.
pub fn write_csv<T: Real>(t: &Tensor<T>, w: impl Write) -> Result<()> {
    let s = t.shape();
    let mut out = csv::WriterBuilder::new().from_writer(w);
    let mut header = vec!["n".to_string(), "c".to_string()];
    header.extend((0..s.h).flat_map(|r| (0..s.w).map(move |c| format!("v{r}_{c}"))));
    out.write_record(&header)?;
    for n in 0..s.n {
        for c in 0..s.c {
            let mut row = vec![n.to_string(), c.to_string()];
            row.extend(t.plane(n, c).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, -2.5]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"PSFT");
        assert_eq!(b[4], 4);
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 21 + 8);
    }

    #[test]
    fn round_trip_both_precisions() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 1, 2, 3), |n, _, r, c| (n * 6 + r * 3 + c) as f64 * 0.1);
        match read_tensor(&t.to_bytes()[..]).unwrap() {
            StoredTensor::F64(back) => assert_eq!(back, t),
            other => panic!("wrong precision {:?}", other.precision()),
        }
        let t32 = t.cast::<f32>();
        assert_eq!(read_tensor(&t32.to_bytes()[..]).unwrap(), StoredTensor::F32(t32));
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let mut b = t.to_bytes();
        assert!(read_tensor(&b[..10]).is_err());
        b.pop();
        assert!(matches!(read_tensor(&b[..]), Err(Error::Format(_))));
        let mut bad = t.to_bytes();
        bad[0] = b'X';
        assert!(read_tensor(&bad[..]).is_err());
        let mut tag = t.to_bytes();
        tag[4] = 3;
        assert!(read_tensor(&tag[..]).is_err());
    }

    #[test]
    fn csv_rows_per_plane() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 1, 2), |_, c, _, w| (c * 10 + w) as f64);
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "n,c,v0_0,v0_1\n0,0,0,1\n0,1,10,11\n");
    }
}
