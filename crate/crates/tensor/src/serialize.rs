//! Binary tensor record: `u16` name length, name, `u8` dtype tag, `u8` rank,
//! rank × `u32` dims, little-endian payload.

use std::io::{self, Read, Write};

use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("record truncated")]
    Truncated,
    #[error("unknown dtype tag {0}")]
    UnknownDType(u8),
    #[error("dtype tag {found:?} does not match requested {expected:?}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_record<T: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<T>) -> Result<(), RecordError> {
    let name_bytes = name.as_bytes();
    let name_len = u16::try_from(name_bytes.len())
        .map_err(|_| RecordError::Invalid(format!("name too long: {name}")))?;
    let rank = u8::try_from(t.rank())
        .map_err(|_| RecordError::Invalid(format!("rank {} too large", t.rank())))?;
    let mut buf = Vec::with_capacity(4 + name_bytes.len() + 4 * t.rank() + t.len() * 8);
    buf.extend_from_slice(&name_len.to_le_bytes());
    buf.extend_from_slice(name_bytes);
    buf.push(T::DTYPE as u8);
    buf.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| RecordError::Invalid(format!("dim {d} too large")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), RecordError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => RecordError::Truncated,
        _ => RecordError::Io(e),
    })
}

/// Reads one record, converting the payload to `T` if stored as another dtype.
pub fn read_record<T: Scalar, R: Read>(r: &mut R) -> Result<(String, Tensor<T>), RecordError> {
    let mut two = [0u8; 2];
    read_exact_or_truncated(r, &mut two)?;
    let name_len = u16::from_le_bytes(two) as usize;
    let mut name = vec![0u8; name_len];
    read_exact_or_truncated(r, &mut name)?;
    let name = String::from_utf8(name).map_err(|_| RecordError::Invalid("name is not UTF-8".into()))?;
    read_exact_or_truncated(r, &mut two)?;
    let dtype = DType::from_tag(two[0]).ok_or(RecordError::UnknownDType(two[0]))?;
    let rank = two[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut four = [0u8; 4];
        read_exact_or_truncated(r, &mut four)?;
        shape.push(u32::from_le_bytes(four) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * dtype.size_bytes()];
    read_exact_or_truncated(r, &mut payload)?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    let t = Tensor::from_vec(shape, data).map_err(|e| RecordError::Invalid(e.to_string()))?;
    Ok((name, t))
}
