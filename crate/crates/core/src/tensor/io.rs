//! `T4v1` tensor records.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "T4v1"            4 bytes magic
//! n, c, h, w        4 x u64
//! dtype             u8 (0 = f32, 1 = f64)
//! payload           n*c*h*w values, row-major n -> c -> h -> w
//! ```

use std::io::{Read, Write};

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::real::{DType, Real};

pub const TENSOR_MAGIC: &[u8; 4] = b"T4v1";

pub fn write_tensor<T: Real, W: Write>(w: &mut W, t: &Tensor4<T>) -> Result<()> {
    let s = t.shape();
    let mut buf = Vec::with_capacity(37 + t.numel() * T::DTYPE.size());
    buf.extend_from_slice(TENSOR_MAGIC);
    for d in s.dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.push(T::DTYPE.code());
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Real, R: Read>(r: &mut R) -> Result<Tensor4<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}, expected \"T4v1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("tensor dim overflows usize".into()))?;
    }
    let shape = Shape4::from(dims);
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let dtype = DType::from_code(code[0]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", code[0])))?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "tensor dtype {dtype:?} does not match requested {:?}",
            T::DTYPE
        )));
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut payload = vec![0u8; numel * dtype.size()];
    r.read_exact(&mut payload)?;
    let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
    Tensor4::from_vec(shape, data)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// u32 length prefix followed by UTF-8 bytes.
pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("invalid UTF-8 string".into()))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8]) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    r.read_exact(&mut b)?;
    if b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
