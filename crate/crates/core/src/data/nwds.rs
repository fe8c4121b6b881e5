//! `NWDS` container, little-endian:
//!
//! ```text
//! "NWDS"              4 bytes magic
//! interval_minutes    u32
//! unit code           u8 (0 raw hundredths of mm, 1 binary, 2 unitless)
//! frame count         u64
//! frames              T4v1 records, each [1, 1, H, W] f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FrameSeries, Unit};
use crate::error::{Error, Result};
use crate::tensor::io::{expect_magic, read_tensor, read_u32, read_u64, write_tensor};

pub const NWDS_MAGIC: &[u8; 4] = b"NWDS";

pub fn write_nwds<W: Write>(w: &mut W, series: &FrameSeries) -> Result<()> {
    w.write_all(NWDS_MAGIC)?;
    w.write_all(&series.interval_minutes.to_le_bytes())?;
    w.write_all(&[series.unit.code()])?;
    w.write_all(&(series.len() as u64).to_le_bytes())?;
    for f in series.frames() {
        write_tensor(w, f)?;
    }
    Ok(())
}

pub fn read_nwds<R: Read>(r: &mut R) -> Result<FrameSeries> {
    expect_magic(r, NWDS_MAGIC)?;
    let interval = read_u32(r)?;
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let unit = Unit::from_code(code[0]).ok_or_else(|| Error::Format(format!("unknown unit code {}", code[0])))?;
    let count = read_u64(r)?;
    let mut frames = Vec::new();
    for _ in 0..count {
        frames.push(read_tensor::<f32, _>(r)?);
    }
    FrameSeries::new(frames, interval, unit)
}

pub fn write_nwds_file(path: &Path, series: &FrameSeries) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_nwds(&mut w, series)?;
    w.flush()?;
    Ok(())
}

pub fn read_nwds_file(path: &Path) -> Result<FrameSeries> {
    let mut r = BufReader::new(File::open(path)?);
    read_nwds(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;

    #[test]
    fn round_trip_and_header() {
        let frames = (0..3)
            .map(|i| Tensor4::from_fn([1, 1, 2, 3], |_, _, y, x| (i * 6 + y * 3 + x) as f32))
            .collect();
        let s = FrameSeries::new(frames, 5, Unit::RawHundredthsMm).unwrap();
        let mut buf = Vec::new();
        write_nwds(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"NWDS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 5);
        assert_eq!(buf[8], 0);
        assert_eq!(u64::from_le_bytes(buf[9..17].try_into().unwrap()), 3);
        assert_eq!(&buf[17..21], b"T4v1");
        assert_eq!(read_nwds(&mut buf.as_slice()).unwrap(), s);
    }
}
