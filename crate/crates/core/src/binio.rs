//! Little-endian binary primitives shared by the checkpoint and feature-file
//! formats. All multi-byte values in those formats are little-endian.

use crate::error::{Error, Result};
use std::io::{Read, Write};

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_f64_slice<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(truncated)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn write_f32_slice<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f32_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(truncated)?;
        out.push(f32::from_le_bytes(buf));
    }
    Ok(out)
}

/// Length-prefixed UTF-8 string: u32 byte length, then the bytes.
pub fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u32::MAX as usize {
        return Err(Error::Format("string too long for length prefix".into()));
    }
    write_u32(w, bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not valid UTF-8".into()))
}

/// Succeeds only if the reader is exactly exhausted.
pub fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf)? {
        0 => Ok(()),
        _ => Err(Error::Format(format!("{what}: trailing bytes after expected end"))),
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file truncated".into())
    } else {
        Error::Io(e)
    }
}
