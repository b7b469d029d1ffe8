//! Little-endian binary helpers shared by the on-disk formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn f64s_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "float64 section length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Splits a `<json line>\n<binary payload>` file into its two parts.
pub fn split_header(bytes: &[u8]) -> Result<(serde_json::Value, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..nl])?;
    Ok((header, &bytes[nl + 1..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Section {
    pub offset: u64,
    pub len: u64,
}

impl Section {
    pub fn slice<'a>(&self, payload: &'a [u8]) -> Result<&'a [u8]> {
        let start = self.offset as usize;
        let end = start + self.len as usize;
        payload
            .get(start..end)
            .ok_or_else(|| Error::Format(format!("section {start}..{end} out of bounds")))
    }
}
