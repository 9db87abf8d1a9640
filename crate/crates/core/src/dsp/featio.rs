//! Binary feature dumps: `"MKWSFEAT"`, frame count and dimension as
//! little-endian u32, then row-major little-endian f32 values.

use std::io::{Read, Write};

use super::mel::FeatureMatrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MKWSFEAT";

pub fn write_features<W: Write>(mut w: W, fm: &FeatureMatrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(fm.frames as u32).to_le_bytes())?;
    w.write_all(&(fm.dim as u32).to_le_bytes())?;
    for v in &fm.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R, channel_tag: &str) -> Result<FeatureMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != MAGIC {
        return Err(Error::Format("not a feature dump".into()));
    }
    let frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; frames * dim * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        frames,
        dim,
        data,
        channel_tag: channel_tag.to_string(),
    })
}
