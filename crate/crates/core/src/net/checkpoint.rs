//! Binary checkpoint format.
//!
//! ```text
//! "MKWSCKPT" | version u32 | descriptor length u32 | JSON descriptor
//! | normalizer mean, scale | keys tensors | body tensors      (f32 LE)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::layers::{LayerSpec, Stack};
use crate::net::network::{KwsNetwork, Normalizer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MKWSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub channel_tag: String,
    pub feature_dim: usize,
    pub keys: Option<Vec<LayerSpec>>,
    pub body: Vec<LayerSpec>,
    pub param_count: usize,
}

impl Descriptor {
    pub fn of(net: &KwsNetwork<f32>) -> Self {
        Self {
            channel_tag: net.channel_tag.clone(),
            feature_dim: net.feature_dim(),
            keys: net.keys.as_ref().map(Stack::specs),
            body: net.body.specs(),
            param_count: net.param_count(),
        }
    }
}

fn put(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take(r: &mut impl Read, out: &mut [f32]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("checkpoint truncated: {e}")))?;
    for (o, c) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, net: &KwsNetwork<f32>) -> Result<()> {
    let desc = serde_json::to_vec(&Descriptor::of(net))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(&desc)?;
    put(w, &net.normalizer.mean)?;
    put(w, &net.normalizer.scale)?;
    for t in net.tensors() {
        put(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<KwsNetwork<f32>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint header truncated".into()))?;
    if &head[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes([head[8], head[9], head[10], head[11]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes([head[12], head[13], head[14], head[15]]) as usize;
    let mut desc = vec![0u8; len];
    r.read_exact(&mut desc)
        .map_err(|_| Error::Format("checkpoint descriptor truncated".into()))?;
    let desc: Descriptor = serde_json::from_slice(&desc)?;
    let mut normalizer = Normalizer::identity(desc.feature_dim);
    take(r, &mut normalizer.mean)?;
    take(r, &mut normalizer.scale)?;
    let keys = desc.keys.as_deref().map(Stack::zeros).transpose()?;
    let body = Stack::zeros(&desc.body)?;
    let mut net = KwsNetwork::new(desc.channel_tag, normalizer, keys, body)?;
    if net.param_count() != desc.param_count {
        return Err(Error::Format("descriptor parameter count does not match topology".into()));
    }
    for t in net.tensors_mut() {
        take(r, t)?;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(net)
}

pub fn save(path: &Path, net: &KwsNetwork<f32>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<KwsNetwork<f32>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::presets::{self, Scale};
    use rand::SeedableRng;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut body = Stack::<f32>::zeros(&presets::grad_check_body()).unwrap();
        body.init_random(&mut rng);
        let mut keys = Stack::<f32>::zeros(&presets::keys_specs(Scale::Desk)).unwrap();
        keys.init_random(&mut rng);
        let mut norm = Normalizer::identity(40);
        norm.mean[3] = -1.25;
        let net = KwsNetwork::new("omni+anc", norm, Some(keys), body).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(net, back);
        buf.pop();
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format(_))));
        assert!(read_checkpoint(&mut &b"garbage-bytes-here"[..]).is_err());
    }
}
