//! Binary checkpoint: magic, little-endian header length, JSON header
//! (config, version, parameter count), then raw little-endian f64 data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, PolicyError, PolicyParams};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RLDTFCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: u32,
    config: ModelConfig,
    version: u64,
    n_params: usize,
}

pub fn to_bytes(p: &PolicyParams) -> Vec<u8> {
    let header = Header {
        format: FORMAT_VERSION,
        config: p.config().clone(),
        version: p.version(),
        n_params: p.n_params(),
    };
    let h = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + h.len() + 8 * p.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    for x in p.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<PolicyParams, PolicyError> {
    let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let data_bytes = &bytes[16 + hlen..];
    if data_bytes.len() != header.n_params * 8 {
        return Err(bad(&format!(
            "expected {} parameter bytes, found {}",
            header.n_params * 8,
            data_bytes.len()
        )));
    }
    let data = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolicyParams::from_parts(header.config, data, header.version)
}

pub fn write_checkpoint(path: &Path, p: &PolicyParams) -> Result<(), PolicyError> {
    write_atomic(path, &to_bytes(p))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig { split_backbone: true, ..ModelConfig::micro() };
        let mut p = PolicyParams::init(cfg, &mut rng::stream(5, &[])).unwrap();
        p.as_mut_slice()[3] = f64::MIN_POSITIVE / 3.0;
        p.as_mut_slice()[4] = -0.0;
        p.bump_version();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck/policy.bin");
        write_checkpoint(&path, &p).unwrap();
        let q = read_checkpoint(&path).unwrap();
        assert_eq!(q.config(), p.config());
        assert_eq!(q.version(), 1);
        let a: Vec<u64> = p.as_slice().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = q.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = PolicyParams::init(ModelConfig::micro(), &mut rng::stream(5, &[])).unwrap();
        let bytes = to_bytes(&p);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(b"RLDTFCKP").is_err());
        assert!(matches!(
            read_checkpoint(Path::new("/nonexistent/ck.bin")),
            Err(PolicyError::Io(_))
        ));
    }
}
