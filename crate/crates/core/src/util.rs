use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{EagleError, Result};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| EagleError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| EagleError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| EagleError::io(path, e))
}

/// Binary container shared by bundles and checkpoints:
/// `magic (8) | version u32 | json length u64 | json | payload | sha256 (32)`.
pub(crate) struct Container {
    pub version: u32,
    pub header: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Container {
    pub(crate) fn encode(&self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 + self.header.len() + self.payload.len() + 32);
        out.extend_from_slice(magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.header);
        out.extend_from_slice(&self.payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub(crate) fn decode(bytes: &[u8], magic: &[u8; 8], expected_version: u32, what: &str) -> Result<Container> {
        let bad = |m: &str| EagleError::Format(format!("{what}: {m}"));
        if bytes.len() < 8 + 12 + 32 {
            return Err(bad("file truncated"));
        }
        if &bytes[..8] != magic {
            return Err(bad("bad magic bytes"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != expected_version {
            return Err(bad(&format!("version {version}, expected {expected_version}")));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        if 20 + header_len > body.len() {
            return Err(bad("header length exceeds file"));
        }
        Ok(Container {
            version,
            header: body[20..20 + header_len].to_vec(),
            payload: body[20 + header_len..].to_vec(),
        })
    }
}
