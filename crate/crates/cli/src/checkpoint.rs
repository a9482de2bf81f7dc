//! Binary checkpoint for long batches.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, 32-byte config hash,
//! `u64` replicates done, `u64` byte length of `records.csv` at that point.

use std::path::Path;

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 8] = *b"BRWCKPT\0";
pub const VERSION: u32 = 1;
const LEN: usize = 8 + 4 + 32 + 8 + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub done: u64,
    pub records_len: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(LEN);
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        b.extend_from_slice(&self.done.to_le_bytes());
        b.extend_from_slice(&self.records_len.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> CliResult<Self> {
        if b.len() != LEN {
            return Err(CliError::Checkpoint(format!("expected {LEN} bytes, found {}", b.len())));
        }
        if b[..8] != MAGIC {
            return Err(CliError::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(b[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CliError::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(Self {
            config_hash: b[12..44].try_into().unwrap(),
            done: u64::from_le_bytes(b[44..52].try_into().unwrap()),
            records_len: u64::from_le_bytes(b[52..60].try_into().unwrap()),
        })
    }

    /// Write to a sibling temp file, then rename over the old checkpoint.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let b = std::fs::read(path).map_err(|_| CliError::MissingArtifact(format!("{}", path.display())))?;
        Self::from_bytes(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejects() {
        let c = Checkpoint { config_hash: [7; 32], done: 4096, records_len: 123_456 };
        let b = c.to_bytes();
        assert_eq!(b.len(), LEN);
        assert_eq!(&b[44..52], &4096u64.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), c);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut v2 = b.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
        assert!(Checkpoint::from_bytes(&b[..10]).is_err());
    }
}
