//! Git-style content hashes: SHA-256 over `"blob {len}\0"` followed by the bytes.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a String");
    }
    s
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// A file identified by its path as given and its content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> Result<InputDigest, CliError> {
        let io = |e| CliError::Data(format!("{}: {e}", path.display()));
        let len = std::fs::metadata(path).map_err(io)?.len();
        let mut file = std::fs::File::open(path).map_err(io)?;
        let mut h = Sha256::new();
        h.update(format!("blob {len}\0").as_bytes());
        let mut buf = vec![0u8; 1 << 16];
        let mut seen = 0u64;
        loop {
            let k = file.read(&mut buf).map_err(io)?;
            if k == 0 {
                break;
            }
            seen += k as u64;
            h.update(&buf[..k]);
        }
        if seen != len {
            return Err(CliError::Data(format!("{}: changed while hashing", path.display())));
        }
        Ok(InputDigest {
            path: path.display().to_string(),
            bytes: len,
            sha256: hex(&h.finalize()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_object_hashes() {
        // `git hash-object --object-format=sha256` of empty and "hello\n"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn file_and_buffer_agree() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let data: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
        std::fs::write(&p, &data).unwrap();
        let d = InputDigest::of_file(&p).unwrap();
        assert_eq!(d.sha256, content_hash(&data));
        assert_eq!(d.bytes, 200_000);
    }
}
