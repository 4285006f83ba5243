//! Content hashing for parameters, checkpoints, and run manifests.

use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

/// Incremental SHA-256 hasher with a canonical little-endian float encoding.
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new() -> Self {
        ContentHasher {
            inner: Sha256::new(),
        }
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn update_str(&mut self, s: &str) {
        self.inner.update(s.as_bytes());
        self.inner.update([0u8]);
    }

    pub fn update_u64(&mut self, v: u64) {
        self.inner.update(v.to_le_bytes());
    }

    pub fn update_f64s(&mut self, values: &[f64]) {
        for v in values {
            self.inner.update(v.to_le_bytes());
        }
    }

    pub fn finish_hex(self) -> String {
        hex_string(&self.inner.finalize())
    }
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

/// SHA-256 of a byte slice, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

/// SHA-256 of a file's contents, hex encoded.
pub fn file_sha256_hex(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex_string(&h.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        // SHA-256("abc")
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn float_encoding_is_order_sensitive() {
        let mut a = ContentHasher::new();
        a.update_f64s(&[1.0, 2.0]);
        let mut b = ContentHasher::new();
        b.update_f64s(&[2.0, 1.0]);
        assert_ne!(a.finish_hex(), b.finish_hex());
    }
}
