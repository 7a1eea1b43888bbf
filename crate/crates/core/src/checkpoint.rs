//! Versioned named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   5 bytes  "MSKA1"
//! version u32
//! config  u64 length + UTF-8 canonical config text
//! count   u32
//! tensor* name: u32 length + UTF-8
//!         rank: u32
//!         dims: rank x u64
//!         data: f32 x prod(dims)
//! hash    32 bytes SHA-256 over everything above
//! ```
//!
//! Loading verifies magic, version, and hash; `load(save(model))` reproduces
//! every parameter bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"MSKA1";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub version: u32,
    pub config_text: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    /// SHA-256 of the serialized payload (also the cache-invalidation key).
    pub hash: [u8; 32],
}

pub fn hash_hex(h: &[u8; 32]) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize a parameter store (sorted by name) plus its config text.
pub fn serialize(config_text: &str, store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u64).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    let names = store.names();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in &names {
        let e = store.get(name);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for d in e.value.dims() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&hash);
    out
}

pub fn save(path: &Path, config_text: &str, store: &ParamStore<f32>) -> Result<[u8; 32]> {
    let bytes = serialize(config_text, store);
    let hash: [u8; 32] = bytes[bytes.len() - 32..].try_into().unwrap();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(hash)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| {
            Error::MissingDependency(format!("checkpoint {}: {}", path.display(), e))
        })?;
    deserialize(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

pub fn deserialize(bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 + 32 {
        return Err(fail("file too small"));
    }
    let (payload, stored_hash) = bytes.split_at(bytes.len() - 32);
    let computed: [u8; 32] = Sha256::digest(payload).into();
    if computed != stored_hash {
        return Err(fail("content hash mismatch (corrupt or truncated)"));
    }

    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > payload.len() {
            return Err(fail("unexpected end of checkpoint"));
        }
        let s = &payload[at..at + n];
        at += n;
        Ok(s)
    };
    if take(5)? != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let cfg_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let config_text = String::from_utf8(take(cfg_len)?.to_vec())
        .map_err(|_| fail("config text not UTF-8"))?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| fail("tensor name not UTF-8"))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(dims, data)));
    }
    if at != payload.len() {
        return Err(fail("trailing bytes after tensors"));
    }
    Ok(Checkpoint {
        version,
        config_text,
        tensors,
        hash: computed,
    })
}

impl Checkpoint {
    /// Rebuild a parameter store (everything marked trainable; callers freeze
    /// what they need frozen).
    pub fn into_store(self) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        for (name, t) in self.tensors {
            store.insert(&name, t, true);
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for i in 0..5 {
            let dims: Vec<usize> = (0..rng.random_range(1..4usize))
                .map(|_| rng.random_range(1..6usize))
                .collect();
            s.insert(
                &format!("net.layer{i}.w"),
                Tensor::from_fn(&dims, |_| rng.random_range(-2.0f32..2.0)),
                true,
            );
        }
        s
    }

    #[test]
    fn round_trip_is_bit_exact_over_random_models() {
        let dir = std::env::temp_dir().join("tessera_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        for seed in 0..10 {
            let store = random_store(seed);
            let path = dir.join(format!("m{seed}.ckpt"));
            let h = save(&path, "preset = \"toy\"", &store).unwrap();
            let loaded = load(&path).unwrap();
            assert_eq!(loaded.hash, h);
            assert_eq!(loaded.config_text, "preset = \"toy\"");
            let back = loaded.into_store();
            for name in store.names() {
                let (a, b) = (&store.get(&name).value, &back.get(&name).value);
                assert_eq!(a.dims(), b.dims());
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "{name}");
                }
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let store = random_store(3);
        let mut bytes = serialize("cfg", &store);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            deserialize(&bytes),
            Err(Error::Checkpoint(msg)) if msg.contains("hash mismatch")
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let store = random_store(4);
        let mut bytes = serialize("cfg", &store);
        bytes[0] = b'X';
        // Fix up the hash so the magic check itself is what fires.
        let n = bytes.len() - 32;
        let h: [u8; 32] = Sha256::digest(&bytes[..n]).into();
        bytes[n..].copy_from_slice(&h);
        assert!(matches!(
            deserialize(&bytes),
            Err(Error::Checkpoint(msg)) if msg.contains("bad magic")
        ));
    }
}
