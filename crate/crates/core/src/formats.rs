//! Binary checkpoint and embedding-dump formats.
//!
//! All integers are 8-byte little-endian unsigned, all reals 8-byte
//! little-endian IEEE-754 doubles, tensors row-major.
//!
//! Checkpoint (`DMC1`): magic, then for language A and then language B:
//! `vocab_size, d_emb, d_out`, embedding table, projection weight,
//! projection bias.
//!
//! Embedding dump (`DMCE`): magic, `count, dim`, then `count × dim` values.
//! A JSON sidecar records count, dim, source corpus and the SHA-256 of the
//! binary file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::moco::{DualMocoState, MemoryQueue};
use crate::numerics::{DenseMatrix, DenseVector};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMC1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"DMCE";

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("size {v} does not fit in memory")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_checkpoint(a: &EncoderParams, b: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * (6 + a.num_params() + b.num_params()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for p in [a, b] {
        let (v, e, o) = p.shape();
        put_u64(&mut out, v);
        put_u64(&mut out, e);
        put_u64(&mut out, o);
        for t in p.tensors() {
            put_f64s(&mut out, t);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderParams, EncoderParams)> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(CHECKPOINT_MAGIC)?;
    let mut read_one = || -> Result<EncoderParams> {
        let (v, e, o) = (c.u64()?, c.u64()?, c.u64()?);
        let table = DenseMatrix::from_vec(v, e, c.f64s(v * e)?)?;
        let weight = DenseMatrix::from_vec(e, o, c.f64s(e * o)?)?;
        let bias = DenseVector::new(c.f64s(o)?);
        let p = EncoderParams::from_parts(table, weight, bias)?;
        if !p.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(p)
    };
    let a = read_one()?;
    let b = read_one()?;
    c.finish()?;
    Ok((a, b))
}

pub fn save_checkpoint(path: &Path, a: &EncoderParams, b: &EncoderParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(a, b))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, EncoderParams)> {
    decode_checkpoint(&fs::read(path).map_err(Error::at(path))?)
}

pub fn encode_embeddings(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * m.values().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u64(&mut out, m.rows());
    put_u64(&mut out, m.cols());
    put_f64s(&mut out, m.values());
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(EMBEDDING_MAGIC)?;
    let (count, dim) = (c.u64()?, c.u64()?);
    let values = c.f64s(
        count
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("size overflow".into()))?,
    )?;
    c.finish()?;
    DenseMatrix::from_vec(count, dim, values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub count: usize,
    pub dim: usize,
    pub source_corpus: String,
    /// Hex SHA-256 of the binary dump.
    pub checksum: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the dump and its `<path>.json` sidecar.
pub fn save_embeddings(path: &Path, m: &DenseMatrix, source_corpus: &str) -> Result<EmbeddingSidecar> {
    let bytes = encode_embeddings(m);
    let sidecar = EmbeddingSidecar {
        count: m.rows(),
        dim: m.cols(),
        source_corpus: source_corpus.to_string(),
        checksum: sha256_hex(&bytes),
    };
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(sidecar)
}

/// Loads a dump, verifying it against its sidecar when one exists.
pub fn load_embeddings(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(Error::at(path))?;
    let side = sidecar_path(path);
    if side.exists() {
        let sidecar: EmbeddingSidecar = serde_json::from_slice(&fs::read(&side).map_err(Error::at(&side))?)?;
        let actual = sha256_hex(&bytes);
        if sidecar.checksum != actual {
            return Err(Error::Format(format!(
                "checksum mismatch for {}: sidecar {}, file {actual}",
                path.display(),
                sidecar.checksum
            )));
        }
    }
    decode_embeddings(&bytes)
}

/// Momentum encoders, queues (oldest key first) and settings needed to resume
/// training from a [`DualMocoState`].
pub fn save_moco_state(dir: &Path, state: &DualMocoState) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&dir.join("base.dmc"), &state.base_a, &state.base_b)?;
    save_checkpoint(
        &dir.join("momentum.dmc"),
        &state.momentum_a.params,
        &state.momentum_b.params,
    )?;
    for (name, q) in [("queue_a.dmce", &state.queue_a), ("queue_b.dmce", &state.queue_b)] {
        let rows = q.in_age_order();
        let m = DenseMatrix::from_rows(&rows, q.dim())?;
        write_atomic(&dir.join(name), &encode_embeddings(&m))?;
    }
    let meta = serde_json::json!({
        "momentum": state.momentum_a.coefficient(),
        "queue_capacity": state.queue_a.capacity(),
        "temperature": state.temperature(),
    });
    write_atomic(
        &dir.join("moco_state.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn load_moco_state(dir: &Path) -> Result<DualMocoState> {
    #[derive(Deserialize)]
    struct Meta {
        momentum: f64,
        queue_capacity: usize,
        temperature: f64,
    }
    let meta: Meta = serde_json::from_slice(&fs::read(dir.join("moco_state.json"))?)?;
    let (base_a, base_b) = load_checkpoint(&dir.join("base.dmc"))?;
    let (mom_a, mom_b) = load_checkpoint(&dir.join("momentum.dmc"))?;
    let mut state = DualMocoState::new(base_a, base_b, meta.momentum, meta.queue_capacity, meta.temperature)?;
    state.momentum_a.params = mom_a;
    state.momentum_b.params = mom_b;
    for (name, queue) in [
        ("queue_a.dmce", &mut state.queue_a),
        ("queue_b.dmce", &mut state.queue_b),
    ] {
        let m = decode_embeddings(&fs::read(dir.join(name))?)?;
        let rows: Vec<&[f64]> = m.iter_rows().collect();
        restore_queue(queue, &rows)?;
    }
    Ok(state)
}

fn restore_queue(queue: &mut MemoryQueue, rows: &[&[f64]]) -> Result<()> {
    for chunk in rows.chunks(queue.capacity()) {
        queue.enqueue_batch(chunk)?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads exactly the 4-byte magic of a file.
pub fn sniff_magic(path: &Path) -> Result<[u8; 4]> {
    let mut buf = [0u8; 4];
    fs::File::open(path).map_err(Error::at(path))?.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{PoolingMode, TokenSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64, vocab: usize) -> EncoderParams {
        EncoderParams::random(vocab, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn checkpoint_layout() {
        let a = params(1, 4);
        let b = params(2, 5);
        let bytes = encode_checkpoint(&a, &b);
        assert_eq!(&bytes[..4], b"DMC1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 2);
        let first = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
        assert_eq!(first, a.embedding_table.get(0, 0));
        assert_eq!(bytes.len(), 4 + 2 * 24 + 8 * (a.num_params() + b.num_params()));
        assert_eq!(decode_checkpoint(&bytes).unwrap(), (a, b));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let a = params(1, 4);
        let mut bytes = encode_checkpoint(&a, &a);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        bytes.push(0);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint(b"XXXX"), Err(Error::Format(_))));
    }

    #[test]
    fn embeddings_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.dmce");
        let m = DenseMatrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap();
        let side = save_embeddings(&path, &m, "corpus.tsv").unwrap();
        assert_eq!((side.count, side.dim), (2, 3));
        assert_eq!(load_embeddings(&path).unwrap(), m);
        assert_eq!(&sniff_magic(&path).unwrap(), b"DMCE");

        let mut bytes = fs::read(&path).unwrap();
        bytes[20] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Format(_))));
    }

    #[test]
    fn moco_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = DualMocoState::new(params(1, 6), params(2, 6), 0.9, 3, 0.1).unwrap();
        let batch: Vec<TokenSequence> = (0..2u32).map(|i| TokenSequence::new(vec![i, i + 1]).unwrap()).collect();
        for _ in 0..3 {
            state.advance(&batch, &batch, PoolingMode::Mean).unwrap();
        }
        save_moco_state(dir.path(), &state).unwrap();
        let loaded = load_moco_state(dir.path()).unwrap();
        assert_eq!(loaded.base_a, state.base_a);
        assert_eq!(loaded.momentum_b, state.momentum_b);
        assert_eq!(loaded.queue_a.in_age_order(), state.queue_a.in_age_order());
        assert_eq!(loaded.queue_b.in_age_order(), state.queue_b.in_age_order());
    }
}
