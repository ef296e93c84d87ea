//! Versioned single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SEQ3CKPT" u32 version
//! str kind
//! u32 n  (str key, str value) × n          resolved run config, data paths omitted
//! str vocab_hash
//! u64 epoch  u64 step
//! u32 n  (str name, u32 rank, u64 dims…, f64 data…) × n
//! u8 has_adam  [f64 lr β1 β2 ε, u64 step, u32 n, (u64 len, f64 m…, f64 v…) × n]
//! u8 has_rng   [u8×32 seed, u64 stream, u128 word_pos]
//! u8×32 sha256 of everything above
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lm::{LmModel, LmTrainer};
use crate::model::Seq3Model;
use crate::optim::Adam;
use crate::tensor::{ParamStore, Tensor};
use crate::train::Trainer;

pub const MAGIC: &[u8; 8] = b"SEQ3CKPT";
pub const VERSION: u32 = 1;
pub const KIND_SEQ3: &str = "seq3";
pub const KIND_LM: &str = "lm";

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Vec<(String, String)>,
    pub vocab_hash: String,
    pub epoch: u64,
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub adam: Option<Adam>,
    pub rng: Option<RngState>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn eof(_: std::io::Error) -> Error {
    corrupt("file is truncated or corrupt")
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.write_f64::<LittleEndian>(x).unwrap();
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(eof)
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(eof)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(eof)
    }

    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(eof)
    }

    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    /// Length prefix checked against the bytes left, so garbage cannot trigger huge allocations.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(unit).is_none_or(|b| b > self.remaining()) {
            return Err(corrupt("length field exceeds file size"));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > self.remaining() {
            return Err(corrupt("string length exceeds file size"));
        }
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf).map_err(eof)?;
        String::from_utf8(buf).map_err(|_| corrupt("string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        put_str(&mut out, &self.kind);
        out.write_u32::<LittleEndian>(self.config.len() as u32).unwrap();
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_str(&mut out, &self.vocab_hash);
        out.write_u64::<LittleEndian>(self.epoch).unwrap();
        out.write_u64::<LittleEndian>(self.step).unwrap();
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
            for &d in t.shape() {
                out.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            put_f64s(&mut out, t.data());
        }
        match &self.adam {
            Some(a) => {
                out.push(1);
                put_f64s(&mut out, &[a.lr, a.beta1, a.beta2, a.eps]);
                out.write_u64::<LittleEndian>(a.step).unwrap();
                out.write_u32::<LittleEndian>(a.moments.len() as u32).unwrap();
                for (m, v) in &a.moments {
                    out.write_u64::<LittleEndian>(m.len() as u64).unwrap();
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
            None => out.push(0),
        }
        match &self.rng {
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.seed);
                out.write_u64::<LittleEndian>(r.stream).unwrap();
                out.write_u128::<LittleEndian>(r.word_pos).unwrap();
            }
            None => out.push(0),
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic or too short)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader {
            cur: Cursor::new(body),
        };
        r.cur.set_position(MAGIC.len() as u64);
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, this build reads {VERSION}"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch: file is truncated or corrupt"));
        }
        let kind = r.str()?;
        let n = r.u32()? as usize;
        let config = (0..n)
            .map(|_| Ok((r.str()?, r.str()?)))
            .collect::<Result<Vec<_>>>()?;
        let vocab_hash = r.str()?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = match len {
                Some(l) if l * 8 <= r.remaining() => l,
                _ => return Err(corrupt(format!("tensor {name} has an impossible shape {shape:?}"))),
            };
            let data = r.f64s(len)?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let h = r.f64s(4)?;
                let step = r.u64()?;
                let n = r.u32()? as usize;
                let mut moments = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    let len = r.len(16)?;
                    let m = r.f64s(len)?;
                    let v = r.f64s(len)?;
                    moments.push((m, v));
                }
                Some(Adam {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                    step,
                    moments,
                })
            }
            _ => return Err(corrupt("bad optimizer flag")),
        };
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                r.cur.read_exact(&mut seed).map_err(eof)?;
                let stream = r.u64()?;
                let word_pos = r.cur.read_u128::<LittleEndian>().map_err(eof)?;
                Some(RngState { seed, stream, word_pos })
            }
            _ => return Err(corrupt("bad rng flag")),
        };
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes after the payload"));
        }
        Ok(Checkpoint {
            kind,
            config,
            vocab_hash,
            epoch,
            step,
            tensors,
            adam,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_pairs(&self.config)
    }

    /// Refuses a checkpoint built against another vocabulary.
    pub fn check_vocab(&self, hash: &str) -> Result<()> {
        if self.vocab_hash != hash {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained with vocabulary {}, got {}",
                short(&self.vocab_hash),
                short(hash)
            )));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Compatibility(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    fn vocab_size(&self, embedding: &str) -> Result<usize> {
        self.tensors
            .iter()
            .find(|(n, _)| n == embedding)
            .map(|(_, t)| t.rows())
            .ok_or_else(|| corrupt(format!("missing tensor {embedding}")))
    }

    /// Copies stored tensors into `store`; names and shapes must match exactly.
    fn fill(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Compatibility(format!("unexpected tensor {name}")))?;
            let slot = store.value_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Compatibility(format!(
                    "tensor {name}: stored shape {:?}, model shape {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn tensors_of(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
}

/// The run config minus input file paths, so a checkpoint's bytes do not
/// depend on where its inputs lived.
fn portable_pairs(config: &RunConfig) -> Vec<(String, String)> {
    config.to_pairs().into_iter().filter(|(k, _)| !k.starts_with("data.")).collect()
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, config: &RunConfig, vocab_hash: &str) -> Self {
        Checkpoint {
            kind: KIND_SEQ3.into(),
            config: portable_pairs(config),
            vocab_hash: vocab_hash.into(),
            epoch: trainer.epoch as u64,
            step: trainer.step,
            tensors: tensors_of(&trainer.model.store),
            adam: Some(trainer.adam.clone()),
            rng: Some(RngState::capture(&trainer.rng)),
        }
    }

    /// Restores a trainer exactly as saved, optimizer and rng included.
    pub fn into_trainer(self) -> Result<(Trainer, RunConfig)> {
        self.expect_kind(KIND_SEQ3)?;
        let config = self.run_config()?;
        let vocab = self.vocab_size("embedding")?;
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut model = Seq3Model::new(config.seq3.clone(), vocab, None, &mut scratch)?;
        self.fill(&mut model.store)?;
        let rng = self
            .rng
            .as_ref()
            .map(RngState::restore)
            .unwrap_or_else(|| ChaCha8Rng::seed_from_u64(config.seed));
        let mut trainer = Trainer::from_parts(model, rng);
        if let Some(adam) = self.adam {
            if adam.moments.len() != trainer.model.store.len() {
                return Err(corrupt("optimizer state does not match the parameters"));
            }
            trainer.adam = adam;
        }
        trainer.epoch = self.epoch as usize;
        trainer.step = self.step;
        Ok((trainer, config))
    }

    pub fn into_model(self) -> Result<(Seq3Model, RunConfig)> {
        self.into_trainer().map(|(t, c)| (t.model, c))
    }

    pub fn from_lm_trainer(trainer: &LmTrainer, config: &RunConfig, vocab_hash: &str) -> Self {
        Checkpoint {
            kind: KIND_LM.into(),
            config: portable_pairs(config),
            vocab_hash: vocab_hash.into(),
            epoch: trainer.epoch as u64,
            step: trainer.adam.step,
            tensors: tensors_of(&trainer.model.store),
            adam: Some(trainer.adam.clone()),
            rng: Some(RngState::capture(&trainer.rng)),
        }
    }

    pub fn into_lm_trainer(self) -> Result<(LmTrainer, RunConfig)> {
        self.expect_kind(KIND_LM)?;
        let config = self.run_config()?;
        let vocab = self.vocab_size("lm.embedding")?;
        let mut trainer = LmTrainer::new(config.lm.clone(), vocab, config.seed)?;
        self.fill(&mut trainer.model.store)?;
        if let Some(adam) = self.adam {
            if adam.moments.len() != trainer.model.store.len() {
                return Err(corrupt("optimizer state does not match the parameters"));
            }
            trainer.adam = adam;
        }
        if let Some(rng) = &self.rng {
            trainer.rng = rng.restore();
        }
        trainer.epoch = self.epoch as usize;
        Ok((trainer, config))
    }

    /// Loads a language model for use as a frozen prior.
    pub fn into_frozen_lm(self) -> Result<LmModel> {
        self.into_lm_trainer().map(|(t, _)| t.into_frozen())
    }
}
