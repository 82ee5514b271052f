//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "FILMCKPT"
//! version      u32       1
//! header_len   u64
//! header       UTF-8 TOML: model config, training metadata, table flags
//! vocab_len    u64
//! vocab_len × (u32 byte length, UTF-8 token)     ids 0 and 1 are <pad>, <unk>
//! tensor_count u32
//! tensor_count × (u32 name length, UTF-8 name,
//!                 u32 rank, rank × u64 dims,
//!                 product(dims) × f64)
//! ```
//!
//! The embedding table is stored as the tensor named `embeddings.table`;
//! the others are the model parameters in storage order.

use std::fs;
use std::path::Path;

use metafilm_core::embeddings::EmbeddingTable;
use metafilm_core::model::{ModelConfig, ModelParams};
use metafilm_core::train::{Checkpoint, TrainMeta};
use metafilm_core::vocab::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use metafilm_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"FILMCKPT";
pub const VERSION: u32 = 1;
pub const TABLE_TENSOR: &str = "embeddings.table";

#[derive(Serialize, Deserialize)]
struct Header {
    table_trainable: bool,
    model: ModelConfig,
    meta: TrainMeta,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let header = toml::to_string(&Header {
        table_trainable: ck.table.trainable,
        model: ck.model,
        meta: ck.meta,
    })
    .expect("header is plain data");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, header.len() as u64);
    out.extend_from_slice(header.as_bytes());
    put_u64(&mut out, ck.vocab.len() as u64);
    for tok in ck.vocab.tokens() {
        put_str(&mut out, tok);
    }
    put_u32(&mut out, (ck.params.len() + 1) as u32);
    put_tensor(&mut out, TABLE_TENSOR, ck.table.matrix());
    for p in ck.params.iter() {
        put_tensor(&mut out, &p.name, &p.value);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn string(&mut self, n: usize) -> std::result::Result<String, String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| format!("invalid UTF-8: {e}"))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor), String> {
        let n = self.u32()? as usize;
        let name = self.string(n)?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.len())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| format!("tensor {name} is larger than the file"))?;
        let data = self
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("tensor {name}: {e}"))?;
        Ok((name, t))
    }
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!(
            "unsupported checkpoint version {version}; this build reads version {VERSION}"
        ));
    }
    let n = r.len()?;
    let header: Header = toml::from_str(&r.string(n)?).map_err(|e| format!("header: {e}"))?;
    let vocab_len = r.len()?;
    let mut tokens = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        let n = r.u32()? as usize;
        tokens.push(r.string(n)?);
    }
    if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
        return Err("vocabulary does not start with the reserved tokens".into());
    }
    let vocab = Vocabulary::from_tokens(tokens.into_iter().skip(2)).map_err(|e| e.to_string())?;
    let count = r.u32()? as usize;
    let (name, matrix) = r.tensor()?;
    if name != TABLE_TENSOR {
        return Err(format!("expected {TABLE_TENSOR} first, found {name}"));
    }
    let table = EmbeddingTable::from_matrix(matrix, header.table_trainable).map_err(|e| e.to_string())?;
    if table.vocab_len() != vocab.len() {
        return Err(format!(
            "embedding table has {} rows for {} vocabulary entries",
            table.vocab_len(),
            vocab.len()
        ));
    }
    let mut params = ModelParams::new();
    for _ in 1..count {
        let (name, t) = r.tensor()?;
        params.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    header.model.validate().map_err(|e| e.to_string())?;
    params.check_against(&header.model).map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        model: header.model,
        params,
        vocab,
        table,
        meta: header.meta,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, to_bytes(ck)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes).map_err(|message| CliError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}
