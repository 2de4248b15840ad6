//! Binary checkpoint format.
//!
//! ```text
//! "AFGN"  version:u8 = 1
//! vocab_size:u32  embed_dim:u32  hidden_dim:u32  flags:u32      (little endian)
//! tensors, each: rows:u32 cols:u32 then rows*cols f32 (little endian), in order
//!     embedding, [decoder_embedding], enc_w, enc_b, dec_w, dec_b, out_w, out_b, affect
//! vocabulary: count:u32 then per token len:u32 + UTF-8 bytes
//! ```
//!
//! flags: bit 0 = affect inputs, bit 1 = shared embeddings. The decoder embedding
//! is present exactly when bit 1 is clear.

use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Seq2Seq, AFFECT_DIM};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AFGN";
pub const VERSION: u8 = 1;

const FLAG_AFFECT: u32 = 1;
const FLAG_SHARED: u32 = 2;

fn put_u32(buf: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("value {x} exceeds u32")))?;
    buf.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    put_u32(buf, t.rows)?;
    put_u32(buf, t.cols)?;
    for &x in &t.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(model: &Seq2Seq) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    put_u32(&mut buf, c.vocab_size)?;
    put_u32(&mut buf, c.embed_dim)?;
    put_u32(&mut buf, c.hidden_dim)?;
    let flags = if c.use_affect_input { FLAG_AFFECT } else { 0 } | if c.share_embeddings { FLAG_SHARED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    for t in model.params.trainable() {
        put_tensor(&mut buf, t)?;
    }
    put_tensor(&mut buf, &model.params.affect)?;
    put_u32(&mut buf, model.vocab.len())?;
    for tok in model.vocab.tokens() {
        put_u32(&mut buf, tok.len())?;
        buf.extend_from_slice(tok.as_bytes());
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Tensor> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        let raw = self.take(r * c * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Tensor::new(r, c, data))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Seq2Seq> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an AFGN checkpoint".into()));
    }
    let version = cur.take(1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let (vocab_size, embed_dim, hidden_dim) = (cur.u32()?, cur.u32()?, cur.u32()?);
    let flags = cur.u32()? as u32;
    if flags & !(FLAG_AFFECT | FLAG_SHARED) != 0 {
        return Err(Error::Checkpoint(format!("unknown flags {flags:#x}")));
    }
    let config = ModelConfig {
        vocab_size,
        embed_dim,
        hidden_dim,
        use_affect_input: flags & FLAG_AFFECT != 0,
        share_embeddings: flags & FLAG_SHARED != 0,
        max_decode_len: ModelConfig::new(vocab_size).max_decode_len,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let (v, e, h, input) = (vocab_size, embed_dim, hidden_dim, config.input_dim());

    let embedding = cur.tensor("embedding", v, e)?;
    let decoder_embedding = if config.share_embeddings {
        None
    } else {
        Some(cur.tensor("decoder_embedding", v, e)?)
    };
    let params = ModelParams {
        embedding,
        decoder_embedding,
        enc_w: cur.tensor("enc_w", input + h, 4 * h)?,
        enc_b: cur.tensor("enc_b", 1, 4 * h)?,
        dec_w: cur.tensor("dec_w", input + h, 4 * h)?,
        dec_b: cur.tensor("dec_b", 1, 4 * h)?,
        out_w: cur.tensor("out_w", h, v)?,
        out_b: cur.tensor("out_b", 1, v)?,
        affect: cur.tensor("affect", v, AFFECT_DIM)?,
    };
    let count = cur.u32()?;
    if count != v {
        return Err(Error::Checkpoint(format!(
            "vocabulary holds {count} tokens, config says {v}"
        )));
    }
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let n = cur.u32()?;
        let s =
            std::str::from_utf8(cur.take(n)?).map_err(|_| Error::Checkpoint("vocabulary token is not UTF-8".into()))?;
        tokens.push(s.to_string());
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Seq2Seq { config, params, vocab })
}

pub fn save(model: &Seq2Seq, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Seq2Seq> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
