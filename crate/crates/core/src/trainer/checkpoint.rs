use std::fs;
use std::path::Path;

use crate::corpus::{Fnv64, ItemVocabulary};
use crate::error::{Error, Result};
use crate::nets::ModelParams;
use crate::numerics::{AdamHyper, AdamState, DenseArray};

use super::TrainConfig;

pub const MAGIC: &[u8; 6] = b"IIRNN1";

/// Trained parameters plus everything needed to resume or verify them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    /// One state per parameter array, in [`ModelParams::named`] order.
    pub adam: Vec<AdamState<f32>>,
    pub vocab_hash: u64,
    pub epoch: u64,
}

impl Checkpoint {
    pub fn verify_vocab(&self, vocab: &ItemVocabulary) -> Result<()> {
        let got = vocab.fingerprint();
        if got != self.vocab_hash {
            return Err(Error::Config(format!(
                "checkpoint was trained on vocabulary {:016x}, corpus has {got:016x}",
                self.vocab_hash
            )));
        }
        Ok(())
    }

    fn header_text(&self) -> String {
        let adam_t = self.adam.first().map_or(0, |a| a.t);
        format!(
            "{}vocab_hash = {:016x}\nepoch = {}\nadam_t = {adam_t}\n",
            self.config.to_text(),
            self.vocab_hash,
            self.epoch
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.header_text());
        let named = self.params.named();
        let mut arrays: Vec<(String, &DenseArray<f32>)> = named.iter().map(|(n, a)| (n.clone(), *a)).collect();
        for ((name, _), st) in named.iter().zip(&self.adam) {
            arrays.push((format!("adam.m.{name}"), &st.m));
            arrays.push((format!("adam.v.{name}"), &st.v));
        }
        out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
        for (name, a) in arrays {
            put_str(&mut out, &name);
            out.extend_from_slice(&(a.dims().len() as u64).to_le_bytes());
            for &d in a.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut h = Fnv64::new();
        h.write(&out);
        out.extend_from_slice(&h.finish().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not an IIRNN1 checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv64::new();
        h.write(body);
        if h.finish().to_le_bytes() != tail {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let header = r.string()?;
        let mut config = TrainConfig::default();
        let (mut vocab_hash, mut epoch, mut adam_t) = (None, None, 0u64);
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint header line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| Error::Format(format!("bad {k} {v:?}")));
            match k {
                "vocab_hash" => {
                    vocab_hash = Some(
                        u64::from_str_radix(v, 16).map_err(|_| Error::Format(format!("bad vocab hash {v:?}")))?,
                    )
                }
                "epoch" => epoch = Some(num(v)?),
                "adam_t" => adam_t = num(v)?,
                _ => config.set(k, v).map_err(|e| Error::Format(e.to_string()))?,
            }
        }
        let count = r.u64()? as usize;
        let mut params = Vec::new();
        let mut moments = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u64()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("{name}: rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format("array too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let array = DenseArray::from_vec(&dims, data).map_err(|e| Error::Format(e.to_string()))?;
            if name.starts_with("adam.") {
                moments.push((name, array));
            } else {
                params.push((name, array));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let hyper = AdamHyper {
            lr: config.lr,
            ..AdamHyper::default()
        };
        let mut adam = Vec::with_capacity(params.len());
        if !moments.is_empty() {
            if moments.len() != 2 * params.len() {
                return Err(Error::Format("optimizer state does not match parameters".into()));
            }
            let mut it = moments.into_iter();
            for (name, _) in &params {
                let (mn, m) = it.next().unwrap();
                let (vn, v) = it.next().unwrap();
                if mn != format!("adam.m.{name}") || vn != format!("adam.v.{name}") {
                    return Err(Error::Format(format!("optimizer state out of order at {name}")));
                }
                adam.push(AdamState { m, v, t: adam_t, hyper });
            }
        }
        let params = ModelParams::from_named(config.variant, params).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Checkpoint {
            config,
            params,
            adam,
            vocab_hash: vocab_hash.ok_or_else(|| Error::Format("checkpoint lacks vocab_hash".into()))?,
            epoch: epoch.ok_or_else(|| Error::Format("checkpoint lacks epoch".into()))?,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, ckpt.to_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
