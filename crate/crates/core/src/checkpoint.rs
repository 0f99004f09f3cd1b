//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "WDCG" | u32 version | u8 kind | str descriptor
//! u32 n_tensors   { str name | u32 rank | u64 dims[rank] | f64 data[] }
//! u32 n_optimizers{ str name | u64 step | f64 lr,beta1,beta2,eps,wd
//!                   u32 n { u64 len | f64 m[len] | f64 v[len] } }
//! u32 n_running   { str name | u64 len | f64 mean[len] | f64 var[len] | f64 momentum | f64 eps }
//! u8[32] rng seed | u64 rng stream | u128 rng word position
//! ```
//!
//! where `str` is a `u32` byte length followed by UTF-8.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::{RunningStats, Tensor};
use crate::error::{Error, Result};
use crate::optim::{AdamWHyper, AdamWState};

pub const MAGIC: &[u8; 4] = b"WDCG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Gan,
    Classifier,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Gan => 1,
            CheckpointKind::Classifier => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(CheckpointKind::Gan),
            2 => Ok(CheckpointKind::Classifier),
            t => Err(Error::Format(format!("unknown checkpoint kind {t}"))),
        }
    }
}

/// Exact ChaCha8 position: restoring it continues the same stream bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    pub kind: CheckpointKind,
    /// JSON architecture/config descriptor.
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizers: Vec<(String, AdamWState)>,
    pub running: Vec<(String, RunningStats)>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<Tensor> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn optimizer(&self, name: &str) -> Option<&AdamWState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn running_with_prefix(&self, prefix: &str) -> Vec<RunningStats> {
        self.running
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        w.push(self.kind.tag());
        put_str(&mut w, &self.descriptor);

        put_u32(&mut w, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut w, name);
            put_u32(&mut w, t.rank() as u32);
            for d in t.shape() {
                put_u64(&mut w, *d as u64);
            }
            put_f64s(&mut w, t.data());
        }

        put_u32(&mut w, self.optimizers.len() as u32);
        for (name, st) in &self.optimizers {
            put_str(&mut w, name);
            put_u64(&mut w, st.step_count);
            let h = st.hyper;
            put_f64s(&mut w, &[h.lr, h.beta1, h.beta2, h.epsilon, h.weight_decay]);
            put_u32(&mut w, st.first_moment.len() as u32);
            for (m, v) in st.first_moment.iter().zip(&st.second_moment) {
                put_u64(&mut w, m.len() as u64);
                put_f64s(&mut w, m);
                put_f64s(&mut w, v);
            }
        }

        put_u32(&mut w, self.running.len() as u32);
        for (name, rs) in &self.running {
            put_str(&mut w, name);
            put_u64(&mut w, rs.mean.len() as u64);
            put_f64s(&mut w, &rs.mean);
            put_f64s(&mut w, &rs.var);
            put_f64s(&mut w, &[rs.momentum, rs.eps]);
        }

        w.extend_from_slice(&self.rng.seed);
        put_u64(&mut w, self.rng.stream);
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing WDCG magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = CheckpointKind::from_tag(r.take(1)?[0])?;
        let descriptor = r.string()?;

        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let data = r.f64s(len)?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }

        let n = r.u32()? as usize;
        let mut optimizers = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let step_count = r.u64()?;
            let h = r.f64s(5)?;
            let count = r.u32()? as usize;
            let mut first_moment = Vec::with_capacity(count);
            let mut second_moment = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u64()? as usize;
                first_moment.push(r.f64s(len)?);
                second_moment.push(r.f64s(len)?);
            }
            optimizers.push((
                name,
                AdamWState {
                    step_count,
                    first_moment,
                    second_moment,
                    hyper: AdamWHyper {
                        lr: h[0],
                        beta1: h[1],
                        beta2: h[2],
                        epsilon: h[3],
                        weight_decay: h[4],
                    },
                },
            ));
        }

        let n = r.u32()? as usize;
        let mut running = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let len = r.u64()? as usize;
            let mean = r.f64s(len)?;
            let var = r.f64s(len)?;
            let tail = r.f64s(2)?;
            running.push((
                name,
                RunningStats {
                    mean,
                    var,
                    momentum: tail[0],
                    eps: tail[1],
                },
            ));
        }

        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            kind,
            descriptor,
            tensors,
            optimizers,
            running,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
