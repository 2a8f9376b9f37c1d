//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "LFM1"
//! kind     u8       0 = lorentzfm, 1 = fm
//! task     u8       0 = ranking, 1 = ctr
//! count    u64      feature count |V|
//! dim      u64      embedding size k
//! seed     u64
//! epoch    u64      1-based epoch the parameters come from
//! params   f64 * n  lorentzfm: |V| x k ambient rows; fm: [bias, linear, factors]
//! adam     u8       0 = absent, 1 = present
//!   step   u64
//!   m, v   f64 * n each
//! ```

use std::path::Path;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, FmParameters, Model, ModelKind};
use crate::optim::AdamState;

const MAGIC: &[u8; 4] = b"LFM1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub task: Task,
    pub seed: u64,
    pub epoch: u64,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    fn flat_params(&self) -> Vec<f64> {
        match &self.model {
            Model::Lorentz(t) => t.as_slice().to_vec(),
            Model::Fm(p) => p.to_flat(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.flat_params();
        let mut out = Vec::with_capacity(64 + params.len() * 8 * 3);
        out.extend_from_slice(MAGIC);
        out.push(match self.model.kind() {
            ModelKind::LorentzFm => 0,
            ModelKind::Fm => 1,
        });
        out.push(match self.task {
            Task::Ranking => 0,
            Task::Ctr => 1,
        });
        for v in [
            self.model.feature_count() as u64,
            self.model.dim() as u64,
            self.seed,
            self.epoch,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        push_floats(&mut out, &params);
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                push_floats(&mut out, &state.m);
                push_floats(&mut out, &state.v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let kind = match r.u8()? {
            0 => ModelKind::LorentzFm,
            1 => ModelKind::Fm,
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        let task = match r.u8()? {
            0 => Task::Ranking,
            1 => Task::Ctr,
            t => return Err(Error::Checkpoint(format!("unknown task {t}"))),
        };
        let count = r.usize()?;
        let dim = r.usize()?;
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let n = match kind {
            ModelKind::LorentzFm => count.checked_mul(dim),
            ModelKind::Fm => count
                .checked_mul(dim)
                .and_then(|f| f.checked_add(count + 1)),
        }
        .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
        let params = r.floats(n)?;
        let model = match kind {
            ModelKind::LorentzFm => Model::Lorentz(
                EmbeddingTable::from_raw(count, dim, params)
                    .map_err(|e| Error::Checkpoint(format!("invalid embedding table: {e}")))?,
            ),
            ModelKind::Fm => Model::Fm(FmParameters::from_flat(count, dim, &params)?),
        };
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let m = r.floats(n)?;
                let v = r.floats(n)?;
                Some(AdamState { step, m, v })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer-state flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model,
            task,
            seed,
            epoch,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn push_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size out of range".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size out of range".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
