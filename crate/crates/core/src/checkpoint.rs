//! GEOH1 checkpoint files: a trained network plus the embedding and task it
//! was trained with.

use std::path::Path;

use crate::data::Task;
use crate::dfs::EmbeddingSpec;
use crate::error::{GeoError, Result};
use crate::net::{decode_spec, encode_spec, Model};

pub(crate) use crate::data::ByteReader as Reader;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GEOH1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub embedding: EmbeddingSpec,
    pub task: Task,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128 + 8 * self.model.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        encode_spec(self.model.spec(), &mut out);
        let (code, arity) = match self.task {
            Task::MultiClass(k) => (0u32, k),
            Task::Binary => (1, 1),
            Task::Regression(c) => (2, c),
        };
        out.extend(code.to_le_bytes());
        out.extend((arity as u64).to_le_bytes());
        let pe = self.embedding.to_string();
        out.extend((pe.len() as u32).to_le_bytes());
        out.extend_from_slice(pe.as_bytes());
        out.extend((self.model.num_params() as u64).to_le_bytes());
        for p in self.model.params() {
            out.extend(p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            source_name,
        };
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(r.error("missing GEOH1 magic"));
        }
        let spec = decode_spec(&mut r)?;
        let code = r.u32()?;
        let arity = r.u64()? as usize;
        let task = match code {
            0 => Task::MultiClass(arity),
            1 => Task::Binary,
            2 => Task::Regression(arity),
            other => return Err(r.error(format!("unknown task code {other}"))),
        };
        let len = r.u32()? as usize;
        let pe_text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error("embedding spec is not UTF-8"))?
            .to_string();
        let embedding: EmbeddingSpec = pe_text.parse()?;
        let count = r.u64()? as usize;
        if r.remaining() != count.saturating_mul(8) {
            return Err(r.error(format!(
                "expected {count} parameters, found {} bytes",
                r.remaining()
            )));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let model = Model::from_params(spec, params)
            .map_err(|e| GeoError::parse(source_name, "parameters", e.to_string()))?;
        Ok(Self {
            model,
            embedding,
            task,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| GeoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GeoError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
