//! Single-file binary model checkpoints.
//!
//! Layout (all integers little-endian):
//! magic `PXWD`, format version u16, architecture u8 (0 linear, 1 conv),
//! height u32, width u32, channels u32, class count u32, init seed u64,
//! normalizer mean and std (3 f64 each), parameter count u64, parameters
//! as f64. The encoding is exact, so save/load round-trips bit-identically.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, BcnnModel, ClassifierModel, LinearModel, Normalizer};

const MAGIC: &[u8; 4] = b"PXWD";
const VERSION: u16 = 1;

impl ClassifierModel {
    /// Serializes the model to its checkpoint byte representation.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = self.input_dims();
        let norm = self.normalizer();
        let params = self.params();
        let mut out = Vec::with_capacity(64 + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.architecture() {
            Architecture::Linear => 0,
            Architecture::Bcnn => 1,
        });
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&(self.num_classes() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed().to_le_bytes());
        for v in norm.mean.iter().chain(norm.std.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format(origin, "not a checkpoint file (bad magic)"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let arch = r.take(1)?[0];
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let channels = r.u32()?;
        if channels != 3 {
            return Err(Error::format(
                origin,
                format!("unsupported channel count {channels}"),
            ));
        }
        let k = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let mut stats = [0f64; 6];
        for s in stats.iter_mut() {
            *s = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
        let normalizer = Normalizer {
            mean: [stats[0], stats[1], stats[2]],
            std: [stats[3], stats[4], stats[5]],
        };
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after parameters"));
        }
        match arch {
            0 => Ok(ClassifierModel::Linear(LinearModel::from_parts(
                h, w, k, seed, normalizer, params,
            )?)),
            1 => Ok(ClassifierModel::Bcnn(BcnnModel::from_parts(
                h, w, k, seed, normalizer, params,
            )?)),
            other => Err(Error::format(
                origin,
                format!("unknown architecture tag {other}"),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
