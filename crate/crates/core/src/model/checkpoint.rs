//! Binary checkpoint format.
//!
//! ```text
//! "OCTD"            magic
//! u32               format version
//! u32 x 4           in_channels, width, kernel, block count
//! u8  x blocks      block kind codes
//! f64 x 2           batch-norm eps, momentum
//! u64 x 3           epoch, seed, history length
//! (u64, f64, f64)*  per-epoch (epoch, train_loss, val_loss)
//! f64 ...           parameters in block order
//! u32               CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Within a block, each
//! convolution is stored as weights then bias and each batch norm as gamma,
//! beta, running mean, running variance.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::network::Network;
use crate::model::spec::{BlockKind, NetworkSpec};
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"OCTD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: u64,
    pub train_loss: f64,
    /// NaN when training ran without a validation split.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    /// Epoch the stored parameters come from (0 for an untrained model).
    pub epoch: u64,
    pub seed: u64,
    pub history: Vec<EpochLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f64>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(network: Network<f64>, meta: TrainingMeta) -> Self {
        Checkpoint { network, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.network.spec();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            spec.in_channels(),
            spec.width(),
            spec.kernel(),
            spec.blocks().len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend(spec.blocks().iter().map(|b| b.code()));
        let (eps, momentum) = self
            .network
            .blocks()
            .iter()
            .flat_map(|b| b.batch_norms())
            .next()
            .map_or((crate::nn::DEFAULT_EPS, crate::nn::DEFAULT_MOMENTUM), |bn| {
                (bn.eps, bn.momentum)
            });
        out.extend_from_slice(&eps.to_le_bytes());
        out.extend_from_slice(&momentum.to_le_bytes());
        out.extend_from_slice(&self.meta.epoch.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&(self.meta.history.len() as u64).to_le_bytes());
        for h in &self.meta.history {
            out.extend_from_slice(&h.epoch.to_le_bytes());
            out.extend_from_slice(&h.train_loss.to_le_bytes());
            out.extend_from_slice(&h.val_loss.to_le_bytes());
        }
        for block in self.network.blocks() {
            for t in block.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: VERSION,
            });
        }
        let in_channels = r.u32()? as usize;
        let width = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let n_blocks = r.u32()? as usize;
        let kinds = r
            .take(n_blocks)?
            .iter()
            .map(|&c| {
                BlockKind::from_code(c).ok_or_else(|| r.malformed(format!("unknown block code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec::from_parts(kinds, width, kernel, in_channels)
            .map_err(|e| r.malformed(e.to_string()))?;
        let eps = r.f64()?;
        let momentum = r.f64()?;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let n_hist = r.u64()?;
        if n_hist > (bytes.len() / 24) as u64 {
            return Err(Error::Truncated { path: path.into() });
        }
        let history = (0..n_hist)
            .map(|_| {
                Ok(EpochLoss {
                    epoch: r.u64()?,
                    train_loss: r.f64()?,
                    val_loss: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // Shape the parameters from a template, then fill them in order.
        let mut network = Network::<f64>::zeroed(spec)?;
        for block in network.blocks_mut() {
            for bn in block.batch_norms_mut() {
                bn.eps = eps;
                bn.momentum = momentum;
            }
            for t in block.tensors_mut() {
                for v in t.iter_mut() {
                    *v = r.f64()?;
                }
            }
        }
        let body_len = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::Checksum {
                path: path.into(),
                stored,
                computed,
            });
        }
        for block in network.blocks() {
            for bn in block.batch_norms() {
                bn.validate().map_err(|e| r.malformed(e.to_string()))?;
            }
        }
        Ok(Checkpoint {
            network,
            meta: TrainingMeta {
                epoch,
                seed,
                history,
            },
        })
    }

    /// Writes atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.into(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn malformed(&self, reason: String) -> Error {
        Error::MalformedHeader {
            path: self.path.into(),
            reason,
        }
    }
}
