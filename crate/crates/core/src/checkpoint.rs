//! Binary checkpoints: configuration text, step counter and named `f32`
//! arrays (weights, optimizer moments, quantizer steps).
//!
//! Layout, little endian: `CCKP`, version `u32`, config length `u32` and
//! UTF-8 text, step `u64`, array count `u32`, then per array the name
//! (`u32` length + UTF-8), rank `u32`, dims `u64` each and the values.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{CodecError, Result};
use crate::nn::{self, Module};
use crate::optim::Adam;
use crate::quantizer::QuantizerSpec;

pub const MAGIC: &[u8; 4] = b"CCKP";
pub const VERSION: u32 = 1;

pub type ArrayMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

const QUANTIZER_KEY: &str = "quantizer";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub arrays: ArrayMap,
}

fn bad(msg: impl Into<String>) -> CodecError {
    CodecError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, step: u64) -> Self {
        Checkpoint { config: config.clone(), step, arrays: ArrayMap::new() }
    }

    pub fn put_module(&mut self, prefix: &str, m: &dyn Module<f32>) {
        for (name, t) in nn::named_params(m) {
            self.arrays.insert(nn::join(prefix, &name), (t.shape().to_vec(), t.to_vec()));
        }
    }

    pub fn load_module(&self, prefix: &str, m: &mut dyn Module<f32>) -> Result<()> {
        nn::load_params(m, prefix, &self.arrays)
    }

    pub fn put_optimizer(&mut self, prefix: &str, opt: &Adam) {
        for (name, shape, data) in opt.state_arrays(prefix) {
            self.arrays.insert(name, (shape, data));
        }
    }

    pub fn load_optimizer(&self, prefix: &str, opt: &mut Adam) -> Result<()> {
        opt.load_state(prefix, &self.arrays)
    }

    pub fn put_quantizer(&mut self, q: &QuantizerSpec) {
        self.arrays.insert(QUANTIZER_KEY.into(), (vec![3], vec![q.step_short, q.step_long, q.init_value]));
    }

    /// `None` when the quantizer has not been calibrated yet.
    pub fn quantizer(&self) -> Result<Option<QuantizerSpec>> {
        let Some((_, v)) = self.arrays.get(QUANTIZER_KEY) else {
            return Ok(None);
        };
        if v.len() != 3 {
            return Err(bad("quantizer entry must hold 3 values"));
        }
        let q = QuantizerSpec { step_short: v[0], step_long: v[1], init_value: v[2] };
        q.validate()?;
        Ok(Some(q))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.arrays.keys().any(|k| k.starts_with(&p))
    }

    /// Error unless `other` describes the same architecture.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        if self.config.architecture_text() != other.architecture_text() {
            return Err(bad("checkpoint was written for a different architecture"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| bad("config text is not UTF-8"))?;
        let config = ModelConfig::parse(text).map_err(|e| bad(format!("embedded config: {e}")))?;
        let step = r.u64()?;
        let count = r.u32()?;
        let mut arrays = ArrayMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("array name is not UTF-8"))?.to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(format!("array {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| bad(format!("array {name}: shape {shape:?} exceeds the file")))?;
            let raw = r.take(numel * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            arrays.insert(name, (shape, data));
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { config, step, arrays })
    }

    /// Write to a temporary sibling and rename over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv1d, Init};
    use crate::tensor::ConvSpec;
    use rand::SeedableRng;

    #[test]
    fn round_trip_and_corruption() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conv: Conv1d<f32> = Conv1d::new(2, 3, 3, ConvSpec::causal(3, 1, 1), true, Init::FanIn(1.0), &mut rng);
        let cfg = ModelConfig::desk();
        let mut ck = Checkpoint::new(&cfg, 42);
        ck.put_module("enc", &conv);
        ck.put_quantizer(&QuantizerSpec::new(0.25, 0.5).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.arrays, ck.arrays);
        assert_eq!(back.config.to_text(), cfg.to_text());
        assert_eq!(back.quantizer().unwrap().unwrap().step_long, 0.5);
        let mut other: Conv1d<f32> = Conv1d::new(2, 3, 3, ConvSpec::causal(3, 1, 1), true, Init::Zeros, &mut rng);
        back.load_module("enc", &mut other).unwrap();
        assert_eq!(other.weight.to_vec(), conv.weight.to_vec());
        assert!(back.check_compatible(&cfg).is_ok());
        assert!(back.check_compatible(&ModelConfig::default()).is_err());

        let bytes = ck.to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CodecError::Checkpoint(_))));
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        let e = Checkpoint::from_bytes(&wrong).unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");
        assert!(Checkpoint::from_bytes(b"RIFF0000").is_err());
    }
}
