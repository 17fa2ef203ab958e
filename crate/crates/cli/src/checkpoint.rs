//! Model checkpoints.
//!
//! Layout, little-endian: `b"PCKP"`, `u32` version (1), `u32` byte length
//! and UTF-8 text of the `key=value` configuration echo, `u64` training
//! seed, `u64` parameter count P and P `f64` parameters in the fixed tensor
//! traversal order (backbone layers, semantic head, embedding head, then per
//! GCN layer the scorer hidden and output layers and the updator; weights
//! row-major before biases). A `u8` flag follows; when it is 1 the Adam
//! state comes next: `u64` step, `f64` lr, beta1, beta2, eps, then the first
//! and second moments as P `f64` each.

use std::path::Path;

use pcis_core::model::ModelParams;
use pcis_core::optim::AdamState;

use crate::error::{CliError, CliResult};
use crate::settings::{Settings, MODEL_KEYS};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model, loss and clustering settings the parameters belong to.
    pub settings: Settings,
    pub seed: u64,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let echo = self.settings.echo(MODEL_KEYS);
        let flat = self.params.to_flat();
        let mut out = Vec::with_capacity(64 + echo.len() + 24 * flat.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(&mut out, &flat);
        match &self.optimizer {
            None => out.push(0),
            Some(st) => {
                out.push(1);
                out.extend_from_slice(&st.step.to_le_bytes());
                put(&mut out, &[st.lr, st.beta1, st.beta2, st.eps]);
                put(&mut out, &st.m.to_flat());
                put(&mut out, &st.v.to_flat());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CliError::data("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CliError::data(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let echo = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CliError::data("checkpoint configuration is not UTF-8"))?;
        let mut settings = Settings::new();
        settings
            .apply_text(echo)
            .map_err(|e| CliError::data(format!("checkpoint configuration: {}", e.message)))?;
        settings
            .validate()
            .map_err(|e| CliError::data(format!("checkpoint configuration: {}", e.message)))?;
        let seed = r.u64()?;
        let count = r.u64()? as usize;
        let expected = ModelParams::zeros(&settings.model).num_params();
        if count != expected {
            return Err(CliError::data(format!(
                "checkpoint holds {count} parameters, its configuration needs {expected}"
            )));
        }
        let params = ModelParams::from_flat(&settings.model, &r.f64s(count)?)?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let h = r.f64s(4)?;
                let m = ModelParams::from_flat(&settings.model, &r.f64s(count)?)?;
                let v = ModelParams::from_flat(&settings.model, &r.f64s(count)?)?;
                Some(AdamState { step, m, v, lr: h[0], beta1: h[1], beta2: h[2], eps: h[3] })
            }
            f => return Err(CliError::data(format!("invalid optimizer flag {f}"))),
        };
        if r.at != bytes.len() {
            return Err(CliError::data(format!("{} trailing bytes after checkpoint", bytes.len() - r.at)));
        }
        Ok(Self { settings, seed, params, optimizer })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| e.at(path))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::data("checkpoint is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CliError::data("checkpoint is truncated"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_optimizer: bool) -> Checkpoint {
        let mut settings = Settings::new();
        settings.apply_text("backbone_hidden=5\ngcn_layers=1\nattention_hidden=3\n").unwrap();
        let params = ModelParams::init(&settings.model, 9).unwrap();
        let mut optimizer = AdamState::new(&params, 0.01);
        optimizer.step = 17;
        optimizer.m = params.clone();
        Checkpoint { settings, seed: 9, optimizer: with_optimizer.then_some(optimizer), params }
    }

    #[test]
    fn round_trips_bit_exactly() {
        for opt in [false, true] {
            let c = sample(opt);
            let bytes = c.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            assert_eq!(back.params, c.params);
            assert_eq!(back.optimizer, c.optimizer);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample(true).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).unwrap_err().message.contains("trailing"));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(Checkpoint::decode(&bad).unwrap_err().message.contains("magic"));
        let mut ver = bytes;
        ver[4] = 9;
        assert!(Checkpoint::decode(&ver).unwrap_err().message.contains("version"));
    }
}
