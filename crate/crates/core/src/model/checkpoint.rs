//! Versioned binary checkpoints: config echo + named parameter tensors,
//! with an optional optimizer state block so training can resume exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::params::{ModelConfig, ModelKind, ModelParameters};

const MAGIC: &[u8; 4] = b"LCCK";
const VERSION: u32 = 1;

/// Optimizer state captured mid-training for exact resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Epochs already completed.
    pub epoch: u64,
    /// Adam step counter.
    pub step: u64,
    pub adam_m: Vec<Array2<f64>>,
    pub adam_v: Vec<Array2<f64>>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    /// Reject the checkpoint unless its config matches `expected`.
    pub fn require_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.params.config != expected {
            return Err(Error::Checkpoint(
                "checkpoint model config does not match the requested config".into(),
            ));
        }
        Ok(())
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Array2<f64>) -> Result<()> {
    w.write_u32::<LittleEndian>(t.nrows() as u32)?;
    w.write_u32::<LittleEndian>(t.ncols() as u32)?;
    for &v in t.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let rows = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    if rows > 1 << 20 || cols > 1 << 20 {
        return Err(Error::Checkpoint("implausible tensor dims".into()));
    }
    let mut data = vec![0f64; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(short)?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn short(_: std::io::Error) -> Error {
    Error::Checkpoint("truncated checkpoint file".into())
}

/// Write parameters (and optionally optimizer state) to `path`.
pub fn save_checkpoint(
    params: &ModelParameters,
    train_state: Option<&TrainState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(match params.kind {
        ModelKind::IntentAware => 0,
        ModelKind::Vanilla => 1,
    })?;
    let cfg_json = serde_json::to_vec(&params.config)?;
    w.write_u32::<LittleEndian>(cfg_json.len() as u32)?;
    w.write_all(&cfg_json)?;
    let hash = Sha256::digest(&cfg_json);
    w.write_all(&hash)?;

    w.write_u32::<LittleEndian>(params.num_tensors() as u32)?;
    for view in params.iter() {
        let name = view.name.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        write_tensor(&mut w, view.value)?;
    }

    match train_state {
        Some(state) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(state.epoch)?;
            w.write_u64::<LittleEndian>(state.step)?;
            for t in state.adam_m.iter().chain(state.adam_v.iter()) {
                write_tensor(&mut w, t)?;
            }
        }
        None => w.write_u8(0)?,
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`]. The stored config
/// hash and the tensor names/shapes are all verified against a freshly
/// constructed skeleton, so a config edit or shape drift is rejected.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(short)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = match r.read_u8().map_err(short)? {
        0 => ModelKind::IntentAware,
        1 => ModelKind::Vanilla,
        k => return Err(Error::Checkpoint(format!("unknown model kind byte {k}"))),
    };
    let cfg_len = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    if cfg_len > 1 << 20 {
        return Err(Error::Checkpoint("implausible config length".into()));
    }
    let mut cfg_json = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_json).map_err(short)?;
    let mut stored_hash = [0u8; 32];
    r.read_exact(&mut stored_hash).map_err(short)?;
    if Sha256::digest(&cfg_json).as_slice() != stored_hash {
        return Err(Error::Checkpoint("config hash mismatch; file corrupted".into()));
    }
    let config: ModelConfig = serde_json::from_slice(&cfg_json)?;

    // skeleton defines the expected tensor names and shapes
    let mut params = ModelParameters::init(kind, config, 0)?;

    let n = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    if n != params.num_tensors() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n} tensors, config implies {}",
            params.num_tensors()
        )));
    }
    for idx in 0..n {
        let name_len = r.read_u16::<LittleEndian>().map_err(short)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(short)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        if name != params.name(idx) {
            return Err(Error::Checkpoint(format!(
                "tensor {idx} named {name:?}, expected {:?}",
                params.name(idx)
            )));
        }
        let t = read_tensor(&mut r)?;
        if t.dim() != params.tensor(idx).dim() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.dim(),
                params.tensor(idx).dim()
            )));
        }
        *params.tensor_mut(idx) = t;
    }

    let train_state = match r.read_u8().map_err(short)? {
        0 => None,
        1 => {
            let epoch = r.read_u64::<LittleEndian>().map_err(short)?;
            let step = r.read_u64::<LittleEndian>().map_err(short)?;
            let mut read_set = |params: &ModelParameters| -> Result<Vec<Array2<f64>>> {
                (0..params.num_tensors())
                    .map(|idx| {
                        let t = read_tensor(&mut r)?;
                        if t.dim() != params.tensor(idx).dim() {
                            return Err(Error::Checkpoint("optimizer tensor shape mismatch".into()));
                        }
                        Ok(t)
                    })
                    .collect()
            };
            let adam_m = read_set(&params)?;
            let adam_v = read_set(&params)?;
            Some(TrainState {
                epoch,
                step,
                adam_m,
                adam_v,
            })
        }
        b => return Err(Error::Checkpoint(format!("bad train-state flag {b}"))),
    };

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint {
        params,
        train_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParameters {
        let cfg = ModelConfig {
            d_model: 16,
            d_embed: 8,
            d_ffn: 32,
            n_heads: 4,
            ..ModelConfig::default()
        };
        ModelParameters::init(ModelKind::IntentAware, cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&p, None, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params.kind, p.kind);
        assert_eq!(loaded.params.config, p.config);
        assert_eq!(loaded.params.tensors, p.tensors);
        assert!(loaded.train_state.is_none());
    }

    #[test]
    fn round_trip_with_train_state() {
        let p = params();
        let state = TrainState {
            epoch: 3,
            step: 120,
            adam_m: p.zero_grads(),
            adam_v: p.zero_grads(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&p, Some(&state), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.train_state.unwrap(), state);
    }

    #[test]
    fn altered_config_rejected() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&p, None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // flip a byte inside the embedded config JSON
        let json_start = 4 + 4 + 1 + 4;
        let pos = json_start
            + std::str::from_utf8(&bytes[json_start..json_start + 200])
                .unwrap()
                .find("d_model")
                .unwrap()
            + 10;
        bytes[pos] = bytes[pos].wrapping_add(1);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("hash") || msg.contains("config")),
            other => panic!("expected checkpoint rejection, got {other:?}"),
        }
    }

    #[test]
    fn config_mismatch_guard() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&p, None, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        loaded.require_config(&p.config).unwrap();
        let other = ModelConfig {
            d_model: 32,
            ..p.config.clone()
        };
        assert!(loaded.require_config(&other).is_err());
    }

    #[test]
    fn truncation_rejected() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&p, None, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
