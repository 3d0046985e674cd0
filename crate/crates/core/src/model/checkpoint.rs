//! Checkpoint container: a JSON header (format version, float width,
//! config, named tensor shapes) followed by the raw row-major arrays in
//! declaration order, little-endian.

use super::{ModelConfig, ModelParams};
use crate::autodiff::{fl, FloatWidth, Real, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "ilac-checkpoint/1";
const MAGIC: &[u8; 8] = b"ILACCKPT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub float_width: FloatWidth,
    pub config: ModelConfig,
    pub tensors: Vec<TensorDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn save_checkpoint<F: Real>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<F>,
) -> Result<()> {
    let mut tensors = Vec::new();
    params.visit(&mut |name, t| {
        tensors.push(TensorDecl {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        });
    });
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        float_width: F::WIDTH,
        config: cfg.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    let mut io_err = None;
    params.visit(&mut |_, t| {
        if io_err.is_some() {
            return;
        }
        for &x in t.data() {
            if let Err(e) = w.write_all(&x.to_le_bytes_vec()) {
                io_err = Some(e);
                return;
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint into float width `F`, converting from the stored
/// width when they differ.
pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(ModelConfig, ModelParams<F>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {:?}",
            header.format
        )));
    }

    let cfg = header.config.clone();
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("bad config in header: {e}")))?;
    let mut params = ModelParams::<F>::zeros(&cfg);

    let mut expected = Vec::new();
    params.visit(&mut |name, t| expected.push((name.to_string(), t.shape().to_vec())));
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count mismatch: header has {}, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (decl, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &decl.name != name || &decl.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} {:?} does not match expected {:?} {:?}",
                decl.name, decl.shape, name, shape
            )));
        }
    }

    let elem = header.float_width.byte_len();
    let mut io_err: Option<Error> = None;
    params.visit_mut(&mut |name, t| {
        if io_err.is_some() {
            return;
        }
        let numel = t.numel();
        let mut buf = vec![0u8; numel * elem];
        if let Err(e) = r.read_exact(&mut buf) {
            io_err = Some(Error::Checkpoint(format!("truncated data for {name}: {e}")));
            return;
        }
        let data = t.data_mut();
        for (i, chunk) in buf.chunks_exact(elem).enumerate() {
            let value = match header.float_width {
                FloatWidth::F64 => fl::<F>(f64::from_le_slice(chunk)),
                FloatWidth::F32 => fl::<F>(f32::from_le_slice(chunk) as f64),
            };
            data[i] = value;
        }
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    params
        .check_finite()
        .map_err(|e| Error::Checkpoint(format!("non-finite weights: {e}")))?;
    Ok((cfg, params))
}

// Tensor construction bypass for zero-filled buffers that are immediately
// overwritten above: zeros() never contains non-finite values.
#[allow(dead_code)]
fn _assert_zeros_are_finite<F: Real>() {
    let _t: Tensor<F> = Tensor::zeros(vec![1]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_c: 6,
            d_v: 5,
            d_e: 4,
            d_phi: 3,
            feat_dim: 7,
            n_obj_classes: 8,
            n_pred_classes: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_roundtrip_is_bitwise_for_f64() {
        let cfg = small_cfg();
        let params = ModelParams::<f64>::init(&cfg, 99);
        let dir = std::env::temp_dir().join("ilac-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ilac");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(cfg, cfg2);

        let flat = |p: &ModelParams<f64>| {
            let mut v = Vec::new();
            p.visit(&mut |_, t| v.extend(t.data().iter().map(|x| x.to_bits())));
            v
        };
        assert_eq!(flat(&params), flat(&params2));
    }

    #[test]
    fn f32_checkpoint_loads_into_f64() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 1);
        let dir = std::env::temp_dir().join("ilac-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model32.ilac");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (_, wide) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(
            wide.node_embed.data()[0],
            params.node_embed.data()[0] as f64
        );
    }

    #[test]
    fn garbage_file_is_a_checkpoint_error() {
        let dir = std::env::temp_dir().join("ilac-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.ilac");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(Error::Checkpoint(_))
        ));
    }
}
