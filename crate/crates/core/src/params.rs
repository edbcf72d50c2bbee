//! Flat parameter container: a binary file mapping tensor names to
//! shape plus little-endian f64 data, with a format-version field.
//!
//! Layout: `b"SLNT"`, u32 version, u32 entry count, then per entry a
//! u32 name length, the UTF-8 name, a u32 rank, u64 dims, and the
//! row-major payload. All integers little-endian.

use crate::control::{AgentParams, ControlModule, ControllerNet, DigestorNet, SELECTION_DIM};
use crate::env::STATE_DIM;
use crate::operators::{OperatorKernels, PointerKernel, SwapKernel};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"SLNT";
/// Current container format version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a parameter container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("container is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("unexpected tensor {0:?} in container")]
    Unexpected(String),
    #[error("tensor {name:?}: container shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Serializes named tensors to a writer.
pub fn write_named<W: Write>(mut w: W, entries: &[(String, &Tensor)]) -> Result<(), ParamsError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads back every named tensor from a reader.
pub fn read_named<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, ParamsError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ParamsError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ParamsError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(ParamsError::BadVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| ParamsError::Corrupt(e.to_string()))?;
        let name = String::from_utf8(name).map_err(|e| ParamsError::Corrupt(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| ParamsError::Corrupt(e.to_string()))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| ParamsError::Corrupt(e.to_string()))?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::from_vec(shape, data)));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ParamsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| ParamsError::Corrupt(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

/// Writes named tensors to `path`, atomically (temp file + rename), so
/// a failed run leaves no partial container behind.
pub fn save_named(path: &Path, entries: &[(String, &Tensor)]) -> Result<(), ParamsError> {
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp)?;
    let mut w = std::io::BufWriter::new(file);
    write_named(&mut w, entries)?;
    w.flush()?;
    drop(w);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_named(path: &Path) -> Result<Vec<(String, Tensor)>, ParamsError> {
    let file = std::fs::File::open(path)?;
    read_named(std::io::BufReader::new(file))
}

impl AgentParams {
    /// All tensors with their container names: kernels under
    /// `op.mova` / `op.movb` / `op.retb` / `op.swap`, control nets
    /// under `ctl.digestor` / `ctl.controller`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        prefixed("op.mova", self.kernels.mova.named_tensors(), &mut out);
        prefixed("op.movb", self.kernels.movb.named_tensors(), &mut out);
        prefixed("op.retb", self.kernels.retb.named_tensors(), &mut out);
        prefixed("op.swap", self.kernels.swap.named_tensors(), &mut out);
        prefixed("ctl.digestor", self.control.digestor.named_tensors(), &mut out);
        prefixed("ctl.controller", self.control.controller.named_tensors(), &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        prefixed("op.mova", self.kernels.mova.named_tensors_mut(), &mut out);
        prefixed("op.movb", self.kernels.movb.named_tensors_mut(), &mut out);
        prefixed("op.retb", self.kernels.retb.named_tensors_mut(), &mut out);
        prefixed("op.swap", self.kernels.swap.named_tensors_mut(), &mut out);
        prefixed("ctl.digestor", self.control.digestor.named_tensors_mut(), &mut out);
        prefixed(
            "ctl.controller",
            self.control.controller.named_tensors_mut(),
            &mut out,
        );
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        save_named(path, &self.named_tensors())
    }

    /// Loads an agent from a container, inferring the hidden size from
    /// the stored shapes. Every expected tensor must be present with
    /// its exact shape, and nothing extra may remain.
    pub fn load(path: &Path) -> Result<AgentParams, ParamsError> {
        let entries = load_named(path)?;
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let probe = map
            .get("op.mova.lstm.wi")
            .ok_or_else(|| ParamsError::Missing("op.mova.lstm.wi".into()))?;
        if probe.shape().len() != 2 {
            return Err(ParamsError::ShapeMismatch {
                name: "op.mova.lstm.wi".into(),
                expected: vec![0, 0],
                found: probe.shape().to_vec(),
            });
        }
        let hidden = probe.shape()[0];

        let mut agent = AgentParams {
            kernels: OperatorKernels {
                mova: zero_pointer(hidden),
                movb: zero_pointer(hidden),
                retb: zero_pointer(hidden),
                swap: zero_swap(hidden),
            },
            control: ControlModule {
                digestor: DigestorNet {
                    lstm: crate::cells::LstmParams::zeros(STATE_DIM, hidden),
                },
                controller: ControllerNet {
                    lstm: crate::cells::LstmParams::zeros(hidden, hidden),
                    head: crate::cells::DenseParams::zeros(SELECTION_DIM, hidden),
                },
            },
        };

        for (name, slot) in agent.named_tensors_mut() {
            let found = map
                .remove(&name)
                .ok_or_else(|| ParamsError::Missing(name.clone()))?;
            if found.shape() != slot.shape() {
                return Err(ParamsError::ShapeMismatch {
                    name,
                    expected: slot.shape().to_vec(),
                    found: found.shape().to_vec(),
                });
            }
            *slot = found;
        }
        if let Some((name, _)) = map.into_iter().next() {
            return Err(ParamsError::Unexpected(name));
        }
        Ok(agent)
    }
}

fn prefixed<T>(prefix: &str, items: Vec<(String, T)>, out: &mut Vec<(String, T)>) {
    for (n, t) in items {
        out.push((format!("{prefix}.{n}"), t));
    }
}

fn zero_pointer(hidden: usize) -> PointerKernel {
    PointerKernel {
        lstm: crate::cells::LstmParams::zeros(1, hidden),
        head: crate::cells::DenseParams::zeros(1, hidden),
    }
}

fn zero_swap(hidden: usize) -> SwapKernel {
    SwapKernel {
        fwd: crate::cells::LstmParams::zeros(STATE_DIM, hidden),
        bwd: crate::cells::LstmParams::zeros(STATE_DIM, hidden),
        head: crate::cells::DenseParams::zeros(crate::operators::SWAP_HEAD_DIM, hidden),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn container_header_is_stable() {
        let t = Tensor::matrix(1, 2, vec![1.5, -2.5]);
        let entries = vec![("x.w".to_string(), &t)];
        let mut buf = Vec::new();
        write_named(&mut buf, &entries).unwrap();
        assert_eq!(&buf[0..4], b"SLNT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        // name length + name
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(&buf[16..19], b"x.w");
        // rank 2, dims 1 and 2, then two LE doubles
        assert_eq!(u32::from_le_bytes(buf[19..23].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[23..31].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[31..39].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[39..47].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(buf[47..55].try_into().unwrap()), -2.5);
        assert_eq!(buf.len(), 55);
    }

    #[test]
    fn agent_roundtrip_is_exact() {
        let mut rng = Rng::new(42);
        let agent = AgentParams::init(6, &mut rng);
        let dir = std::env::temp_dir().join("sortlab-params-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("agent.params");
        agent.save(&path).unwrap();
        let back = AgentParams::load(&path).unwrap();
        assert_eq!(agent, back);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn load_rejects_missing_and_extra_tensors() {
        let mut rng = Rng::new(43);
        let agent = AgentParams::init(4, &mut rng);
        let mut entries = agent.named_tensors();
        entries.pop();
        let mut buf = Vec::new();
        write_named(&mut buf, &entries).unwrap();
        let dir = std::env::temp_dir().join("sortlab-params-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.params");
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            AgentParams::load(&path),
            Err(ParamsError::Missing(_))
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn read_rejects_bad_magic_and_version() {
        let err = read_named(&b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, ParamsError::BadMagic));
        let err = read_named(&b"SLNT\x09\x00\x00\x00\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, ParamsError::BadVersion(9)));
    }
}
