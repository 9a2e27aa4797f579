//! Named trainable tensors and the checkpoint container.
//!
//! Each parameter draws its initial values from an RNG seeded by the run
//! seed and the parameter's name, so initialization does not depend on
//! construction order.
//!
//! Checkpoint layout: 8-byte magic, `u32` version, `u64` header length, a
//! JSON header (config echo, epoch, tensor names and shapes), then every
//! tensor as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

const MAGIC: &[u8; 8] = b"DEPTHBIN";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Uniform in `±sqrt(6 / fan_in)` (He uniform, for ReLU stacks).
    He(usize),
    /// Uniform in `±1 / sqrt(fan_in)`.
    Fan(usize),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the parameter `name`, creating it on first use.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(NetError::Config(format!(
                    "parameter {name} requested as {shape:?}, exists as {:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| NetError::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::He(fan_in) | Init::Fan(fan_in) => {
                let bound = match init {
                    Init::He(_) => (6.0 / fan_in.max(1) as f64).sqrt(),
                    _ => 1.0 / (fan_in.max(1) as f64).sqrt(),
                };
                let d = Uniform::new_inclusive(-bound, bound).map_err(|e| NetError::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter from `tensors`; names and shapes must match
    /// exactly.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, StoredTensor>, origin: &Path) -> Result<()> {
        let bad = |reason: String| NetError::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        if tensors.len() != self.vars.len() {
            return Err(bad(format!(
                "holds {} tensors, model has {}",
                tensors.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let st = tensors.get(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if st.shape != var.dims() {
                return Err(bad(format!("tensor {name} has shape {:?}, model wants {:?}", st.shape, var.dims())));
            }
            let t = Tensor::from_vec(st.data.clone(), st.shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Contents of a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub path: PathBuf,
    pub config: serde_json::Value,
    /// Number of completed epochs.
    pub epoch: usize,
    pub tensors: BTreeMap<String, StoredTensor>,
}

pub fn save_checkpoint(path: &Path, config: &serde_json::Value, epoch: usize, store: &ParamStore) -> Result<()> {
    let header = Header {
        config: config.clone(),
        epoch,
        tensors: store
            .named()
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                shape: v.dims().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        for var in store.named().values() {
            let data = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            for v in data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| NetError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| bad(e.to_string()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| bad(format!("truncated data for {}", entry.name)))?;
        tensors.insert(entry.name, StoredTensor { shape: entry.shape, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        path: path.to_path_buf(),
        config: header.config,
        epoch: header.epoch,
        tensors,
    })
}
