//! Named trainable parameters and the `PAPEZ-CKPT v1` checkpoint container.
//!
//! Checkpoint layout: the ASCII header line `PAPEZ-CKPT v1\n`, a little-endian
//! u32 parameter count, then per parameter: u32 name length, UTF-8 name,
//! u32 rank, u32 dims, and the elements as little-endian 32-bit reals.
//! Round-trips are bit-exact in 32-bit mode.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{GradMap, Scalar, Tensor};

const CKPT_HEADER: &str = "PAPEZ-CKPT v1";

/// A named gradient target.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of all parameters of a model. Names are unique; order
/// is creation order and fixed, which keeps checkpoints and optimizer state
/// aligned.
pub struct ParamSet<T: Scalar> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<Tensor<T>> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        debug_assert!(tensor.requires_grad(), "parameter must require grad");
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor: tensor.clone(),
        });
        Ok(tensor)
    }

    /// New leaf initialized from `init` and registered under `name`.
    pub fn new_param(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: impl FnMut() -> T,
    ) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let mut init = init;
        let data: Vec<T> = (0..n).map(|_| init()).collect();
        let t = Tensor::leaf(shape, data, true)?;
        self.add(name, t)
    }

    /// Uniform init in [-bound, bound], deterministic from the caller's RNG.
    pub fn new_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>> {
        self.new_param(name, shape, || {
            T::from_f64(rng.gen_range(-bound..=bound))
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total element count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replace the tensor behind `name` with a new leaf holding `data`.
    pub fn set_data(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        let shape = self.params[i].tensor.shape().to_vec();
        self.params[i].tensor = Tensor::leaf(shape, data, true)?;
        Ok(())
    }

    /// Gradient of each parameter from a backward pass, keyed by name.
    /// Parameters unreachable from the loss get a zero gradient.
    pub fn grads(&self, map: &GradMap<T>) -> Vec<(String, Vec<T>)> {
        self.params
            .iter()
            .map(|p| {
                let g = map
                    .get(&p.tensor)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![T::zero(); p.tensor.numel()]);
                (p.name.clone(), g)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            let shape = p.tensor.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in p.tensor.data() {
                out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load values into an existing parameter set; names and shapes must match.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let mut r = &bytes[..];
        let mut header = vec![0u8; CKPT_HEADER.len() + 1];
        r.read_exact(&mut header)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if header != format!("{CKPT_HEADER}\n").as_bytes() {
            return Err(Error::Checkpoint("bad header line".into()));
        }
        let count = read_u32(&mut r)? as usize;
        if count != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                count,
                self.params.len()
            )));
        }
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| Error::Checkpoint("truncated name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("non-UTF8 parameter name".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)
                    .map_err(|_| Error::Checkpoint("truncated data".into()))?;
                data.push(T::from_f64(f32::from_le_bytes(b) as f64));
            }
            let current = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if current.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: checkpoint {:?}, model {:?}",
                    shape,
                    current.shape()
                )));
            }
            self.set_data(&name, data)?;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(())
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Append-style helper used by training: write then atomically rename.
pub fn save_atomic<T: Scalar>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    params.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
