use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(self.names.len() - 1)
    }

    /// Glorot-uniform initialized tensor. The last two dimensions are taken
    /// as fan-in and fan-out; a leading dimension stacks independent matrices.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut R) -> Result<usize> {
        let (fan_in, fan_out) = match shape {
            [] => (1, 1),
            [n] => (*n, 1),
            [.., a, b] => (*a, *b),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        self.add(name, Tensor { shape: shape.to_vec(), values })
    }

    /// Tensor with entries drawn uniformly from `[-limit, limit]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        self.add(name, Tensor { shape: shape.to_vec(), values })
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<usize> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    /// Registers every tensor as a trainable leaf, in store order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Registers every tensor as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            tensors: self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect(),
        }
    }

    /// Overwrites values from a checkpoint; names and shapes must match.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.tensors.len() != self.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {}",
                ck.tensors.len(),
                self.len()
            )));
        }
        for (name, t) in &ck.tensors {
            let slot = self
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("checkpoint tensor {name:?} not in model")))?;
            if slot.shape != t.shape || t.values.len() != t.shape.iter().product::<usize>() {
                return Err(Error::shape("checkpoint", format!("{name}: {:?} vs {:?}", t.shape, slot.shape)));
            }
            slot.values.clone_from(&t.values);
        }
        Ok(())
    }
}

/// Serialized parameter snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json_pretty(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn glorot_respects_limit_and_seed() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        a.add_glorot("w", &[3, 4, 5], &mut rng_from_seed(9)).unwrap();
        b.add_glorot("w", &[3, 4, 5], &mut rng_from_seed(9)).unwrap();
        let lim = (6.0f64 / 9.0).sqrt();
        assert!(a.get("w").unwrap().values.iter().all(|v| v.abs() <= lim));
        assert_eq!(a.get("w"), b.get("w"));
        assert_eq!(a.n_scalars(), 60);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ParamStore::new();
        p.add_glorot("a", &[2, 2], &mut rng_from_seed(1)).unwrap();
        p.add_zeros("b", &[1, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        p.to_checkpoint().write(&path).unwrap();
        let mut q = p.clone();
        q.tensors_mut()[0].values = vec![0.0; 4];
        q.load_checkpoint(&Checkpoint::read(&path).unwrap()).unwrap();
        assert_eq!(p.tensors(), q.tensors());
        assert!(p.add_zeros("a", &[1]).is_err());
    }
}
