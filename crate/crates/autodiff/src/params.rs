use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::{numel, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        if data.len() != numel(shape) {
            return Err(Error::InvalidInput(format!(
                "parameter {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidInput(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Registers a parameter drawn from `U(-bound, bound)`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let data = (0..numel(shape))
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, shape, data)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), &p.shape))
            .collect()
    }

    /// Places every parameter on `tape` as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| tape.constant(p.data.clone(), &p.shape))
            .collect()
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &[Parameter]) -> Result<()> {
        for src in other {
            let Some(&i) = self.by_name.get(&src.name) else {
                continue;
            };
            let dst = &mut self.params[i];
            if dst.shape != src.shape {
                return Err(Error::InvalidInput(format!(
                    "parameter {}: stored shape {:?}, model expects {:?}",
                    src.name, src.shape, dst.shape
                )));
            }
            dst.data.clone_from(&src.data);
        }
        for p in &self.params {
            if !other.iter().any(|o| o.name == p.name) {
                return Err(Error::InvalidInput(format!(
                    "parameter {} missing from source",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
