use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// How a parameter was (or will be) initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    Zeros,
    Uniform { limit: f64 },
}

impl Init {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform {
            limit: (6.0 / fan_in as f64).sqrt(),
        }
    }

    fn sample<T: Scalar>(self, dims: &[usize], rng: &mut SeededRng) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(dims),
            Init::Uniform { limit } => {
                let n = dims.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64(rng.uniform_range(-limit, limit)))
                    .collect();
                Tensor::from_vec(dims, data).expect("dims match")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub init: Init,
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Draws a fresh tensor from `rng.split(name)`, so values do not depend on
    /// the order in which parameters are declared.
    pub fn add(&mut self, name: &str, dims: &[usize], init: Init, rng: &SeededRng) -> Result<()> {
        let value = init.sample(dims, &mut rng.split(name));
        self.insert(name, value, init)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: Init) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Parameter(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.entries.insert(name.to_string(), Param { value, init });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Parameter(format!("no parameter named {name:?}")))
    }

    pub fn init_of(&self, name: &str) -> Option<Init> {
        self.entries.get(name).map(|p| p.init)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            init: p.init,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Names and dims; two stores with equal layouts are interchangeable.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.value.dims().to_vec()))
            .collect()
    }
}
