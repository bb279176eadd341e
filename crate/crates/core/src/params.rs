//! Named parameter storage and per-tape binding.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;

use crate::rng;
use crate::tensor::{Array, Tape, Var};
use crate::{Error, Result};

/// Parameters keyed by dotted names. Values are shared, so cloning a store
/// or binding it to a tape never copies data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Arc<Array>>,
}

/// Initialization rules; each parameter draws from its own seeded stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` over the first and last
    /// axes.
    Xavier,
    Uniform(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.params.insert(name.into(), Arc::new(value));
    }

    pub fn init(&mut self, seed: u64, name: &str, shape: &[usize], init: Init) {
        let n: usize = shape.iter().product();
        let mut g = rng::stream(seed, &[rng::label("param"), rng::label(name)]);
        let value = match init {
            Init::Zeros => Array::zeros(shape),
            Init::Ones => Array::full(shape, 1.0),
            Init::Xavier | Init::Uniform(_) => {
                let bound = match init {
                    Init::Uniform(b) => b,
                    _ => {
                        let fan_in = shape.first().copied().unwrap_or(1);
                        let fan_out = shape.last().copied().unwrap_or(1);
                        (6.0 / (fan_in + fan_out) as f64).sqrt()
                    }
                };
                Array::from_fn(shape, |_| g.random_range(-bound..=bound))
            }
        };
        debug_assert_eq!(value.len(), n);
        self.insert(name, value);
    }

    /// A `d_in×d_out` weight and a zero bias named `{name}.w` / `{name}.b`.
    pub fn init_linear(&mut self, seed: u64, name: &str, d_in: usize, d_out: usize) {
        self.init(seed, &format!("{name}.w"), &[d_in, d_out], Init::Xavier);
        self.init(seed, &format!("{name}.b"), &[d_out], Init::Zeros);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Array>> {
        self.params.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Arc<Array>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arc<Array>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Copies in every parameter of `other` whose name starts with `prefix`.
    pub fn extend_from(&mut self, other: &ParamStore, prefix: &str) {
        for (k, v) in other.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.params.insert(k.clone(), v.clone());
        }
    }

    /// Replaces a parameter's value; the shape must stay the same.
    pub fn set(&mut self, name: &str, value: Array) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = Arc::new(value);
        Ok(())
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in self.params.values_mut() {
            *v = Arc::new(v.map(|x| x as f32 as f64));
        }
    }

    pub fn bind<'a>(&'a self, tape: &'a Tape, trainable: fn(&str) -> bool) -> Bound<'a> {
        Bound {
            store: self,
            tape,
            trainable,
            vars: RefCell::new(BTreeMap::new()),
        }
    }
}

/// A store attached to one tape. Parameters become leaves on first use.
pub struct Bound<'a> {
    store: &'a ParamStore,
    pub tape: &'a Tape,
    trainable: fn(&str) -> bool,
    vars: RefCell<BTreeMap<String, Var>>,
}

pub fn all_trainable(_: &str) -> bool {
    true
}

impl<'a> Bound<'a> {
    pub fn get(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.borrow().get(name) {
            return Ok(v);
        }
        let value = self.store.require(name)?.clone();
        let v = self.tape.leaf(value, (self.trainable)(name));
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Binds `name` to an existing node instead of a fresh leaf.
    pub fn pin(&self, name: &str, v: Var) {
        self.vars.borrow_mut().insert(name.to_string(), v);
    }

    /// Gradients of every bound trainable parameter, after backward.
    pub fn grads(&self) -> BTreeMap<String, Array> {
        self.vars
            .borrow()
            .iter()
            .filter(|(name, _)| (self.trainable)(name))
            .filter_map(|(name, &v)| self.tape.grad(v).map(|g| (name.clone(), g)))
            .collect()
    }

    /// The name → leaf map, releasing the borrow of the tape.
    pub fn into_vars(self) -> BTreeMap<String, Var> {
        self.vars.into_inner()
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        self.vars.borrow().get(name).copied()
    }

    /// `x·W + b` with `{name}.w` and `{name}.b`.
    pub fn linear(&self, x: Var, name: &str) -> Result<Var> {
        let y = self.tape.matmul(x, self.get(&format!("{name}.w"))?)?;
        Ok(self.tape.add_bias(y, self.get(&format!("{name}.b"))?)?)
    }

    /// `x·W` with `{name}.w`.
    pub fn project(&self, x: Var, name: &str) -> Result<Var> {
        Ok(self.tape.matmul(x, self.get(&format!("{name}.w"))?)?)
    }
}
