use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Named trainable tensors. Iteration order is the name order, which keeps
/// checkpoints and optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Weight `in x out` drawn from `U(-1/sqrt(in), 1/sqrt(in))` and a zero bias row.
    pub fn init_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::uniform(fan_in, fan_out, bound, rng));
        self.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out));
    }

    /// Lookup table; a row lookup has fan-in 1, so entries are `U(-1, 1)`.
    pub fn init_table<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        self.insert(name, Tensor::uniform(rows, cols, 1.0, rng));
    }

    /// Unit gain and zero shift for a normalization layer.
    pub fn init_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.g"), Tensor::filled(1, dim, 1.0));
        self.insert(format!("{prefix}.b"), Tensor::zeros(1, dim));
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies every tensor of `other` into `self`, replacing same-named entries.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    /// Names under `prefix` whose tensors differ bitwise between the stores
    /// (including names present in only one of them).
    pub fn diff(&self, other: &ParamStore, prefix: &str) -> Vec<String> {
        let mut names: Vec<&String> = self
            .names()
            .chain(other.names())
            .filter(|n| n.starts_with(prefix))
            .collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .filter(|n| match (self.get(n), other.get(n)) {
                (Some(a), Some(b)) => !a.bit_eq(b),
                _ => true,
            })
            .cloned()
            .collect()
    }
}

/// A forward pass in progress: a [`Tape`] plus lazily bound parameters.
///
/// Parameters under a frozen prefix are bound as constants and never
/// receive gradients.
pub struct Session<'a> {
    tape: Tape,
    params: &'a ParamStore,
    bound: BTreeMap<String, Var>,
    frozen: Vec<String>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: BTreeMap::new(),
            frozen: Vec::new(),
        }
    }

    pub fn with_frozen(params: &'a ParamStore, frozen: &[&str]) -> Self {
        let mut s = Self::new(params);
        s.frozen = frozen.iter().map(|p| p.to_string()).collect();
        s
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    /// Binds a named parameter on the tape, once per session.
    ///
    /// Panics if the parameter does not exist; model code only asks for
    /// names its own initializer created.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            self.tape.constant(value)
        } else {
            self.tape.leaf(value)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// `x W + b` using parameters `{prefix}.w` and `{prefix}.b`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        self.tape.affine(x, w, b)
    }

    /// Layer normalization with gain `{prefix}.g` and shift `{prefix}.b`.
    pub fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.param(&format!("{prefix}.g"));
        let b = self.param(&format!("{prefix}.b"));
        let n = self.tape.layer_norm(x);
        let scaled = self.tape.mul_row(n, g);
        self.tape.add_row(scaled, b)
    }

    /// Gradient of the scalar `loss` for every trainable parameter bound in
    /// this session.
    pub fn gradients(&self, loss: Var) -> BTreeMap<String, Tensor> {
        let mut grads = self.tape.backward(loss);
        self.bound
            .iter()
            .filter(|(_, v)| self.tape.requires_grad(**v))
            .map(|(name, v)| {
                let g = grads.take(*v).unwrap_or_else(|| {
                    let shape = self.tape.value(*v).shape();
                    Tensor::zeros(shape[0], shape[1])
                });
                (name.clone(), g)
            })
            .collect()
    }
}

impl Deref for Session<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
