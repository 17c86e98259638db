//! Named parameter tables and the small layer types built on them.

use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::truncated_normal;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a table in a [`ParamStore`]. Layers that share weights hold the
/// same id, so a shared table is bound to the tape once and its gradient
/// accumulates over every use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tables: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tables: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, table: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tables.push(table);
        ParamId(self.tables.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tables[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tables[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tables(&self) -> &[Tensor<T>] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tables
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tables.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalars over all distinct tables.
    pub fn count(&self) -> usize {
        self.tables.iter().map(|t| t.numel()).sum()
    }

    /// Replaces a table by name, keeping its shape.
    pub fn set(&mut self, name: &str, table: Tensor<T>) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::Format(format!("unknown parameter table `{name}`")))?;
        if self.tables[id.0].shape() != table.shape() {
            return Err(Error::Format(format!(
                "table `{name}` has shape {:?}, got {:?}",
                self.tables[id.0].shape(),
                table.shape()
            )));
        }
        self.tables[id.0] = table;
        Ok(())
    }

    /// Records every table on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound> {
        let vars = self.tables.iter().map(|t| tape.leaf(t.clone(), trainable)).collect::<Result<_>>()?;
        Ok(Bound(vars))
    }

    /// Gradients for every table after `tape.backward`; tables the loss did
    /// not touch get zeros.
    pub fn gradients(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Tensor<T>> {
        self.tables
            .iter()
            .zip(&bound.0)
            .map(|(t, &v)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Affine map `x·W + b` with `W: cin×cout`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    /// Weights from a truncated normal with standard deviation `1/√cin`,
    /// zero bias.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = 1.0 / (cin.max(1) as f64).sqrt();
        Self::with_std(store, name, cin, cout, std, rng)
    }

    pub fn with_std<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), truncated_normal(rng, [cin, cout], std)?);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([cout]));
        Ok(Linear { weight, bias, cin, cout })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p[self.weight], p[self.bias])
    }

    pub fn num_params(&self) -> usize {
        self.cin * self.cout + self.cout
    }
}

/// Layer-norm gain (ones) and bias (zeros).
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, eps: f64) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full([channels], T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([channels]));
        LayerNorm { gain, bias, channels, eps }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], T::of(self.eps))
    }
}
