use crate::error::AutodiffError;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(AutodiffError::Checkpoint(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Zero tensors shaped like every parameter, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces every value from `other`, which must hold the same names
    /// and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), AutodiffError> {
        if self.names != other.names {
            return Err(AutodiffError::Checkpoint("parameter names differ".into()));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.values).zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "`{name}`: shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
