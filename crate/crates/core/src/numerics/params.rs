use crate::error::{Error, Result};
use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::Matrix;

/// Ordered, named collection of parameter matrices.
///
/// The order is the serialization order of checkpoints and the layout of
/// flat parameter/gradient vectors handed to the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot.
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, slot: usize) -> &Matrix {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.values[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.slot(name).map(|s| &self.values[s])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for v in &self.values {
            out.extend_from_slice(v.as_slice());
        }
        out
    }

    /// Overwrites all values from a flat vector in slot order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape(
                "ParamSet::assign_flat",
                format!(
                    "{} values for {} parameters",
                    flat.len(),
                    self.num_scalars()
                ),
            ));
        }
        let mut off = 0;
        for v in &mut self.values {
            let n = v.len();
            v.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|m| tape.param(m.clone())).collect()
    }

    /// Places every parameter on `tape` as a constant, for inference.
    pub fn bind_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect()
    }

    /// Flattens the adjoints of bound vars in slot order.
    pub fn flat_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for v in vars {
            out.extend_from_slice(grads.get(*v).as_slice());
        }
        out
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, v) in self.iter() {
            v.ensure_finite(name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip_and_length_check() {
        let mut p = ParamSet::new();
        p.push("a", Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        p.push("b", Matrix::scalar(3.0));
        assert_eq!(p.flatten(), vec![1.0, 2.0, 3.0]);
        p.assign_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.by_name("b").unwrap()[(0, 0)], 6.0);
        assert!(p.assign_flat(&[1.0]).is_err());
        assert_eq!(p.slot("a"), Some(0));
    }
}
