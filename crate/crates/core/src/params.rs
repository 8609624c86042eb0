//! Named parameter storage shared by the optimizer, the checkpoint format
//! and the gradient checker.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Ordered collection of named parameters. Order is insertion order and is
/// part of the determinism contract (optimizer updates and checkpoint layout
/// both follow it).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    items: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "param {name}: {} values for {rows}x{cols}",
                values.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate param {name}")));
        }
        self.index.insert(name.to_string(), self.items.len());
        self.items.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.items[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).copied().map(move |i| &mut self.items[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.items.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.items.iter().map(|p| p.values.len()).sum()
    }

    /// Register every parameter as a `requires_grad` leaf on a fresh tape.
    /// Returns name -> tensor id.
    pub fn register_all(&self, tape: &mut Tape) -> Result<HashMap<String, TensorId>> {
        let mut ids = HashMap::new();
        for p in &self.items {
            let id = tape.leaf(p.rows, p.cols, p.values.clone(), true)?;
            ids.insert(p.name.clone(), id);
        }
        Ok(ids)
    }
}
