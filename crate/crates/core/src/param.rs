use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// A learned tensor with its gradient and adaptive optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// First moment estimate.
    pub m: Tensor<T>,
    /// Second moment estimate.
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter { name: name.into(), grad: zeros.clone(), m: zeros.clone(), v: zeros, value, step: 0 }
    }
}

/// Ordered, uniquely named set of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a parameter and returns its id; names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<usize> {
        if self.id(name).is_some() {
            return Err(Error::Usage(alloc::format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, id: usize) -> &Parameter<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Parameter<T> {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.to_string()).collect()
    }

    /// Places every parameter on `graph` as a gradient-tracked leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().enumerate().map(|(i, p)| graph.param(i, p.value.clone())).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Adds the parameter gradients recorded on `graph` into `grad`.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) -> Result<()> {
        for (id, g) in graph.param_grads() {
            let p = self.params.get_mut(id).ok_or_else(|| shape_err!("graph refers to parameter {id}"))?;
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
