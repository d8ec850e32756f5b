use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use sha2::{Digest, Sha256};

use super::real::Real;
use crate::error::{contract, ensure, Result};

/// Dense n-dimensional array; the currency of all network code.
pub type Tensor<T = f32> = ArrayD<T>;

/// Handle to one named entry of a [`Params`] collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        ensure!(!self.names.iter().any(|n| n == name), "duplicate parameter name {name}");
        ensure!(value.shape().iter().all(|&d| d > 0), "parameter {name} has an empty dimension");
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.values[id.0].view().into_dimensionality::<Ix2>().expect("matrix parameter")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.values[id.0].view().into_dimensionality::<Ix1>().expect("vector parameter")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn iter_mut_named(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter_mut())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| U::lit(x.as_f64()))).collect(),
        }
    }

    /// SHA-256 over names, shapes and the f32 image of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            for &d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for x in v.iter() {
                h.update((x.as_f64() as f32).to_le_bytes());
            }
        }
        hex_digest(h)
    }

    /// Reject NaN/Inf, naming the first offending parameter.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.iter() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(crate::Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(names: Vec<String>, values: Vec<Tensor<T>>) -> Result<Self> {
        let mut p = Self::new();
        for (n, v) in names.iter().zip(values) {
            p.add(n, v)?;
        }
        Ok(p)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient accumulators mirroring a [`Params`] layout.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    values: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(params: &Params<T>) -> Self {
        Self { values: params.values.iter().map(|v| Tensor::zeros(v.raw_dim())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        self.values[id.0].view_mut().into_dimensionality::<Ix2>().expect("matrix gradient")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        self.values[id.0].view_mut().into_dimensionality::<Ix1>().expect("vector gradient")
    }

    pub fn zero(&mut self) {
        for g in &mut self.values {
            g.fill(T::zero());
        }
    }

    pub fn global_norm(&self) -> T {
        self.values.iter().flat_map(|g| g.iter()).map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.values {
            g.mapv_inplace(|x| x * s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }
}

/// Parameters together with their gradient accumulators. The two halves are
/// public fields so a backward pass can read values while writing gradients.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    pub params: Params<T>,
    pub grads: Grads<T>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(params: Params<T>) -> Self {
        let grads = Grads::zeros_like(&params);
        Self { params, grads }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet::new(self.params.cast())
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }
}

/// Build a tensor from a shape and row-major data.
pub fn tensor<T: Real>(shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
    Tensor::from_shape_vec(IxDyn(shape), data).map_err(|e| contract(format!("tensor shape: {e}")))
}
