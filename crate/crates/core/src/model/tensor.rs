use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense parameter tensor with an arbitrary shape, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Batched activation map, `n × c × h × w` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for {n}×{c}×{h}×{w}",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Concatenates along channels; all parts must agree in `n`, `h`, `w`.
    pub fn concat_channels(parts: &[&Tensor4<T>]) -> Result<Self> {
        let first = parts[0];
        if parts
            .iter()
            .any(|p| p.n != first.n || p.h != first.h || p.w != first.w)
        {
            let shapes: Vec<_> = parts.iter().map(|p| p.dims()).collect();
            return Err(Error::ShapeMismatch(format!("branch outputs disagree: {shapes:?}")));
        }
        let c = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(first.n * c * first.plane_len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Self {
            n: first.n,
            c,
            h: first.h,
            w: first.w,
            data,
        })
    }

    /// Splits along channels into consecutive groups of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Vec<Self> {
        let plane = self.plane_len();
        let mut out: Vec<Self> = widths
            .iter()
            .map(|&c| Self {
                n: self.n,
                c,
                h: self.h,
                w: self.w,
                data: Vec::with_capacity(self.n * c * plane),
            })
            .collect();
        for n in 0..self.n {
            let item = self.item(n);
            let mut offset = 0;
            for (part, &c) in out.iter_mut().zip(widths) {
                part.data.extend_from_slice(&item[offset..offset + c * plane]);
                offset += c * plane;
            }
        }
        out
    }
}

/// Named gradient tensors, keyed like the model's parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    /// Adds `grad` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: String, grad: Tensor<T>) {
        match self.tensors.get_mut(&name) {
            Some(existing) => {
                for (a, b) in existing.data.iter_mut().zip(&grad.data) {
                    *a = *a + *b;
                }
            }
            None => {
                self.tensors.insert(name, grad);
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors.values_mut() {
            for v in &mut t.data {
                *v = *v * factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }
}
