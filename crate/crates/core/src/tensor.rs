//! Dense row-major N-way tensors.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values. The last axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            strides: strides_for(shape),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidProblem(format!(
                "tensor shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            strides: strides_for(shape),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for k in 0..t.data.len() {
            t.unravel_into(k, &mut idx);
            t.data[k] = f(&idx);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.offset(idx);
        self.data[k] = value;
    }

    pub fn unravel_into(&self, mut k: usize, idx: &mut [usize]) {
        for (slot, stride) in idx.iter_mut().zip(&self.strides) {
            *slot = k / stride;
            k %= stride;
        }
    }

    pub fn unravel(&self, k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim()];
        self.unravel_into(k, &mut idx);
        idx
    }

    /// Sum over every axis except `axis`. Zero entries are skipped so that
    /// infinite companions never produce NaN.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.shape[axis]];
        let stride = self.strides[axis];
        let n = self.shape[axis];
        for (k, &v) in self.data.iter().enumerate() {
            if v != 0.0 {
                out[(k / stride) % n] += v;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, k: f64) -> Tensor {
        let mut t = self.clone();
        t.data.iter_mut().for_each(|v| *v *= k);
        t
    }
}

/// Calls `f(offset, index)` for every entry of the slice `index[axis] == fixed`,
/// in row-major order. `index` is the full multi-index of the entry.
pub(crate) fn for_each_in_slice(
    shape: &[usize],
    strides: &[usize],
    axis: usize,
    fixed: usize,
    mut f: impl FnMut(usize, &[usize]),
) {
    if shape.contains(&0) {
        return;
    }
    let mut index = vec![0; shape.len()];
    index[axis] = fixed;
    let mut offset = fixed * strides[axis];
    loop {
        f(offset, &index);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if d == axis {
                continue;
            }
            index[d] += 1;
            offset += strides[d];
            if index[d] < shape[d] {
                break;
            }
            offset -= strides[d] * shape[d];
            index[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_of_small_tensor() {
        let t = Tensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f64);
        assert_eq!(t.marginal(0), vec![3.0, 12.0]);
        assert_eq!(t.marginal(1), vec![3.0, 5.0, 7.0]);
        assert_eq!(t.sum(), 15.0);
    }

    #[test]
    fn slice_offsets_cover_slice() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64);
        let mut seen = Vec::new();
        for_each_in_slice(t.shape(), t.strides(), 1, 2, |k, idx| {
            assert_eq!(t.offset(idx), k);
            seen.push(t.data()[k]);
        });
        let expected: Vec<f64> = (0..2)
            .flat_map(|a| (0..4).map(move |c| (a * 100 + 20 + c) as f64))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn unravel_roundtrip() {
        let t = Tensor::zeros(&[3, 1, 5]);
        for k in 0..t.len() {
            assert_eq!(t.offset(&t.unravel(k)), k);
        }
    }
}
