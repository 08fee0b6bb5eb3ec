//! Dense row-major `f64` tensors.
//!
//! The last axis is the fastest-varying one. For image patches that axis is
//! the spectral band, so slicing a band range keeps each pixel's spectrum
//! contiguous.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor must have at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!(
            "axis {axis} of shape {shape:?} has zero length"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// A tensor of the given shape with every element set to `value`.
    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Mutable access to the flat buffer. The shape cannot change through it.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Length of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Bounds(format!(
                "index {index:?} has {} axes, tensor has {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut offset = 0;
        for (axis, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            if i >= n {
                return Err(Error::Bounds(format!(
                    "index {i} on axis {axis} exceeds length {n}"
                )));
            }
            offset = offset * n + i;
        }
        Ok(offset)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let offset = self.offset(index)?;
        self.data[offset] = value;
        Ok(())
    }

    /// Copy of the band range `lo..hi` along the last axis.
    pub fn slice_bands(&self, lo: usize, hi: usize) -> Result<Self> {
        let bands = self.last_dim();
        if lo >= hi || hi > bands {
            return Err(Error::Bounds(format!(
                "band range {lo}..{hi} invalid for {bands} bands"
            )));
        }
        let width = hi - lo;
        let mut data = Vec::with_capacity(self.data.len() / bands * width);
        for row in self.data.chunks_exact(bands) {
            data.extend_from_slice(&row[lo..hi]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = width;
        Ok(Self { shape, data })
    }

    /// Concatenate tensors along the last axis. All leading axes must agree.
    pub fn concat_last_axis(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot concatenate an empty list".into()))?;
        let lead = &first.shape[..first.ndim() - 1];
        for (i, part) in parts.iter().enumerate().skip(1) {
            if &part.shape[..part.ndim() - 1] != lead {
                return Err(Error::Shape(format!(
                    "part {i} has shape {:?}, expected leading axes {lead:?}",
                    part.shape
                )));
            }
        }
        let total: usize = parts.iter().map(Tensor::last_dim).sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for row in 0..rows {
            for part in parts {
                let n = part.last_dim();
                data.extend_from_slice(&part.data[row * n..(row + 1) * n]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Self { shape, data })
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Self> {
        let len = check_shape(new_shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) into {new_shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iota(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn filled_examples() {
        let t = Tensor::filled(&[2, 3], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 6]);
        assert_eq!(Tensor::filled(&[1], 7.5).unwrap().data(), &[7.5]);
        let patch = Tensor::filled(&[5, 5, 200], 1.0).unwrap();
        assert_eq!(patch.len(), 5000);
        assert!(patch.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_axis_is_rejected() {
        assert!(matches!(Tensor::filled(&[2, 0], 1.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::filled(&[], 1.0), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::from_vec(&[2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn slice_halves_of_a_patch() {
        let t = Tensor::filled(&[5, 5, 200], 1.0).unwrap();
        assert_eq!(t.slice_bands(0, 100).unwrap().shape(), &[5, 5, 100]);
    }

    #[test]
    fn slice_matches_index_arithmetic() {
        let t = iota(&[5, 5, 4]);
        let s = t.slice_bands(2, 4).unwrap();
        assert_eq!(s.shape(), &[5, 5, 2]);
        for y in 0..5 {
            for x in 0..5 {
                for z in 0..2 {
                    let expected = ((y * 5 + x) * 4 + 2 + z) as f64;
                    assert_eq!(s.get(&[y, x, z]).unwrap(), expected);
                }
            }
        }
        assert_eq!(t.slice_bands(0, 4).unwrap(), t);
    }

    #[test]
    fn slice_bounds() {
        let t = iota(&[2, 3]);
        assert!(matches!(t.slice_bands(2, 2), Err(Error::Bounds(_))));
        assert!(matches!(t.slice_bands(1, 4), Err(Error::Bounds(_))));
    }

    #[test]
    fn concat_segment_outputs() {
        let a = Tensor::filled(&[2, 2, 17], 1.0).unwrap();
        let b = Tensor::filled(&[2, 2, 17], 2.0).unwrap();
        let c = Tensor::concat_last_axis(&[a.clone(), b]).unwrap();
        assert_eq!(c.shape(), &[2, 2, 34]);
        assert_eq!(Tensor::concat_last_axis(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn concat_rejects_mismatched_leading_axes() {
        let a = Tensor::filled(&[2, 2, 3], 1.0).unwrap();
        let b = Tensor::filled(&[2, 3, 3], 1.0).unwrap();
        assert!(matches!(
            Tensor::concat_last_axis(&[a, b]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::concat_last_axis(&[]).is_err());
    }

    #[test]
    fn reshape_examples() {
        let block = Tensor::filled(&[10, 2, 2, 17], 0.5).unwrap();
        assert_eq!(block.reshape(&[680]).unwrap().shape(), &[680]);

        let t = iota(&[6]);
        let back = t.reshape(&[2, 3]).unwrap().reshape(&[6]).unwrap();
        assert_eq!(back, t);

        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.reshape(&[3, 2]).unwrap().data(), t.data());
        assert!(matches!(t.reshape(&[4]), Err(Error::Shape(_))));
    }

    fn shape_and_split() -> impl Strategy<Value = (Vec<usize>, usize, usize, usize)> {
        (prop::collection::vec(1usize..4, 0..3), 2usize..12).prop_flat_map(|(lead, bands)| {
            (0..bands - 1).prop_flat_map(move |lo| {
                let lead = lead.clone();
                (lo + 2..=bands).prop_flat_map(move |hi| {
                    let lead = lead.clone();
                    (lo + 1..hi).prop_map(move |k| {
                        let mut shape = lead.clone();
                        shape.push(bands);
                        (shape, lo, k, hi)
                    })
                })
            })
        })
    }

    proptest! {
        #[test]
        fn concat_of_adjacent_slices_is_the_joined_slice(
            (shape, lo, k, hi) in shape_and_split(),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64).collect();
            let t = Tensor::from_vec(&shape, data).unwrap();
            let before = t.clone();
            let joined = Tensor::concat_last_axis(&[
                t.slice_bands(lo, k).unwrap(),
                t.slice_bands(k, hi).unwrap(),
            ]).unwrap();
            prop_assert_eq!(joined, t.slice_bands(lo, hi).unwrap());
            prop_assert_eq!(t, before);
        }

        #[test]
        fn reshape_keeps_flat_sequence(a in 1usize..6, b in 1usize..6, c in 1usize..6) {
            let t = iota(&[a, b, c]);
            let r = t.reshape(&[c, a * b]).unwrap();
            prop_assert_eq!(r.data(), t.data());
        }
    }
}
