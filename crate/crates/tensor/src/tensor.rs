use std::fmt;
use std::sync::Arc;

use crate::Element;

/// Dense row-major array with shared, copy-on-write storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: fmt::Debug> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    /// Panics if `data.len()` does not match the shape.
    pub fn new(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: E) -> Self {
        Self::new(&[], vec![value])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> E) -> Self {
        Self::new(shape, (0..numel(shape)).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access; clones the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<E> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.numel(), "cannot reshape {:?} to {:?}", self.shape, shape);
        Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self::new(
            &self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> E {
        self.data.iter().fold(E::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::new(
            &self.shape,
            self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
        )
    }

    /// Numpy-style broadcast: `self.shape` is left-padded with ones and every
    /// dimension must either match `target` or be 1.
    pub fn broadcast_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let src_strides = broadcast_strides(&self.shape, target);
        let mut out = Vec::with_capacity(numel(target));
        broadcast_walk(target, &src_strides, 0, 0, &mut |src| out.push(self.data[src]));
        Self::new(target, out)
    }

    /// Adjoint of [`broadcast_to`](Self::broadcast_to): sums `self` down to `target`.
    pub fn sum_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let dst_strides = broadcast_strides(target, &self.shape);
        let mut out = vec![E::zero(); numel(target)];
        let mut it = self.data.iter();
        broadcast_walk(&self.shape, &dst_strides, 0, 0, &mut |dst| {
            out[dst] = out[dst] + *it.next().expect("walk visits every element once");
        });
        Self::new(target, out)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, dim, inner) = split_axis(&self.shape, axis);
        assert!(start + len <= dim, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::new(&shape, out)
    }

    /// Adjoint of [`narrow`](Self::narrow): embeds `self` in zeros of length
    /// `full` along `axis`.
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Self {
        let (outer, len, inner) = split_axis(&self.shape, axis);
        assert!(start + len <= full, "pad_axis out of range");
        let mut out = vec![E::zero(); outer * full * inner];
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = full;
        Self::new(&shape, out)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.shape().len(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch off-axis");
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let (outer, _, inner) = split_axis(first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Self::new(&shape, out)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Strides of `small` laid out against `big`'s index space; broadcast
/// dimensions get stride 0.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    assert!(
        small.len() <= big.len(),
        "cannot broadcast {small:?} to {big:?}"
    );
    let pad = big.len() - small.len();
    let mut strides = vec![0; big.len()];
    let mut acc = 1;
    for d in (0..big.len()).rev() {
        let s = if d >= pad { small[d - pad] } else { 1 };
        if s == big[d] {
            strides[d] = acc;
        } else {
            assert!(s == 1, "cannot broadcast {small:?} to {big:?}");
        }
        acc *= s;
    }
    strides
}

fn broadcast_walk(shape: &[usize], strides: &[usize], dim: usize, off: usize, f: &mut impl FnMut(usize)) {
    if dim == shape.len() {
        f(off);
        return;
    }
    for i in 0..shape[dim] {
        broadcast_walk(shape, strides, dim + 1, off + i * strides[dim], f);
    }
}
