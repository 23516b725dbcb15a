//! Dense row-major parameter storage and the few matrix kernels the models need.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A named dense matrix. Vectors are stored as `1 × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Tensor { name: name.into(), rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(name: impl Into<String>, rows: usize, cols: usize, value: T) -> Self {
        Tensor { name: name.into(), rows, cols, data: vec![value; rows * cols] }
    }

    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        Tensor { name: name.into(), rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bias-like tensors are the single-row ones (biases, layer-norm gains).
    pub fn is_vector(&self) -> bool {
        self.rows == 1
    }

    pub fn shape(&self) -> Shape {
        Shape { name: self.name.clone(), rows: self.rows, cols: self.cols }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Ordered collection of parameter tensors. Index 0 is always the item
/// embedding table whose row 0 is the padding item.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

pub const ITEM_EMBED: usize = 0;

impl<T: Real> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols)).collect(),
        }
    }

    pub fn item_embed(&self) -> &Tensor<T> {
        &self.tensors[ITEM_EMBED]
    }

    pub fn item_embed_mut(&mut self) -> &mut Tensor<T> {
        &mut self.tensors[ITEM_EMBED]
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.tensors.iter().map(Tensor::shape).collect()
    }

    pub fn check_same_shape(&self, other: &ParamSet<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.rows != b.rows || a.cols != b.cols {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, {} is {}x{}",
                    a.name, a.rows, a.cols, b.name, b.rows, b.cols
                )));
            }
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor in a fixed order.
    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= factor;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_padding_row(&mut self) {
        self.item_embed_mut().row_mut(0).iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                    data: t.data.iter().map(|x| U::lit(x.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// `out (n×m) = a (n×k) · b (k×m)`.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    out.iter_mut().for_each(|x| *x = T::zero());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

/// `out (k×m) += aᵀ · b` with `a: n×k`, `b: n×m`. Weight-gradient kernel.
pub fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

/// `out (n×k) += a · bᵀ` with `a: n×m`, `b: k×m`. Input-gradient kernel.
pub fn matmul_a_bt_acc<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * k);
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += dot(arow, &b[p * m..(p + 1) * m]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_kernels_agree_on_small_case() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut out = [0.0; 4];
        matmul(&a, &b, 2, 3, 2, &mut out);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);

        // aᵀ·c with c: 2x2
        let c = [1.0, 0.0, 0.0, 1.0];
        let mut g = [0.0; 6];
        matmul_at_b_acc(&a, &c, 2, 3, 2, &mut g);
        assert_eq!(g, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);

        // a·bᵀ with b viewed as 2x3 (first 6 entries)
        let mut h = [0.0; 4];
        matmul_a_bt_acc(&a, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 3, 2, &mut h);
        assert_eq!(h, [1.0, 2.0, 4.0, 5.0]);
    }
}
