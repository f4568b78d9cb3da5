//! Dense row-major 2-D tensors.
//!
//! Every value in the library is a `rows × cols` matrix: batches are rows,
//! features are columns, vectors are `1 × k`, scalars are `1 × 1`. Binary ops
//! accept either equal shapes or a `1 × cols` right operand that is broadcast
//! over the batch rows.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type of a computation (`f32` for training, `f64` for checking).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Neumaier summation: error independent of the number of terms to first order.
pub fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

impl UnaryOp {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            // NaN passes through so non-finite activations stay visible
            UnaryOp::Relu => {
                if x > T::zero() || x.is_nan() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            // subgradient 0 at the kink
            UnaryOp::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            UnaryOp::Sigmoid => y * (T::one() - y),
            UnaryOp::Tanh => T::one() - y * y,
            UnaryOp::Exp => y,
            UnaryOp::Log => T::one() / x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidArgument(format!(
                "buffer of length {} does not fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, T::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, T::one())
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(1, 1, value)
    }

    /// A `1 × len` row vector.
    pub fn row_vector(values: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| T::lit(v)).collect())
    }

    #[inline]
    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> Result<T> {
        if self.shape() != [1, 1] {
            return Err(Error::shape("item", self.shape(), [1, 1]));
        }
        Ok(self.data[0])
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_nn(self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm_tn(self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm_nt(self.rows, self.cols, other.rows, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// True when `other` can be combined with `self` either elementwise or as
    /// a row broadcast.
    fn broadcast_compatible(&self, other: &Self) -> bool {
        other.cols == self.cols && (other.rows == self.rows || other.rows == 1)
    }

    pub fn binary(&self, op: BinaryOp, other: &Self) -> Result<Self> {
        if !self.broadcast_compatible(other) {
            return Err(Error::shape(op.name(), self.shape(), other.shape()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        if other.rows == self.rows {
            data.extend(self.data.iter().zip(&other.data).map(|(&a, &b)| op.apply(a, b)));
        } else {
            for r in 0..self.rows {
                data.extend(self.row(r).iter().zip(&other.data).map(|(&a, &b)| op.apply(a, b)));
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Self {
        self.map(|v| op.apply(v))
    }

    pub fn relu(&self) -> Self {
        self.unary(UnaryOp::Relu)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.unary(UnaryOp::Tanh)
    }

    pub fn exp(&self) -> Self {
        self.unary(UnaryOp::Exp)
    }

    pub fn ln(&self) -> Self {
        self.unary(UnaryOp::Log)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other` for same-shape tensors.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Compensated (Neumaier) sum of all entries.
    pub fn sum(&self) -> T {
        compensated_sum(self.data.iter().copied())
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Euclidean norm over all entries.
    pub fn l2_norm(&self) -> T {
        self.sum_squares().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with the first non-finite position, labelled by `location`.
    pub fn check_finite(&self, location: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                location: format!("{location}[{}, {}]", i / self.cols.max(1), i % self.cols.max(1)),
            }),
        }
    }

    /// Stacks equal-length slices as the rows of a new matrix.
    pub fn stack_rows(parts: &[&[T]]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.len());
        if parts.iter().any(|p| p.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self {
            rows: parts.len(),
            cols,
            data: parts.concat(),
        })
    }

    /// Largest entry index in each row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

// Kernels below fix the floating-point summation order, so results depend only
// on the inputs and not on scheduling.

fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f64>::from_f64(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::<f64>::from_f64(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
        let col = Tensor::<f64>::from_f64(2, 1, &[5.0, 7.0]).unwrap();
        assert_eq!(eye.matmul(&col).unwrap(), col);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let a = rng.uniform_tensor::<f64>(-1.0, 1.0, 3, 4).unwrap();
        let b = rng.uniform_tensor::<f64>(-1.0, 1.0, 4, 2).unwrap();
        assert!(close(&a.matmul(&b).unwrap(), &naive_matmul(&a, &b), 1e-12));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = Rng::new(11);
        for &(m, k, n) in &[(3, 5, 2), (1, 17, 9), (6, 1, 13), (4, 33, 3)] {
            let a = rng.uniform_tensor::<f64>(-1.0, 1.0, m, k).unwrap();
            let b = rng.uniform_tensor::<f64>(-1.0, 1.0, m, n).unwrap();
            let tn = a.matmul_tn(&b).unwrap();
            assert!(close(&tn, &naive_matmul(&a.transpose(), &b), 1e-12));
            let c = rng.uniform_tensor::<f64>(-1.0, 1.0, n, k).unwrap();
            let nt = a.matmul_nt(&c).unwrap();
            assert!(close(&nt, &naive_matmul(&a, &c.transpose()), 1e-12));
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let a = Tensor::<f64>::zeros(2, 3);
        let err = a.matmul(&Tensor::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let a = rng.uniform_tensor::<f64>(-1.0, 1.0, 4, 5).unwrap();
            let b = rng.uniform_tensor::<f64>(-1.0, 1.0, 5, 3).unwrap();
            let c = rng.uniform_tensor::<f64>(-1.0, 1.0, 3, 6).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(close(&left, &right, 1e-9));
        }
    }

    #[test]
    fn elementwise_examples() {
        let v = Tensor::<f64>::row_vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(v.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Tensor::<f64>::scalar(0.0).sigmoid().data(), &[0.5]);
        let a = Tensor::<f64>::row_vector(vec![2.0, 3.0]);
        let b = Tensor::<f64>::row_vector(vec![4.0, 5.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[8.0, 15.0]);
        assert_eq!(a.scale(0.5).data(), &[1.0, 1.5]);
        assert!(a.add(&Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn row_broadcast_over_batch() {
        let a = Tensor::<f64>::from_f64(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::row_vector(vec![10.0, 20.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        // broadcasting is one-directional
        assert!(b.add(&a).is_err());
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(Tensor::<f64>::row_vector(vec![3.0, 4.0]).l2_norm(), 5.0);
        assert_eq!(Tensor::<f64>::zeros(1, 3).l2_norm(), 0.0);
        let mut rng = Rng::new(9);
        let v = rng.uniform_tensor::<f64>(-3.0, 3.0, 1, 257).unwrap();
        let mut oracle = 0.0;
        for &x in v.data() {
            oracle += x * x;
        }
        let oracle = oracle.sqrt();
        assert!((v.l2_norm() - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn ops_do_not_modify_inputs() {
        let mut rng = Rng::new(1);
        let a = rng.uniform_tensor::<f64>(-1.0, 1.0, 3, 3).unwrap();
        let b = rng.uniform_tensor::<f64>(-1.0, 1.0, 3, 3).unwrap();
        let (a0, b0) = (a.clone(), b.clone());
        let _ = a.matmul(&b).unwrap();
        let _ = a.mul(&b).unwrap();
        let _ = a.sigmoid();
        let _ = a.matmul_nt(&b).unwrap();
        assert_eq!(a, a0);
        assert_eq!(b, b0);
    }

    #[test]
    fn check_finite_reports_position() {
        let t = Tensor::<f64>::from_f64(2, 2, &[0.0, 1.0, f64::NAN, 2.0]).unwrap();
        let err = t.check_finite("h").unwrap_err();
        assert!(err.to_string().contains("h[1, 0]"), "{err}");
    }

    #[test]
    fn new_validates_length() {
        assert!(Tensor::<f32>::new(2, 2, vec![0.0; 3]).is_err());
    }
}
