//! Small dense kernels over row-major `f64` storage.
//!
//! Everything in here is sized for the cell dimensions this crate works with
//! (tens to a few hundred units), so there is no blocking, no transposition
//! cache and no SIMD intrinsics. The inner product keeps four independent
//! accumulators, which lets the compiler vectorize it while the summation
//! order stays fixed and reproducible.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};

/// Dense vector of 64-bit floats.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_dim("add", self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|v| *v = value);
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self(data)
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Self(data.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for i in 0..self.rows {
            list.entry(&self.row(i));
        }
        list.finish()
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    check_dim("matvec", m.cols, v.len())?;
    let mut out = Vector::zeros(m.rows);
    matvec_acc(m, v, &mut out);
    Ok(out)
}

/// Pointwise product.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    check_dim("hadamard", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Inner product with a fixed four-lane summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += m · v`. Dimensions are the caller's responsibility.
#[inline]
pub fn matvec_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o += dot(row, v);
    }
}

/// `out += mᵀ · v`.
#[inline]
pub fn matvec_t_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (&scale, row) in v.iter().zip(m.data.chunks_exact(m.cols.max(1))) {
        if scale == 0.0 {
            continue;
        }
        axpy(scale, row, out);
    }
}

/// `m += a · bᵀ`.
#[inline]
pub fn outer_acc(m: &mut Matrix, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols.max(1);
    for (&scale, row) in a.iter().zip(m.data.chunks_exact_mut(cols)) {
        if scale == 0.0 {
            continue;
        }
        axpy(scale, b, row);
    }
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Nonlinearity applied to the candidate and to the cell state before the
/// output gate. Gates themselves always use [`logistic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Tanh,
    Logistic,
    Relu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::Tanh, Self::Logistic, Self::Relu];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Logistic => logistic(x),
            Self::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y = f(x)`.
    ///
    /// For relu the derivative at the kink is 0.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Logistic => y * (1.0 - y),
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Logistic => "sigmoid",
            Self::Relu => "relu",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Self::Tanh),
            "sigmoid" | "logistic" => Ok(Self::Logistic),
            "relu" => Ok(Self::Relu),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected tanh, sigmoid or relu)"
            ))),
        }
    }
}

pub fn apply_activation(kind: ActivationKind, v: &[f64]) -> Vector {
    v.iter().map(|&x| kind.apply(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_identity_and_zero() {
        let v = [3.0, 5.0];
        assert_eq!(matvec(&Matrix::identity(2), &v).unwrap().as_slice(), &v);
        let z = matvec(&Matrix::zeros(3, 2), &[7.0, -1.0]).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_small_by_hand() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_rejects_bad_dims() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            matvec(&m, &[1.0, 2.0]),
            Err(Error::Dimension {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn hadamard_cases() {
        assert_eq!(
            hadamard(&[1.0, 1.0, 1.0], &[4.0, -2.0, 0.5])
                .unwrap()
                .as_slice(),
            &[4.0, -2.0, 0.5]
        );
        assert_eq!(
            hadamard(&[0.0; 3], &[4.0, -2.0, 0.5]).unwrap().as_slice(),
            &[0.0; 3]
        );
        assert_eq!(
            hadamard(&[2.0, 3.0], &[4.0, 5.0]).unwrap().as_slice(),
            &[8.0, 15.0]
        );
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn activation_fixed_points() {
        assert_eq!(
            apply_activation(ActivationKind::Logistic, &[0.0]).as_slice(),
            &[0.5]
        );
        assert_eq!(
            apply_activation(ActivationKind::Tanh, &[0.0]).as_slice(),
            &[0.0]
        );
        assert_eq!(
            apply_activation(ActivationKind::Relu, &[-1.0, 2.0]).as_slice(),
            &[0.0, 2.0]
        );
    }

    #[test]
    fn logistic_does_not_overflow() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!(logistic(-700.0) > 0.0);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let m = Matrix::from_fn(3, 5, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let v = [0.5, -1.0, 2.0];
        let mut out = vec![0.0; 5];
        matvec_t_acc(&m, &v, &mut out);
        let expect = matvec(&m.transpose(), &v).unwrap();
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n)
    }

    proptest! {
        #[test]
        fn matvec_distributes_over_addition(
            (rows, cols) in (1usize..12, 1usize..12),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let a: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = matvec(&m, &sum).unwrap();
            let rhs = matvec(&m, &a).unwrap().add(&matvec(&m, &b).unwrap()).unwrap();
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-12);
            }
        }

        // tanh rounds to ±1 in f64 beyond |x| ≈ 19.
        #[test]
        fn bounded_activations(x in -18.0f64..18.0) {
            let s = logistic(x);
            prop_assert!(s > 0.0 && s < 1.0);
            let t = x.tanh();
            prop_assert!(t > -1.0 && t < 1.0);
        }

        #[test]
        fn hadamard_commutes(a in vec_strategy(8), b in vec_strategy(8)) {
            prop_assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
        }
    }
}
