//! Row-major tensors over `f32` or `f64`.
//!
//! Training runs in single precision; the gradient-check path instantiates the
//! same kernels at `f64` so finite differences stay meaningful.

use crate::error::{Error, Result};
use std::fmt;

/// Element type the numeric kernels are generic over.
///
/// The GEMM hook dispatches to `matrixmultiply`, which uses a fixed blocking
/// order, so results are bitwise reproducible run to run.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Copy + Send + Sync + fmt::Debug + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C := alpha * op(A) * op(B) + beta * C with explicit row/col strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self], rsc: isize, csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self], rsc: isize, csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self], rsc: isize, csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

/// C(m×n) = A(m×k) · B(k×n), all row-major. `beta` scales the existing C.
pub fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    S::gemm_strided(m, k, n, S::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// C(m×n) = Aᵀ · B where A is stored row-major as (k×m).
pub fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    S::gemm_strided(m, k, n, S::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// C(m×n) = A · Bᵀ where B is stored row-major as (n×k).
pub fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    S::gemm_strided(m, k, n, S::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, checking that the element count matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                want,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![S::zero(); n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidTensor("tensor contains non-finite values".into()))
        }
    }

    /// Number of leading-dimension entries (batch size for N×... tensors).
    pub fn outer_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Row `i` of a 2-D view collapsing all trailing dimensions.
    pub fn row(&self, i: usize) -> &[S] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn map_to<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, {:?}, ...]", self.data[0], self.data[1])
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorRepr<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar + serde::Serialize> serde::Serialize for Tensor<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        TensorRepr { shape: self.shape.clone(), data: self.data.clone() }.serialize(s)
    }
}

impl<'de, S: Scalar + serde::Deserialize<'de>> serde::Deserialize<'de> for Tensor<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TensorRepr::<S>::deserialize(d)?;
        Tensor::new(repr.shape, repr.data).map_err(serde::de::Error::custom)
    }
}

/// argmax with ties broken toward the lowest index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn check_finite_catches_nan() {
        let mut t = Tensor::<f32>::zeros(vec![4]);
        assert!(t.check_finite().is_ok());
        t.data_mut()[2] = f32::NAN;
        assert!(t.check_finite().is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0f32; 10]), 0);
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        let mut v = [0.0f32; 10];
        v[7] = 5.0;
        assert_eq!(argmax(&v), 7);
    }

    #[test]
    fn gemm_matches_naive_small() {
        // 2x3 * 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        gemm_nn(2, 3, 2, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // Aᵀ·B with A stored 2x3: Aᵀ is 3x2, times B' 2x2
        let b2 = [1.0f64, 2.0, 3.0, 4.0];
        let mut c2 = [0.0f64; 6];
        gemm_tn(3, 2, 2, &a, &b2, 0.0, &mut c2);
        assert_eq!(c2, [13.0, 18.0, 17.0, 24.0, 21.0, 30.0]);

        // A·Bᵀ with B stored 2x3
        let mut c3 = [0.0f64; 4];
        gemm_nt(2, 3, 2, &a, &a, 0.0, &mut c3);
        assert_eq!(c3, [14.0, 32.0, 32.0, 77.0]);
    }
}
