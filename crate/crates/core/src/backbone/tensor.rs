use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of the model (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Dense row-major tensor. Most tensors here are matrices `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} vs {} elements", data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::from_vec(&[1, 1], vec![x])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossless())).collect(),
        }
    }
}

/// `out[n,m] = a[n,k] * b[k,m]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[n,k] += g[n,m] * b[k,m]^T`
pub fn matmul_nt_acc<T: Scalar>(out: &mut [T], g: &[T], b: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let mut s = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,m] += a[n,k]^T * g[n,m]`
pub fn matmul_tn_acc<T: Scalar>(out: &mut [T], a: &[T], g: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log(sum(exp(row)))`
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5; 6] = [17; 39]
        let out = matmul(&[1.0f64, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        assert_eq!(out, vec![17.0, 39.0]);
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // [3,4]
        let c = matmul(&a, &b, 2, 3, 4);
        // g * b^T with g = c reproduces c * b^T computed by hand
        let mut nt = vec![0.0; 6];
        matmul_nt_acc(&mut nt, &c, &b, 2, 3, 4);
        for i in 0..2 {
            for p in 0..3 {
                let want: f64 = (0..4).map(|j| c[i * 4 + j] * b[p * 4 + j]).sum();
                assert!((nt[i * 3 + p] - want).abs() < 1e-12);
            }
        }
        let mut tn = vec![0.0; 12];
        matmul_tn_acc(&mut tn, &a, &c, 2, 3, 4);
        for p in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|i| a[i * 3 + p] * c[i * 4 + j]).sum();
                assert!((tn[p * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut out = [0.0f32; 3];
        softmax_into(&[1000.0f32, 1000.0, 999.0], &mut out);
        assert!((out.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((log_sum_exp(&[0.0f64, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }
}
