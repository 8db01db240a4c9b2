//! Dense row-major arrays with the handful of kernels the model needs.
//!
//! Shapes are runtime `Vec<usize>` extents; element count always equals the
//! product of extents. Shape mismatches are contract violations and panic.

use rand::Rng;
use rand_distr::StandardNormal;

use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Array<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "shape {:?} expects {} elements, got {}",
            shape,
            expected,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = F::one();
        }
        a
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng>(shape: &[usize], std: F, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                F::from_f64_c(z) * std
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform in [-bound, bound]; used for Xavier-style init.
    pub fn uniform<R: Rng>(shape: &[usize], bound: F, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let b = bound.to_f64().unwrap();
        let data = (0..n)
            .map(|_| F::from_f64_c(rng.gen_range(-b..=b)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows×cols view extents for rank-2 arrays.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.rank(), 2, "expected rank-2 array, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.rank(), 3, "expected rank-3 array, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn at2(&self, r: usize, c: usize) -> F {
        let (_, n) = self.dims2();
        self.data[r * n + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        let (m, n) = self.dims2();
        assert!(r < m, "row {} out of range for {} rows", r, m);
        &self.data[r * n..(r + 1) * n]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(self.numel(), expected, "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Matrix product a[m×k] · b[k×n]. Inner extents must agree.
    pub fn matmul(&self, other: &Self) -> Self {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        assert_eq!(k, k2, "matmul inner extents disagree: {} vs {}", k, k2);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// aᵀ · b without materializing the transpose: [m×k]ᵀ · [m×n] -> [k×n].
    pub fn matmul_at_b(&self, other: &Self) -> Self {
        let (m, k) = self.dims2();
        let (m2, n) = other.dims2();
        assert_eq!(m, m2, "matmul_at_b leading extents disagree");
        let mut out = vec![F::zero(); k * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let brow = &other.data[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![k, n],
            data: out,
        }
    }

    /// a · bᵀ without materializing the transpose: [m×k] · [n×k]ᵀ -> [m×n].
    pub fn matmul_a_bt(&self, other: &Self) -> Self {
        let (m, k) = self.dims2();
        let (n, k2) = other.dims2();
        assert_eq!(k, k2, "matmul_a_bt trailing extents disagree");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = self.dims2();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Numerically stable softmax along `axis` (max-subtraction before exp).
    pub fn softmax(&self, axis: usize) -> Self {
        assert!(axis < self.rank(), "softmax axis {} out of range", axis);
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut max = F::neg_infinity();
                for e in 0..extent {
                    max = max.max(out[base + e * inner]);
                }
                let mut denom = F::zero();
                for e in 0..extent {
                    let v = (out[base + e * inner] - max).exp();
                    out[base + e * inner] = v;
                    denom += v;
                }
                for e in 0..extent {
                    out[base + e * inner] /= denom;
                }
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type A = Array<f64>;

    #[test]
    fn matmul_identity() {
        let i2 = A::eye(2);
        let m = A::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(i2.matmul(&m), m);
    }

    #[test]
    fn matmul_orthogonal_rows() {
        let a = A::new(vec![1, 2], vec![1.0, 0.0]);
        let b = A::new(vec![2, 1], vec![0.0, 1.0]);
        assert_eq!(a.matmul(&b), A::new(vec![1, 1], vec![0.0]));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = A::randn(&[3, 4], 1.0, &mut rng);
        let b = A::randn(&[4, 2], 1.0, &mut rng);
        let fast = a.matmul(&b);
        let mut oracle = A::zeros(&[3, 2]);
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.at2(i, p) * b.at2(p, j);
                }
                oracle.data_mut()[i * 2 + j] = s;
            }
        }
        assert!(fast.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "inner extents disagree")]
    fn matmul_shape_mismatch_panics() {
        let a = A::zeros(&[2, 3]);
        let b = A::zeros(&[2, 2]);
        let _ = a.matmul(&b);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let a = A::randn(&[5, 3], 1.0, &mut rng);
        let b = A::randn(&[5, 4], 1.0, &mut rng);
        let c = A::randn(&[3, 4], 1.0, &mut rng);
        assert!(a.matmul_at_b(&b).max_abs_diff(&a.transpose().matmul(&b)) < 1e-12);
        assert!(b.matmul_a_bt(&c).max_abs_diff(&b.matmul(&c.transpose())) < 1e-12);
    }

    #[test]
    fn softmax_symmetry() {
        let x = A::new(vec![2], vec![0.0, 0.0]);
        let s = x.softmax(0);
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let x = A::new(vec![2], vec![1000.0, 0.0]);
        let s = x.softmax(0);
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = A::new(vec![3], vec![1.0, 2.0, 3.0]);
        let s = x.softmax(0);
        let denom: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, &v) in s.data().iter().enumerate() {
            let expect = ((i + 1) as f64).exp() / denom;
            assert!((v - expect).abs() < 1e-12);
        }
        let total: f64 = s.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_of_matrix_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x = A::randn(&[4, 7], 3.0, &mut rng);
        let s = x.softmax(1);
        for r in 0..4 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
