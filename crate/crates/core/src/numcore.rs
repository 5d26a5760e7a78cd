//! Dense row-major linear algebra and a deterministic RNG.
//!
//! Everything is f64. The types are deliberately small: the models in this
//! crate need matrix-vector products, outer-product accumulation and cosine
//! similarity, not a BLAS. The RNG is SplitMix64, fixed here so that a seed
//! produces the identical stream on every platform; all shuffling, parameter
//! initialization and synthetic data generation in the crate draw from it.

use crate::error::{Error, Result};

/// Dense row-major matrix. `data[i * cols + j]` is row i, column j.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from a flat row-major buffer. `data.len()` must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "matrix buffer has {} entries, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, r) in dst.iter_mut().zip(row) {
                    *d += a * r;
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a column vector x.
    #[allow(clippy::needless_range_loop)]
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.dim() {
            return Err(Error::Shape {
                op: "matvec",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: x.dim(),
                rhs_cols: 1,
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.as_slice()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(Vector::from_vec(out))
    }

    /// `self^T * x`: the transposed product, without materializing a transpose.
    pub fn matvec_t(&self, x: &Vector) -> Result<Vector> {
        if self.rows != x.dim() {
            return Err(Error::Shape {
                op: "matvec_t",
                lhs_rows: self.cols,
                lhs_cols: self.rows,
                rhs_rows: x.dim(),
                rhs_cols: 1,
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x.as_slice()[i];
            if xi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += xi * a;
            }
        }
        Ok(Vector::from_vec(out))
    }

    /// `self += scale * u * v^T`. u must match rows, v must match cols.
    pub fn add_outer(&mut self, u: &Vector, v: &Vector, scale: f64) -> Result<()> {
        if u.dim() != self.rows || v.dim() != self.cols {
            return Err(Error::Shape {
                op: "add_outer",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: u.dim(),
                rhs_cols: v.dim(),
            });
        }
        for i in 0..self.rows {
            let ui = scale * u.as_slice()[i];
            if ui == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v.as_slice()) {
                *r += ui * vj;
            }
        }
        Ok(())
    }

    /// `self += scale * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape {
                op: "add_scaled",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn column(&self, j: usize) -> Vector {
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            out.push(self.data[i * self.cols + j]);
        }
        Vector::from_vec(out)
    }

    /// Adds `scale * v` into column j. v must match rows.
    pub fn add_to_column(&mut self, j: usize, v: &Vector, scale: f64) -> Result<()> {
        if v.dim() != self.rows {
            return Err(Error::Shape {
                op: "add_to_column",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: v.dim(),
                rhs_cols: 1,
            });
        }
        for i in 0..self.rows {
            self.data[i * self.cols + j] += scale * v.as_slice()[i];
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry; 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dense column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector { data: vec![0.0; dim] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape {
                op: "dot",
                lhs_rows: self.dim(),
                lhs_cols: 1,
                rhs_rows: other.dim(),
                rhs_cols: 1,
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`, dims must agree.
    pub fn add_scaled(&mut self, other: &Vector, scale: f64) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Shape {
                op: "add_scaled",
                lhs_rows: self.dim(),
                lhs_cols: 1,
                rhs_rows: other.dim(),
                rhs_cols: 1,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Elementwise product, dims must agree.
    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        if self.dim() != other.dim() {
            return Err(Error::Shape {
                op: "hadamard",
                lhs_rows: self.dim(),
                lhs_cols: 1,
                rhs_rows: other.dim(),
                rhs_cols: 1,
            });
        }
        Ok(Vector::from_vec(
            self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Cosine similarity, clamped to [-1, 1] against rounding. Zero-norm inputs
/// have no direction, so they are an error; callers that rank candidate sets
/// filter those out first.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm { what: "cosine" });
    }
    let c = u.dot(v)? / (nu * nv);
    Ok(c.clamp(-1.0, 1.0))
}

/// SplitMix64. One u64 of state; each draw advances the state by a fixed odd
/// constant and scrambles it. Identical seeds give identical streams on every
/// platform, which the whole crate relies on for reproducibility.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call; the sine
    /// branch is discarded to keep the stream position independent of caller
    /// history.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln away from 0
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n), unbiased via rejection. n must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return v % n;
            }
        }
    }

    /// Child generator seeded from this stream; lets callers hand out
    /// independent streams without coupling consumption order.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// Matrix with entries drawn uniformly from [-scale, scale].
pub fn init_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.uniform_in(-scale, scale);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    // The explicit import outranks proptest's glob re-export of a trait with
    // the same name.
    use super::Rng;

    #[test]
    fn matmul_small_product() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut id = Matrix::zeros(3, 3);
        for i in 0..3 {
            id.set(i, i, 1.0);
        }
        let a = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 3.0]).unwrap();
        let b = id.matmul(&a).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("2x3") && msg.contains("matmul"),
            "shape error should carry both shapes and the op, got: {msg}"
        );
    }

    #[test]
    fn matvec_and_transpose_agree_with_matmul() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Vector::from_vec(vec![1.0, 0.0, -1.0]);
        let y = a.matvec(&x).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, -2.0]);
        let z = a.matvec_t(&Vector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(z.as_slice(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_product_accumulates() {
        let mut m = Matrix::zeros(2, 3);
        let u = Vector::from_vec(vec![1.0, 2.0]);
        let v = Vector::from_vec(vec![3.0, 4.0, 5.0]);
        m.add_outer(&u, &v, 1.0).unwrap();
        m.add_outer(&u, &v, 1.0).unwrap();
        assert_eq!(m.get(1, 2), 20.0);
        assert_eq!(m.get(0, 0), 6.0);
    }

    #[test]
    fn cosine_of_known_pair() {
        let u = Vector::from_vec(vec![1.0, 0.0]);
        let v = Vector::from_vec(vec![1.0, 1.0]);
        let c = cosine(&u, &v).unwrap();
        assert!(
            (c - 0.7071067811865475).abs() < 1e-12,
            "cosine([1,0],[1,1]) should be 1/sqrt(2), got {c}"
        );
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let u = Vector::from_vec(vec![1.0, 0.0]);
        let v = Vector::from_vec(vec![0.0, 1.0]);
        assert_eq!(cosine(&u, &v).unwrap(), 0.0);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let u = Vector::zeros(3);
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(cosine(&u, &v), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn init_matrix_respects_scale_and_seed() {
        let mut rng = Rng::new(7);
        let m = init_matrix(8, 8, 0.25, &mut rng);
        assert!(m.data().iter().all(|v| v.abs() <= 0.25));
        let m2 = init_matrix(8, 8, 0.25, &mut Rng::new(7));
        assert_eq!(m.data(), m2.data(), "same seed must reproduce the matrix");
        let m3 = init_matrix(8, 8, 0.25, &mut Rng::new(8));
        assert_ne!(m.data(), m3.data(), "different seed should differ");
    }

    #[test]
    fn rng_stream_is_reproducible() {
        let mut a = Rng::new(123);
        let mut b = Rng::new(123);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rng_uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn rng_below_is_in_range() {
        let mut rng = Rng::new(2);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(3);
        let mut xs: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn normal_draws_are_finite_and_centered() {
        let mut rng = Rng::new(4);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = rng.normal();
            assert!(x.is_finite());
            sum += x;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.05, "sample mean {mean} too far from 0");
    }

    proptest! {
        // (AB)C and A(BC) agree to within accumulated rounding.
        #[test]
        fn matmul_associative(
            dims in (1usize..=16, 1usize..=16, 1usize..=16, 1usize..=16),
            seed in any::<u64>(),
        ) {
            let (m, n, p, q) = dims;
            let mut rng = Rng::new(seed);
            let a = init_matrix(m, n, 1.0, &mut rng);
            let b = init_matrix(n, p, 1.0, &mut rng);
            let c = init_matrix(p, q, 1.0, &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(right.max_abs()).max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        // Product of finite inputs stays finite.
        #[test]
        fn matmul_output_finite(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = init_matrix(5, 7, 1.0, &mut rng);
            let b = init_matrix(7, 3, 1.0, &mut rng);
            prop_assert!(a.matmul(&b).unwrap().is_finite());
        }

        // Cosine ignores positive rescaling of either argument.
        #[test]
        fn cosine_scale_invariant(
            seed in any::<u64>(),
            s in 0.01f64..100.0,
        ) {
            let mut rng = Rng::new(seed);
            let u = Vector::from_vec((0..6).map(|_| rng.uniform_in(-1.0, 1.0) + 0.01).collect());
            let mut v = Vector::from_vec((0..6).map(|_| rng.uniform_in(-1.0, 1.0) + 0.01).collect());
            let base = cosine(&u, &v).unwrap();
            v.scale(s);
            let scaled = cosine(&u, &v).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&scaled));
        }
    }
}
