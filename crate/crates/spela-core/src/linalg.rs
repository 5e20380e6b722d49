//! Dense linear algebra primitives shared by every training path.
//! Vectors are plain `Vec<f64>`; matrices are row-major.

use crate::error::{Result, SpelaError};
use crate::profiler;
use crate::rng::Rng;

pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise sign with sign(0) := +1.
    pub fn binarize_view(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
                .collect(),
        }
    }
}

/// y = W x. Counts rows*cols MACCs when a profiler is attached.
pub fn matvec(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(SpelaError::DimMismatch(format!(
            "matvec: {}x{} matrix with length-{} vector",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    profiler::add_forward_maccs((w.rows * w.cols) as u64);
    let mut y = vec![0.0; w.rows];
    for (i, yi) in y.iter_mut().enumerate() {
        let row = w.row(i);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            acc += a * b;
        }
        *yi = acc;
    }
    Ok(y)
}

/// yᵀ = xᵀ W, i.e. y = Wᵀ x. Same MACC count as `matvec`.
pub fn matvec_t(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.rows != x.len() {
        return Err(SpelaError::DimMismatch(format!(
            "matvec_t: {}x{} matrix with length-{} vector",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    profiler::add_forward_maccs((w.rows * w.cols) as u64);
    let mut y = vec![0.0; w.cols];
    for i in 0..w.rows {
        let row = w.row(i);
        let xi = x[i];
        for (yj, wij) in y.iter_mut().zip(row.iter()) {
            *yj += wij * xi;
        }
    }
    Ok(y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// x / ||x||, or x unchanged when ||x|| <= eps (dead activations stay usable).
pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = norm(x);
    if n > ZERO_NORM_EPS {
        x.iter().map(|v| v / n).collect()
    } else {
        x.to_vec()
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cos_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SpelaError::DimMismatch(format!(
            "cos_sim: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na <= ZERO_NORM_EPS || nb <= ZERO_NORM_EPS {
        return Err(SpelaError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn leaky_relu(z: &[f64], slope: f64) -> Vec<f64> {
    z.iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect()
}

pub fn leaky_relu_grad(z: &[f64], slope: f64) -> Vec<f64> {
    z.iter()
        .map(|&v| if v > 0.0 { 1.0 } else { slope })
        .collect()
}

/// Entries i.i.d. uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)], fan_in = cols.
pub fn he_uniform_init(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix { rows, cols, data }
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// W += a * u vᵀ. Counts rows*cols update MACCs when profiling.
pub fn rank1_update(w: &mut Matrix, a: f64, u: &[f64], v: &[f64]) {
    debug_assert_eq!(w.rows, u.len());
    debug_assert_eq!(w.cols, v.len());
    profiler::add_update_maccs((w.rows * w.cols) as u64);
    for i in 0..w.rows {
        let s = a * u[i];
        let row = w.row_mut(i);
        for (wij, vj) in row.iter_mut().zip(v.iter()) {
            *wij += s * vj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_identity_and_zero() {
        let id = Matrix::identity(2);
        assert_eq!(matvec(&id, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let z = Matrix::zeros(3, 2);
        assert_eq!(matvec(&z, &[1.0, -5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn matvec_hand_arithmetic() {
        let w = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matvec(&w, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_dim_mismatch() {
        let w = Matrix::zeros(2, 3);
        assert!(matvec(&w, &[1.0, 2.0]).is_err());
    }

    // Naive triple-checked loop oracle.
    fn matvec_naive(w: &Matrix, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; w.rows];
        for i in 0..w.rows {
            for j in 0..w.cols {
                y[i] += w.get(i, j) * x[j];
            }
        }
        y
    }

    #[test]
    fn matvec_matches_naive_oracle() {
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let r = 1 + rng.below(6);
            let c = 1 + rng.below(6);
            let w = Matrix {
                rows: r,
                cols: c,
                data: (0..r * c).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            };
            let x: Vec<f64> = (0..c).map(|_| rng.uniform(-2.0, 2.0)).collect();
            assert_eq!(matvec(&w, &x).unwrap(), matvec_naive(&w, &x));
        }
    }

    #[test]
    fn matvec_t_matches_explicit_transpose() {
        let mut rng = Rng::new(12);
        for _ in 0..50 {
            let r = 1 + rng.below(5);
            let c = 1 + rng.below(5);
            let w = Matrix {
                rows: r,
                cols: c,
                data: (0..r * c).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            };
            let x: Vec<f64> = (0..r).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let mut t = Matrix::zeros(c, r);
            for i in 0..r {
                for j in 0..c {
                    t.set(j, i, w.get(i, j));
                }
            }
            let a = matvec_t(&w, &x).unwrap();
            let b = matvec(&t, &x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert_relative_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normalize_basics() {
        assert_eq!(normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let u = normalize(&[0.6, 0.8]);
        assert_relative_eq!(norm(&u), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_norm_property() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let n = 1 + rng.below(8);
            let x: Vec<f64> = (0..n).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let y = normalize(&x);
            if norm(&x) > ZERO_NORM_EPS {
                assert_relative_eq!(norm(&y), 1.0, epsilon = 1e-9);
            } else {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn cos_sim_basics() {
        assert_relative_eq!(cos_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(cos_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(cos_sim(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), -1.0);
        assert!(cos_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cos_sim_symmetric_and_scale_invariant() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let n = 2 + rng.below(6);
            let a: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            if norm(&a) <= 1e-6 || norm(&b) <= 1e-6 {
                continue;
            }
            let c = rng.uniform(0.1, 10.0);
            let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
            let s1 = cos_sim(&a, &b).unwrap();
            assert_relative_eq!(s1, cos_sim(&b, &a).unwrap(), epsilon = 1e-12);
            assert_relative_eq!(s1, cos_sim(&ca, &b).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(&[2.0, -2.0], 0.001), vec![2.0, -0.002]);
        assert_eq!(leaky_relu(&[1.5, -0.5], 1.0), vec![1.5, -0.5]);
        assert_eq!(leaky_relu_grad(&[1.0, -1.0], 0.5), vec![1.0, 0.5]);
    }

    #[test]
    fn leaky_relu_grad_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let slope = 0.001;
        let eps = 1e-6;
        for _ in 0..200 {
            // stay away from the kink at 0
            let mut z = rng.uniform(0.1, 3.0);
            if rng.below(2) == 0 {
                z = -z;
            }
            let f = |v: f64| leaky_relu(&[v], slope)[0];
            let fd = (f(z + eps) - f(z - eps)) / (2.0 * eps);
            let g = leaky_relu_grad(&[z], slope)[0];
            assert!((fd - g).abs() / g.abs() < 1e-8, "z={z} fd={fd} g={g}");
        }
    }

    #[test]
    fn he_uniform_bound_and_determinism() {
        let mut r1 = Rng::new(77);
        let m1 = he_uniform_init(8, 32, &mut r1);
        let bound = (6.0_f64 / 32.0).sqrt();
        assert!(m1.data.iter().all(|v| v.abs() <= bound));
        let mut r2 = Rng::new(77);
        let m2 = he_uniform_init(8, 32, &mut r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn he_uniform_variance_matches_moment_formula() {
        // Var of U(-a, a) = a^2/3 = (6/fan_in)/3 = 2/fan_in.
        let mut rng = Rng::new(123);
        let cols = 100;
        let m = he_uniform_init(10_000, cols, &mut rng);
        let n = m.data.len() as f64;
        let mean = m.data.iter().sum::<f64>() / n;
        let var = m.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 2.0 / cols as f64;
        assert!(
            (var - expected).abs() / expected < 0.1,
            "var={var} expected={expected}"
        );
    }

    #[test]
    fn binarize_view_examples() {
        let w = Matrix::from_rows(vec![vec![0.3, -2.0], vec![0.0, 5.0]]);
        let b = w.binarize_view();
        assert_eq!(b.data, vec![1.0, -1.0, 1.0, 1.0]);
        assert_eq!(b.binarize_view().data, b.data);
    }
}
