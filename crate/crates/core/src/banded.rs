//! Symmetric positive-definite banded matrices and their Cholesky factor.

use crate::error::{Error, Result};

/// Lower band storage: `band[i][k] = A[i][i - k]` for `k = 0..=width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded {
    n: usize,
    width: usize,
    band: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, width: usize) -> Self {
        SymBanded {
            n,
            width,
            band: vec![0.0; n * (width + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Entry `(i, j)` with `|i - j| <= width`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if k > self.width {
            0.0
        } else {
            self.band[r * (self.width + 1) + k]
        }
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        assert!(k <= self.width, "entry ({i}, {j}) outside band {}", self.width);
        self.band[r * (self.width + 1) + k] += v;
    }

    /// In-place Cholesky `A = G Gᵀ`, `G` lower banded with the same width.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let w = self.width;
        let stride = w + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(w);
            for j in j0..=i {
                let mut s = self.band[i * stride + (i - j)];
                let k0 = i.saturating_sub(w).max(j.saturating_sub(w));
                for k in k0..j {
                    s -= self.band[i * stride + (i - k)] * self.band[j * stride + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular(format!(
                            "banded matrix not positive definite at pivot {i}"
                        )));
                    }
                    self.band[i * stride] = s.sqrt();
                } else {
                    self.band[i * stride + (i - j)] = s / self.band[j * stride];
                }
            }
        }
        Ok(BandedCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    factor: SymBanded,
}

impl BandedCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let g = &self.factor;
        let (n, w) = (g.n, g.width);
        let stride = w + 1;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(w)..i {
                s -= g.band[i * stride + (i - k)] * b[k];
            }
            b[i] = s / g.band[i * stride];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + w + 1).min(n) {
                s -= g.band[k * stride + (k - i)] * b[k];
            }
            b[i] = s / g.band[i * stride];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut out = b.to_vec();
        self.solve_in_place(&mut out);
        out
    }

    /// Diagonal of `A⁻¹`, by solving against unit vectors.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.factor.n;
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[i] = 1.0;
                self.solve_in_place(&mut e);
                e[i]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn to_dense(a: &SymBanded) -> DMatrix<f64> {
        DMatrix::from_fn(a.n(), a.n(), |i, j| a.get(i, j))
    }

    proptest! {
        #[test]
        fn solve_matches_dense(
            n in 3usize..30,
            width in 0usize..4,
            vals in proptest::collection::vec(-1.0f64..1.0, 200),
        ) {
            // diagonally dominant, hence SPD
            let mut a = SymBanded::zeros(n, width);
            let mut it = vals.iter().cycle();
            for i in 0..n {
                for j in i.saturating_sub(width)..i {
                    a.add(i, j, *it.next().unwrap());
                }
            }
            for i in 0..n {
                a.add(i, i, 2.0 * (width as f64 + 1.0) + it.next().unwrap().abs());
            }
            let dense = to_dense(&a);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
            let x = a.cholesky().unwrap().solve(&b);
            let want = dense.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            for i in 0..n {
                prop_assert!((x[i] - want[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = SymBanded::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_diagonal_of_tridiagonal() {
        let mut a = SymBanded::zeros(4, 1);
        for i in 0..4 {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let dense = to_dense(&a).try_inverse().unwrap();
        let diag = a.cholesky().unwrap().inverse_diagonal();
        for i in 0..4 {
            assert!((diag[i] - dense[(i, i)]).abs() < 1e-14);
        }
    }
}
