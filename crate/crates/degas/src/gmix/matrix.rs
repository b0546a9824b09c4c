//! Packed symmetric matrices of differentiable scalars.

use crate::diff::DiffScalar;

use super::GmixError;

/// Symmetric `n x n` matrix storing only the upper triangle, so symmetry
/// cannot drift through the tape.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    n: usize,
    data: Vec<DiffScalar>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![DiffScalar::constant(0.0); n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, DiffScalar::constant(1.0));
        }
        m
    }

    /// Builds from a full row-major table; the lower triangle is ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, DiffScalar::constant(rows[i][j]));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.n);
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> DiffScalar {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.data[self.offset(a, b)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: DiffScalar) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let k = self.offset(a, b);
        self.data[k] = v;
    }

    /// Selects the principal submatrix on `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> SymMatrix {
        let mut m = SymMatrix::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().skip(a) {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).value()).collect())
            .collect()
    }
}

/// Dense lower-triangular Cholesky factor.
pub struct CholeskyFactor {
    n: usize,
    rows: Vec<Vec<DiffScalar>>,
}

impl CholeskyFactor {
    /// `L` such that `L L^T = m`; fails when a pivot is not strictly positive.
    pub fn new(m: &SymMatrix) -> Result<Self, GmixError> {
        let n = m.dim();
        let mut rows: Vec<Vec<DiffScalar>> = (0..n)
            .map(|i| vec![DiffScalar::constant(0.0); i + 1])
            .collect();
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= rows[j][k] * rows[j][k];
            }
            if !(d.value() > 0.0) || !d.value().is_finite() {
                return Err(GmixError::SingularCovariance { pivot: j });
            }
            rows[j][j] = d.sqrt();
            for i in j + 1..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= rows[i][k] * rows[j][k];
                }
                rows[i][j] = s / rows[j][j];
            }
        }
        Ok(CholeskyFactor { n, rows })
    }

    /// Solves `L u = b` by forward substitution.
    pub fn solve_lower(&self, b: &[DiffScalar]) -> Vec<DiffScalar> {
        debug_assert_eq!(b.len(), self.n);
        let mut u = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut s = b[i];
            for (k, uk) in u.iter().enumerate().take(i) {
                s -= self.rows[i][k] * *uk;
            }
            u.push(s / self.rows[i][i]);
        }
        u
    }

    /// `log |L L^T| = 2 sum(log L_ii)`.
    pub fn log_det(&self) -> DiffScalar {
        let mut s = DiffScalar::constant(0.0);
        for i in 0..self.n {
            s += self.rows[i][i].ln();
        }
        s + s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_round_trip() {
        let m = SymMatrix::from_rows(&[
            vec![4.0, 2.0, 0.6],
            vec![0.0, 3.0, 0.2],
            vec![0.0, 0.0, 2.0],
        ]);
        let l = CholeskyFactor::new(&m).unwrap();
        // Reconstruct L L^T and compare.
        for i in 0..3 {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += l.rows[i][k].value() * l.rows[j][k].value();
                }
                assert_relative_eq!(s, m.get(i, j).value(), max_relative = 1e-12);
            }
        }
        // Cofactor expansion along the first row.
        let det: f64 = 4.0 * (3.0 * 2.0 - 0.2 * 0.2) - 2.0 * (2.0 * 2.0 - 0.2 * 0.6)
            + 0.6 * (2.0 * 0.2 - 3.0 * 0.6);
        assert_relative_eq!(l.log_det().value(), det.ln(), max_relative = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(
            CholeskyFactor::new(&m),
            Err(GmixError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn select_reorders() {
        let m = SymMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![0.0, 5.0, 6.0],
            vec![0.0, 0.0, 9.0],
        ]);
        let s = m.select(&[2, 0]);
        assert_eq!(s.get(0, 0).value(), 9.0);
        assert_eq!(s.get(0, 1).value(), 3.0);
        assert_eq!(s.get(1, 1).value(), 1.0);
    }
}
