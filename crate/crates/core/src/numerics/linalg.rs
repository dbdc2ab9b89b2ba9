use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::NumericsError;

/// Relative pivot floor below which a matrix is declared rank deficient.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self, NumericsError> {
        let d = a.nrows();
        if a.ncols() != d {
            return Err(NumericsError::Domain(format!(
                "expected a square matrix, got {}x{}",
                d,
                a.ncols()
            )));
        }
        let max_diag = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = PIVOT_TOLERANCE * max_diag;
        let mut lower = Array2::<f64>::zeros((d, d));
        for j in 0..d {
            let mut pivot = a[[j, j]];
            for k in 0..j {
                pivot -= lower[[j, k]] * lower[[j, k]];
            }
            if !(pivot > floor) || max_diag == 0.0 {
                return Err(NumericsError::RankDeficient { pivot: j });
            }
            let root = pivot.sqrt();
            lower[[j, j]] = root;
            for i in j + 1..d {
                let mut v = a[[i, j]];
                for k in 0..j {
                    v -= lower[[i, k]] * lower[[j, k]];
                }
                lower[[i, j]] = v / root;
            }
        }
        Ok(Self { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.lower.view()
    }

    /// Solves L y = b in place.
    pub fn forward(&self, b: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut v = b[i];
            for k in 0..i {
                v -= self.lower[[i, k]] * b[k];
            }
            b[i] = v / self.lower[[i, i]];
        }
    }

    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let d = self.dim();
        let mut x = b.to_vec();
        self.forward(&mut x);
        for i in (0..d).rev() {
            let mut v = x[i];
            for k in i + 1..d {
                v -= self.lower[[k, i]] * x[k];
            }
            x[i] = v / self.lower[[i, i]];
        }
        Array1::from(x)
    }

    /// bᵀ A⁻¹ b, computed as ‖L⁻¹ b‖².
    pub fn quadratic_form(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward(&mut y);
        y.iter().map(|v| v * v).sum()
    }
}

/// Solves A x = b for symmetric positive definite A.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>, NumericsError> {
    if b.len() != a.nrows() {
        return Err(NumericsError::Domain(format!(
            "right-hand side has length {}, matrix has {} rows",
            b.len(),
            a.nrows()
        )));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}
