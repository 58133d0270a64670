//! Convex quadratic objectives f(x) = 1/2 (x-c)^T A (x-c).

use serde::{Deserialize, Serialize};

use super::{check_params, Batch, Objective};
use crate::error::{Error, Result};
use crate::numkit::{ParamVector, SeedPath};

/// Largest dimension at which construction runs the eigenvalue PSD check.
const PSD_CHECK_MAX_DIM: usize = 16;

/// f(x) = 1/2 (x-c)^T A (x-c) with A symmetric positive semi-definite.
///
/// Gradient is A(x-c); the loss is nonnegative and zero at the center when A
/// is positive definite. The "batch" argument is ignored: a quadratic client
/// owns its whole dataset implicitly and its gradient is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticObjective {
    matrix: Vec<f64>, // row-major, dim x dim
    dim: usize,
    center: ParamVector,
    start: Option<ParamVector>,
}

impl QuadraticObjective {
    pub fn new(rows: &[Vec<f64>], center: ParamVector) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("quadratic.A", "matrix must be square"));
        }
        center.check_len(dim)?;
        let mut matrix = Vec::with_capacity(dim * dim);
        for row in rows {
            matrix.extend_from_slice(row);
        }
        let scale = matrix.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::config("quadratic.A", "matrix must be symmetric"));
                }
            }
        }
        if dim <= PSD_CHECK_MAX_DIM {
            let eigs = symmetric_eigenvalues(&matrix, dim);
            let max_abs = eigs.iter().fold(1.0f64, |m, e| m.max(e.abs()));
            if eigs.iter().any(|&e| e < -1e-10 * max_abs) {
                return Err(Error::config(
                    "quadratic.A",
                    "matrix must be positive semi-definite",
                ));
            }
        }
        Ok(QuadraticObjective {
            matrix,
            dim,
            center,
            start: None,
        })
    }

    /// Explicit training start point; defaults to the center.
    pub fn with_start(mut self, start: ParamVector) -> Result<Self> {
        start.check_len(self.dim)?;
        self.start = Some(start);
        Ok(self)
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    pub fn matrix_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.matrix[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }

    fn displaced(&self, x: &ParamVector) -> Result<ParamVector> {
        x.sub(&self.center)
    }

    fn apply_matrix(&self, v: &ParamVector) -> ParamVector {
        let mut out = ParamVector::zeros(self.dim);
        for i in 0..self.dim {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        }
        out
    }
}

impl Objective for QuadraticObjective {
    fn param_len(&self) -> usize {
        self.dim
    }

    fn loss(&self, x: &ParamVector, _batch: &Batch<'_>) -> Result<f64> {
        check_params(self, x)?;
        let d = self.displaced(x)?;
        let value = 0.5 * self.apply_matrix(&d).dot(&d)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "quadratic loss".to_string(),
            });
        }
        Ok(value)
    }

    fn grad(&self, x: &ParamVector, _batch: &Batch<'_>) -> Result<ParamVector> {
        check_params(self, x)?;
        let g = self.apply_matrix(&self.displaced(x)?);
        g.ensure_finite("quadratic gradient")?;
        Ok(g)
    }

    fn uses_batches(&self) -> bool {
        false
    }

    fn init_params(&self, _seed: &SeedPath) -> ParamVector {
        self.start.clone().unwrap_or_else(|| self.center.clone())
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::check_gradients;
    use super::*;

    pub(crate) fn toy_f1() -> QuadraticObjective {
        QuadraticObjective::new(
            &[vec![1.0, 0.75], vec![0.75, 1.0]],
            ParamVector::from([6.0, 0.0]),
        )
        .unwrap()
    }

    fn toy_f2() -> QuadraticObjective {
        QuadraticObjective::new(
            &[vec![1.0, -0.5], vec![-0.5, 1.0]],
            ParamVector::from([3.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn loss_zero_at_center() {
        let f1 = toy_f1();
        assert_eq!(
            f1.loss(&ParamVector::from([6.0, 0.0]), &Batch::whole()).unwrap(),
            0.0
        );
    }

    #[test]
    fn loss_at_toy_start_point() {
        // Expand 0.5(x0-6)^2 + 0.75(x0-6)x1 + 0.5 x1^2 at (5.1, -3.1):
        // 0.405 + 2.0925 + 4.805 = 7.3025.
        let f1 = toy_f1();
        let loss = f1
            .loss(&ParamVector::from([5.1, -3.1]), &Batch::whole())
            .unwrap();
        assert!((loss - 7.3025).abs() < 1e-12);
    }

    #[test]
    fn grad_zero_at_center() {
        let f1 = toy_f1();
        let g = f1
            .grad(&ParamVector::from([6.0, 0.0]), &Batch::whole())
            .unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_at_toy_start_point() {
        // A(x - c) with x - c = (-0.9, -3.1).
        let f1 = toy_f1();
        let g = f1
            .grad(&ParamVector::from([5.1, -3.1]), &Batch::whole())
            .unwrap();
        assert!((g[0] - (-3.225)).abs() < 1e-12);
        assert!((g[1] - (-3.775)).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        check_gradients(&toy_f1(), &Batch::whole(), 11, 100, 1e-4);
        check_gradients(&toy_f2(), &Batch::whole(), 12, 100, 1e-4);
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        let err = QuadraticObjective::new(
            &[vec![1.0, 0.2], vec![0.3, 1.0]],
            ParamVector::from([0.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn rejects_indefinite_matrix() {
        // Eigenvalues 1 +/- 2: one negative.
        let err = QuadraticObjective::new(
            &[vec![1.0, 2.0], vec![2.0, 1.0]],
            ParamVector::from([0.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn accepts_semi_definite_matrix() {
        // Rank-one projector: eigenvalues {0, 2}.
        QuadraticObjective::new(
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            ParamVector::from([0.0, 0.0]),
        )
        .unwrap();
    }

    #[test]
    fn init_uses_explicit_start() {
        let f1 = toy_f1()
            .with_start(ParamVector::from([5.1, -3.1]))
            .unwrap();
        assert_eq!(
            f1.init_params(&SeedPath::new(0)).as_slice(),
            &[5.1, -3.1]
        );
    }
}
