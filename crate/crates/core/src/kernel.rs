use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::sparse::{sparse_dot, SparseDataMatrix, SparseVector};
use crate::taylor::TaylorKernelSpec;

/// The kernels the samplers can embed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(x, y) = <x, y>^degree`.
    Polynomial { degree: usize },
    /// Dot-product kernels with a nonnegative Taylor series, optionally
    /// times a per-point prefactor (the Gaussian).
    Taylor(TaylorKernelSpec),
}

impl KernelSpec {
    pub fn polynomial(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        Ok(KernelSpec::Polynomial { degree })
    }

    /// Largest block degree a sampled feature can have.
    pub fn degree(&self) -> usize {
        match self {
            KernelSpec::Polynomial { degree } => *degree,
            KernelSpec::Taylor(t) => t.degree(),
        }
    }

    /// Kernel value between two points. For Taylor kernels this is the
    /// untruncated kernel where a closed form exists.
    pub fn evaluate(&self, x: &SparseVector, y: &SparseVector) -> f64 {
        match self {
            KernelSpec::Polynomial { degree } => x.dot(y).powi(*degree as i32),
            KernelSpec::Taylor(t) => t.evaluate(x, y),
        }
    }

    /// `n_a x n_b` cross-kernel between the columns of `a` and `b`.
    pub fn cross_matrix(&self, a: &SparseDataMatrix, b: &SparseDataMatrix) -> Result<DenseMatrix> {
        if a.n_rows() != b.n_rows() {
            return Err(Error::invalid(format!(
                "point dimensions differ: {} vs {}",
                a.n_rows(),
                b.n_rows()
            )));
        }
        let norms_a = a.column_norms_sq();
        let norms_b = b.column_norms_sq();
        Ok(DenseMatrix::from_fn(a.n_cols(), b.n_cols(), |i, j| {
            let (ia, va) = a.column(i);
            let (ib, vb) = b.column(j);
            let dot = sparse_dot(ia, va, ib, vb);
            match self {
                KernelSpec::Polynomial { degree } => dot.powi(*degree as i32),
                KernelSpec::Taylor(t) => t.evaluate_from_dot(dot, norms_a[i], norms_b[j]),
            }
        }))
    }

    /// `n x n` kernel matrix of the columns of `x`.
    pub fn kernel_matrix(&self, x: &SparseDataMatrix) -> DenseMatrix {
        let k = self.cross_matrix(x, x).expect("same dimensions");
        (&k + k.transpose()) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_kernel_matrix() {
        let x = SparseDataMatrix::from_columns(2, vec![vec![(0, 1.0), (1, 2.0)], vec![(1, -1.0)]]).unwrap();
        let k = KernelSpec::polynomial(2).unwrap().kernel_matrix(&x);
        assert_eq!(k[(0, 0)], 25.0);
        assert_eq!(k[(0, 1)], 4.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!(KernelSpec::polynomial(0).is_err());
    }

    #[test]
    fn serializes_with_family_tag() {
        let json = serde_json::to_string(&KernelSpec::Polynomial { degree: 3 }).unwrap();
        assert_eq!(json, r#"{"family":"polynomial","degree":3}"#);
    }
}
