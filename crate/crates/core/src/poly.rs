//! Row sampling and embedding for the polynomial kernel `<x, y>^q`, whose
//! feature matrix is the `d^q x n` tensor power `X^{(x)q}`.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;
use crate::sampler::{RowSampler, SamplerConfig, SamplingMatrix};
use crate::sparse::{SparseDataMatrix, SparseVector};
use crate::walk::{embed_lifted, embed_lifted_point, Lifting, PreparedLifting};

fn monomial_coefficients(q: usize) -> Vec<f64> {
    let mut c = vec![f64::NEG_INFINITY; q + 1];
    c[q] = 0.0;
    c
}

/// Draws `s` rows of `X^{(x)q} (B^T B + lambda I)^{-1/2}`, each with
/// probability at least a quarter of its share of the squared Frobenius
/// norm (with high probability over the internal sketches).
pub fn poly_row_sampler(
    x: &SparseDataMatrix,
    q: usize,
    b: &DenseMatrix,
    lambda: f64,
    s: usize,
    config: &SamplerConfig,
) -> Result<SamplingMatrix> {
    PolynomialSampler::new(x, q, config.clone())?.sample(b, lambda, s, config.seed)
}

fn degree_of(pi: &SamplingMatrix) -> Result<usize> {
    let q = match &pi.kernel {
        Some(KernelSpec::Polynomial { degree }) => *degree,
        Some(KernelSpec::Taylor(_)) => {
            return Err(Error::invalid(
                "sampler was drawn for a Taylor kernel, not a polynomial one",
            ))
        }
        None => pi.max_block_degree(),
    };
    if pi.samples.iter().any(|s| s.index.block_degree() != q) {
        return Err(Error::invalid(format!("polynomial samples must all have degree {q}")));
    }
    Ok(q)
}

/// `Z = Pi X^{(x)q}`: `Z[l, c] = weight_l * prod_a X[i_a, c]`.
pub fn poly_embed_rows(x: &SparseDataMatrix, pi: &SamplingMatrix) -> Result<DenseMatrix> {
    let coeffs = monomial_coefficients(degree_of(pi)?);
    embed_lifted(
        &Lifting {
            x,
            log_coefficients: &coeffs,
            prefactor: None,
        },
        pi,
    )
}

/// `Pi x^{(x)q}` for a point outside the training set.
pub fn poly_embed_out_of_sample(x_new: &SparseVector, pi: &SamplingMatrix) -> Result<Vec<f64>> {
    let coeffs = monomial_coefficients(degree_of(pi)?);
    embed_lifted_point(&coeffs, 1.0, x_new, pi)
}

/// [`RowSampler`] for `Phi = X^{(x)q}`.
#[derive(Debug, Clone)]
pub struct PolynomialSampler<'a> {
    x: &'a SparseDataMatrix,
    degree: usize,
    coefficients: Vec<f64>,
    config: SamplerConfig,
}

impl<'a> PolynomialSampler<'a> {
    pub fn new(x: &'a SparseDataMatrix, degree: usize, config: SamplerConfig) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        config.validate()?;
        Ok(PolynomialSampler {
            x,
            degree,
            coefficients: monomial_coefficients(degree),
            config,
        })
    }

    fn lifting(&self) -> Lifting<'_> {
        Lifting {
            x: self.x,
            log_coefficients: &self.coefficients,
            prefactor: None,
        }
    }
}

impl RowSampler for PolynomialSampler<'_> {
    fn n_points(&self) -> usize {
        self.x.n_cols()
    }

    fn frobenius_sq(&self) -> f64 {
        self.lifting().frobenius_sq()
    }

    fn sample(&self, b: &DenseMatrix, lambda: f64, s: usize, seed: RandomSeed) -> Result<SamplingMatrix> {
        let prepared = PreparedLifting::new(self.lifting(), b, lambda, s, &self.config, seed)?;
        prepared.draw(seed, Some(KernelSpec::Polynomial { degree: self.degree }))
    }

    fn embed(&self, pi: &SamplingMatrix) -> Result<DenseMatrix> {
        poly_embed_rows(self.x, pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{weight_consistency_check, FeatureIndex, WeightedSample};
    use crate::sketch::dense_tensor_power;

    fn sampler_of(rows: &[(Vec<usize>, f64)]) -> SamplingMatrix {
        SamplingMatrix::new(
            rows.iter()
                .map(|(idx, w)| WeightedSample {
                    index: FeatureIndex::new(idx.clone()),
                    weight: *w,
                    claimed_probability: 1.0,
                })
                .collect(),
            None,
        )
    }

    #[test]
    fn identity_sampler_reproduces_data() {
        let x = SparseDataMatrix::from_columns(3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, -3.0)]]).unwrap();
        let pi = sampler_of(&[(vec![0], 1.0), (vec![1], 1.0), (vec![2], 1.0)]);
        assert_eq!(poly_embed_rows(&x, &pi).unwrap(), x.to_dense());
    }

    #[test]
    fn product_entry() {
        let x = SparseDataMatrix::from_columns(2, vec![vec![(0, 3.0), (1, 5.0)]]).unwrap();
        let pi = sampler_of(&[(vec![0, 1], 2.0)]);
        assert_eq!(poly_embed_rows(&x, &pi).unwrap()[(0, 0)], 30.0);
        let out = poly_embed_out_of_sample(&x.column_vector(0), &pi).unwrap();
        assert_eq!(out, vec![30.0]);
        assert_eq!(
            poly_embed_out_of_sample(&SparseVector::zeros(2), &pi).unwrap(),
            vec![0.0]
        );
        let bad = sampler_of(&[(vec![0, 2], 1.0)]);
        assert!(poly_embed_rows(&x, &bad).is_err());
        assert!(poly_embed_out_of_sample(&SparseVector::zeros(3), &bad).is_ok());
        assert!(poly_embed_out_of_sample(&SparseVector::zeros(1), &bad).is_err());
    }

    #[test]
    fn embedding_matches_dense_tensor_power() {
        let x = SparseDataMatrix::from_columns(
            3,
            vec![
                vec![(0, 0.5), (1, -1.0)],
                vec![(2, 2.0)],
                vec![(0, 1.5), (1, 0.5), (2, -0.5)],
            ],
        )
        .unwrap();
        let pi = sampler_of(&[(vec![0, 1], 0.5), (vec![2, 2], 1.5), (vec![1, 0], -2.0)]);
        let z = poly_embed_rows(&x, &pi).unwrap();
        for c in 0..3 {
            let dense: Vec<f64> = (0..3).map(|r| x.get(r, c)).collect();
            let t = dense_tensor_power(&dense, 2).unwrap();
            for (l, s) in pi.samples.iter().enumerate() {
                assert!((z[(l, c)] - s.weight * t[s.index.tensor_offset(3)]).abs() < 1e-14);
            }
            let out = poly_embed_out_of_sample(&x.column_vector(c), &pi).unwrap();
            for l in 0..3 {
                assert_eq!(out[l], z[(l, c)]);
            }
        }
    }

    #[test]
    fn single_nonzero_entry_forces_index() {
        let x = SparseDataMatrix::from_columns(3, vec![vec![], vec![(1, 0.8)], vec![]]).unwrap();
        let b = DenseMatrix::zeros(0, 3);
        let pi = poly_row_sampler(&x, 2, &b, 1.0, 50, &SamplerConfig::with_seed(3)).unwrap();
        assert_eq!(pi.len(), 50);
        for s in &pi.samples {
            assert_eq!(s.index.indices, vec![1, 1]);
            assert!(weight_consistency_check(s, 50));
        }
    }

    #[test]
    fn zero_data_is_degenerate() {
        let x = SparseDataMatrix::from_columns(2, vec![vec![], vec![]]).unwrap();
        let b = DenseMatrix::zeros(0, 2);
        let err = poly_row_sampler(&x, 2, &b, 1.0, 5, &SamplerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn deterministic_under_seed() {
        let x = SparseDataMatrix::from_columns(
            3,
            vec![
                vec![(0, 0.5), (1, -1.0)],
                vec![(2, 2.0)],
                vec![(0, 1.5), (1, 0.5), (2, -0.5)],
            ],
        )
        .unwrap();
        let b = DenseMatrix::from_row_slice(1, 3, &[0.3, -0.2, 1.0]);
        let cfg = SamplerConfig::with_seed(17);
        let a = poly_row_sampler(&x, 3, &b, 0.4, 40, &cfg).unwrap();
        let c = poly_row_sampler(&x, 3, &b, 0.4, 40, &cfg).unwrap();
        assert_eq!(a, c);
    }
}
