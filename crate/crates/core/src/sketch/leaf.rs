use rand::seq::index::sample;
use rand::Rng;

use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;

/// Sparse oblivious embedding `R^d -> R^m`: every input coordinate is sent to
/// `sparsity` distinct output rows with independent random signs, each scaled
/// by `1/sqrt(sparsity)`.
#[derive(Debug, Clone)]
pub struct OsnapLeaf {
    input_dim: usize,
    output_dim: usize,
    sparsity: usize,
    rows: Vec<u32>,
    signs: Vec<f64>,
}

impl OsnapLeaf {
    pub fn new(input_dim: usize, output_dim: usize, sparsity: usize, seed: RandomSeed) -> Self {
        let sparsity = sparsity.min(output_dim);
        let scale = 1.0 / (sparsity as f64).sqrt();
        let mut rng = seed.rng();
        let mut rows = Vec::with_capacity(input_dim * sparsity);
        let mut signs = Vec::with_capacity(input_dim * sparsity);
        for _ in 0..input_dim {
            let mut picked: Vec<usize> = sample(&mut rng, output_dim, sparsity).into_vec();
            picked.sort_unstable();
            for r in picked {
                rows.push(r as u32);
                signs.push(if rng.random::<bool>() { scale } else { -scale });
            }
        }
        OsnapLeaf {
            input_dim,
            output_dim,
            sparsity,
            rows,
            signs,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Writes `S x` into `out` for a sparse `x`.
    pub fn apply_sparse(&self, indices: &[usize], values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&i, &x) in indices.iter().zip(values) {
            let base = i * self.sparsity;
            for k in base..base + self.sparsity {
                out[self.rows[k] as usize] += self.signs[k] * x;
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.output_dim, self.input_dim);
        for i in 0..self.input_dim {
            for k in i * self.sparsity..(i + 1) * self.sparsity {
                m[(self.rows[k] as usize, i)] += self.signs[k];
            }
        }
        m
    }
}
