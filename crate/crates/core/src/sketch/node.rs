use rand::Rng;

use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;

/// In-place orthonormal Walsh-Hadamard transform. `v.len()` must be a power
/// of two.
pub fn fwht(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
}

/// Pairwise tensor sketch `R^n x R^n -> R^m` acting on `u (x) v` without
/// forming it: both inputs get independent random signs and an orthonormal
/// Hadamard transform, then `m` coordinate pairs of the rotated product are
/// sampled uniformly and rescaled by `n / sqrt(m)`.
#[derive(Debug, Clone)]
pub struct TensorSrhtNode {
    input_dim: usize,
    signs_left: Vec<f64>,
    signs_right: Vec<f64>,
    pairs: Vec<(u32, u32)>,
    scale: f64,
}

impl TensorSrhtNode {
    pub fn new(input_dim: usize, output_dim: usize, seed: RandomSeed) -> Self {
        assert!(input_dim.is_power_of_two());
        let mut rng = seed.rng();
        let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
        let signs_left = (0..input_dim).map(|_| sign(&mut rng)).collect();
        let signs_right = (0..input_dim).map(|_| sign(&mut rng)).collect();
        let pairs = (0..output_dim)
            .map(|_| {
                (
                    rng.random_range(0..input_dim) as u32,
                    rng.random_range(0..input_dim) as u32,
                )
            })
            .collect();
        TensorSrhtNode {
            input_dim,
            signs_left,
            signs_right,
            pairs,
            scale: input_dim as f64 / (output_dim as f64).sqrt(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.pairs.len()
    }

    fn rotate(&self, x: &[f64], signs: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(x.iter().zip(signs).map(|(a, s)| a * s));
        fwht(buf);
    }

    /// Writes the sketch of `u (x) v` into `out`. `scratch` holds two buffers
    /// that are reused across calls.
    pub fn apply(&self, u: &[f64], v: &[f64], out: &mut [f64], scratch: &mut (Vec<f64>, Vec<f64>)) {
        let (ru, rv) = scratch;
        self.rotate(u, &self.signs_left, ru);
        self.rotate(v, &self.signs_right, rv);
        for (o, &(a, b)) in out.iter_mut().zip(&self.pairs) {
            *o = self.scale * ru[a as usize] * rv[b as usize];
        }
    }

    /// The `m x n^2` matrix of this node, acting on row-major `u (x) v`.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.input_dim;
        let h = |a: usize, b: usize| {
            let sign = if (a & b).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            sign / (n as f64).sqrt()
        };
        let mut m = DenseMatrix::zeros(self.pairs.len(), n * n);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            for i in 0..n {
                let left = h(a as usize, i) * self.signs_left[i];
                for j in 0..n {
                    let right = h(b as usize, j) * self.signs_right[j];
                    m[(k, i * n + j)] = self.scale * left * right;
                }
            }
        }
        m
    }
}
