//! Shared engine behind the polynomial and Taylor-series row samplers.
//!
//! The feature matrix stacks the blocks `sqrt(a_w) X^{(x)w}`, `w = 0..=q`,
//! with column `c` scaled by a prefactor `g(x_c)`. To draw a row of `Phi (B^T B + lambda I)^{-1/2}`:
//!
//! 1. compress the right factor with a Gaussian `H` (`M = g . (..)^{-1/2} H`),
//! 2. sketch every block with the tensor-power sketch (`P_k` sketches
//!    `X^{(x)(q-k)}`), pick a column `j` of `M` by the mass of the sketched
//!    lifting times `M_j`, and a block degree `w` by its share of that mass,
//! 3. pick the tensor indices `i_1, ..., i_w` one at a time: first a hash
//!    bucket of rows by a compressed mass estimate, then a row within the
//!    bucket by its exact sketched mass, shrinking `D = diag(M_j) diag(X_i)...`
//!    as indices are fixed,
//! 4. replay step 3 for the realized tuple under every column `j` to get the
//!    exact probability `beta / s` of having drawn it.
//!
//! The polynomial kernel is the special case with all coefficient mass on
//! block `q` and `g = 1`; it runs through the same code path, so both
//! samplers consume randomness identically.

use std::sync::Arc;

use dashmap::DashMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{gaussian_matrix, regularized_inv_sqrt_apply, DenseMatrix};
use crate::rng::{categorical, RandomSeed};
use crate::sampler::{FeatureIndex, SamplerConfig, SamplingMatrix, WeightedSample};
use crate::sketch::build_sketch_tree;
use crate::sparse::{SparseDataMatrix, SparseVector};

/// Description of a lifting: `Phi_c = g_c * (sqrt(a_0) x_c^{(x)0} (+) ... (+) sqrt(a_q) x_c^{(x)q})`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lifting<'a> {
    pub x: &'a SparseDataMatrix,
    /// `ln a_w` for `w = 0..=q`; `-inf` marks a zero coefficient.
    pub log_coefficients: &'a [f64],
    /// Per-point prefactor `g(x_c)`; `None` means one.
    pub prefactor: Option<&'a [f64]>,
}

impl Lifting<'_> {
    pub fn degree(&self) -> usize {
        self.log_coefficients.len() - 1
    }

    fn validate(&self) -> Result<()> {
        if self.log_coefficients.is_empty() {
            return Err(Error::invalid("lifting needs at least one coefficient"));
        }
        if self.log_coefficients.iter().any(|c| c.is_nan() || *c == f64::INFINITY) {
            return Err(Error::invalid("lifting coefficients must be finite and nonnegative"));
        }
        if self.log_coefficients.iter().all(|c| *c == f64::NEG_INFINITY) {
            return Err(Error::invalid("lifting has no positive coefficient"));
        }
        if let Some(g) = self.prefactor {
            if g.len() != self.x.n_cols() {
                return Err(Error::invalid("prefactor length differs from the number of points"));
            }
        }
        Ok(())
    }

    fn prefactor_at(&self, c: usize) -> f64 {
        self.prefactor.map_or(1.0, |g| g[c])
    }

    /// `||Phi||_F^2 = sum_c g_c^2 sum_w a_w ||x_c||^{2w}`.
    pub fn frobenius_sq(&self) -> f64 {
        self.x
            .column_norms_sq()
            .iter()
            .enumerate()
            .map(|(c, &r)| {
                let g = self.prefactor_at(c);
                let series: f64 = if r == 0.0 {
                    self.log_coefficients[0].exp()
                } else {
                    self.log_coefficients
                        .iter()
                        .enumerate()
                        .map(|(w, &la)| (la + w as f64 * r.ln()).exp())
                        .sum()
                };
                g * g * series
            })
            .sum()
    }
}

/// Mass of one hash bucket under a fixed stage, plus its rows.
#[derive(Debug, Clone)]
struct BucketMass {
    bucket: usize,
    mass: f64,
    /// Rows of the bucket with their exact sketched mass, by increasing row.
    rows: Vec<(usize, f64)>,
    row_total: f64,
}

/// The two-level distribution used at one step of a walk.
#[derive(Debug, Clone)]
struct StageDistribution {
    /// Buckets with positive estimated mass, by increasing bucket id.
    buckets: Vec<BucketMass>,
    total: f64,
}

impl StageDistribution {
    fn bucket(&self, id: usize) -> Option<&BucketMass> {
        self.buckets
            .binary_search_by_key(&id, |b| b.bucket)
            .ok()
            .map(|p| &self.buckets[p])
    }

    /// Log of the probability that this stage picks `row` in bucket `bucket`.
    fn log_probability(&self, bucket: usize, row: usize) -> f64 {
        let Some(b) = self.bucket(bucket) else {
            return f64::NEG_INFINITY;
        };
        let Ok(p) = b.rows.binary_search_by_key(&row, |r| r.0) else {
            return f64::NEG_INFINITY;
        };
        let row_mass = b.rows[p].1;
        if row_mass <= 0.0 || b.row_total <= 0.0 || b.mass <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (b.mass / self.total).ln() + (row_mass / b.row_total).ln()
    }
}

/// `(k, sorted prefix)`; one entry holds the stage for every column `j`.
type StageKey = (usize, Vec<usize>);

/// Random rows of `d` split into hash buckets, each with a Gaussian
/// compressor `G_r` stored through its Gram matrix `G_r^T G_r`.
#[derive(Debug, Clone)]
pub(crate) struct BucketPartition {
    pub bucket_of_row: Vec<usize>,
    /// Nonempty buckets by increasing id: `(id, rows, gram)`.
    pub members: Vec<(usize, Vec<usize>, DenseMatrix)>,
    #[cfg_attr(not(test), allow(dead_code))]
    compress_dim: usize,
    #[cfg_attr(not(test), allow(dead_code))]
    seed: RandomSeed,
}

impl BucketPartition {
    fn new(d: usize, bucket_count: usize, compress_dim: usize, seed: RandomSeed) -> Result<Self> {
        let hash = seed.derive("bucket-hash", 0);
        let bucket_of_row: Vec<usize> = (0..d).map(|i| hash.hash_to(i as u64, bucket_count)).collect();
        let mut by_bucket: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &b) in bucket_of_row.iter().enumerate() {
            by_bucket.entry(b).or_default().push(i);
        }
        let members = by_bucket
            .into_iter()
            .map(|(b, rows)| {
                let g = Self::compressor(seed, b, compress_dim, rows.len())?;
                let gram = g.transpose() * &g;
                Ok((b, rows, gram))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BucketPartition {
            bucket_of_row,
            members,
            compress_dim,
            seed,
        })
    }

    fn compressor(seed: RandomSeed, bucket: usize, rows: usize, cols: usize) -> Result<DenseMatrix> {
        gaussian_matrix(rows, cols, seed.derive("bucket-compressor", bucket as u64))
    }

    #[cfg(test)]
    /// The explicit compressed data `W_r = G_r X_{bucket rows}` (`n' x n`).
    pub fn compressed_data(&self, x: &SparseDataMatrix, position: usize) -> Result<DenseMatrix> {
        let (b, rows, _) = &self.members[position];
        let g = Self::compressor(self.seed, *b, self.compress_dim, rows.len())?;
        let mut xb = DenseMatrix::zeros(rows.len(), x.n_cols());
        for (k, &i) in rows.iter().enumerate() {
            let (cols, vals) = x.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                xb[(k, c)] = v;
            }
        }
        Ok(g * xb)
    }
}

/// Everything a walk needs, computed once per sampler call and then shared
/// read-only across parallel walks.
pub(crate) struct PreparedLifting<'a> {
    lifting: Lifting<'a>,
    /// `n x d'`, prefactor applied.
    m: DenseMatrix,
    /// `R_k`, `k = 0..=q`, with `R_k^T R_k = P_k^T P_k`, where the `m' x n`
    /// matrix `P_k` sketches `X^{(x)(q-k)} (x) E_1^{(x)k}`. Only quadratic
    /// forms in `P_k` are ever needed, so the triangular factor (at most `n`
    /// rows) stands in for it.
    factors: Vec<DenseMatrix>,
    /// `block_mass[j][w] = a_w ||P_{q-w} M_j||^2`.
    block_mass: Vec<Vec<f64>>,
    column_probability: Vec<f64>,
    pub buckets: BucketPartition,
    stage_cache: DashMap<StageKey, Arc<Vec<StageDistribution>>>,
    beta_cache: DashMap<Vec<usize>, f64>,
    s: usize,
}

impl<'a> PreparedLifting<'a> {
    pub fn new(
        lifting: Lifting<'a>,
        b: &DenseMatrix,
        lambda: f64,
        s: usize,
        config: &SamplerConfig,
        seed: RandomSeed,
    ) -> Result<Self> {
        lifting.validate()?;
        config.validate()?;
        if s == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let x = lifting.x;
        let (d, n) = (x.n_rows(), x.n_cols());
        if b.nrows() > 0 && b.ncols() != n {
            return Err(Error::invalid(format!("B has {} columns, expected {n}", b.ncols())));
        }
        let q = lifting.degree();

        let d_proj = config.projection_dim(q, n);
        let h = gaussian_matrix(n, d_proj, seed.derive("projection", 0))?;
        let mut m = regularized_inv_sqrt_apply(b, lambda, &h)?;
        if let Some(g) = lifting.prefactor {
            for (c, gc) in g.iter().enumerate() {
                m.row_mut(c).scale_mut(*gc);
            }
        }

        let sketches = if q == 0 {
            vec![DenseMatrix::from_element(1, n, 1.0)]
        } else {
            let m_sketch = config.sketch_dim(q, n);
            let tree = build_sketch_tree(
                d,
                q,
                m_sketch,
                config.internal_dim(m_sketch),
                config.osnap_sparsity,
                seed.derive("tensor-sketch", 0),
            )?;
            tree.matrix_family(x)?
        };
        let factors: Vec<DenseMatrix> = sketches.into_par_iter().map(gram_factor).collect();

        let mut block_mass = vec![vec![0.0; q + 1]; d_proj];
        for (w, &la) in lifting.log_coefficients.iter().enumerate() {
            if la == f64::NEG_INFINITY {
                continue;
            }
            let a = la.exp();
            let pm = &factors[q - w] * &m;
            for (j, col) in pm.column_iter().enumerate() {
                block_mass[j][w] = a * col.norm_squared();
            }
        }
        let column_mass: Vec<f64> = block_mass.iter().map(|b| b.iter().sum()).collect();
        let total: f64 = column_mass.iter().sum();
        if !total.is_finite() {
            return Err(Error::numerical("column distribution", "non-finite sketched mass"));
        }
        if total <= 0.0 {
            return Err(Error::DegenerateInput(
                "sketched lifting has zero mass; the data matrix is zero".into(),
            ));
        }
        let column_probability = column_mass.iter().map(|c| c / total).collect();

        let bucket_count = ((q as f64).powf(1.5) * s as f64).ceil().max(1.0) as usize;
        let buckets = BucketPartition::new(d, bucket_count, config.bucket_dim(q, n), seed.derive("buckets", 0))?;

        Ok(PreparedLifting {
            lifting,
            m,
            factors,
            block_mass,
            column_probability,
            buckets,
            stage_cache: DashMap::new(),
            beta_cache: DashMap::new(),
            s,
        })
    }

    #[cfg(test)]
    pub fn factor(&self, k: usize) -> &DenseMatrix {
        &self.factors[k]
    }

    /// `u = X_{i_1} . ... . X_{i_k}` (entrywise) as a dense vector over points.
    fn prefix_product(&self, prefix: &[usize]) -> Vec<f64> {
        let x = self.lifting.x;
        let mut u = vec![1.0; x.n_cols()];
        for &i in prefix {
            let (cols, vals) = x.row(i);
            let mut next = vec![0.0; u.len()];
            for (&c, &v) in cols.iter().zip(vals) {
                next[c] = u[c] * v;
            }
            u = next;
        }
        u
    }

    #[cfg(test)]
    /// `v = M_j . X_{i_1} . ... . X_{i_k}`.
    fn diagonal(&self, j: usize, prefix: &[usize]) -> Vec<f64> {
        let u = self.prefix_product(prefix);
        u.iter().zip(self.m.column(j).iter()).map(|(a, b)| a * b).collect()
    }

    /// Masses of `X_i diag(M_j . u) P_k^T` for every row `i`, every bucket
    /// and every column `j`, where `u` is the prefix product.
    fn compute_stage(&self, k: usize, prefix: &[usize]) -> Vec<StageDistribution> {
        let x = self.lifting.x;
        let r = &self.factors[k];
        let cols_j = self.m.ncols();
        let u = self.prefix_product(prefix);

        let mut tables: Vec<StageDistribution> = (0..cols_j)
            .map(|_| StageDistribution {
                buckets: Vec::new(),
                total: 0.0,
            })
            .collect();
        for (bucket, rows, gram) in &self.buckets.members {
            // `y[a]` is `P_k diag(x_a . u) M`, one column per `j`.
            let mut y: Vec<Option<DenseMatrix>> = Vec::with_capacity(rows.len());
            for &i in rows {
                let (cols, vals) = x.row(i);
                let support: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .map(|(&c, &v)| (c, v * u[c]))
                    .filter(|e| e.1 != 0.0)
                    .collect();
                if support.is_empty() {
                    y.push(None);
                    continue;
                }
                let scaled =
                    DenseMatrix::from_fn(support.len(), cols_j, |t, j| support[t].1 * self.m[(support[t].0, j)]);
                let idx: Vec<usize> = support.iter().map(|e| e.0).collect();
                y.push(Some(r.select_columns(&idx) * scaled));
            }
            let live: Vec<usize> = (0..rows.len()).filter(|&a| y[a].is_some()).collect();
            if live.is_empty() {
                continue;
            }
            let mut mass = vec![0.0; cols_j];
            for &a in &live {
                for &b in &live {
                    let g = gram[(a, b)];
                    if g == 0.0 {
                        continue;
                    }
                    let (ya, yb) = (y[a].as_ref().unwrap(), y[b].as_ref().unwrap());
                    for (j, m) in mass.iter_mut().enumerate() {
                        *m += g * ya.column(j).dot(&yb.column(j));
                    }
                }
            }
            let row_mass: Vec<Vec<f64>> = live
                .iter()
                .map(|&a| y[a].as_ref().unwrap().column_iter().map(|c| c.norm_squared()).collect())
                .collect();
            for (j, table) in tables.iter_mut().enumerate() {
                let m = mass[j].max(0.0);
                if m <= 0.0 {
                    continue;
                }
                let rows_j: Vec<(usize, f64)> = live
                    .iter()
                    .zip(&row_mass)
                    .map(|(&a, rm)| (rows[a], rm[j]))
                    .filter(|e| e.1 > 0.0)
                    .collect();
                let row_total = rows_j.iter().map(|e| e.1).sum();
                table.total += m;
                table.buckets.push(BucketMass {
                    bucket: *bucket,
                    mass: m,
                    rows: rows_j,
                    row_total,
                });
            }
        }
        tables
    }

    fn stage(&self, k: usize, prefix: &[usize]) -> Arc<Vec<StageDistribution>> {
        let mut sorted = prefix.to_vec();
        sorted.sort_unstable();
        let key = (k, sorted);
        if let Some(hit) = self.stage_cache.get(&key) {
            return hit.clone();
        }
        let tables = Arc::new(self.compute_stage(k, &key.1));
        self.stage_cache.insert(key, tables.clone());
        tables
    }

    fn log_block_share(&self, j: usize, w: usize) -> f64 {
        let total: f64 = self.block_mass[j].iter().sum();
        (self.block_mass[j][w] / total).ln()
    }

    /// Exact probability that a single walk returns `indices`.
    pub fn draw_probability(&self, indices: &[usize]) -> Result<f64> {
        if let Some(hit) = self.beta_cache.get(indices) {
            return Ok(*hit);
        }
        let q = self.lifting.degree();
        let w = indices.len();
        let mut logs = Vec::with_capacity(self.column_probability.len());
        for (j, &pj) in self.column_probability.iter().enumerate() {
            if pj <= 0.0 {
                continue;
            }
            let mut lt = pj.ln() + self.log_block_share(j, w);
            for b in 0..w {
                if lt == f64::NEG_INFINITY {
                    break;
                }
                let i = indices[b];
                let dist = &self.stage(b + 1 + q - w, &indices[..b])[j];
                lt += dist.log_probability(self.buckets.bucket_of_row[i], i);
            }
            if lt > f64::NEG_INFINITY {
                logs.push(lt);
            }
        }
        let prob = log_sum_exp(&logs);
        if !(prob > 0.0 && prob.is_finite()) {
            return Err(Error::numerical(
                "draw probability",
                format!("probability {prob} for sampled index {indices:?}"),
            ));
        }
        self.beta_cache.insert(indices.to_vec(), prob);
        Ok(prob)
    }

    fn walk(&self, j: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<usize>> {
        let q = self.lifting.degree();
        let w = categorical(rng, &self.block_mass[j])
            .ok_or_else(|| Error::numerical("block degree", format!("column {j} has no block mass")))?;
        let mut indices = Vec::with_capacity(w);
        for a in 1..=w {
            let tables = self.stage(a + q - w, &indices);
            let dist = &tables[j];
            let masses: Vec<f64> = dist.buckets.iter().map(|b| b.mass).collect();
            let t = categorical(rng, &masses)
                .ok_or_else(|| Error::numerical("bucket draw", format!("stage {a} has zero mass")))?;
            let bucket = &dist.buckets[t];
            let rows: Vec<f64> = bucket.rows.iter().map(|r| r.1).collect();
            let r = categorical(rng, &rows)
                .ok_or_else(|| Error::numerical("row draw", format!("bucket {} has zero row mass", bucket.bucket)))?;
            indices.push(bucket.rows[r].0);
        }
        Ok(indices)
    }

    /// Draws the `s` samples. Walks run in parallel, each on its own stream.
    pub fn draw(&self, seed: RandomSeed, kernel: Option<KernelSpec>) -> Result<SamplingMatrix> {
        let mut rng = seed.stream("column-draw", 0);
        let columns = (0..self.s)
            .map(|_| categorical(&mut rng, &self.column_probability))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::numerical("column draw", "empty column distribution"))?;
        let s = self.s;
        let samples = columns
            .par_iter()
            .enumerate()
            .map(|(l, &j)| {
                let mut rng = seed.stream("walk", l as u64);
                let indices = self.walk(j, &mut rng)?;
                let p = self.draw_probability(&indices)?;
                Ok(WeightedSample::new(FeatureIndex::new(indices), p, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SamplingMatrix::new(samples, kernel))
    }
}

/// A matrix with the same Gram matrix as `p` and at most `p.ncols()` rows.
fn gram_factor(p: DenseMatrix) -> DenseMatrix {
    if p.nrows() <= p.ncols() {
        return p;
    }
    p.qr().r()
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let Some(max) = logs.iter().copied().reduce(f64::max) else {
        return 0.0;
    };
    // Neumaier-compensated sum of the rescaled terms.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &l in logs {
        let t = (l - max).exp();
        let next = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - next) + t;
        } else {
            comp += (t - next) + sum;
        }
        sum = next;
    }
    max.exp() * (sum + comp)
}

/// `g_c sqrt(a_w) prod_a X[i_a, c]` scaled by each sample's weight.
pub(crate) fn embed_lifted(lifting: &Lifting<'_>, pi: &SamplingMatrix) -> Result<DenseMatrix> {
    lifting.validate()?;
    let x = lifting.x;
    let (d, n) = (x.n_rows(), x.n_cols());
    check_indices(pi, d, lifting.degree())?;
    let rows: Vec<Vec<(usize, f64)>> = pi
        .samples
        .par_iter()
        .map(|sample| {
            let w = sample.index.block_degree();
            let scale = sample.weight * (0.5 * lifting.log_coefficients[w]).exp();
            if scale == 0.0 {
                return Vec::new();
            }
            let mut entries: Vec<(usize, f64)> = match sample.index.indices.split_first() {
                None => (0..n).map(|c| (c, scale)).collect(),
                Some((&first, rest)) => {
                    let (cols, vals) = x.row(first);
                    let mut e: Vec<(usize, f64)> = cols.iter().zip(vals).map(|(&c, &v)| (c, scale * v)).collect();
                    for &i in rest {
                        for entry in e.iter_mut() {
                            entry.1 *= x.get(i, entry.0);
                        }
                        e.retain(|entry| entry.1 != 0.0);
                    }
                    e
                }
            };
            if lifting.prefactor.is_some() {
                for entry in entries.iter_mut() {
                    entry.1 *= lifting.prefactor_at(entry.0);
                }
            }
            entries
        })
        .collect();
    let mut z = DenseMatrix::zeros(pi.len(), n);
    for (l, entries) in rows.into_iter().enumerate() {
        for (c, v) in entries {
            z[(l, c)] = v;
        }
    }
    Ok(z)
}

/// Embedding of a single new point with the training sampler.
pub(crate) fn embed_lifted_point(
    log_coefficients: &[f64],
    prefactor: f64,
    point: &SparseVector,
    pi: &SamplingMatrix,
) -> Result<Vec<f64>> {
    check_indices(pi, point.dim(), log_coefficients.len() - 1)?;
    Ok(pi
        .samples
        .iter()
        .map(|sample| {
            let w = sample.index.block_degree();
            let product: f64 = sample.index.indices.iter().map(|&i| point.get(i)).product();
            sample.weight * (0.5 * log_coefficients[w]).exp() * prefactor * product
        })
        .collect())
}

fn check_indices(pi: &SamplingMatrix, d: usize, q: usize) -> Result<()> {
    for sample in &pi.samples {
        if sample.index.block_degree() > q {
            return Err(Error::invalid(format!(
                "sample has block degree {} but the lifting stops at {q}",
                sample.index.block_degree()
            )));
        }
        if let Some(&bad) = sample.index.indices.iter().find(|&&i| i >= d) {
            return Err(Error::invalid(format!(
                "feature index {bad} out of range for dimension {d}"
            )));
        }
    }
    Ok(())
}
