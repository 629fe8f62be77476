//! Dot-product kernels `k(x, y) = g(x) g(y) sum_j a_j <x, y>^j` through their
//! truncated Taylor lifting, with the Gaussian `a_j = 1/j!`,
//! `g(x) = exp(-|x|^2/2)` as the main instance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;
use crate::sampler::{block_start, FeatureIndex, RowSampler, SamplerConfig, SamplingMatrix};
use crate::sketch::DENSE_ENTRY_LIMIT;
use crate::sparse::{sparse_dot, SparseDataMatrix, SparseVector};
use crate::walk::{embed_lifted, embed_lifted_point, Lifting, PreparedLifting};

/// Remainder threshold used by [`truncation_degree`].
pub const TRUNCATION_TOLERANCE: f64 = 1e-9;

/// Which series the coefficients come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorSeries {
    /// `a_j = 1/j!`, prefactor `exp(-|x|^2/2)`.
    Gaussian,
    /// `a_j = 2^{-j-1}`, i.e. `1/(2 - <x, y>)`.
    InversePolynomial,
    /// Caller-supplied `a_0..=a_q`, no prefactor.
    Custom { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorKernelSpec {
    pub series: TaylorSeries,
    degree: usize,
    /// Bound on `|x|^2` for every point.
    pub radius: Option<f64>,
}

fn ln_factorial(j: usize) -> f64 {
    (1..=j).map(|k| (k as f64).ln()).sum()
}

impl TaylorKernelSpec {
    /// Gaussian kernel truncated at degree `q`, for data with `|x|^2 <= radius`.
    pub fn gaussian(q: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "radius must be finite and nonnegative, got {radius}"
            )));
        }
        Ok(TaylorKernelSpec {
            series: TaylorSeries::Gaussian,
            degree: q,
            radius: Some(radius),
        })
    }

    /// Gaussian kernel with `q = truncation_degree(radius, n, safety)`.
    pub fn gaussian_for(radius: f64, n: usize, safety: f64) -> Result<Self> {
        Self::gaussian(truncation_degree(radius, n, safety), radius)
    }

    pub fn inverse_polynomial(q: usize) -> Self {
        TaylorKernelSpec {
            series: TaylorSeries::InversePolynomial,
            degree: q,
            radius: None,
        }
    }

    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("need at least one Taylor coefficient"));
        }
        if coefficients.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("Taylor coefficients must be finite and nonnegative"));
        }
        if coefficients.iter().all(|a| *a == 0.0) {
            return Err(Error::invalid("at least one Taylor coefficient must be positive"));
        }
        Ok(TaylorKernelSpec {
            degree: coefficients.len() - 1,
            series: TaylorSeries::Custom { coefficients },
            radius: None,
        })
    }

    /// `a_q = 1`, everything else zero: the polynomial kernel `<x, y>^q`.
    pub fn point_mass(q: usize) -> Self {
        let mut c = vec![0.0; q + 1];
        c[q] = 1.0;
        Self::from_coefficients(c).expect("valid point mass")
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = Some(radius);
        self
    }

    /// Truncation degree `q`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `ln a_j` for `j = 0..=q`, `-inf` for zero coefficients.
    pub fn log_coefficients(&self) -> Vec<f64> {
        (0..=self.degree)
            .map(|j| match &self.series {
                TaylorSeries::Gaussian => -ln_factorial(j),
                TaylorSeries::InversePolynomial => -((j + 1) as f64) * std::f64::consts::LN_2,
                TaylorSeries::Custom { coefficients } => coefficients[j].ln(),
            })
            .collect()
    }

    /// `g(x)` as a function of `|x|^2`.
    pub fn prefactor(&self, norm_sq: f64) -> f64 {
        match self.series {
            TaylorSeries::Gaussian => (-0.5 * norm_sq).exp(),
            _ => 1.0,
        }
    }

    /// Untruncated kernel from `<x, y>`, `|x|^2`, `|y|^2`. Custom series have
    /// no closed form and use the truncated sum.
    pub fn evaluate_from_dot(&self, dot: f64, norm_x_sq: f64, norm_y_sq: f64) -> f64 {
        match self.series {
            TaylorSeries::Gaussian => (-0.5 * (norm_x_sq + norm_y_sq - 2.0 * dot).max(0.0)).exp(),
            TaylorSeries::InversePolynomial if dot.abs() < 2.0 => 1.0 / (2.0 - dot),
            _ => self.truncated_from_dot(dot, norm_x_sq, norm_y_sq),
        }
    }

    /// `g(x) g(y) sum_{j<=q} a_j <x, y>^j`, the inner product of two liftings.
    pub fn truncated_from_dot(&self, dot: f64, norm_x_sq: f64, norm_y_sq: f64) -> f64 {
        let series: f64 = self
            .log_coefficients()
            .iter()
            .enumerate()
            .map(|(j, la)| la.exp() * dot.powi(j as i32))
            .sum();
        self.prefactor(norm_x_sq) * self.prefactor(norm_y_sq) * series
    }

    pub fn evaluate(&self, x: &SparseVector, y: &SparseVector) -> f64 {
        self.evaluate_from_dot(x.dot(y), x.norm_sq(), y.norm_sq())
    }

    /// Errors when a radius is set and some column has `|x|^2 > r (1 + 1e-9)`.
    pub fn check_radius(&self, x: &SparseDataMatrix) -> Result<()> {
        if let Some(r) = self.radius {
            let norms = x.column_norms_sq();
            if let Some((c, v)) = norms.iter().enumerate().find(|(_, &v)| v > r * (1.0 + 1e-9)) {
                return Err(Error::invalid(format!(
                    "point {c} has squared norm {v} above the radius bound {r}; rescale the data or raise the radius"
                )));
            }
        }
        Ok(())
    }

    fn prefactors(&self, x: &SparseDataMatrix) -> Option<Vec<f64>> {
        match self.series {
            TaylorSeries::Gaussian => Some(x.column_norms_sq().iter().map(|&r| self.prefactor(r)).collect()),
            _ => None,
        }
    }
}

/// Smallest `q` with `n e^r r^{q+1} / (q+1)! <= 1e-9`, times `safety`, rounded up.
pub fn truncation_degree(r: f64, n: usize, safety: f64) -> usize {
    let n = n.max(1) as f64;
    let r = r.max(0.0);
    if r == 0.0 {
        return 0;
    }
    let target = TRUNCATION_TOLERANCE.ln();
    let mut q = 0usize;
    loop {
        let bound = n.ln() + r + (q as f64 + 1.0) * r.ln() - ln_factorial(q + 1);
        if bound <= target {
            break;
        }
        q += 1;
    }
    (q as f64 * safety.max(1.0)).ceil() as usize
}

/// Coordinates of the lifted space `R^D`, `D = sum_{w<=q} d^w`, with block
/// `w` stored at `block_offset(w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftedFeatureLayout {
    pub input_dim: usize,
    pub degree: usize,
}

impl LiftedFeatureLayout {
    pub fn new(input_dim: usize, degree: usize) -> Self {
        LiftedFeatureLayout { input_dim, degree }
    }

    pub fn total_dim(&self) -> usize {
        block_start(self.input_dim, self.degree + 1)
    }

    pub fn block_offset(&self, w: usize) -> usize {
        block_start(self.input_dim, w)
    }

    pub fn block_len(&self, w: usize) -> usize {
        self.input_dim.pow(w as u32)
    }

    /// Inverse of [`FeatureIndex::lifted_offset`].
    pub fn index_at(&self, offset: usize) -> Option<FeatureIndex> {
        let d = self.input_dim;
        let w = (0..=self.degree).find(|&w| offset < self.block_offset(w) + self.block_len(w))?;
        let mut rest = offset - self.block_offset(w);
        let mut indices = vec![0; w];
        for slot in indices.iter_mut().rev() {
            *slot = rest % d;
            rest /= d;
        }
        Some(FeatureIndex::new(indices))
    }
}

/// Explicit `D x n` lifting; column `c` is `g(x_c) (sqrt(a_w) x_c^{(x)w})_w`.
pub fn dense_lifting(x: &SparseDataMatrix, spec: &TaylorKernelSpec) -> Result<DenseMatrix> {
    let layout = LiftedFeatureLayout::new(x.n_rows(), spec.degree());
    let total = layout.total_dim();
    if total.saturating_mul(x.n_cols()) > DENSE_ENTRY_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "dense lifting would have {total} x {} entries",
            x.n_cols()
        )));
    }
    let logs = spec.log_coefficients();
    let norms = x.column_norms_sq();
    let mut a = DenseMatrix::zeros(total, x.n_cols());
    for c in 0..x.n_cols() {
        let point: Vec<f64> = (0..x.n_rows()).map(|r| x.get(r, c)).collect();
        let g = spec.prefactor(norms[c]);
        let mut power = vec![1.0];
        for (w, la) in logs.iter().enumerate() {
            if w > 0 {
                power = power.iter().flat_map(|&p| point.iter().map(move |&v| p * v)).collect();
            }
            let scale = g * (0.5 * la).exp();
            let start = layout.block_offset(w);
            for (k, p) in power.iter().enumerate() {
                a[(start + k, c)] = scale * p;
            }
        }
    }
    Ok(a)
}

/// `K_ij = exp(-|x_i - x_j|^2 / 2)`.
pub fn gaussian_kernel_matrix(x: &SparseDataMatrix) -> DenseMatrix {
    let n = x.n_cols();
    let norms = x.column_norms_sq();
    let mut k = DenseMatrix::identity(n, n);
    for i in 0..n {
        let (ii, vi) = x.column(i);
        for j in 0..i {
            let (ij, vj) = x.column(j);
            let dist = (norms[i] + norms[j] - 2.0 * sparse_dot(ii, vi, ij, vj)).max(0.0);
            let v = (-0.5 * dist).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Draws `s` lifted features of `Phi (B^T B + lambda I)^{-1/2}` for the
/// truncated lifting `Phi` of `spec`.
pub fn taylor_row_sampler(
    x: &SparseDataMatrix,
    spec: &TaylorKernelSpec,
    b: &DenseMatrix,
    lambda: f64,
    s: usize,
    config: &SamplerConfig,
) -> Result<SamplingMatrix> {
    TaylorSampler::new(x, spec.clone(), config.clone())?.sample(b, lambda, s, config.seed)
}

fn check_spec(spec: &TaylorKernelSpec, pi: &SamplingMatrix) -> Result<()> {
    match &pi.kernel {
        Some(KernelSpec::Taylor(t)) if t == spec => Ok(()),
        None => Ok(()),
        _ => Err(Error::invalid("sampling matrix was drawn for a different kernel")),
    }
}

/// `Z[l, c] = weight_l g(x_c) sqrt(a_w) prod_a X[i_a, c]`.
pub fn taylor_embed_rows(x: &SparseDataMatrix, spec: &TaylorKernelSpec, pi: &SamplingMatrix) -> Result<DenseMatrix> {
    check_spec(spec, pi)?;
    let logs = spec.log_coefficients();
    let g = spec.prefactors(x);
    embed_lifted(
        &Lifting {
            x,
            log_coefficients: &logs,
            prefactor: g.as_deref(),
        },
        pi,
    )
}

/// Embedding of a point outside the training set.
pub fn taylor_embed_out_of_sample(
    x_new: &SparseVector,
    spec: &TaylorKernelSpec,
    pi: &SamplingMatrix,
) -> Result<Vec<f64>> {
    check_spec(spec, pi)?;
    embed_lifted_point(&spec.log_coefficients(), spec.prefactor(x_new.norm_sq()), x_new, pi)
}

/// [`RowSampler`] for the truncated lifting of a Taylor kernel.
#[derive(Debug, Clone)]
pub struct TaylorSampler<'a> {
    x: &'a SparseDataMatrix,
    spec: TaylorKernelSpec,
    log_coefficients: Vec<f64>,
    prefactors: Option<Vec<f64>>,
    config: SamplerConfig,
}

impl<'a> TaylorSampler<'a> {
    pub fn new(x: &'a SparseDataMatrix, spec: TaylorKernelSpec, config: SamplerConfig) -> Result<Self> {
        spec.check_radius(x)?;
        config.validate()?;
        Ok(TaylorSampler {
            x,
            log_coefficients: spec.log_coefficients(),
            prefactors: spec.prefactors(x),
            spec,
            config,
        })
    }

    pub fn spec(&self) -> &TaylorKernelSpec {
        &self.spec
    }

    fn lifting(&self) -> Lifting<'_> {
        Lifting {
            x: self.x,
            log_coefficients: &self.log_coefficients,
            prefactor: self.prefactors.as_deref(),
        }
    }
}

impl RowSampler for TaylorSampler<'_> {
    fn n_points(&self) -> usize {
        self.x.n_cols()
    }

    fn frobenius_sq(&self) -> f64 {
        self.lifting().frobenius_sq()
    }

    fn sample(&self, b: &DenseMatrix, lambda: f64, s: usize, seed: RandomSeed) -> Result<SamplingMatrix> {
        let prepared = PreparedLifting::new(self.lifting(), b, lambda, s, &self.config, seed)?;
        prepared.draw(seed, Some(KernelSpec::Taylor(self.spec.clone())))
    }

    fn embed(&self, pi: &SamplingMatrix) -> Result<DenseMatrix> {
        taylor_embed_rows(self.x, &self.spec, pi)
    }
}
