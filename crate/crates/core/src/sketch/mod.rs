//! Norm-preserving sketch for tensor powers `x^{(x)q}`.
//!
//! The sketch is a balanced binary tree: `q` sparse oblivious leaves map
//! `R^d -> R^s`, each internal node combines its two children with a
//! pairwise Hadamard tensor sketch `R^s x R^s -> R^s`, and a dense Gaussian
//! map compresses the root output to `R^m`. Leaf `a` receives the `a`-th
//! tensor factor, so replacing the rightmost leaf inputs with `e_1` and
//! refreshing only their ancestors yields the whole suffix family
//! `Q (x^{(x)(q-j)} (x) e_1^{(x)j})`, `j = 0..=q`.

mod leaf;
mod node;

pub use leaf::OsnapLeaf;
pub use node::{fwht, TensorSrhtNode};

use std::sync::OnceLock;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;
use crate::sparse::{SparseDataMatrix, SparseVector};

/// Largest dense object the explicit-matrix oracles will build.
pub const DENSE_ENTRY_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf {
        position: usize,
    },
    Internal {
        left: usize,
        right: usize,
        sketch: TensorSrhtNode,
    },
}

/// Sizes of a sketch tree.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SketchShape {
    pub input_dim: usize,
    pub degree: usize,
    pub final_dim: usize,
    pub internal_dim: usize,
    pub osnap_sparsity: usize,
}

impl SketchShape {
    /// Power-of-two internal size `q * eps^-2 * ln^3(1/delta)` rounded up.
    pub fn default_internal_dim(degree: usize, epsilon: f64, delta: f64) -> usize {
        let raw = degree.max(1) as f64 * (1.0 / delta).ln().powi(3) / (epsilon * epsilon);
        (raw.ceil() as usize).max(2).next_power_of_two()
    }

    /// Gaussian compression size `8 * eps^-2 * ln(1/delta)`.
    pub fn default_final_dim(epsilon: f64, delta: f64) -> usize {
        ((8.0 * (1.0 / delta).ln() / (epsilon * epsilon)).ceil() as usize).max(1)
    }

    pub fn for_accuracy(input_dim: usize, degree: usize, epsilon: f64, delta: f64) -> Self {
        SketchShape {
            input_dim,
            degree,
            final_dim: Self::default_final_dim(epsilon, delta),
            internal_dim: Self::default_internal_dim(degree, epsilon, delta),
            osnap_sparsity: 8,
        }
    }
}

/// A fixed draw of the tensor-power sketch. Immutable once built; per-input
/// node outputs live in a [`SketchWorkspace`].
#[derive(Debug, Clone)]
pub struct SketchTree {
    shape: SketchShape,
    leaves: Vec<OsnapLeaf>,
    nodes: Vec<TreeNode>,
    parent: Vec<Option<usize>>,
    leaf_node: Vec<usize>,
    seed: RandomSeed,
    /// The Gaussian map, materialized on first use by a single-vector call.
    /// Batched calls generate it block by block instead.
    compress: OnceLock<DenseMatrix>,
}

/// Cached per-node outputs for the most recent input of one worker.
#[derive(Debug, Clone)]
pub struct SketchWorkspace {
    outputs: Vec<Vec<f64>>,
    scratch: (Vec<f64>, Vec<f64>),
}

/// Builds a tree for inputs in `R^d`. `internal_dim` is rounded up to a power
/// of two.
pub fn build_sketch_tree(
    d: usize,
    q: usize,
    final_dim: usize,
    internal_dim: usize,
    osnap_sparsity: usize,
    seed: RandomSeed,
) -> Result<SketchTree> {
    if d == 0 || q == 0 || final_dim == 0 || internal_dim == 0 || osnap_sparsity == 0 {
        return Err(Error::invalid(format!(
            "sketch tree needs positive sizes (d={d}, q={q}, m'={final_dim}, s={internal_dim}, sparsity={osnap_sparsity})"
        )));
    }
    if internal_dim < final_dim {
        return Err(Error::invalid(format!(
            "internal dimension {internal_dim} is smaller than final dimension {final_dim}"
        )));
    }
    let internal_dim = internal_dim.next_power_of_two();
    let shape = SketchShape {
        input_dim: d,
        degree: q,
        final_dim,
        internal_dim,
        osnap_sparsity,
    };

    let leaves = (0..q)
        .map(|p| OsnapLeaf::new(d, internal_dim, osnap_sparsity, seed.derive("sketch-leaf", p as u64)))
        .collect();

    let mut nodes = Vec::with_capacity(2 * q - 1);
    let mut leaf_node = vec![0; q];
    let mut internal_count = 0u64;
    build_subtree(
        0,
        q,
        &mut nodes,
        &mut leaf_node,
        &mut internal_count,
        internal_dim,
        seed,
    );

    let mut parent = vec![None; nodes.len()];
    for (id, n) in nodes.iter().enumerate() {
        if let TreeNode::Internal { left, right, .. } = n {
            parent[*left] = Some(id);
            parent[*right] = Some(id);
        }
    }

    Ok(SketchTree {
        shape,
        leaves,
        nodes,
        parent,
        leaf_node,
        seed,
        compress: OnceLock::new(),
    })
}

/// Columns of the Gaussian map generated at a time by batched compression.
const COMPRESS_BLOCK: usize = 256;

// Post-order layout: children always precede their parent.
fn build_subtree(
    lo: usize,
    hi: usize,
    nodes: &mut Vec<TreeNode>,
    leaf_node: &mut [usize],
    internal_count: &mut u64,
    dim: usize,
    seed: RandomSeed,
) -> usize {
    if hi - lo == 1 {
        nodes.push(TreeNode::Leaf { position: lo });
        leaf_node[lo] = nodes.len() - 1;
        return nodes.len() - 1;
    }
    let mid = lo + (hi - lo).div_ceil(2);
    let left = build_subtree(lo, mid, nodes, leaf_node, internal_count, dim, seed);
    let right = build_subtree(mid, hi, nodes, leaf_node, internal_count, dim, seed);
    let sketch = TensorSrhtNode::new(dim, dim, seed.derive("sketch-node", *internal_count));
    *internal_count += 1;
    nodes.push(TreeNode::Internal { left, right, sketch });
    nodes.len() - 1
}

impl SketchTree {
    pub fn shape(&self) -> SketchShape {
        self.shape
    }

    pub fn degree(&self) -> usize {
        self.shape.degree
    }

    pub fn final_dim(&self) -> usize {
        self.shape.final_dim
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn internal_node_count(&self) -> usize {
        self.nodes.len() - self.leaves.len()
    }

    pub fn workspace(&self) -> SketchWorkspace {
        SketchWorkspace {
            outputs: vec![vec![0.0; self.shape.internal_dim]; self.nodes.len()],
            scratch: (Vec::new(), Vec::new()),
        }
    }

    fn check_dim(&self, x: &SparseVector) -> Result<()> {
        if x.dim() != self.shape.input_dim {
            return Err(Error::invalid(format!(
                "vector has dimension {} but the sketch expects {}",
                x.dim(),
                self.shape.input_dim
            )));
        }
        Ok(())
    }

    fn set_leaf(&self, ws: &mut SketchWorkspace, position: usize, indices: &[usize], values: &[f64]) {
        let id = self.leaf_node[position];
        self.leaves[position].apply_sparse(indices, values, &mut ws.outputs[id]);
    }

    fn refresh(&self, ws: &mut SketchWorkspace, id: usize) {
        if let TreeNode::Internal { left, right, sketch } = &self.nodes[id] {
            let mut out = std::mem::take(&mut ws.outputs[id]);
            sketch.apply(&ws.outputs[*left], &ws.outputs[*right], &mut out, &mut ws.scratch);
            ws.outputs[id] = out;
        }
    }

    /// Columns `start..start + len` of the Gaussian map. One stream per
    /// column keeps the draw independent of blocking and thread count.
    fn compress_block(&self, start: usize, len: usize) -> DenseMatrix {
        let m = self.shape.final_dim;
        let scale = 1.0 / (m as f64).sqrt();
        let mut block = DenseMatrix::zeros(m, len);
        block.as_mut_slice().par_chunks_mut(m).enumerate().for_each(|(c, col)| {
            let mut rng = self.seed.stream("sketch-compress", (start + c) as u64);
            for v in col {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        });
        block
    }

    fn compress_matrix(&self) -> &DenseMatrix {
        self.compress
            .get_or_init(|| self.compress_block(0, self.shape.internal_dim))
    }

    /// `G * roots` for an `s x k` matrix of root outputs.
    fn compress_columns(&self, roots: &DenseMatrix) -> DenseMatrix {
        if let Some(g) = self.compress.get() {
            return g * roots;
        }
        let s = self.shape.internal_dim;
        let mut out = DenseMatrix::zeros(self.shape.final_dim, roots.ncols());
        for start in (0..s).step_by(COMPRESS_BLOCK) {
            let len = COMPRESS_BLOCK.min(s - start);
            let g = self.compress_block(start, len);
            out.gemm(1.0, &g, &roots.rows(start, len), 1.0);
        }
        out
    }

    fn root_compressed(&self, ws: &SketchWorkspace) -> Vec<f64> {
        let root = DVector::from_column_slice(&ws.outputs[self.nodes.len() - 1]);
        (self.compress_matrix() * root).as_slice().to_vec()
    }

    /// Evaluates the tree with leaf `a` fed `inputs[a]`, recomputing every node.
    pub fn evaluate_leaves(&self, ws: &mut SketchWorkspace, inputs: &[&SparseVector]) -> Result<Vec<f64>> {
        if inputs.len() != self.leaves.len() {
            return Err(Error::invalid(format!(
                "expected {} leaf inputs, got {}",
                self.leaves.len(),
                inputs.len()
            )));
        }
        for (p, x) in inputs.iter().enumerate() {
            self.check_dim(x)?;
            self.set_leaf(ws, p, x.indices(), x.values());
        }
        for id in 0..self.nodes.len() {
            self.refresh(ws, id);
        }
        Ok(self.root_compressed(ws))
    }

    /// `Q x^{(x)q}`. Node outputs stay cached in `ws`.
    pub fn tensor_power_with(&self, ws: &mut SketchWorkspace, x: &SparseVector) -> Result<Vec<f64>> {
        let inputs = vec![x; self.leaves.len()];
        self.evaluate_leaves(ws, &inputs)
    }

    pub fn tensor_power(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.tensor_power_with(&mut self.workspace(), x)
    }

    /// Entry `j` is `Q (x^{(x)(q-j)} (x) e_1^{(x)j})`, for `j = 0..=q`.
    pub fn suffix_family_with(&self, ws: &mut SketchWorkspace, x: &SparseVector) -> Result<Vec<Vec<f64>>> {
        self.check_dim(x)?;
        Ok(self.suffix_family_raw(ws, x.indices(), x.values()))
    }

    pub fn suffix_family(&self, x: &SparseVector) -> Result<Vec<Vec<f64>>> {
        self.suffix_family_with(&mut self.workspace(), x)
    }

    fn suffix_family_raw(&self, ws: &mut SketchWorkspace, indices: &[usize], values: &[f64]) -> Vec<Vec<f64>> {
        self.suffix_roots(ws, indices, values)
            .into_iter()
            .map(|root| (self.compress_matrix() * DVector::from_vec(root)).as_slice().to_vec())
            .collect()
    }

    // Uncompressed root outputs of the suffix family.
    fn suffix_roots(&self, ws: &mut SketchWorkspace, indices: &[usize], values: &[f64]) -> Vec<Vec<f64>> {
        let q = self.leaves.len();
        let root = self.nodes.len() - 1;
        for p in 0..q {
            self.set_leaf(ws, p, indices, values);
        }
        for id in 0..self.nodes.len() {
            self.refresh(ws, id);
        }
        let mut family = Vec::with_capacity(q + 1);
        family.push(ws.outputs[root].clone());
        for j in 1..=q {
            let position = q - j;
            self.set_leaf(ws, position, &[0], &[1.0]);
            let mut id = self.leaf_node[position];
            while let Some(p) = self.parent[id] {
                self.refresh(ws, p);
                id = p;
            }
            family.push(ws.outputs[root].clone());
        }
        family
    }

    fn check_rows(&self, x: &SparseDataMatrix) -> Result<()> {
        if x.n_rows() != self.shape.input_dim {
            return Err(Error::invalid(format!(
                "data has {} rows but the sketch expects {}",
                x.n_rows(),
                self.shape.input_dim
            )));
        }
        Ok(())
    }

    /// `Q X^{(x)q}` as an `m' x n` matrix, compressing all columns with one
    /// matrix product.
    pub fn tensor_power_matrix(&self, x: &SparseDataMatrix) -> Result<DenseMatrix> {
        self.check_rows(x)?;
        let s = self.shape.internal_dim;
        let n = x.n_cols();
        let mut roots = DenseMatrix::zeros(s, n);
        roots.as_mut_slice().par_chunks_mut(s).enumerate().for_each_init(
            || self.workspace(),
            |ws, (c, out)| {
                let (idx, val) = x.column(c);
                for p in 0..self.leaves.len() {
                    self.set_leaf(ws, p, idx, val);
                }
                for id in 0..self.nodes.len() {
                    self.refresh(ws, id);
                }
                out.copy_from_slice(&ws.outputs[self.nodes.len() - 1]);
            },
        );
        Ok(self.compress_columns(&roots))
    }

    /// `P_j = Q (X^{(x)(q-j)} (x) E_1^{(x)j})` for `j = 0..=q`, each
    /// `m' x n`. Columns are processed in parallel.
    pub fn matrix_family(&self, x: &SparseDataMatrix) -> Result<Vec<DenseMatrix>> {
        self.check_rows(x)?;
        let n = x.n_cols();
        let q = self.leaves.len();
        let s = self.shape.internal_dim;
        let columns: Vec<Vec<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map_init(
                || self.workspace(),
                |ws, c| {
                    let (idx, val) = x.column(c);
                    self.suffix_roots(ws, idx, val)
                },
            )
            .collect();
        // All q + 1 families side by side, so the map is generated once.
        let mut roots = DenseMatrix::zeros(s, n * (q + 1));
        for (c, family) in columns.into_iter().enumerate() {
            for (j, v) in family.into_iter().enumerate() {
                roots.column_mut(j * n + c).copy_from_slice(&v);
            }
        }
        let all = self.compress_columns(&roots);
        Ok((0..=q).map(|j| all.columns(j * n, n).into_owned()).collect())
    }

    /// Cached output of node `id` from the last evaluation in `ws`.
    pub fn cached_output<'a>(&self, ws: &'a SketchWorkspace, id: usize) -> &'a [f64] {
        &ws.outputs[id]
    }

    /// Recomputes node `id` from the cached outputs of its children.
    pub fn recompute_node(&self, ws: &SketchWorkspace, id: usize) -> Vec<f64> {
        match &self.nodes[id] {
            TreeNode::Leaf { .. } => ws.outputs[id].clone(),
            TreeNode::Internal { left, right, sketch } => {
                let mut out = vec![0.0; sketch.output_dim()];
                let mut scratch = (Vec::new(), Vec::new());
                sketch.apply(&ws.outputs[*left], &ws.outputs[*right], &mut out, &mut scratch);
                out
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// The full `m' x d^q` matrix of the sketch, assembled from explicit
    /// node matrices by Kronecker products. Only for tiny sizes.
    pub fn explicit_matrix(&self) -> Result<DenseMatrix> {
        let s = self.shape.internal_dim;
        let d = self.shape.input_dim;
        let q = self.shape.degree;
        let too_big = d
            .checked_pow(q as u32)
            .and_then(|dq| dq.checked_mul(s * s))
            .is_none_or(|e| e > DENSE_ENTRY_LIMIT);
        if too_big {
            return Err(Error::ResourceLimit(format!(
                "explicit sketch matrix for d={d}, q={q}, s={s} exceeds {DENSE_ENTRY_LIMIT} entries"
            )));
        }
        let mut mats: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        for id in 0..self.nodes.len() {
            let m = match &self.nodes[id] {
                TreeNode::Leaf { position } => self.leaves[*position].to_dense(),
                TreeNode::Internal { left, right, sketch } => {
                    let a = mats[*left].take().expect("child computed");
                    let b = mats[*right].take().expect("child computed");
                    sketch.to_dense() * a.kronecker(&b)
                }
            };
            mats[id] = Some(m);
        }
        let root = mats.pop().flatten().expect("root computed");
        Ok(self.compress_matrix() * root)
    }
}

/// `x^{(x)q}` with flat index `sum_a i_a d^(q-a)` (leftmost factor slowest).
pub fn dense_tensor_power(x: &[f64], q: usize) -> Result<Vec<f64>> {
    let d = x.len();
    let size = d
        .checked_pow(q as u32)
        .filter(|&s| s <= DENSE_ENTRY_LIMIT)
        .ok_or_else(|| Error::ResourceLimit(format!("dense tensor power {d}^{q} is too large")))?;
    let mut out = Vec::with_capacity(size);
    out.push(1.0);
    for _ in 0..q {
        out = out.iter().flat_map(|&a| x.iter().map(move |&b| a * b)).collect();
    }
    Ok(out)
}
