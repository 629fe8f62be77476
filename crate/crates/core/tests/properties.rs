use proptest::prelude::*;

use ksembed::kernel::KernelSpec;
use ksembed::linalg::{statistical_dimension, symmetric_eigenvalues, DenseMatrix};
use ksembed::poly::{poly_embed_rows, poly_row_sampler};
use ksembed::rng::RandomSeed;
use ksembed::sampler::{weight_consistency_check, SamplerConfig};
use ksembed::sketch::build_sketch_tree;
use ksembed::sparse::{SparseDataMatrix, SparseVector};
use ksembed::taylor::truncation_degree;

fn data(d: usize, n: usize) -> impl Strategy<Value = SparseDataMatrix> {
    prop::collection::vec(prop_oneof![Just(0.0), -1.0..1.0f64], d * n)
        .prop_map(move |v| SparseDataMatrix::from_dense(&DenseMatrix::from_vec(d, n, v)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparse_round_trip(x in data(4, 6)) {
        let back = SparseDataMatrix::from_dense(&x.to_dense()).unwrap();
        prop_assert_eq!(back.to_dense(), x.to_dense());
        prop_assert!(x.nnz() <= 24);
    }

    #[test]
    fn statistical_dimension_is_monotone(eigs in prop::collection::vec(0.0..10.0f64, 1..12), a in 1e-3..10.0f64, b in 1e-3..10.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let s_lo = statistical_dimension(&eigs, lo).unwrap();
        let s_hi = statistical_dimension(&eigs, hi).unwrap();
        prop_assert!(s_hi <= s_lo + 1e-12);
        prop_assert!(s_lo <= eigs.len() as f64);
        prop_assert!(s_hi >= 0.0);
    }

    #[test]
    fn polynomial_kernel_is_psd(x in data(3, 5), q in 1usize..4) {
        let k = KernelSpec::polynomial(q).unwrap().kernel_matrix(&x);
        let scale = k.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(symmetric_eigenvalues(&k).iter().all(|&e| e >= -1e-10 * scale));
    }

    #[test]
    fn sampled_weights_match_claimed_probabilities(x in data(3, 4), seed in any::<u64>(), lambda in 0.05..2.0f64) {
        prop_assume!(x.nnz() > 0);
        let b = DenseMatrix::zeros(0, 4);
        let s = 40;
        let pi = poly_row_sampler(&x, 2, &b, lambda, s, &SamplerConfig::with_seed(seed)).unwrap();
        prop_assert_eq!(pi.len(), s);
        prop_assert!(pi.samples.iter().all(|w| weight_consistency_check(w, s)));
        let z = poly_embed_rows(&x, &pi).unwrap();
        prop_assert_eq!(z.shape(), (s, 4));
    }

    #[test]
    fn sketch_is_homogeneous_of_degree_q(v in prop::collection::vec(-1.0..1.0f64, 5), a in -2.0..2.0f64, seed in any::<u64>()) {
        let q = 3;
        let tree = build_sketch_tree(5, q, 16, 32, 2, RandomSeed(seed)).unwrap();
        let x = SparseVector::from_dense(&v).unwrap();
        let ax = SparseVector::from_dense(&v.iter().map(|t| a * t).collect::<Vec<_>>()).unwrap();
        let y = tree.tensor_power(&x).unwrap();
        let ay = tree.tensor_power(&ax).unwrap();
        let scale = a.powi(q as i32);
        for (u, w) in y.iter().zip(&ay) {
            prop_assert!((scale * u - w).abs() <= 1e-9 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn truncation_degree_grows_slowly_with_n(r in 0.1..4.0f64, n in 1usize..10_000) {
        let q = truncation_degree(r, n, 1.0);
        let q2 = truncation_degree(r, 2 * n, 1.0);
        prop_assert!(q <= q2 && q2 <= q + 2);
    }
}
