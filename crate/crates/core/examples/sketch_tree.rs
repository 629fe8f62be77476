//! Sketch q-fold tensor powers without forming them and watch the squared
//! norm distortion over many independent trees.

use ksembed::rng::RandomSeed;
use ksembed::sketch::{build_sketch_tree, SketchShape};
use ksembed::sparse::SparseVector;

fn main() -> ksembed::Result<()> {
    let (d, q) = (4, 3);
    let shape = SketchShape::for_accuracy(d, q, 0.1, 0.05);
    println!(
        "final dim {}, internal dim {}, leaf sparsity {}",
        shape.final_dim, shape.internal_dim, shape.osnap_sparsity
    );

    let x = SparseVector::new(d, vec![(0, 0.8), (2, -0.5), (3, 0.3)])?;
    let exact = x.norm_sq().powi(q as i32);
    let mut errors = Vec::new();
    for t in 0..20 {
        let tree = build_sketch_tree(
            d,
            q,
            shape.final_dim,
            shape.internal_dim,
            shape.osnap_sparsity,
            RandomSeed(t),
        )?;
        let y = tree.tensor_power(&x)?;
        errors.push((y.iter().map(|v| v * v).sum::<f64>() - exact) / exact);
    }
    errors.sort_by(f64::total_cmp);
    println!(
        "relative errors over 20 trees: min {:.4}, median {:.4}, max {:.4}",
        errors[0], errors[10], errors[19]
    );

    let tree = build_sketch_tree(
        d,
        q,
        shape.final_dim,
        shape.internal_dim,
        shape.osnap_sparsity,
        RandomSeed(99),
    )?;
    for (j, y) in tree.suffix_family(&x)?.iter().enumerate() {
        let norm: f64 = y.iter().map(|v| v * v).sum();
        println!(
            "suffix j={j}: sketched squared norm {norm:.4}, exact {:.4}",
            x.norm_sq().powi((q - j) as i32)
        );
    }
    Ok(())
}
