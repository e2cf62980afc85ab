//! Codebooks: a split tree plus one prototype per leaf.

use super::tree::{assign_buckets, learn_split_tree, SplitTree};
use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

/// How a `total_dim`-wide vector is cut into equal contiguous subspaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubspaceLayout {
    pub n_codebooks: usize,
    pub sub_dim: usize,
    pub total_dim: usize,
}

impl SubspaceLayout {
    pub fn new(total_dim: usize, n_codebooks: usize) -> Result<Self> {
        if n_codebooks == 0 || total_dim == 0 || total_dim % n_codebooks != 0 {
            return Err(AmuError::config(format!(
                "{n_codebooks} codebooks do not evenly divide dimension {total_dim}"
            )));
        }
        Ok(SubspaceLayout { n_codebooks, sub_dim: total_dim / n_codebooks, total_dim })
    }

    pub fn slice_start(&self, codebook: usize) -> usize {
        codebook * self.sub_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    /// Which subspace of the layout this codebook covers.
    pub slice: usize,
    pub tree: SplitTree,
    /// `(2^I, sub_dim)`, one row per leaf.
    pub prototypes: DenseMatrix,
}

impl Codebook {
    pub fn sub_dim(&self) -> usize {
        self.prototypes.cols()
    }
}

/// Per-leaf means. An empty leaf takes the mean of its nearest non-empty
/// ancestor's population.
pub fn init_prototypes(tree: &SplitTree, subspace_samples: &DenseMatrix) -> DenseMatrix {
    let leaves = assign_buckets(tree, subspace_samples);
    leaf_means(tree.n_leaves(), &leaves, subspace_samples)
}

/// Means of `targets` rows grouped by `leaves` (one leaf id per row), with
/// the same empty-leaf fallback as [`init_prototypes`].
pub fn leaf_means(n_leaves: usize, leaves: &[usize], targets: &DenseMatrix) -> DenseMatrix {
    let width = targets.cols();
    // heap of 2·n_leaves − 1 nodes; leaves start at n_leaves − 1
    let nodes = 2 * n_leaves - 1;
    let mut sums = vec![vec![0.0; width]; nodes];
    let mut counts = vec![0usize; nodes];
    for (row, &leaf) in targets.iter_rows().zip(leaves) {
        let node = n_leaves - 1 + leaf;
        counts[node] += 1;
        sums[node].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    for node in (0..n_leaves - 1).rev() {
        let (l, r) = (2 * node + 1, 2 * node + 2);
        counts[node] = counts[l] + counts[r];
        for d in 0..width {
            sums[node][d] = sums[l][d] + sums[r][d];
        }
    }
    let mut out = DenseMatrix::zeros(n_leaves, width);
    for leaf in 0..n_leaves {
        let mut node = n_leaves - 1 + leaf;
        while counts[node] == 0 && node > 0 {
            node = (node - 1) / 2;
        }
        if counts[node] > 0 {
            let c = counts[node] as f64;
            out.row_mut(leaf).iter_mut().zip(&sums[node]).for_each(|(o, s)| *o = s / c);
        }
    }
    out
}

/// Learns one codebook per subspace of `samples` (trees plus mean prototypes).
pub fn learn_codebooks(samples: &DenseMatrix, layout: SubspaceLayout, n_levels: usize) -> Result<Vec<Codebook>> {
    if samples.cols() != layout.total_dim {
        return Err(AmuError::config(format!(
            "samples have {} columns, layout expects {}",
            samples.cols(),
            layout.total_dim
        )));
    }
    (0..layout.n_codebooks)
        .map(|c| {
            let sub = samples.column_slice(layout.slice_start(c), layout.sub_dim);
            let tree = learn_split_tree(&sub, n_levels)?;
            let prototypes = init_prototypes(&tree, &sub);
            Ok(Codebook { slice: c, tree, prototypes })
        })
        .collect()
}

/// Leaf ids of every sample for every codebook, `ids[row][codebook]`.
pub fn encode_all(codebooks: &[Codebook], samples: &DenseMatrix) -> Vec<Vec<usize>> {
    samples
        .iter_rows()
        .map(|row| {
            codebooks
                .iter()
                .map(|cb| {
                    let start = cb.slice * cb.sub_dim();
                    cb.tree.leaf_of(&row[start..start + cb.sub_dim()])
                })
                .collect()
        })
        .collect()
}

/// Result of the joint ridge solve before prototypes are cut back to their slices.
#[derive(Clone, Debug)]
pub struct RidgeSolution {
    /// `(N·2^I, total_dim)`: full-width prototypes stacked by codebook.
    pub full: DenseMatrix,
    /// `‖A − G·P‖² + λ‖P‖²` at the solution.
    pub objective: f64,
}

/// `‖A − G·P‖² + λ‖P‖²` for stacked prototypes `P` and the one-hot design
/// implied by `ids`.
pub fn ridge_objective(samples: &DenseMatrix, ids: &[Vec<usize>], n_leaves: usize, p: &DenseMatrix, lambda: f64) -> f64 {
    let mut total = 0.0;
    let mut recon = vec![0.0; samples.cols()];
    for (row, leaves) in samples.iter_rows().zip(ids) {
        recon.iter_mut().for_each(|v| *v = 0.0);
        for (c, &leaf) in leaves.iter().enumerate() {
            recon.iter_mut().zip(p.row(c * n_leaves + leaf)).for_each(|(r, v)| *r += v);
        }
        total += row.iter().zip(&recon).map(|(a, r)| (a - r).powi(2)).sum::<f64>();
    }
    total + lambda * p.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// Refines all prototypes jointly with ridge regression.
///
/// Solves `min_P ‖A − G·P‖² + λ‖P‖²` through the normal equations
/// `(GᵀG + λI) P = GᵀA`, where `G` one-hot encodes every codebook's leaf for
/// each training row. Each codebook then keeps only the columns of its own
/// slice.
pub fn refine_prototypes_ridge(codebooks: &mut [Codebook], samples: &DenseMatrix, lambda: f64) -> Result<RidgeSolution> {
    refine_prototypes_ridge_to(codebooks, samples, samples, lambda)
}

/// Ridge refinement where leaves come from `samples` but the regression
/// target is `targets` (same shape).
pub fn refine_prototypes_ridge_to(
    codebooks: &mut [Codebook],
    samples: &DenseMatrix,
    targets: &DenseMatrix,
    lambda: f64,
) -> Result<RidgeSolution> {
    if targets.rows() != samples.rows() || targets.cols() != samples.cols() {
        return Err(AmuError::config("ridge targets must match the samples' shape"));
    }
    if !(lambda >= 0.0) {
        return Err(AmuError::config(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let Some(first) = codebooks.first() else {
        return Err(AmuError::config("no codebooks to refine"));
    };
    let n_leaves = first.tree.n_leaves();
    if codebooks.iter().any(|c| c.tree.n_leaves() != n_leaves) {
        return Err(AmuError::config("codebooks disagree on tree depth"));
    }
    let sub_dim = first.sub_dim();
    if samples.cols() != codebooks.len() * sub_dim {
        return Err(AmuError::config("sample width does not match the codebook layout"));
    }
    let k = codebooks.len() * n_leaves;
    let ids = encode_all(codebooks, samples);

    let mut gram = DenseMatrix::zeros(k, k);
    let mut rhs = DenseMatrix::zeros(k, samples.cols());
    for (row, leaves) in targets.iter_rows().zip(&ids) {
        for (c, &leaf) in leaves.iter().enumerate() {
            let a = c * n_leaves + leaf;
            for (c2, &leaf2) in leaves.iter().enumerate() {
                gram[(a, c2 * n_leaves + leaf2)] += 1.0;
            }
            rhs.row_mut(a).iter_mut().zip(row).for_each(|(r, v)| *r += v);
        }
    }
    for i in 0..k {
        gram[(i, i)] += lambda;
    }
    let full = super::linalg::solve_spd(&gram, &rhs).map_err(|_| {
        AmuError::Numeric(format!(
            "normal matrix is singular at lambda = {lambda}; use lambda > 0 (empty leaves or several codebooks)"
        ))
    })?;
    let objective = ridge_objective(targets, &ids, n_leaves, &full, lambda);
    for (c, cb) in codebooks.iter_mut().enumerate() {
        let start = cb.slice * sub_dim;
        for leaf in 0..n_leaves {
            cb.prototypes.row_mut(leaf).copy_from_slice(&full.row(c * n_leaves + leaf)[start..start + sub_dim]);
        }
    }
    Ok(RidgeSolution { full, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::synth::generate_gaussian_mixture;

    fn column(values: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn singleton_buckets_reproduce_samples() {
        let m = column(&[0.0, 1.0, 2.0, 3.0]);
        let tree = learn_split_tree(&m, 2).unwrap();
        assert_eq!(init_prototypes(&tree, &m).as_slice(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pairs_give_midpoints() {
        let m = column(&[0.0, 1.0, 10.0, 11.0]);
        let tree = SplitTree::new(vec![0], vec![5.0]).unwrap();
        assert_eq!(init_prototypes(&tree, &m).as_slice(), &[0.5, 10.5]);
    }

    #[test]
    fn empty_leaf_takes_parent_mean() {
        let m = column(&[1.0, 3.0]);
        let tree = SplitTree::new(vec![0, 0], vec![10.0, 2.0, 20.0]).unwrap();
        // both samples land under the left root child, the right subtree is empty
        let p = init_prototypes(&tree, &m);
        assert_eq!(p.as_slice(), &[1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn leaf_means_of_other_targets() {
        let leaves = [0, 1, 1, 3];
        let t = DenseMatrix::from_vec(4, 1, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        // leaf 2 is empty and falls back to its parent (leaves 2 and 3)
        assert_eq!(leaf_means(4, &leaves, &t).as_slice(), &[2.0, 5.0, 8.0, 8.0]);
    }

    #[test]
    fn ridge_to_own_samples_is_plain_ridge() {
        let m = generate_gaussian_mixture(120, 4, 3, 8);
        let layout = SubspaceLayout::new(4, 2).unwrap();
        let mut a = learn_codebooks(&m, layout, 2).unwrap();
        let mut b = a.clone();
        let ra = refine_prototypes_ridge(&mut a, &m, 0.5).unwrap();
        let rb = refine_prototypes_ridge_to(&mut b, &m, &m, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.objective, rb.objective);
        assert!(refine_prototypes_ridge_to(&mut b, &m, &m.column_slice(0, 2), 0.5).is_err());
    }

    #[test]
    fn leaf_means_beat_global_mean() {
        let m = generate_gaussian_mixture(400, 4, 6, 2);
        let tree = learn_split_tree(&m, 3).unwrap();
        let protos = init_prototypes(&tree, &m);
        let leaves = assign_buckets(&tree, &m);
        let mut global = vec![0.0; 4];
        for r in m.iter_rows() {
            global.iter_mut().zip(r).for_each(|(g, v)| *g += v / 400.0);
        }
        let sse = |f: &dyn Fn(usize) -> Vec<f64>| -> f64 {
            m.iter_rows()
                .enumerate()
                .map(|(i, r)| r.iter().zip(f(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum()
        };
        let leaf_sse = sse(&|i| protos.row(leaves[i]).to_vec());
        let global_sse = sse(&|_| global.clone());
        assert!(leaf_sse <= global_sse);
    }

    #[test]
    fn ridge_without_penalty_gives_leaf_means() {
        let m = generate_gaussian_mixture(300, 3, 5, 4);
        let mut cbs = learn_codebooks(&m, SubspaceLayout::new(3, 1).unwrap(), 2).unwrap();
        let means = cbs[0].prototypes.clone();
        refine_prototypes_ridge(&mut cbs, &m, 0.0).unwrap();
        for (a, b) in cbs[0].prototypes.as_slice().iter().zip(means.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let m = generate_gaussian_mixture(100, 4, 3, 4);
        let mut cbs = learn_codebooks(&m, SubspaceLayout::new(4, 2).unwrap(), 2).unwrap();
        refine_prototypes_ridge(&mut cbs, &m, 1e12).unwrap();
        assert!(cbs.iter().all(|c| c.prototypes.as_slice().iter().all(|v| v.abs() < 1e-6)));
    }

    #[test]
    fn singular_without_penalty_is_numeric_error() {
        let m = generate_gaussian_mixture(100, 4, 3, 4);
        let mut cbs = learn_codebooks(&m, SubspaceLayout::new(4, 2).unwrap(), 2).unwrap();
        assert!(matches!(refine_prototypes_ridge(&mut cbs, &m, 0.0), Err(AmuError::Numeric(_))));
    }

    #[test]
    fn ridge_objective_no_worse_than_means() {
        let m = generate_gaussian_mixture(500, 8, 6, 12);
        let layout = SubspaceLayout::new(8, 4).unwrap();
        let mut cbs = learn_codebooks(&m, layout, 3).unwrap();
        let n_leaves = 8;
        // stack the mean prototypes into the block-diagonal full-width form
        let mut init = DenseMatrix::zeros(4 * n_leaves, 8);
        for (c, cb) in cbs.iter().enumerate() {
            for leaf in 0..n_leaves {
                init.row_mut(c * n_leaves + leaf)[c * 2..c * 2 + 2].copy_from_slice(cb.prototypes.row(leaf));
            }
        }
        let ids = encode_all(&cbs, &m);
        let init_obj = ridge_objective(&m, &ids, n_leaves, &init, 1.0);
        let sol = refine_prototypes_ridge(&mut cbs, &m, 1.0).unwrap();
        assert!(sol.objective <= init_obj + 1e-6, "{} > {}", sol.objective, init_obj);
    }

    #[test]
    fn layout_requires_divisibility() {
        assert!(SubspaceLayout::new(784, 32).is_err());
        assert_eq!(SubspaceLayout::new(784, 16).unwrap().sub_dim, 49);
    }
}
