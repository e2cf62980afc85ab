//! Greedy binary hash trees over one subspace.
//!
//! A tree with `I` levels stores one split dimension per level and a heap of
//! `2^I - 1` split values: level `j` (from 0) occupies offsets
//! `2^j - 1 ..= 2^(j+1) - 2`, bucket `b` of that level at offset `2^j - 1 + b`.
//! A value `<=` the split value goes left (bit 0), a larger one right (bit 1).

use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitTree {
    pub split_indexes: Vec<usize>,
    pub split_values: Vec<f64>,
}

impl SplitTree {
    pub fn new(split_indexes: Vec<usize>, split_values: Vec<f64>) -> Result<Self> {
        let levels = split_indexes.len();
        if levels == 0 || levels > 16 {
            return Err(AmuError::config(format!("tree depth {levels} outside [1, 16]")));
        }
        if split_values.len() != (1 << levels) - 1 {
            return Err(AmuError::config(format!(
                "{levels}-level tree needs {} split values, got {}",
                (1usize << levels) - 1,
                split_values.len()
            )));
        }
        Ok(SplitTree { split_indexes, split_values })
    }

    #[inline]
    pub fn n_levels(&self) -> usize {
        self.split_indexes.len()
    }

    #[inline]
    pub fn n_leaves(&self) -> usize {
        1 << self.n_levels()
    }

    /// Heap offset of bucket `bucket` at `level`.
    #[inline]
    pub fn heap_offset(level: usize, bucket: usize) -> usize {
        (1 << level) - 1 + bucket
    }

    pub fn split_value(&self, level: usize, bucket: usize) -> f64 {
        self.split_values[Self::heap_offset(level, bucket)]
    }

    /// Walks the heap with one block per level and returns the leaf id.
    ///
    /// Round `j` compares `blocks[j]` with the split value at
    /// `id + 2^j - 1`; the next id is `2·id + bit`.
    #[inline]
    pub fn encode<T: Copy + Into<f64>>(&self, blocks: &[T]) -> usize {
        debug_assert_eq!(blocks.len(), self.n_levels());
        let mut id = 0usize;
        for (j, &block) in blocks.iter().enumerate() {
            let threshold = self.split_values[id + (1 << j) - 1];
            id = 2 * id + usize::from(block.into() > threshold);
        }
        id
    }

    /// Leaf id of a full sub-vector (reads the values at the split indexes).
    #[inline]
    pub fn leaf_of(&self, sub_vector: &[f64]) -> usize {
        let mut id = 0usize;
        for (j, &dim) in self.split_indexes.iter().enumerate() {
            let threshold = self.split_values[id + (1 << j) - 1];
            id = 2 * id + usize::from(sub_vector[dim] > threshold);
        }
        id
    }

    /// Replaces every split value through `map(level_dim, value)`.
    pub fn map_split_values(&self, mut map: impl FnMut(usize, f64) -> f64) -> SplitTree {
        let mut values = self.split_values.clone();
        for (j, &dim) in self.split_indexes.iter().enumerate() {
            for b in 0..1 << j {
                let o = Self::heap_offset(j, b);
                values[o] = map(dim, values[o]);
            }
        }
        SplitTree { split_indexes: self.split_indexes.clone(), split_values: values }
    }
}

/// Leaf id of every row.
pub fn assign_buckets(tree: &SplitTree, subspace_samples: &DenseMatrix) -> Vec<usize> {
    subspace_samples.iter_rows().map(|row| tree.leaf_of(row)).collect()
}

/// Sum of squared deviations from the mean over all columns of `members`.
#[cfg(test)]
pub(crate) fn bucket_sse(samples: &DenseMatrix, members: &[usize]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let n = members.len() as f64;
    let mut total = 0.0;
    for d in 0..samples.cols() {
        let mean = members.iter().map(|&r| samples[(r, d)]).sum::<f64>() / n;
        total += members.iter().map(|&r| (samples[(r, d)] - mean).powi(2)).sum::<f64>();
    }
    total
}

/// SSE-optimal threshold of one bucket along `dim`.
///
/// Candidate thresholds are the midpoints between consecutive distinct sorted
/// values; the post-split SSE is measured over every column. Returns
/// `(threshold, post_split_sse)`; ties keep the smaller threshold. A bucket
/// without two distinct values along `dim` cannot be split and returns that
/// value with the unsplit SSE.
pub fn optimal_split_threshold(bucket_samples: &DenseMatrix, dim: usize) -> Result<(f64, f64)> {
    if bucket_samples.rows() == 0 {
        return Err(AmuError::config("cannot split an empty bucket"));
    }
    if dim >= bucket_samples.cols() {
        return Err(AmuError::config(format!("split dim {dim} outside {} columns", bucket_samples.cols())));
    }
    let members: Vec<usize> = (0..bucket_samples.rows()).collect();
    Ok(best_split(bucket_samples, &members, dim))
}

pub(crate) fn best_split(samples: &DenseMatrix, members: &[usize], dim: usize) -> (f64, f64) {
    let n = members.len();
    let width = samples.cols();
    let mut order = members.to_vec();
    order.sort_unstable_by(|&a, &b| samples[(a, dim)].total_cmp(&samples[(b, dim)]));
    if n == 1 {
        return (samples[(order[0], dim)], 0.0);
    }

    // centre on the bucket mean to keep the prefix-sum SSE well conditioned
    let mut mean = vec![0.0; width];
    for &r in &order {
        mean.iter_mut().zip(samples.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut total_s1 = vec![0.0; width];
    let mut total_s2 = 0.0;
    for &r in &order {
        for (d, v) in samples.row(r).iter().enumerate() {
            let x = v - mean[d];
            total_s1[d] += x;
            total_s2 += x * x;
        }
    }
    let unsplit_sse = (total_s2 - total_s1.iter().map(|s| s * s).sum::<f64>() / n as f64).max(0.0);

    let mut s1 = vec![0.0; width];
    let mut s2 = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let row = samples.row(order[i]);
        for (d, v) in row.iter().enumerate() {
            let x = v - mean[d];
            s1[d] += x;
            s2 += x * x;
        }
        let here = row[dim];
        let next = samples[(order[i + 1], dim)];
        if next <= here {
            continue;
        }
        let nl = (i + 1) as f64;
        let nr = (n - i - 1) as f64;
        let mut left = s2;
        let mut right = total_s2 - s2;
        for d in 0..width {
            left -= s1[d] * s1[d] / nl;
            let r1 = total_s1[d] - s1[d];
            right -= r1 * r1 / nr;
        }
        let sse = left.max(0.0) + right.max(0.0);
        if best.is_none_or(|(_, b)| sse < b) {
            best = Some((0.5 * (here + next), sse));
        }
    }
    best.unwrap_or((samples[(order[0], dim)], unsplit_sse))
}

/// A learned tree together with the total SSE after each level.
#[derive(Clone, Debug)]
pub struct TreeFit {
    pub tree: SplitTree,
    pub level_sse: Vec<f64>,
}

/// Learns an `n_levels` tree greedily, level by level.
///
/// Every column is tried as the split dimension of a level; each bucket takes
/// its own SSE-optimal threshold along it, and the dimension with the lowest
/// summed post-split SSE wins (first dimension on ties). A bucket that is
/// empty inherits its parent's split value.
pub fn learn_split_tree(subspace_samples: &DenseMatrix, n_levels: usize) -> Result<SplitTree> {
    Ok(learn_split_tree_with_stats(subspace_samples, n_levels)?.tree)
}

pub fn learn_split_tree_with_stats(samples: &DenseMatrix, n_levels: usize) -> Result<TreeFit> {
    if n_levels == 0 || n_levels > 16 {
        return Err(AmuError::config(format!("tree depth {n_levels} outside [1, 16]")));
    }
    if samples.rows() == 0 || samples.cols() == 0 {
        return Err(AmuError::config("tree learning needs at least one sample and one column"));
    }
    let mut split_indexes = Vec::with_capacity(n_levels);
    let mut split_values = vec![0.0; (1 << n_levels) - 1];
    let mut level_sse = Vec::with_capacity(n_levels);
    let mut buckets: Vec<Vec<usize>> = vec![(0..samples.rows()).collect()];

    for level in 0..n_levels {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for dim in 0..samples.cols() {
            let mut total = 0.0;
            let mut thresholds = Vec::with_capacity(buckets.len());
            for (b, members) in buckets.iter().enumerate() {
                if members.is_empty() {
                    let inherited =
                        if level == 0 { 0.0 } else { split_values[SplitTree::heap_offset(level - 1, b / 2)] };
                    thresholds.push(inherited);
                    continue;
                }
                let (t, sse) = best_split(samples, members, dim);
                thresholds.push(t);
                total += sse;
            }
            if best.as_ref().is_none_or(|(_, b, _)| total < *b) {
                best = Some((dim, total, thresholds));
            }
        }
        let (dim, total, thresholds) = best.expect("at least one column");
        split_indexes.push(dim);
        level_sse.push(total);
        let mut next = Vec::with_capacity(buckets.len() * 2);
        for (b, members) in buckets.iter().enumerate() {
            let t = thresholds[b];
            split_values[SplitTree::heap_offset(level, b)] = t;
            let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&r| samples[(r, dim)] <= t);
            next.push(left);
            next.push(right);
        }
        buckets = next;
    }
    Ok(TreeFit { tree: SplitTree { split_indexes, split_values }, level_sse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::synth::generate_gaussian_mixture_labeled;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn column(values: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    /// Brute force: SSE of every midpoint split, recomputed from scratch.
    fn brute_force_split(m: &DenseMatrix, dim: usize) -> (f64, f64) {
        let mut vals: Vec<f64> = m.column(dim);
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut best = (vals[0], bucket_sse(m, &(0..m.rows()).collect::<Vec<_>>()));
        let mut found = false;
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = (0..m.rows()).partition(|&i| m[(i, dim)] <= t);
            let sse = bucket_sse(m, &l) + bucket_sse(m, &r);
            if !found || sse < best.1 - 1e-9 {
                best = (t, sse);
                found = true;
            }
        }
        best
    }

    #[test]
    fn two_point_split() {
        assert_eq!(optimal_split_threshold(&column(&[0.0, 10.0]), 0).unwrap(), (5.0, 0.0));
    }

    #[test]
    fn four_point_split() {
        let (t, sse) = optimal_split_threshold(&column(&[0.0, 1.0, 9.0, 10.0]), 0).unwrap();
        assert_eq!(t, 5.0);
        assert!((sse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_bucket() {
        assert_eq!(optimal_split_threshold(&column(&[3.5]), 0).unwrap(), (3.5, 0.0));
    }

    #[test]
    fn empty_bucket_is_rejected() {
        assert!(optimal_split_threshold(&DenseMatrix::zeros(0, 2), 0).is_err());
    }

    #[test]
    fn prefix_scan_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let data: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = DenseMatrix::from_vec(50, 4, data).unwrap();
            for dim in 0..4 {
                let (t, sse) = optimal_split_threshold(&m, dim).unwrap();
                let (bt, bsse) = brute_force_split(&m, dim);
                assert!((sse - bsse).abs() < 1e-8, "sse {sse} vs {bsse}");
                assert!((t - bt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn four_values_two_levels_reach_zero_sse() {
        let fit = learn_split_tree_with_stats(&column(&[0.0, 1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(*fit.level_sse.last().unwrap(), 0.0);
        let leaves = assign_buckets(&fit.tree, &column(&[0.0, 1.0, 2.0, 3.0]));
        assert_eq!(leaves, vec![0, 1, 2, 3]);
        // brute force: every ordered pair of thresholds over the three gaps
        let gaps = [0.5, 1.5, 2.5];
        let mut best = f64::INFINITY;
        for &root in &gaps {
            for &l in &gaps {
                for &r in &gaps {
                    let tree = SplitTree::new(vec![0, 0], vec![root, l, r]).unwrap();
                    let ids = assign_buckets(&tree, &column(&[0.0, 1.0, 2.0, 3.0]));
                    let mut sse = 0.0;
                    for leaf in 0..4 {
                        let members: Vec<usize> = (0..4).filter(|&i| ids[i] == leaf).collect();
                        sse += bucket_sse(&column(&[0.0, 1.0, 2.0, 3.0]), &members);
                    }
                    best = best.min(sse);
                }
            }
        }
        assert_eq!(best, 0.0);
    }

    #[test]
    fn identical_samples_route_left() {
        let m = DenseMatrix::from_vec(6, 3, vec![2.0; 18]).unwrap();
        let fit = learn_split_tree_with_stats(&m, 3).unwrap();
        assert!(fit.level_sse.iter().all(|&s| s == 0.0));
        assert_eq!(fit.tree.split_indexes, vec![0, 0, 0]);
        assert!(assign_buckets(&fit.tree, &m).iter().all(|&l| l == 0));
    }

    #[test]
    fn fewer_samples_than_buckets() {
        let m = column(&[1.0, 4.0]);
        let tree = learn_split_tree(&m, 3).unwrap();
        assert_eq!(tree.split_values.len(), 7);
        assert!(tree.split_values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn level_sse_never_increases() {
        let m = generate_gaussian_mixture_labeled(300, 6, 5, 5.0, 9).samples;
        let fit = learn_split_tree_with_stats(&m, 4).unwrap();
        assert!(fit.level_sse.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", fit.level_sse);
    }

    #[test]
    fn recovers_separated_clusters() {
        // four centers on the corners of a square spanned by dims 2 and 5,
        // jittered in the remaining dims; unit noise
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                (0..8)
                    .map(|d| match d {
                        2 => if k & 1 == 0 { -10.0 } else { 10.0 },
                        5 => if k & 2 == 0 { -10.0 } else { 10.0 },
                        _ => rng.random_range(-2.0..2.0),
                    })
                    .collect()
            })
            .collect();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for i in 0..200 {
            let k = i % 4;
            ids.push(k);
            data.extend(centers[k].iter().map(|c| c + noise.sample(&mut rng)));
        }
        let samples = DenseMatrix::from_vec(200, 8, data).unwrap();
        let tree = learn_split_tree(&samples, 2).unwrap();
        let leaves = assign_buckets(&tree, &samples);
        // majority mapping leaf -> cluster
        let mut agree = 0;
        for leaf in 0..4 {
            let mut counts = [0usize; 4];
            for (l, &c) in leaves.iter().zip(&ids) {
                if *l == leaf {
                    counts[c] += 1;
                }
            }
            agree += counts.iter().max().unwrap();
        }
        assert!(agree as f64 / 200.0 >= 0.95, "agreement {agree}/200");
    }

    #[test]
    fn encode_extremes() {
        let tree = SplitTree::new(vec![0, 1, 2], vec![0.5; 7]).unwrap();
        assert_eq!(tree.encode(&[0.0, 0.5, -1.0]), 0);
        assert_eq!(tree.encode(&[1.0, 2.0, 3.0]), 7);
    }
}
