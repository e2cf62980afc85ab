use crate::error::{AmuError, Result};
use crate::matrix::DenseMatrix;

/// Successive-thresholding quantizer: one sorted vector of `2^Q − 1`
/// thresholds per output position. The output code of an accumulator is the
/// number of thresholds `<=` it.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSet {
    pub q_bits: u8,
    pub per_position: Vec<Vec<f64>>,
}

impl ThresholdSet {
    pub fn new(q_bits: u8, per_position: Vec<Vec<f64>>) -> Result<Self> {
        if !(1..=16).contains(&q_bits) {
            return Err(AmuError::config(format!("q_bits {q_bits} outside [1, 16]")));
        }
        let want = (1usize << q_bits) - 1;
        for (p, t) in per_position.iter().enumerate() {
            if t.len() != want {
                return Err(AmuError::config(format!("position {p}: {} thresholds, expected {want}", t.len())));
            }
            if t.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(AmuError::config(format!("position {p}: thresholds not sorted")));
            }
        }
        Ok(ThresholdSet { q_bits, per_position })
    }

    pub fn len(&self) -> usize {
        self.per_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_position.is_empty()
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.q_bits) - 1
    }

    /// Code of `acc` at `position`: `#{t : t <= acc}`, clamped to `2^Q − 1`.
    #[inline]
    pub fn quantize(&self, position: usize, acc: f64) -> u32 {
        let t = &self.per_position[position];
        (t.partition_point(|&x| x <= acc) as u32).min(self.max_code())
    }

    /// Keeps the listed positions, in order (repeats allowed).
    pub fn select(&self, positions: &[usize]) -> ThresholdSet {
        ThresholdSet {
            q_bits: self.q_bits,
            per_position: positions.iter().map(|&p| self.per_position[p].clone()).collect(),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Places thresholds at the `k / 2^Q` quantiles (`k = 1 … 2^Q − 1`) of each
/// column of `pre_activation_samples` (one column per output position).
pub fn calibrate_thresholds(pre_activation_samples: &DenseMatrix, q_bits: u8) -> Result<ThresholdSet> {
    if !(1..=16).contains(&q_bits) {
        return Err(AmuError::config(format!("q_bits {q_bits} outside [1, 16]")));
    }
    if pre_activation_samples.rows() == 0 {
        return Err(AmuError::config("threshold calibration needs at least one sample"));
    }
    let levels = 1usize << q_bits;
    let per_position = (0..pre_activation_samples.cols())
        .map(|c| {
            let mut col = pre_activation_samples.column(c);
            col.sort_by(f64::total_cmp);
            (1..levels).map(|k| quantile_sorted(&col, k as f64 / levels as f64)).collect()
        })
        .collect();
    ThresholdSet::new(q_bits, per_position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: Vec<f64>) -> DenseMatrix {
        DenseMatrix::from_vec(values.len(), 1, values).unwrap()
    }

    #[test]
    fn symmetric_one_bit_threshold_is_median() {
        let values: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        let t = calibrate_thresholds(&column(values), 1).unwrap();
        assert!(t.per_position[0][0].abs() < 1e-12);
    }

    #[test]
    fn uniform_two_bit_thresholds() {
        let values: Vec<f64> = (0..4000).map(|i| i as f64 / 1000.0).collect();
        let t = calibrate_thresholds(&column(values), 2).unwrap();
        for (got, want) in t.per_position[0].iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_distribution() {
        let t = calibrate_thresholds(&column(vec![3.0; 10]), 2).unwrap();
        assert_eq!(t.per_position[0], vec![3.0; 3]);
        assert_eq!(t.quantize(0, 2.9), 0);
        assert_eq!(t.quantize(0, 3.0), 3);
    }

    #[test]
    fn count_rule() {
        let t = ThresholdSet::new(2, vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(t.quantize(0, 0.5), 0);
        assert_eq!(t.quantize(0, 2.0), 2);
        assert_eq!(t.quantize(0, 9.0), 3);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(ThresholdSet::new(1, vec![vec![1.0, 0.0, 2.0]]).is_err());
        assert!(ThresholdSet::new(2, vec![vec![2.0, 1.0, 3.0]]).is_err());
    }

    proptest! {
        #[test]
        fn quantizer_is_monotone(mut ts in prop::collection::vec(-10.0f64..10.0, 7), a in -20.0f64..20.0, b in -20.0f64..20.0) {
            ts.sort_by(f64::total_cmp);
            let set = ThresholdSet::new(3, vec![ts]).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(set.quantize(0, lo) <= set.quantize(0, hi));
        }
    }
}
