//! Depth sweeps: how accuracy moves as hidden layers are stacked, for several
//! choices of the first layer.

use std::fmt;

use crate::error::{AmuError, Result};
use crate::fit::{fit_amu_network, FirstLayer, FitConfig};
use crate::model_io::idx::LabeledDataset;
use crate::model_io::mlp::{train_mlp, TrainConfig};

/// First-layer treatment in a sweep. Every later layer uses the body shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrontSpec {
    Exact,
    Amu { i_levels: usize, n_codebooks: usize },
}

impl FrontSpec {
    /// `exact` or `I,N`.
    pub fn parse(text: &str) -> Result<Self> {
        if text == "exact" {
            return Ok(FrontSpec::Exact);
        }
        let (i, n) = parse_pair(text)?;
        Ok(FrontSpec::Amu { i_levels: i, n_codebooks: n })
    }
}

impl fmt::Display for FrontSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrontSpec::Exact => write!(f, "exact"),
            FrontSpec::Amu { i_levels, n_codebooks } => write!(f, "{i_levels},{n_codebooks}"),
        }
    }
}

/// Parses `I,N`.
pub fn parse_pair(text: &str) -> Result<(usize, usize)> {
    let bad = || AmuError::config(format!("expected I,N but got '{text}'"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let i = a.trim().parse().map_err(|_| bad())?;
    let n = b.trim().parse().map_err(|_| bad())?;
    Ok((i, n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthSweepConfig {
    /// Number of linear layers, read-out included.
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub fronts: Vec<FrontSpec>,
    pub hidden: usize,
    /// `(I, N)` of every AMU layer after the first.
    pub body: (usize, usize),
    pub q_bits: u8,
    pub epochs: usize,
    pub fit_samples: usize,
}

impl Default for DepthSweepConfig {
    fn default() -> Self {
        DepthSweepConfig {
            depths: (4..=10).collect(),
            seeds: vec![0, 1, 2],
            fronts: vec![
                FrontSpec::Exact,
                FrontSpec::Amu { i_levels: 4, n_codebooks: 32 },
                FrontSpec::Amu { i_levels: 5, n_codebooks: 16 },
                FrontSpec::Amu { i_levels: 4, n_codebooks: 16 },
            ],
            hidden: 256,
            body: (4, 16),
            q_bits: 1,
            epochs: 3,
            fit_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub depth: usize,
    pub seed: u64,
    pub front: FrontSpec,
    pub mlp_accuracy: f64,
    pub accuracy: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "depth,front,seed,mlp_accuracy,amu_accuracy";

    pub fn to_csv(&self) -> String {
        format!("{},\"{}\",{},{:.4},{:.4}", self.depth, self.front, self.seed, self.mlp_accuracy, self.accuracy)
    }
}

/// `[input, hidden × (depth − 1), classes]`.
pub fn mlp_dims(input: usize, hidden: usize, depth: usize, classes: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat(hidden).take(depth.saturating_sub(1)));
    dims.push(classes);
    dims
}

/// Fit configuration for one front on a `depth`-layer MLP.
pub fn front_fit_config(front: FrontSpec, depth: usize, body: (usize, usize), q_bits: u8) -> FitConfig {
    match front {
        FrontSpec::Exact => FitConfig::new(FirstLayer::Exact(1), vec![body; depth - 1], q_bits),
        FrontSpec::Amu { i_levels, n_codebooks } => {
            let mut layers = vec![(i_levels, n_codebooks)];
            layers.extend(std::iter::repeat(body).take(depth - 1));
            FitConfig::new(FirstLayer::Amu, layers, q_bits)
        }
    }
}

/// Trains one MLP per (depth, seed) and fits every front to it. `on_row` sees
/// each row as soon as it is measured.
pub fn depth_sweep(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &DepthSweepConfig,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if cfg.depths.is_empty() || cfg.seeds.is_empty() || cfg.fronts.is_empty() {
        return Err(AmuError::config("sweep needs at least one depth, seed and front"));
    }
    if let Some(&d) = cfg.depths.iter().find(|&&d| d < 2) {
        return Err(AmuError::config(format!("depth {d} is below 2")));
    }
    if test.is_empty() {
        return Err(AmuError::config("empty evaluation set"));
    }
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        for &seed in &cfg.seeds {
            let dims = mlp_dims(train.dim(), cfg.hidden, depth, train.n_classes);
            let mlp = train_mlp(train, &TrainConfig::new(dims, cfg.epochs, seed))?;
            let mlp_accuracy = mlp.accuracy(test);
            for &front in &cfg.fronts {
                let mut fit_cfg = front_fit_config(front, depth, cfg.body, cfg.q_bits);
                fit_cfg.max_samples = cfg.fit_samples;
                let fitted = fit_amu_network(&mlp, &train.samples, &fit_cfg)?;
                let accuracy = fitted.network.accuracy(&test.samples, &test.labels)?;
                let row = SweepRow { depth, seed, front, mlp_accuracy, accuracy };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mean AMU accuracy over seeds for one (depth, front), if any rows match.
pub fn mean_accuracy(rows: &[SweepRow], depth: usize, front: FrontSpec) -> Option<f64> {
    let hits: Vec<f64> = rows.iter().filter(|r| r.depth == depth && r.front == front).map(|r| r.accuracy).collect();
    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}

/// Mean AMU accuracy of one front over every depth and seed.
pub fn front_mean(rows: &[SweepRow], front: FrontSpec) -> Option<f64> {
    let hits: Vec<f64> = rows.iter().filter(|r| r.front == front).map(|r| r.accuracy).collect();
    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::synth::generate_gaussian_mixture_labeled;

    #[test]
    fn fronts_round_trip_through_text() {
        for f in DepthSweepConfig::default().fronts {
            assert_eq!(FrontSpec::parse(&f.to_string()).unwrap(), f);
        }
        assert!(FrontSpec::parse("4;16").is_err());
    }

    #[test]
    fn dims_and_configs_match_depth() {
        assert_eq!(mlp_dims(784, 256, 4, 10), vec![784, 256, 256, 256, 10]);
        let c = front_fit_config(FrontSpec::Exact, 4, (4, 16), 1);
        assert_eq!(c.amu_layers.len(), 3);
        let c = front_fit_config(FrontSpec::Amu { i_levels: 5, n_codebooks: 16 }, 4, (4, 16), 1);
        assert_eq!(c.amu_layers, vec![(5, 16), (4, 16), (4, 16), (4, 16)]);
    }

    #[test]
    fn tiny_sweep_produces_every_row() {
        let mix = generate_gaussian_mixture_labeled(400, 16, 4, 3.0, 9);
        let data = LabeledDataset::new(mix.samples, mix.cluster_ids, 4).unwrap();
        let cfg = DepthSweepConfig {
            depths: vec![2, 3],
            seeds: vec![0],
            fronts: vec![FrontSpec::Exact, FrontSpec::Amu { i_levels: 2, n_codebooks: 4 }],
            hidden: 16,
            body: (2, 4),
            q_bits: 2,
            epochs: 2,
            fit_samples: 400,
        };
        let mut seen = 0;
        let rows = depth_sweep(&data, &data, &cfg, |_| seen += 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(seen, 4);
        assert!(mean_accuracy(&rows, 3, FrontSpec::Exact).is_some());
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    }
}
