//! Analytical throughput and memory model for a single approximate layer and
//! for the fold-based baseline unit.
//!
//! Delays are counted in units of `alpha`, the average cycle cost of one
//! elementary memory operation. Only memory geometry is modelled; FPGA
//! LUT/FF areas depend on the synthesizer and are not estimated.

use std::fmt;

use crate::error::{AmuError, Result};

/// How the `O×M` lookup tables are spread over memories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PartitionConfig {
    /// Every column in its own memory; all cells are fetched in one cycle.
    #[default]
    Complete,
    /// Columns grouped into dual-port ROMs by split factors `s` and `e`.
    Group { s: usize, e: usize },
}

impl PartitionConfig {
    /// Checks `1 <= S <= max(1, ⌊N/2⌋)`, `E >= 1` and `S·E <= M·N`.
    pub fn validate(&self, n_codebooks: usize, m_codebooks_out: usize) -> Result<()> {
        if let PartitionConfig::Group { s, e } = *self {
            let s_max = (n_codebooks / 2).max(1);
            if s == 0 || s > s_max {
                return Err(AmuError::config(format!("split factor S = {s} outside [1, {s_max}] for N = {n_codebooks}")));
            }
            if e == 0 {
                return Err(AmuError::config("split factor E must be at least 1"));
            }
            if s * e > m_codebooks_out * n_codebooks {
                return Err(AmuError::config(format!(
                    "S·E = {} exceeds M·N = {}",
                    s * e,
                    m_codebooks_out * n_codebooks
                )));
            }
        }
        Ok(())
    }

    /// Parses `complete` or `group:S,E`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        if t == "complete" {
            return Ok(PartitionConfig::Complete);
        }
        let bad = || AmuError::config(format!("partition `{text}` is neither `complete` nor `group:S,E`"));
        let rest = t.strip_prefix("group:").ok_or_else(bad)?;
        let (s, e) = rest.split_once(',').ok_or_else(bad)?;
        Ok(PartitionConfig::Group {
            s: s.trim().parse().map_err(|_| bad())?,
            e: e.trim().parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for PartitionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionConfig::Complete => write!(f, "complete"),
            PartitionConfig::Group { s, e } => write!(f, "group:{s},{e}"),
        }
    }
}

/// `(I, N, O, M)` of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub i_levels: usize,
    pub n_codebooks: usize,
    pub o_packages: usize,
    pub m_codebooks_out: usize,
}

impl LayerShape {
    pub fn new(i_levels: usize, n_codebooks: usize, o_packages: usize, m_codebooks_out: usize) -> Self {
        LayerShape { i_levels, n_codebooks, o_packages, m_codebooks_out }
    }

    /// Cells in one table: `N · 2^I`.
    pub fn cells_per_lut(&self) -> usize {
        self.n_codebooks << self.i_levels
    }

    pub fn lut_count(&self) -> usize {
        self.o_packages * self.m_codebooks_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostReport {
    pub ii_cycles: u64,
    pub encode_delay: u64,
    pub aggregate_delay: u64,
    pub rom_count: u64,
    pub lut_cells: u64,
    pub storage_bits: u64,
    pub clock_hz: f64,
    pub fps_at_clock: f64,
    pub alpha: u64,
}

/// Bits per stored table entry.
pub const LUT_ENTRY_BITS: u64 = 8;

/// Initiation interval and memory geometry of one layer.
///
/// `Complete` pipelines fully: II is 1 and encoding only adds `α·I` of
/// latency. `Group{S, E}` needs `⌈M·N/(S·E)⌉` dual-port ROMs, each read
/// `α·O·S·E` cycles per feature map; II is the larger of that and the `α·I`
/// package-encoding bottleneck. With `strict` the two are serialized
/// (packages delivered one by one rather than assembled).
pub fn amu_cost_with(shape: LayerShape, partition: PartitionConfig, alpha: u64, clock_hz: f64, strict: bool) -> Result<CostReport> {
    if alpha == 0 {
        return Err(AmuError::config("alpha must be at least 1"));
    }
    if shape.i_levels == 0 || shape.n_codebooks == 0 || shape.o_packages == 0 || shape.m_codebooks_out == 0 {
        return Err(AmuError::config(format!("layer shape {shape:?} has a zero dimension")));
    }
    partition.validate(shape.n_codebooks, shape.m_codebooks_out)?;
    let (i, n, o, m) =
        (shape.i_levels as u64, shape.n_codebooks as u64, shape.o_packages as u64, shape.m_codebooks_out as u64);
    let lut_cells = o * m * (n << i);
    let encode_delay = alpha * i;
    let (ii_cycles, aggregate_delay, rom_count) = match partition {
        PartitionConfig::Complete => (1, alpha, o * m * n),
        PartitionConfig::Group { s, e } => {
            let (s, e) = (s as u64, e as u64);
            let aggregate = alpha * o * s * e;
            let ii = if strict { encode_delay + aggregate } else { encode_delay.max(aggregate) };
            (ii, aggregate, (m * n).div_ceil(s * e))
        }
    };
    Ok(CostReport {
        ii_cycles,
        encode_delay,
        aggregate_delay,
        rom_count,
        lut_cells,
        storage_bits: lut_cells * LUT_ENTRY_BITS,
        clock_hz,
        fps_at_clock: fps(clock_hz, ii_cycles)?,
        alpha,
    })
}

pub fn amu_cost(shape: LayerShape, partition: PartitionConfig, alpha: u64) -> Result<CostReport> {
    amu_cost_with(shape, partition, alpha, 100e6, false)
}

/// Frames per second of a pipeline clocked at `clock_hz` with the given II.
pub fn fps(clock_hz: f64, ii: u64) -> Result<f64> {
    if ii == 0 {
        return Err(AmuError::config("initiation interval must be at least 1"));
    }
    Ok(clock_hz / ii as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MvauConfig {
    pub matrix_h: usize,
    pub matrix_w: usize,
    pub simd: usize,
    pub pe: usize,
}

/// Total fold `(MatrixH / SIMD) · (MatrixW / PE)`, which is also its II.
pub fn mvau_fold(cfg: MvauConfig) -> Result<u64> {
    if cfg.simd == 0 || cfg.pe == 0 || cfg.matrix_h % cfg.simd != 0 || cfg.matrix_w % cfg.pe != 0 {
        return Err(AmuError::config(format!(
            "SIMD {} must divide MatrixH {} and PE {} must divide MatrixW {}",
            cfg.simd, cfg.matrix_h, cfg.pe, cfg.matrix_w
        )));
    }
    Ok(((cfg.matrix_h / cfg.simd) * (cfg.matrix_w / cfg.pe)) as u64)
}

/// One row of a throughput/resource sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config: String,
    pub ii: u64,
    pub rom_count: u64,
    pub lut_cells: u64,
    pub storage_bits: u64,
    pub fps: f64,
}

pub const SWEEP_CSV_HEADER: &str = "config,ii,rom_count,lut_cells,storage_bits,fps";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!("\"{}\",{},{},{},{},{}", self.config, self.ii, self.rom_count, self.lut_cells, self.storage_bits, self.fps)
    }
}

/// Evaluates every partition (and optional fold-based baselines with binary
/// weights) and sorts rows by II, then by table cells.
pub fn pareto_sweep(
    shape: LayerShape,
    partitions: &[PartitionConfig],
    mvau: &[MvauConfig],
    alpha: u64,
    clock_hz: f64,
) -> Result<Vec<SweepRow>> {
    if partitions.is_empty() && mvau.is_empty() {
        return Err(AmuError::config("sweep needs at least one configuration"));
    }
    let mut rows = Vec::with_capacity(partitions.len() + mvau.len());
    for &p in partitions {
        let r = amu_cost_with(shape, p, alpha, clock_hz, false)?;
        rows.push(SweepRow {
            config: format!("amu:{p}"),
            ii: r.ii_cycles,
            rom_count: r.rom_count,
            lut_cells: r.lut_cells,
            storage_bits: r.storage_bits,
            fps: r.fps_at_clock,
        });
    }
    for &cfg in mvau {
        let fold = mvau_fold(cfg)?;
        rows.push(SweepRow {
            config: format!("mvau:pe={},simd={}", cfg.pe, cfg.simd),
            ii: fold,
            rom_count: 0,
            lut_cells: 0,
            storage_bits: (cfg.matrix_h * cfg.matrix_w) as u64,
            fps: fps(clock_hz, fold)?,
        });
    }
    rows.sort_by(|a, b| a.ii.cmp(&b.ii).then(a.lut_cells.cmp(&b.lut_cells)));
    Ok(rows)
}

/// Renders rows as CSV with the fixed header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
