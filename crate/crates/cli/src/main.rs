//! `amu`: data preparation, reference training, AMU fitting, evaluation,
//! cost reports and depth sweeps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error.

mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amu::cost::{amu_cost_with, pareto_sweep, sweep_csv, LayerShape, MvauConfig, PartitionConfig};
use amu::experiment::{depth_sweep, parse_pair, DepthSweepConfig, FrontSpec, SweepRow};
use amu::fit::{fit_amu_network, FirstLayer, FitConfig, FitTargets, PrototypeFit};
use amu::model_io::container::{decode_amu_network, decode_mlp};
use amu::model_io::{
    generate_gaussian_mixture_labeled, load_amu_network, load_mnist_split, save_amu_network, save_amu_network_compact,
    save_mlp, train_mlp, write_idx_dataset, LabeledDataset, TrainConfig,
};
use amu::{AmuError, DenseMatrix};
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amu", version, about = "LUT-based approximate multiplication for quantized MLPs")]
struct Cli {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate MNIST IDX files (or synthesize a dataset) and write both splits to --out.
    PrepareData(PrepareArgs),
    /// Train the reference MLP.
    TrainMlp(TrainArgs),
    /// Fit AMU layers to a trained MLP.
    FitAmu(FitArgs),
    /// Accuracy of MLP or AMU network files on the test split.
    Eval(EvalArgs),
    /// Initiation interval, memory and throughput estimates.
    Cost(CostArgs),
    /// Accuracy against depth for several first-layer choices.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory holding train-/t10k- images and labels in IDX format.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Generate this many synthetic 28x28 training samples instead (plus a fifth as many test samples).
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared data directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated widths, input first; defaults to input,256,256,256,classes.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Trained MLP file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Prepared data directory (training split is used for fitting).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "exact")]
    first_layer: String,
    /// Exact layers in front of the first AMU layer.
    #[arg(long, default_value_t = 1)]
    exact_layers: usize,
    /// `I,N` per AMU layer in order; a single value applies to all of them.
    #[arg(long, action = clap::ArgAction::Append, required = true)]
    nn: Vec<String>,
    /// Bits per activation code.
    #[arg(long, default_value_t = 1)]
    q: u8,
    #[arg(long, default_value = "complete")]
    partition: String,
    /// `means` or `ridge`.
    #[arg(long, default_value = "means")]
    prototypes: String,
    /// `reference` or `observed`.
    #[arg(long, default_value = "reference")]
    targets: String,
    #[arg(long, default_value_t = amu::fit::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    fit_samples: usize,
    /// Accepted for uniformity; fitting is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Omit prototypes from the file (inference does not need them).
    #[arg(long)]
    compact: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Model files (MLP or AMU network), repeatable.
    #[arg(long = "in", action = clap::ArgAction::Append, required = true)]
    input: Vec<PathBuf>,
    /// Prepared data directory.
    #[arg(long)]
    data: PathBuf,
    /// Evaluate only the first this many test samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    /// AMU network file; otherwise the layer is described by --nn and --om.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// `I,N` of the layer.
    #[arg(long, action = clap::ArgAction::Append)]
    nn: Vec<String>,
    /// `O,M`: output packages and next-layer codebooks.
    #[arg(long)]
    om: Option<String>,
    /// `complete` or `group:S,E`, repeatable.
    #[arg(long, action = clap::ArgAction::Append)]
    partition: Vec<String>,
    /// Rank every partition (and --mvau baselines) sorted by II.
    #[arg(long)]
    sweep: bool,
    /// Fold baseline `H,W,SIMD,PE`, repeatable (sweep only).
    #[arg(long, action = clap::ArgAction::Append)]
    mvau: Vec<String>,
    #[arg(long, default_value_t = 1)]
    alpha: u64,
    #[arg(long, default_value_t = 100.0)]
    clock_mhz: f64,
    /// Serialize encoding and aggregation in grouped layers.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Prepared data directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated depths (linear layers including the read-out).
    #[arg(long, default_value = "4,5,6,7,8,9,10")]
    depths: String,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// `exact` or `I,N`, repeatable; defaults to exact, 4,32, 5,16 and 4,16.
    #[arg(long, action = clap::ArgAction::Append)]
    front: Vec<String>,
    /// `I,N` of every layer after the first.
    #[arg(long, action = clap::ArgAction::Append)]
    nn: Vec<String>,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    q: u8,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 10_000)]
    fit_samples: usize,
    /// Evaluate only the first this many test samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<AmuError> for CliError {
    fn from(e: AmuError) -> Self {
        match &e {
            _ if e.is_config() => CliError::Config(e.to_string()),
            AmuError::Io(io) if io.kind() == io::ErrorKind::NotFound => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == io::ErrorKind::NotFound {
        CliError::Config(msg)
    } else {
        CliError::Data(msg)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let args = match config::merge_config(&Cli::command(), args) {
        Ok(a) => a,
        Err(config::ConfigError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Cmd::PrepareData(a) => prepare_data(a),
        Cmd::TrainMlp(a) => train(a),
        Cmd::FitAmu(a) => fit(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Cost(a) => cost(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Config(msg) | CliError::Data(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}

/// Writes `text` to `out` or stdout.
fn emit(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

fn load_split(dir: &Path, train: bool) -> CliResult<LabeledDataset> {
    if !dir.is_dir() {
        return Err(cfg_err(format!("data directory {} does not exist", dir.display())));
    }
    let data = load_mnist_split(dir, train)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{} split in {} is empty", if train { "train" } else { "test" }, dir.display())));
    }
    Ok(data)
}

fn split_names(train: bool) -> (&'static str, &'static str) {
    if train {
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    } else {
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    }
}

fn synthetic_splits(n_train: usize, seed: u64) -> CliResult<(LabeledDataset, LabeledDataset)> {
    if n_train == 0 {
        return Err(cfg_err("--synthetic needs at least one sample"));
    }
    let n_test = (n_train / 5).max(1);
    let mix = generate_gaussian_mixture_labeled(n_train + n_test, 784, 10, 3.0, seed);
    let (lo, hi) = mix.samples.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scaled: Vec<f64> = mix.samples.as_slice().iter().map(|v| (v - lo) / span).collect();
    let all = DenseMatrix::from_vec(n_train + n_test, 784, scaled)?;
    let part = |range: std::ops::Range<usize>| -> CliResult<LabeledDataset> {
        let idx: Vec<usize> = range.collect();
        let labels = idx.iter().map(|&i| mix.cluster_ids[i]).collect();
        Ok(LabeledDataset::new(all.select_rows(&idx), labels, 10)?)
    };
    Ok((part(0..n_train)?, part(n_train..n_train + n_test)?))
}

fn prepare_data(a: PrepareArgs) -> CliResult {
    let (train, test) = match (&a.input, a.synthetic) {
        (Some(_), Some(_)) => return Err(cfg_err("give either --in or --synthetic, not both")),
        (None, None) => return Err(cfg_err("prepare-data needs --in DIR or --synthetic N")),
        (Some(dir), None) => (load_split(dir, true)?, load_split(dir, false)?),
        (None, Some(n)) => synthetic_splits(n, a.seed)?,
    };
    if train.dim() != test.dim() {
        return Err(CliError::Data(format!("train has {} features, test has {}", train.dim(), test.dim())));
    }
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut text = String::new();
    if a.csv {
        text.push_str("split,samples,dim,classes\n");
    }
    for (is_train, data) in [(true, &train), (false, &test)] {
        let (img, lbl) = split_names(is_train);
        write_idx_dataset(data, &a.out.join(img), &a.out.join(lbl))?;
        let name = if is_train { "train" } else { "test" };
        if a.csv {
            text.push_str(&format!("{name},{},{},{}\n", data.len(), data.dim(), data.n_classes));
        } else {
            text.push_str(&format!("{name}: {} samples, {} features, {} classes\n", data.len(), data.dim(), data.n_classes));
        }
    }
    emit(&text, None)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| cfg_err(format!("bad {what} list '{text}'"))))
        .collect()
}

fn train(a: TrainArgs) -> CliResult {
    let train = load_split(&a.input, true)?;
    let test = load_split(&a.input, false)?;
    let dims = match &a.layers {
        Some(l) => parse_list(l, "layer")?,
        None => vec![train.dim(), 256, 256, 256, train.n_classes],
    };
    let mut cfg = TrainConfig::new(dims, a.epochs, a.seed);
    cfg.learning_rate = a.learning_rate;
    cfg.batch_size = a.batch_size;
    let mlp = train_mlp(&train, &cfg)?;
    save_mlp(&mlp, &a.out)?;
    let acc = mlp.accuracy(&test);
    let text = if a.csv {
        format!("samples,accuracy\n{},{acc:.4}\n", test.len())
    } else {
        format!("wrote {}\ntest accuracy {acc:.4} on {} samples\n", a.out.display(), test.len())
    };
    emit(&text, None)
}

fn fit(a: FitArgs) -> CliResult {
    let bytes = fs::read(&a.input).map_err(|e| io_err(&a.input, e))?;
    let mlp = decode_mlp(&bytes)?;
    let train = load_split(&a.data, true)?;
    let first = match a.first_layer.as_str() {
        "exact" => FirstLayer::Exact(a.exact_layers),
        "amu" => FirstLayer::Amu,
        other => return Err(cfg_err(format!("--first-layer must be exact or amu, got {other}"))),
    };
    let n_exact = if first == FirstLayer::Amu { 0 } else { a.exact_layers };
    let n_amu = mlp.layers.len().checked_sub(n_exact).filter(|&n| n > 0).ok_or_else(|| {
        cfg_err(format!("{n_exact} exact layers leave nothing to fit in a {}-layer MLP", mlp.layers.len()))
    })?;
    let pairs = a.nn.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>, _>>()?;
    let pairs = match pairs.len() {
        1 => vec![pairs[0]; n_amu],
        n if n == n_amu => pairs,
        n => return Err(cfg_err(format!("{n} --nn values given for {n_amu} AMU layers"))),
    };
    let mut cfg = FitConfig::new(first, pairs, a.q);
    cfg.partition = PartitionConfig::parse(&a.partition)?;
    cfg.prototypes = PrototypeFit::parse(&a.prototypes)?;
    cfg.targets = FitTargets::parse(&a.targets)?;
    cfg.lambda = a.lambda;
    cfg.max_samples = a.fit_samples;
    let fitted = fit_amu_network(&mlp, &train.samples, &cfg)?;
    if a.compact {
        save_amu_network_compact(&fitted.network, &a.out)?;
    } else {
        save_amu_network(&fitted.network, &a.out)?;
    }
    let mut text = String::from(if a.csv { "layer,i,n,o,m,tables,partition\n" } else { "" });
    for (k, l) in fitted.network.layers.iter().enumerate() {
        let s = l.shape;
        let tables = l.luts.n_tables();
        if a.csv {
            text.push_str(&format!(
                "{},{},{},{},{},{tables},\"{}\"\n",
                n_exact + k,
                s.i_levels,
                s.n_codebooks,
                s.o_packages,
                s.m_codebooks_out,
                l.partition
            ));
        } else {
            text.push_str(&format!(
                "layer {}: I={} N={} O={} M={} tables={tables} {}\n",
                n_exact + k,
                s.i_levels,
                s.n_codebooks,
                s.o_packages,
                s.m_codebooks_out,
                l.partition
            ));
        }
    }
    if !a.csv {
        text.push_str(&format!("wrote {}\n", a.out.display()));
    }
    emit(&text, None)
}

fn eval(a: EvalArgs) -> CliResult {
    let mut test = load_split(&a.data, false)?;
    if let Some(n) = a.limit {
        if n == 0 {
            return Err(cfg_err("--limit must be positive"));
        }
        test = test.head(n);
    }
    let mut text = String::from(if a.csv { "file,kind,samples,accuracy\n" } else { "" });
    for path in &a.input {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let (kind, acc) = match bytes.get(..4) {
            Some(b"AMUN") => ("amu", decode_amu_network(&bytes)?.accuracy(&test.samples, &test.labels)?),
            Some(b"AMLP") => ("mlp", decode_mlp(&bytes)?.accuracy(&test)),
            _ => return Err(CliError::Data(format!("{} is not a model file", path.display()))),
        };
        if a.csv {
            text.push_str(&format!("{},{kind},{},{acc:.4}\n", path.display(), test.len()));
        } else {
            text.push_str(&format!("{} ({kind}): accuracy {acc:.4} on {} samples\n", path.display(), test.len()));
        }
    }
    emit(&text, a.out.as_deref())
}

const COST_HEADER: &str = "layer,i,n,o,m,partition,ii,encode_delay,aggregate_delay,rom_count,lut_cells,storage_bits,fps";

fn cost(a: CostArgs) -> CliResult {
    if a.clock_mhz.is_nan() || a.clock_mhz <= 0.0 {
        return Err(cfg_err("--clock-mhz must be positive"));
    }
    let clock = a.clock_mhz * 1e6;
    let partitions = a.partition.iter().map(|p| PartitionConfig::parse(p)).collect::<Result<Vec<_>, _>>()?;
    let mut layers: Vec<(String, LayerShape, Vec<PartitionConfig>)> = Vec::new();
    if let Some(path) = &a.input {
        let net = load_amu_network(path)?;
        for (k, l) in net.layers.iter().enumerate() {
            let parts = if partitions.is_empty() { vec![l.partition] } else { partitions.clone() };
            layers.push((k.to_string(), l.shape, parts));
        }
    } else {
        let [nn] = a.nn.as_slice() else {
            return Err(cfg_err("cost needs --in FILE or exactly one --nn I,N with --om O,M"));
        };
        let (i, n) = parse_pair(nn)?;
        let om = a.om.as_deref().ok_or_else(|| cfg_err("cost needs --om O,M with --nn"))?;
        let (o, m) = parse_pair(om).map_err(|_| cfg_err(format!("expected O,M but got '{om}'")))?;
        let parts = if partitions.is_empty() { vec![PartitionConfig::Complete] } else { partitions.clone() };
        layers.push(("0".into(), LayerShape::new(i, n, o, m), parts));
    }

    if a.sweep {
        let mvau = a.mvau.iter().map(|s| parse_mvau(s)).collect::<CliResult<Vec<_>>>()?;
        let mut text = String::new();
        for (name, shape, parts) in &layers {
            let rows = pareto_sweep(*shape, parts, &mvau, a.alpha, clock)?;
            if layers.len() > 1 {
                text.push_str(&format!("# layer {name}\n"));
            }
            text.push_str(&sweep_csv(&rows));
        }
        return emit(&text, a.out.as_deref());
    }

    let mut text = String::from(if a.csv { COST_HEADER } else { "" });
    if a.csv {
        text.push('\n');
    }
    for (name, s, parts) in &layers {
        for &p in parts {
            let r = amu_cost_with(*s, p, a.alpha, clock, a.strict)?;
            if a.csv {
                text.push_str(&format!(
                    "{name},{},{},{},{},\"{p}\",{},{},{},{},{},{},{}\n",
                    s.i_levels,
                    s.n_codebooks,
                    s.o_packages,
                    s.m_codebooks_out,
                    r.ii_cycles,
                    r.encode_delay,
                    r.aggregate_delay,
                    r.rom_count,
                    r.lut_cells,
                    r.storage_bits,
                    r.fps_at_clock
                ));
            } else {
                text.push_str(&format!(
                    "layer {name} (I={} N={} O={} M={}, {p}): II {} cycles, {} ROMs, {} cells, {} bits, {:.1} fps\n",
                    s.i_levels,
                    s.n_codebooks,
                    s.o_packages,
                    s.m_codebooks_out,
                    r.ii_cycles,
                    r.rom_count,
                    r.lut_cells,
                    r.storage_bits,
                    r.fps_at_clock
                ));
            }
        }
    }
    emit(&text, a.out.as_deref())
}

fn parse_mvau(text: &str) -> CliResult<MvauConfig> {
    let v: Vec<usize> = parse_list(text, "H,W,SIMD,PE")?;
    let [h, w, simd, pe] = v.as_slice() else {
        return Err(cfg_err(format!("--mvau expects H,W,SIMD,PE, got '{text}'")));
    };
    Ok(MvauConfig { matrix_h: *h, matrix_w: *w, simd: *simd, pe: *pe })
}

fn sweep(a: SweepArgs) -> CliResult {
    let train = load_split(&a.input, true)?;
    let mut test = load_split(&a.input, false)?;
    if let Some(n) = a.limit {
        test = test.head(n);
    }
    let mut cfg = DepthSweepConfig {
        depths: parse_list(&a.depths, "depth")?,
        seeds: parse_list(&a.seeds, "seed")?,
        hidden: a.hidden,
        q_bits: a.q,
        epochs: a.epochs,
        fit_samples: a.fit_samples,
        ..DepthSweepConfig::default()
    };
    if !a.front.is_empty() {
        cfg.fronts = a.front.iter().map(|f| FrontSpec::parse(f)).collect::<Result<_, _>>()?;
    }
    match a.nn.as_slice() {
        [] => {}
        [nn] => cfg.body = parse_pair(nn)?,
        _ => return Err(cfg_err("sweep takes a single --nn for the body layers")),
    }
    let mut text = String::from(SweepRow::CSV_HEADER);
    text.push('\n');
    let live = a.out.is_none();
    if live {
        emit(&text, None)?;
    }
    let rows = depth_sweep(&train, &test, &cfg, |r| {
        if live {
            // best effort: a closed pipe only loses progress lines
            let _ = writeln!(io::stdout(), "{}", r.to_csv());
        } else if !a.csv {
            eprintln!("{}", r.to_csv());
        }
    })?;
    if let Some(out) = &a.out {
        for r in &rows {
            text.push_str(&r.to_csv());
            text.push('\n');
        }
        emit(&text, Some(out))?;
    }
    Ok(())
}
