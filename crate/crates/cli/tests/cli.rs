use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn amu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amu")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = amu(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data, a small MLP and a fitted network in a temp dir.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let f = Fixture { dir };
        ok(&["prepare-data", "--synthetic", "400", "--seed", "1", "--out", s(&f.data())]);
        ok(&["train-mlp", "--in", s(&f.data()), "--layers", "784,32,32,10", "--epochs", "2", "--out", s(&f.path("mlp.bin"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn fit(&self, out: &str, extra: &[&str]) -> Output {
        let mlp = self.path("mlp.bin");
        let data = self.data();
        let out = self.path(out);
        let mut args = vec!["fit-amu", "--in", s(&mlp), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        amu(&args)
    }
}

#[test]
fn pipeline_end_to_end() {
    let f = Fixture::new();
    let out = f.fit("net.bin", &["--nn", "4,8", "--q", "2", "--csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("layer,i,n,o,m,tables,partition"));
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        let (o, m, t): (usize, usize, usize) = (v[3].parse().unwrap(), v[4].parse().unwrap(), v[5].parse().unwrap());
        assert_eq!(t, o * m, "{line}");
    }

    let report = ok(&["eval", "--in", s(&f.path("mlp.bin")), "--in", s(&f.path("net.bin")), "--data", s(&f.data()), "--csv"]);
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows[0], "file,kind,samples,accuracy");
    assert!(rows[1].contains(",mlp,80,"));
    assert!(rows[2].contains(",amu,80,"));
    for r in &rows[1..] {
        let acc: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let cost = ok(&["cost", "--in", s(&f.path("net.bin")), "--csv"]);
    assert!(cost.starts_with("layer,i,n,o,m,partition,ii,"));
    assert_eq!(cost.lines().count(), 3);
}

#[test]
fn training_and_fitting_are_deterministic() {
    let f = Fixture::new();
    let again = f.path("mlp2.bin");
    ok(&["train-mlp", "--in", s(&f.data()), "--layers", "784,32,32,10", "--epochs", "2", "--out", s(&again)]);
    assert_eq!(fs::read(f.path("mlp.bin")).unwrap(), fs::read(&again).unwrap());

    assert!(f.fit("a.bin", &["--nn", "4,8"]).status.success());
    assert!(f.fit("b.bin", &["--nn", "4,8"]).status.success());
    assert_eq!(fs::read(f.path("a.bin")).unwrap(), fs::read(f.path("b.bin")).unwrap());
}

#[test]
fn fit_rejects_non_dividing_codebooks() {
    let f = Fixture::new();
    let out = f.fit("bad.bin", &["--nn", "4,5"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer 1"));
}

#[test]
fn bad_paths_and_bad_files() {
    let out = amu(&["train-mlp", "--in", "/nonexistent/dir", "--out", "/tmp/x.bin"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());

    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a model").unwrap();
    let data = dir.path().join("data");
    ok(&["prepare-data", "--synthetic", "50", "--out", s(&data)]);
    assert_eq!(code(&amu(&["eval", "--in", s(&junk), "--data", s(&data)])), 3);
    assert_eq!(code(&amu(&["cost", "--in", s(&junk)])), 3);

    // truncated IDX file
    let img = data.join("t10k-images-idx3-ubyte");
    let bytes = fs::read(&img).unwrap();
    fs::write(&img, &bytes[..bytes.len() / 2]).unwrap();
    let mlp = dir.path().join("m.bin");
    let out = amu(&["train-mlp", "--in", s(&data), "--layers", "784,8,10", "--epochs", "1", "--out", s(&mlp)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn empty_test_split_is_an_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["prepare-data", "--synthetic", "50", "--out", s(&data)]);
    let mlp = dir.path().join("m.bin");
    ok(&["train-mlp", "--in", s(&data), "--layers", "784,8,10", "--epochs", "1", "--out", s(&mlp)]);
    // zero-image IDX pair
    let mut img = vec![0, 0, 8, 3];
    img.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28]);
    fs::write(data.join("t10k-images-idx3-ubyte"), img).unwrap();
    fs::write(data.join("t10k-labels-idx1-ubyte"), [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    let out = amu(&["eval", "--in", s(&mlp), "--data", s(&data)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn cost_complete_runs_at_clock_rate() {
    let csv = ok(&["cost", "--nn", "4,8", "--om", "4,8", "--clock-mhz", "100", "--csv"]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "\"complete\"");
    assert_eq!(row[6], "1");
    assert_eq!(row[12].parse::<f64>().unwrap(), 1e8);
}

#[test]
fn cost_sweep_is_sorted_by_ii() {
    let csv = ok(&[
        "cost", "--nn", "4,16", "--om", "4,8", "--sweep", "--partition", "group:8,16", "--partition", "complete",
        "--partition", "group:2,16", "--partition", "group:4,16", "--partition", "group:1,16", "--mvau", "256,256,128,128",
    ]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("config,ii,rom_count,lut_cells,storage_bits,fps"));
    let ii: Vec<u64> = lines.map(|l| l.rsplit(',').nth(4).unwrap().parse().unwrap()).collect();
    assert_eq!(ii.len(), 6);
    assert!(ii.windows(2).all(|w| w[0] <= w[1]), "{ii:?}");
    assert_eq!(ii[0], 1);
}

#[test]
fn cost_rejects_out_of_range_split() {
    let out = amu(&["cost", "--nn", "4,8", "--om", "4,8", "--partition", "group:5,1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside"));
}

#[test]
fn unknown_flags_are_config_errors() {
    assert_eq!(code(&amu(&["cost", "--bogus"])), 2);
    assert_eq!(code(&amu(&["cost", "--nn", "4,8", "--om", "4,8", "--partition", "ring"])), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# cost run\nnn = 4,8\nom = 4,8\npartition = group:1,1 complete\nalpha = 2\ncsv = true\nepochs = 9\n").unwrap();
    let csv = ok(&["cost", "--config", s(&cfg)]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    // Group(1,1): II = max(α·I, α·O·S·E) = max(8, 8)
    assert!(rows[1].contains(",\"group:1,1\",8,"), "{}", rows[1]);

    let csv = ok(&["cost", "--config", s(&cfg), "--alpha", "1", "--partition", "complete"]);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",\"complete\",1,"));

    fs::write(&cfg, "nn 4,8\n").unwrap();
    assert_eq!(code(&amu(&["cost", "--config", s(&cfg)])), 2);
}
