//! `hetknock`: knockoff generation, VD/VDBP tests and Monte Carlo tables
//! from the command line.
//!
//! Exit codes: 0 success (including "not rejected"), 2 usage, I/O or parse
//! errors, 3 knockoff generation failure, 4 degenerate statistic.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hetknock_core::data::{read_csv, write_csv, CsvTable, Dataset};
use hetknock_core::hetero::{
    bh_adjust, is_binary, vd_test_features, vdbp_test, BreakMode, Centering, TestConfig, TestReport,
    BINARY_BREAK,
};
use hetknock_core::knockoff::{generate_knockoffs, knockoff_diagnostics, KnockoffGenConfig};
use hetknock_core::rng::{derive_seed, STREAM_KNOCKOFF};
use hetknock_core::sim::{run_experiment, Dgp, FeatureDist, SimulationScenario, TestKind};
use hetknock_core::{Error, ForestConfig};

use manifest::{write_atomic, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "hetknock", version, about = "Knockoff-based tests for heteroskedasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate coordinate-wise Gaussian knockoffs for x1..xp.
    Knockoff(KnockoffArgs),
    /// Variance-difference test for one or more features.
    Vd(VdArgs),
    /// Variance-difference Breusch-Pagan test for any heteroskedasticity.
    Vdbp(TestArgs),
    /// Monte Carlo rejection rates for a simulated scenario.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct Shared {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct KnockoffArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON path (default: <out>.diagnostics.json).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    screen_frac: f64,
    #[arg(long, default_value_t = 1e-10)]
    psd_tol: f64,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CenterSplit {
    Full,
    Independent,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed break applied to every feature.
    #[arg(long = "break", conflicts_with = "select_break", allow_hyphen_values = true)]
    brk: Option<f64>,
    /// Select breaks from quartile grids on a screening half.
    #[arg(long)]
    select_break: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05")]
    alpha: Vec<f64>,
    /// Generate knockoffs instead of reading xk1..xkp.
    #[arg(long)]
    gen_knockoffs: bool,
    #[arg(long, default_value_t = 0.25)]
    screen_frac: f64,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, value_enum, default_value_t = CenterSplit::Full)]
    center_split: CenterSplit,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct VdArgs {
    /// One-based feature index, a comma-separated list, or `all`.
    #[arg(long)]
    feature: String,
    /// Benjamini-Hochberg level applied across the tested features.
    #[arg(long)]
    fdr: Option<f64>,
    #[command(flatten)]
    test: TestArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SimTest {
    Vd,
    Vdbp,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    dgp: String,
    #[arg(long, value_enum)]
    test: SimTest,
    /// Features for VD (one-based list or `all`).
    #[arg(long, default_value = "all")]
    features: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value = "gaussian")]
    dist: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
    alpha: Vec<f64>,
    #[arg(long = "break", allow_hyphen_values = true)]
    brk: Option<f64>,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, default_value_t = 0.25)]
    screen_frac: f64,
    /// Output path; JSON and CSV are both written (extension picks the primary).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Knockoff(String),
    Degenerate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Knockoff(_) => 3,
            Failure::Degenerate(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateVariance { .. } => Failure::Degenerate(format!(
                "{e} (the knockoff coincides with the feature around the break, or residuals vanish)"
            )),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Knockoff(a) => a.shared.threads,
        Command::Vd(a) => a.test.shared.threads,
        Command::Vdbp(a) => a.shared.threads,
        Command::Simulate(a) => a.shared.threads,
    };
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Knockoff(a) => cmd_knockoff(a),
        Command::Vd(a) => cmd_vd(a),
        Command::Vdbp(a) => cmd_vdbp(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Knockoff(m) | Failure::Degenerate(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn read_input(path: &Path) -> CliResult<(Vec<u8>, CsvTable)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let table = read_csv(bytes.as_slice()).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok((bytes, table))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, bytes).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Failure::Usage(format!("cannot write to stdout: {e}")))
        }
    }
}

fn opts(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Serialize)]
struct KnockoffDiagnosticsOut<'a> {
    manifest: &'a RunManifest,
    screen_size: usize,
    corr: &'a [f64],
    offdiag_mean_sq_dev: f64,
    s_hat: Vec<f64>,
    cond_var: Vec<f64>,
}

fn cmd_knockoff(a: KnockoffArgs) -> CliResult<()> {
    let (bytes, table) = read_input(&a.input)?;
    let cfg = KnockoffGenConfig { screen_fraction: a.screen_frac, psd_tolerance: a.psd_tol, seed: a.shared.seed };
    let (xk, model) = generate_knockoffs(&table.x, &cfg).map_err(|e| Failure::Knockoff(e.to_string()))?;
    let diag = knockoff_diagnostics(&table.x, &xk).map_err(|e| Failure::Knockoff(e.to_string()))?;

    let manifest = RunManifest::new(
        "knockoff",
        opts(&[("screen_frac", a.screen_frac.to_string()), ("psd_tol", a.psd_tol.to_string())]),
        a.shared.seed,
        Some(&bytes),
    );
    let mut csv = Vec::new();
    write_csv(&mut csv, &table.x, Some(&xk), table.y.as_deref())?;
    let out_diag = KnockoffDiagnosticsOut {
        manifest: &manifest,
        screen_size: model.coords.first().map_or(0, |c| c.screen_set.len()),
        corr: &diag.corr,
        offdiag_mean_sq_dev: diag.offdiag_mean_sq_dev,
        s_hat: model.coords.iter().map(|c| c.s_hat).collect(),
        cond_var: model.coords.iter().map(|c| c.cond_var).collect(),
    };
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".diagnostics.json");
        PathBuf::from(s)
    });
    let json = to_json(&out_diag);
    emit(Some(&a.out), &csv)?;
    emit(Some(&diag_path), &json)
}

/// Loads the dataset and makes sure knockoff columns are present.
fn prepare(a: &TestArgs) -> CliResult<(Vec<u8>, Dataset)> {
    let (bytes, table) = read_input(&a.input)?;
    let mut ds = table.into_dataset()?;
    if a.gen_knockoffs {
        let cfg = KnockoffGenConfig {
            screen_fraction: a.screen_frac,
            seed: derive_seed(a.shared.seed, &[STREAM_KNOCKOFF]),
            ..Default::default()
        };
        let (xk, _) = generate_knockoffs(&ds.x, &cfg).map_err(|e| Failure::Knockoff(e.to_string()))?;
        ds.x_knock = Some(xk);
    } else if ds.x_knock.is_none() {
        return Err(Failure::Usage(
            "input has no knockoff columns xk1..xkp; pass --gen-knockoffs to generate them".into(),
        ));
    }
    Ok((bytes, ds))
}

fn test_config(a: &TestArgs) -> TestConfig {
    TestConfig {
        forest: ForestConfig {
            n_trees: a.trees,
            mtry: a.mtry,
            min_leaf: a.min_leaf,
            seed: a.shared.seed,
            ..Default::default()
        },
        centering: match a.center_split {
            CenterSplit::Full => Centering::Full,
            CenterSplit::Independent => Centering::Holdout { fraction: 0.5 },
        },
        alphas: a.alpha.clone(),
        seed: a.shared.seed,
        ..Default::default()
    }
}

/// Explicit flags win; otherwise 0/1 features get the fixed break 0.5 and
/// everything else gets break selection.
fn break_mode(a: &TestArgs, ds: &Dataset, features: &[usize]) -> BreakMode {
    if let Some(b) = a.brk {
        BreakMode::Fixed(b)
    } else if a.select_break {
        BreakMode::Select
    } else if features.iter().all(|&j| is_binary(hetknock_core::data::column(&ds.x, j))) {
        BreakMode::Fixed(BINARY_BREAK)
    } else {
        BreakMode::Select
    }
}

fn test_options(a: &TestArgs, mode: BreakMode) -> Vec<(&'static str, String)> {
    vec![
        (
            "break",
            match mode {
                BreakMode::Fixed(b) => b.to_string(),
                BreakMode::Select => "select".into(),
            },
        ),
        ("alpha", fmt_list(&a.alpha)),
        ("gen_knockoffs", a.gen_knockoffs.to_string()),
        ("screen_frac", a.screen_frac.to_string()),
        ("trees", a.trees.to_string()),
        ("mtry", a.mtry.map_or("auto".into(), |m| m.to_string())),
        ("min_leaf", a.min_leaf.to_string()),
        ("center_split", format!("{:?}", a.center_split).to_lowercase()),
    ]
}

fn parse_features(list: &str, p: usize) -> CliResult<Vec<usize>> {
    if list.trim() == "all" {
        return Ok((0..p).collect());
    }
    list.split(',')
        .map(|s| {
            let j: usize = s
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad feature index `{s}`")))?;
            if j == 0 || j > p {
                return Err(Failure::Usage(format!("feature {j} out of range 1..={p}")));
            }
            Ok(j - 1)
        })
        .collect()
}

#[derive(Serialize)]
struct SingleReport<'a> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    report: &'a TestReport,
}

#[derive(Serialize)]
struct FeatureEntry {
    feature: usize,
    feature_name: String,
    #[serde(flatten)]
    report: Option<TestReport>,
    degenerate: bool,
    bh_reject: Option<bool>,
}

#[derive(Serialize)]
struct MultiReport<'a> {
    manifest: &'a RunManifest,
    fdr: Option<f64>,
    reports: Vec<FeatureEntry>,
}

fn cmd_vd(a: VdArgs) -> CliResult<()> {
    let (bytes, ds) = prepare(&a.test)?;
    let features = parse_features(&a.feature, ds.p())?;
    let mode = break_mode(&a.test, &ds, &features);
    let cfg = test_config(&a.test);
    let mut options = test_options(&a.test, mode);
    options.push(("feature", a.feature.clone()));
    if let Some(q) = a.fdr {
        options.push(("fdr", q.to_string()));
    }
    let manifest = RunManifest::new("vd", opts(&options), a.test.shared.seed, Some(&bytes));
    let results = vd_test_features(&ds, &features, mode, &cfg)?;

    if features.len() == 1 && a.fdr.is_none() {
        let report = results.into_iter().next().expect("one feature")?;
        return emit(a.test.out.as_deref(), &to_json(&SingleReport { manifest: &manifest, report: &report }));
    }

    let mut entries = Vec::with_capacity(features.len());
    for (&j, r) in features.iter().zip(results) {
        let (report, degenerate) = match r {
            Ok(r) => (Some(r), false),
            Err(Error::DegenerateVariance { .. }) => (None, true),
            Err(e) => return Err(e.into()),
        };
        entries.push(FeatureEntry { feature: j, feature_name: format!("x{}", j + 1), report, degenerate, bh_reject: None });
    }
    if let Some(q) = a.fdr {
        // degenerate features carry no evidence
        let pv: Vec<f64> = entries.iter().map(|e| e.report.as_ref().map_or(1.0, |r| r.p_value)).collect();
        let rejected = bh_adjust(&pv, q)?;
        for (i, e) in entries.iter_mut().enumerate() {
            e.bh_reject = Some(rejected.contains(&i));
        }
    }
    emit(a.test.out.as_deref(), &to_json(&MultiReport { manifest: &manifest, fdr: a.fdr, reports: entries }))
}

fn cmd_vdbp(a: TestArgs) -> CliResult<()> {
    let (bytes, ds) = prepare(&a)?;
    let all: Vec<usize> = (0..ds.p()).collect();
    let mode = break_mode(&a, &ds, &all);
    let cfg = test_config(&a);
    let manifest = RunManifest::new("vdbp", opts(&test_options(&a, mode)), a.shared.seed, Some(&bytes));
    let report = vdbp_test(&ds, mode, &cfg)?;
    emit(a.out.as_deref(), &to_json(&SingleReport { manifest: &manifest, report: &report }))
}

#[derive(Serialize)]
struct SimulationOut<'a> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    table: &'a hetknock_core::sim::RejectionTable,
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let dgp: Dgp = a.dgp.parse()?;
    let dist: FeatureDist = a.dist.parse()?;
    let test = match a.test {
        SimTest::Vdbp => TestKind::Vdbp,
        SimTest::Vd => TestKind::Vd { features: parse_features(&a.features, a.p)? },
    };
    let mut scn = SimulationScenario::new(dgp, test, a.n, a.p, a.rho);
    scn.feature_dist = dist;
    scn.reps = a.reps;
    scn.alphas = a.alpha.clone();
    scn.seed = a.shared.seed;
    scn.n_trees = a.trees;
    scn.mtry = a.mtry;
    scn.min_leaf = a.min_leaf;
    scn.knockoffs = hetknock_core::sim::KnockoffSource::Generated { screen_fraction: a.screen_frac };
    if let Some(b) = a.brk {
        scn.mode = BreakMode::Fixed(b);
    }
    scn.validate()?;

    let manifest = RunManifest::new(
        "simulate",
        opts(&[
            ("dgp", dgp.to_string()),
            ("test", format!("{:?}", a.test).to_lowercase()),
            ("features", a.features.clone()),
            ("n", a.n.to_string()),
            ("p", a.p.to_string()),
            ("rho", a.rho.to_string()),
            ("dist", a.dist.clone()),
            ("reps", a.reps.to_string()),
            ("alpha", fmt_list(&a.alpha)),
            ("break", a.brk.map_or("select".into(), |b| b.to_string())),
            ("trees", a.trees.to_string()),
            ("mtry", a.mtry.map_or("auto".into(), |m| m.to_string())),
            ("min_leaf", a.min_leaf.to_string()),
            ("screen_frac", a.screen_frac.to_string()),
        ]),
        a.shared.seed,
        None,
    );
    let table = run_experiment(&scn).map_err(|e| match e {
        Error::ZeroVariance(_) | Error::CholeskyFailure => Failure::Knockoff(e.to_string()),
        other => other.into(),
    })?;
    let json = to_json(&SimulationOut { manifest: &manifest, table: &table });
    let csv = table.to_csv().into_bytes();
    match &a.out {
        None => emit(None, &json),
        Some(p) => {
            let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let (json_path, csv_path) = if is_csv {
                (p.with_extension("json"), p.clone())
            } else {
                (p.clone(), p.with_extension("csv"))
            };
            emit(Some(&json_path), &json)?;
            emit(Some(&csv_path), &csv)
        }
    }
}
