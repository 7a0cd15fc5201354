//! Command-line front end: `tokenize`, `metrics`, `bench`, `gen-fixture`.
//!
//! Machine-readable output goes to stdout as JSON (CSV for `bench`); human
//! text goes to stderr. Exit codes: 0 success, 2 usage error or invalid
//! parameters, 3 data error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::baselines::MechanismSpec;
use crate::bench::{bench_mechanisms, threads_from_env, BenchOptions};
use crate::clusterer::{self, Assignment, MaskStack, MergeMode, Seed, TokenizerConfig};
use crate::fixture::{fixture_suite, generate_fixture, FixtureParams, DEFAULT_NOISE};
use crate::grid::FeatureGrid;
use crate::merger::{merge_clusters, MergerOptions, MergerWeights};
use crate::metrics::{evaluate, ReferenceMasks};
use crate::tensor_io::{self, SetkTensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "setok", version, about = "Cluster feature grids into a variable number of tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster and merge one grid, writing masks, tokens and score maps.
    Tokenize(TokenizeArgs),
    /// Compare predicted masks with reference masks.
    Metrics(MetricsArgs),
    /// Run several clustering mechanisms over a set of grids.
    Bench(BenchArgs),
    /// Write a seeded synthetic grid and its reference masks.
    GenFixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MergeArg {
    Attention,
    Mean,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Neighbors used for local density.
    #[arg(long, default_value_t = 9)]
    knn: usize,
    /// Kernel bandwidth (distance² at which the kernel halves is 1/bandwidth).
    #[arg(long, default_value_t = 4.0)]
    bandwidth: f64,
    /// Stop once every location has less scope than this.
    #[arg(long, default_value_t = 0.05)]
    stop_tau: f64,
    #[arg(long, default_value_t = 64)]
    max_clusters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MergeArg::Attention)]
    merge: MergeArg,
}

impl ConfigArgs {
    fn config(&self) -> TokenizerConfig {
        TokenizerConfig {
            knn_k: self.knn,
            kernel_bandwidth: self.bandwidth,
            stop_tau: self.stop_tau,
            max_clusters: self.max_clusters,
            assignment: match self.mode {
                ModeArg::Hard => Assignment::Hard,
                ModeArg::Soft => Assignment::Soft,
            },
            merge_mode: match self.merge {
                MergeArg::Attention => MergeMode::Attention,
                MergeArg::Mean => MergeMode::Mean,
            },
            ..TokenizerConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    /// Rank-3 h×w×d grid file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory holding saved merger weights; seeded weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for merger weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a color preview of the masks (masks.ppm).
    #[arg(long)]
    ppm: bool,
    /// Pool raw features without position embeddings.
    #[arg(long)]
    no_position: bool,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Predicted masks (k×h×w), with or without a seeds sidecar.
    #[arg(long)]
    input: PathBuf,
    /// Reference masks (n×h×w).
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// A grid file, or a directory of `*.grid.setk` files with optional
    /// `*.ref.setk` siblings.
    #[arg(long)]
    input: PathBuf,
    /// Reference masks for a single-file input.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Mechanism as inline JSON or a path to a JSON file (object or array).
    /// Repeatable; a default set runs when omitted.
    #[arg(long = "spec")]
    specs: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write report.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Blob count, or an inclusive range `lo-hi` cycled across `--count`.
    #[arg(long, default_value = "3", value_parser = parse_blobs)]
    blobs: (usize, usize),
    #[arg(long, default_value_t = 16)]
    h: usize,
    #[arg(long, default_value_t = 16)]
    w: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Minimum distance between blob centroids in feature space.
    #[arg(long, default_value_t = 10.0)]
    sep: f64,
    /// RMS noise radius around each centroid.
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_blobs(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad blob count {t:?}: {e}"));
    match s.split_once('-') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => parse(s).map(|b| (b, b)),
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data { stage: &'static str, message: String },
}

fn data<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data { stage, message: e.to_string() }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Tokenize(a) => run_tokenize(&a, stdout, stderr),
        Command::Metrics(a) => run_metrics(&a, stdout),
        Command::Bench(a) => run_bench(&a, stdout, stderr),
        Command::GenFixture(a) => run_gen_fixture(&a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data { stage, message }) => {
            let _ = writeln!(stderr, "error during {stage}: {message}");
            EXIT_DATA
        }
    }
}

fn print_json(stdout: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    writeln!(stdout, "{text}").map_err(data("writing stdout"))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data { stage: "creating output directory", message: format!("{}: {e}", dir.display()) })
}

fn ms(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

#[derive(Serialize)]
struct TokenizeSummary {
    h: usize,
    w: usize,
    d: usize,
    /// Non-remainder clusters.
    k: usize,
    masks: usize,
    remainder: bool,
    remainder_mass: f64,
    tokens: usize,
    skipped: Vec<usize>,
    seeds: Vec<Seed>,
    config: TokenizerConfig,
}

fn run_tokenize(args: &TokenizeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = tensor_io::load_grid(&args.input).map_err(data("reading input grid"))?;
    let weights = match &args.weights {
        Some(dir) => MergerWeights::load(dir).map_err(data("loading merger weights"))?,
        None if config.merge_mode == MergeMode::Attention => {
            MergerWeights::seeded(grid.d(), args.seed).map_err(data("seeding merger weights"))?
        }
        // Mean pooling never reads the weights.
        None => MergerWeights::seeded_with(grid.d(), 0, 1, 1, args.seed).map_err(data("seeding merger weights"))?,
    };

    let total = Instant::now();
    let (masks, trace) = clusterer::cluster_with_trace(&grid, &config).map_err(data("clustering"))?;
    let cluster_ms = ms(total);
    let merge_start = Instant::now();
    let options = MergerOptions { position_embedding: !args.no_position };
    let tokens = merge_clusters(&grid, &masks, &weights, config.merge_mode, options).map_err(data("merging"))?;
    let merge_ms = ms(merge_start);
    let total_ms = ms(total);

    create_dir(&args.out_dir)?;
    let out = |name: &str| args.out_dir.join(name);
    tensor_io::write_mask_stack(&masks, out("masks.setk")).map_err(data("writing masks"))?;
    tensor_io::write_token_set(&tokens, out("tokens.setk")).map_err(data("writing tokens"))?;
    tensor_io::write_map(&trace.scores.score, grid.h(), grid.w(), out("scores.setk"))
        .map_err(data("writing scores"))?;
    if args.ppm {
        tensor_io::export_mask_image(&masks, out("masks.ppm")).map_err(data("writing preview"))?;
    }
    let summary = TokenizeSummary {
        h: grid.h(),
        w: grid.w(),
        d: grid.d(),
        k: masks.non_remainder_count(),
        masks: masks.k(),
        remainder: masks.has_remainder(),
        remainder_mass: masks.remainder_mass(),
        tokens: tokens.len(),
        skipped: tokens.skipped.clone(),
        seeds: masks.seeds().to_vec(),
        config: config.clone(),
    };
    let summary_bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    fs::write(out("summary.json"), summary_bytes).map_err(data("writing summary"))?;

    let _ = writeln!(
        stderr,
        "{}x{}x{}: {} clusters{} in {total_ms:.3} ms",
        grid.h(),
        grid.w(),
        grid.d(),
        summary.k,
        if summary.remainder { " + remainder" } else { "" }
    );
    let mut value = serde_json::to_value(&summary).expect("summary serializes");
    value["timing_ms"] = json!({ "cluster": cluster_ms, "merge": merge_ms, "total": total_ms });
    print_json(stdout, &value)
}

/// Reads predicted masks. Without a sidecar the mode is inferred: one-hot
/// {0,1} masks are hard, anything else soft.
fn read_prediction(path: &Path) -> Result<MaskStack, CliError> {
    if tensor_io::sidecar_path(path).exists() {
        return tensor_io::read_mask_stack(path).map_err(data("reading predicted masks"));
    }
    let (k, h, w, masks) = tensor_io::read_mask_tensor(path).map_err(data("reading predicted masks"))?;
    let one_hot = (0..h * w).all(|loc| {
        let mut ones = 0;
        for m in 0..k {
            match masks[m * h * w + loc] {
                1.0 => ones += 1,
                0.0 => {}
                _ => return false,
            }
        }
        ones == 1
    });
    let mode = if one_hot { Assignment::Hard } else { Assignment::Soft };
    let seeds = (0..k).map(Seed::Query).collect();
    MaskStack::from_parts(masks, seeds, h, w, mode, TokenizerConfig { assignment: mode, ..Default::default() })
        .map_err(data("reading predicted masks"))
}

fn read_reference(path: &Path) -> Result<ReferenceMasks, CliError> {
    let (n, h, w, masks) = tensor_io::read_mask_tensor(path).map_err(data("reading reference masks"))?;
    ReferenceMasks::new(masks, n, h, w).map_err(data("reading reference masks"))
}

fn run_metrics(args: &MetricsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let pred = read_prediction(&args.input)?;
    let reference = read_reference(&args.reference)?;
    let report = evaluate(&pred, &reference).map_err(data("computing metrics"))?;
    print_json(stdout, &report)
}

/// Mechanisms compared when no `--spec` is given.
pub fn default_specs() -> Vec<MechanismSpec> {
    vec![
        MechanismSpec::DynamicHard,
        MechanismSpec::DynamicSoft,
        MechanismSpec::Threshold { score_tau: 1.0 },
        MechanismSpec::Fixed { k: 4 },
        MechanismSpec::Resampler { n_queries: 4, seed: 0 },
        MechanismSpec::TopkMerge { r: 64, passes: 3 },
    ]
}

fn parse_specs(raw: &[String]) -> Result<Vec<MechanismSpec>, CliError> {
    if raw.is_empty() {
        return Ok(default_specs());
    }
    let mut specs = Vec::new();
    for s in raw {
        let text = if s.trim_start().starts_with(['{', '[']) {
            s.clone()
        } else {
            fs::read_to_string(s).map_err(|e| CliError::Usage(format!("cannot read spec file {s}: {e}")))?
        };
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("spec {s:?} is not JSON: {e}")))?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            let spec: MechanismSpec =
                serde_json::from_value(item).map_err(|e| CliError::Usage(format!("invalid spec {s:?}: {e}")))?;
            spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            specs.push(spec);
        }
    }
    Ok(specs)
}

fn bench_inputs(args: &BenchArgs) -> Result<(Vec<FeatureGrid>, Option<Vec<ReferenceMasks>>), CliError> {
    if !args.input.is_dir() {
        let grid = tensor_io::load_grid(&args.input).map_err(data("reading input grid"))?;
        let refs = args.reference.as_deref().map(read_reference).transpose()?;
        return Ok((vec![grid], refs.map(|r| vec![r])));
    }
    if args.reference.is_some() {
        return Err(CliError::Usage("--ref applies to a single grid; directories use *.ref.setk siblings".into()));
    }
    let entries = fs::read_dir(&args.input).map_err(data("listing input directory"))?;
    let mut grid_paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".grid.setk")))
        .collect();
    grid_paths.sort();
    if grid_paths.is_empty() {
        return Err(CliError::Data { stage: "listing input directory", message: "no *.grid.setk files".into() });
    }
    let ref_paths: Vec<PathBuf> = grid_paths
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).expect("filtered above");
            p.with_file_name(name.replace(".grid.setk", ".ref.setk"))
        })
        .collect();
    let grids = grid_paths
        .iter()
        .map(|p| tensor_io::load_grid(p).map_err(data("reading input grid")))
        .collect::<Result<_, _>>()?;
    let refs = if ref_paths.iter().all(|p| p.exists()) {
        Some(ref_paths.iter().map(|p| read_reference(p)).collect::<Result<_, _>>()?)
    } else {
        None
    };
    Ok((grids, refs))
}

fn run_bench(args: &BenchArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let specs = parse_specs(&args.specs)?;
    let (grids, refs) = bench_inputs(args)?;
    let options = BenchOptions { config, weights: None, weights_seed: args.seed, threads: threads_from_env() };
    let report = bench_mechanisms(&grids, &specs, refs.as_deref(), &options).map_err(data("benchmarking"))?;
    let csv = report.to_csv();
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        fs::write(dir.join("report.csv"), &csv).map_err(data("writing report"))?;
    }
    let _ = write!(stderr, "{}", report.to_table());
    write!(stdout, "{csv}").map_err(data("writing stdout"))
}

#[derive(Serialize)]
struct FixtureRecord {
    grid: PathBuf,
    reference: PathBuf,
    blobs: usize,
    seed: u64,
    min_centroid_sq_distance: f64,
}

fn run_gen_fixture(args: &FixtureArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (lo, hi) = args.blobs;
    let base =
        FixtureParams { blobs: lo, h: args.h, w: args.w, d: args.d, sep: args.sep, noise: args.noise, seed: args.seed };
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if lo > hi {
        return Err(CliError::Usage(format!("blob range {lo}-{hi} is empty")));
    }
    for b in [lo, hi] {
        FixtureParams { blobs: b, ..base.clone() }.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let fixtures = if args.count == 1 && lo == hi {
        vec![generate_fixture(&base).map_err(|e| CliError::Usage(e.to_string()))?]
    } else {
        fixture_suite(args.count, lo, hi, &base).map_err(|e| CliError::Usage(e.to_string()))?
    };
    create_dir(&args.out_dir)?;
    let mut records = Vec::new();
    for (i, f) in fixtures.iter().enumerate() {
        let stem = if fixtures.len() == 1 { "fixture".to_string() } else { format!("fixture_{i:03}") };
        let grid_path = args.out_dir.join(format!("{stem}.grid.setk"));
        let ref_path = args.out_dir.join(format!("{stem}.ref.setk"));
        tensor_io::write_grid(&f.grid, &grid_path).map_err(data("writing fixture grid"))?;
        let r = f.reference();
        let data_f32 = r.data().iter().map(|&v| v as f32).collect();
        tensor_io::write_tensor(&SetkTensor::new(vec![r.n(), r.h(), r.w()], data_f32), &ref_path)
            .map_err(data("writing fixture reference"))?;
        records.push(FixtureRecord {
            grid: grid_path,
            reference: ref_path,
            blobs: f.params.blobs,
            seed: f.params.seed,
            min_centroid_sq_distance: if f.params.blobs > 1 { f.min_empirical_centroid_sq_distance() } else { 0.0 },
        });
    }
    print_json(
        stdout,
        &json!({ "h": args.h, "w": args.w, "d": args.d, "sep": args.sep, "noise": args.noise, "fixtures": records }),
    )
}
