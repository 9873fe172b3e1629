use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use logr::cluster::{cluster, Method};
use logr::deviation::{estimate_deviation_with, DeviationEstimate, DeviationOptions, ZeroMass};
use logr::encoding::binary_entropy;
use logr::eval::{evaluate, EvalOptions, EvalReport, DEFAULT_SAMPLES};
use logr::io::{mixture_to_json, parse_mixture, to_json_string};
use logr::maxent::{DEFAULT_FEATURE_CAP, DEFAULT_TOL};
use logr::mixture::{build_mixture, estimate_count_by_cluster, generalized_error, total_verbosity, MixtureEncoding};
use logr::sql::{build_log, Feature, RawLogFile};
use logr::{Log, LogrError, Pattern};

#[derive(Parser)]
#[command(name = "logr", version, about = "Compress SQL query logs into pattern mixture encodings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a log and write its naive mixture encoding as JSON.
    Compress(CompressArgs),
    /// Estimate how many logged queries contain a set of features.
    Query(QueryArgs),
    /// Score a mixture encoding against the log it was built from.
    Evaluate(EvaluateArgs),
    /// Generalized error and verbosity over a range of cluster counts.
    Curve(CurveArgs),
    /// Print per-cluster feature marginals.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct Tuning {
    /// Clustering method.
    #[arg(long, default_value_t = Method::Kmeans)]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum-entropy constraint tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Largest feature count for exact maximum-entropy work.
    #[arg(long, default_value_t = DEFAULT_FEATURE_CAP)]
    feature_cap: usize,
}

#[derive(Args)]
struct CompressArgs {
    /// Query log: one statement per line, optionally `COUNT<TAB>SQL`.
    #[arg(long)]
    input: PathBuf,
    /// Number of clusters.
    #[arg(long, default_value_t = 1)]
    clusters: usize,
    #[command(flatten)]
    tuning: Tuning,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    encoding: PathBuf,
    /// Feature as `CATEGORY:text`, e.g. `SELECT:id`; repeatable.
    #[arg(long = "feature")]
    features: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    encoding: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Patterns synthesized per cluster.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also estimate Deviation from this many sampled distributions.
    #[arg(long)]
    deviation: Option<usize>,
    /// Drop Deviation samples that starve a logged query instead of smoothing.
    #[arg(long)]
    skip_zero_mass: bool,
    #[arg(long, default_value_t = DEFAULT_FEATURE_CAP)]
    feature_cap: usize,
    /// Also report Laserlight and MTV errors.
    #[arg(long)]
    alt: bool,
    /// Class feature for the Laserlight error (`CATEGORY:text`); defaults
    /// to the feature of highest entropy.
    #[arg(long)]
    binary_feature: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    input: PathBuf,
    /// Cluster counts: `K` or `LO..HI` (inclusive).
    #[arg(long, default_value = "1")]
    clusters: String,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    encoding: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Config(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::Internal(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Config(e) | Failure::Internal(e) => e,
        }
    }
}

impl From<LogrError> for Failure {
    fn from(e: LogrError) -> Self {
        let root = match &e {
            LogrError::AtLine { source, .. } => source.as_ref(),
            other => other,
        };
        match root {
            LogrError::Parse(_)
            | LogrError::UnsupportedQuery { .. }
            | LogrError::EmptyLog
            | LogrError::VocabularyMismatch(_)
            | LogrError::AtLine { .. } => Failure::Input(e.into()),
            LogrError::InvalidArgument(_)
            | LogrError::KTooLarge { .. }
            | LogrError::TooManyFeatures { .. }
            | LogrError::TooManyRows { .. } => Failure::Config(e.into()),
            _ => Failure::Internal(e.into()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow!(msg.into()))
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(anyhow!("cannot read {}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Internal(anyhow!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

struct LoadedLog {
    log: Log,
    labels: Vec<String>,
}

fn load_log(path: &Path) -> CliResult<LoadedLog> {
    let text = read_file(path)?;
    let built = build_log(&RawLogFile::parse(&text)?)?;
    Ok(LoadedLog {
        labels: built.vocabulary.labels(),
        log: built.log,
    })
}

fn load_mixture(path: &Path) -> CliResult<MixtureEncoding> {
    let text = read_file(path)?;
    let (m, _) = parse_mixture(&text).map_err(|e| Failure::Input(anyhow!("{}: {e}", path.display())))?;
    Ok(m)
}

/// Re-indexes `log` so its columns follow `features`.
fn align_log(loaded: &LoadedLog, features: &[String]) -> CliResult<Log> {
    if loaded.labels == features {
        return Ok(loaded.log.clone());
    }
    let mismatch = || {
        Failure::from(LogrError::VocabularyMismatch(format!(
            "log has {} features, encoding has {}",
            loaded.labels.len(),
            features.len()
        )))
    };
    if loaded.labels.len() != features.len() {
        return Err(mismatch());
    }
    let mut map = Vec::with_capacity(features.len());
    for label in &loaded.labels {
        let id = features.iter().position(|f| f == label).ok_or_else(|| {
            Failure::from(LogrError::VocabularyMismatch(format!(
                "log feature `{label}` is not in the encoding"
            )))
        })?;
        map.push(id);
    }
    let rows = loaded
        .log
        .rows()
        .iter()
        .map(|(q, c)| (Pattern::from_ids(features.len(), q.ones().map(|i| map[i])), *c));
    Ok(Log::from_rows(features.len(), rows)?)
}

fn normalize_label(spec: &str) -> CliResult<String> {
    let feature: Feature = spec.parse()?;
    Ok(feature.to_string())
}

fn tuning_config(t: &Tuning) -> Value {
    json!({
        "method": t.method.to_string(),
        "seed": t.seed,
        "tol": t.tol,
        "feature_cap": t.feature_cap,
    })
}

fn compress(args: CompressArgs) -> CliResult<()> {
    let loaded = load_log(&args.input)?;
    let started = Instant::now();
    let part = cluster(&loaded.log, args.clusters, args.tuning.method, args.tuning.seed)?;
    let m = build_mixture(&loaded.log, &part)?.with_features(loaded.labels);
    let elapsed = started.elapsed();

    let mut config = tuning_config(&args.tuning);
    config["command"] = json!("compress");
    config["input"] = json!(args.input.display().to_string());
    config["clusters"] = json!(args.clusters);
    let text = to_json_string(&mixture_to_json(&m, Some(config)));
    write_output(args.out.as_deref(), &text)?;
    eprintln!(
        "generalized_error {:.6}  total_verbosity {}  clusters {}  wall_ms {}",
        generalized_error(&m),
        total_verbosity(&m),
        m.clusters.len(),
        elapsed.as_millis()
    );
    Ok(())
}

fn query(args: QueryArgs) -> CliResult<()> {
    let m = load_mixture(&args.encoding)?;
    let n = m.width();
    let mut pattern = Pattern::empty(n);
    let mut unknown = Vec::new();
    for spec in &args.features {
        let label = normalize_label(spec)?;
        match m.features.iter().position(|f| *f == label) {
            Some(id) => pattern.set(id),
            None => unknown.push(label),
        }
    }
    let per_cluster = if unknown.is_empty() {
        estimate_count_by_cluster(&m, &pattern)?
    } else {
        for label in &unknown {
            eprintln!("warning: feature `{label}` does not occur in the encoding; estimate is 0");
        }
        vec![0.0; m.clusters.len()]
    };
    let total: f64 = per_cluster.iter().sum();
    let text = match args.format {
        Format::Json => to_json_string(&json!({
            "features": args.features.iter().map(|s| normalize_label(s)).collect::<CliResult<Vec<_>>>()?,
            "estimate": total,
            "clusters": per_cluster,
        })),
        Format::Csv => {
            let mut s = String::from("cluster,estimate\n");
            for (i, v) in per_cluster.iter().enumerate() {
                writeln!(s, "{},{v}", i + 1).unwrap();
            }
            writeln!(s, "total,{total}").unwrap();
            s
        }
        Format::Text => {
            let mut s = format!("estimate {total}\n");
            for (i, v) in per_cluster.iter().enumerate() {
                writeln!(s, "  cluster {} {v}", i + 1).unwrap();
            }
            s
        }
    };
    print!("{text}");
    Ok(())
}

/// Feature with the largest binary entropy, lowest id on ties.
fn highest_entropy_feature(log: &Log) -> usize {
    let total = log.total() as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &s) in log.feature_supports().iter().enumerate() {
        let h = binary_entropy(s as f64 / total);
        if h > best.1 {
            best = (i, h);
        }
    }
    best.0
}

fn mixture_deviation(log: &Log, m: &MixtureEncoding, opts: &DeviationOptions) -> CliResult<DeviationEstimate> {
    let mut mean = 0.0;
    let mut var = 0.0;
    let (mut samples, mut skipped) = (0, 0);
    for (i, c) in m.clusters.iter().enumerate() {
        let sub = m.cluster_log(log, i)?;
        let d = estimate_deviation_with(&c.encoding.with_explicit_zeros(), &sub, opts)?;
        mean += c.weight * d.mean;
        var += (c.weight * d.std_error).powi(2);
        samples += d.samples;
        skipped += d.skipped;
    }
    Ok(DeviationEstimate {
        mean,
        std_error: var.sqrt(),
        samples,
        skipped,
    })
}

fn evaluate_cmd(args: EvaluateArgs) -> CliResult<()> {
    if args.samples == 0 {
        return Err(config_error("--samples must be at least 1"));
    }
    if args.deviation == Some(0) {
        return Err(config_error("--deviation must be at least 1"));
    }
    if args.binary_feature.is_some() && !args.alt {
        return Err(config_error("--binary-feature requires --alt"));
    }
    if args.format == Format::Text {
        return Err(config_error("evaluate writes json or csv"));
    }
    let m = load_mixture(&args.encoding)?;
    let loaded = load_log(&args.input)?;
    let log = align_log(&loaded, &m.features)?;

    let binary_feature = if args.alt {
        Some(match &args.binary_feature {
            Some(spec) => {
                let label = normalize_label(spec)?;
                m.features
                    .iter()
                    .position(|f| *f == label)
                    .ok_or_else(|| config_error(format!("binary feature `{label}` is not in the encoding")))?
            }
            None => highest_entropy_feature(&log),
        })
    } else {
        None
    };
    let opts = EvalOptions {
        samples: args.samples,
        seed: args.seed,
        binary_feature,
    };
    let mut report = evaluate(&log, &m, &opts)?;
    if let Some(n) = args.deviation {
        let dopts = DeviationOptions {
            samples: n,
            seed: args.seed,
            zero_mass: if args.skip_zero_mass { ZeroMass::Skip } else { ZeroMass::Smooth },
            feature_cap: args.feature_cap,
        };
        report.deviation = Some(mixture_deviation(&log, &m, &dopts)?);
    }

    let config = json!({
        "command": "evaluate",
        "encoding": args.encoding.display().to_string(),
        "input": args.input.display().to_string(),
        "samples": args.samples,
        "seed": args.seed,
        "deviation": args.deviation,
        "zero_mass": if args.skip_zero_mass { "skip" } else { "smooth" },
        "feature_cap": args.feature_cap,
        "binary_feature": binary_feature.map(|f| m.features.get(f).cloned().unwrap_or_else(|| f.to_string())),
    });
    let text = match args.format {
        Format::Csv => format!(
            "# config {config}\n{}\n{}\n",
            EvalReport::csv_header(),
            report.csv_row()
        ),
        _ => to_json_string(&json!({ "config": config, "report": report })),
    };
    write_output(args.out.as_deref(), &text)
}

fn parse_range(spec: &str) -> CliResult<(usize, usize)> {
    let bad = || config_error(format!("cluster range `{spec}` is not `K` or `LO..HI`"));
    let (lo, hi) = match spec.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let k = spec.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

struct CurveRow {
    k: usize,
    seed: u64,
    error: f64,
    verbosity: usize,
    runtime_ms: u128,
}

fn curve(args: CurveArgs) -> CliResult<()> {
    let (lo, hi) = parse_range(&args.clusters)?;
    if args.seeds == 0 {
        return Err(config_error("--seeds must be at least 1"));
    }
    let loaded = load_log(&args.input)?;
    let log = &loaded.log;
    if hi > log.distinct() {
        return Err(LogrError::KTooLarge {
            k: hi,
            rows: log.distinct(),
        }
        .into());
    }
    let method = args.tuning.method;
    let cells: Vec<(usize, u64)> = (lo..=hi)
        .flat_map(|k| (0..args.seeds).map(move |s| (k, args.tuning.seed + s)))
        .collect();
    let rows: Vec<CliResult<CurveRow>> = cells
        .par_iter()
        .map(|&(k, seed)| {
            let started = Instant::now();
            let m = build_mixture(log, &cluster(log, k, method, seed)?)?;
            Ok(CurveRow {
                k,
                seed,
                error: generalized_error(&m),
                verbosity: total_verbosity(&m),
                runtime_ms: started.elapsed().as_millis(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut config = tuning_config(&args.tuning);
    config["command"] = json!("curve");
    config["input"] = json!(args.input.display().to_string());
    config["clusters"] = json!(args.clusters);
    config["seeds"] = json!(args.seeds);
    let text = match args.format {
        Format::Json => to_json_string(&json!({
            "config": config,
            "rows": rows.iter().map(|r| json!({
                "k": r.k,
                "method": method.to_string(),
                "seed": r.seed,
                "error": r.error,
                "verbosity": r.verbosity,
                "runtime_ms": r.runtime_ms,
            })).collect::<Vec<_>>(),
        })),
        _ => {
            let mut s = format!("# config {config}\nk,method,seed,error,verbosity,runtime_ms\n");
            for r in &rows {
                writeln!(s, "{},{method},{},{},{},{}", r.k, r.seed, r.error, r.verbosity, r.runtime_ms).unwrap();
            }
            s
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn bar(p: f64) -> String {
    let filled = (p * 10.0).round().clamp(0.0, 10.0) as usize;
    format!("{}{}", "#".repeat(filled), ".".repeat(10 - filled))
}

fn inspect(args: InspectArgs) -> CliResult<()> {
    let m = load_mixture(&args.encoding)?;
    let label = |b: &Pattern| {
        b.ones()
            .map(|i| m.features.get(i).cloned().unwrap_or_else(|| format!("f{i}")))
            .collect::<Vec<_>>()
            .join(" & ")
    };
    let mut s = format!("{} queries, {} clusters, {} features\n", m.total, m.clusters.len(), m.width());
    for (i, c) in m.clusters.iter().enumerate() {
        writeln!(
            s,
            "\ncluster {}  weight {:.4}  size {}  error {:.4}  verbosity {}",
            i + 1,
            c.weight,
            c.size,
            c.error,
            c.encoding.verbosity()
        )
        .unwrap();
        let mut entries: Vec<(&Pattern, f64)> = c.encoding.iter().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (b, p) in entries {
            writeln!(s, "  {p:.2} {}  {}", bar(p), label(b)).unwrap();
        }
    }
    print!("{s}");
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("LOGR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| config_error(format!("LOGR_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.into()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Compress(a) => compress(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Curve(a) => curve(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("logr: {}", f.error());
            ExitCode::from(f.code())
        }
    }
}
