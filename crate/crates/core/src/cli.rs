//! Command-line front end. [`run`] parses arguments, performs one
//! subcommand and returns the process exit code: 0 on success, 1 for usage
//! errors, 2 for data errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{bench_csv, bench_refiner, Precision};
use crate::combine::{average_dataset, image_oracle, OracleResult};
use crate::error::{Error, Result};
use crate::gradsuite::run_gradient_suite;
use crate::io::manifest::Manifest;
use crate::io::{
    create_dir, load_manifest, params_to_container, pool_container, read_container, read_reports, report_csv, report_json,
    write_container, write_pfm, RunMetadata,
};
use crate::metrics::{
    average_rank_with, category_stats, evaluate_dataset, Conversion, Metric, MetricReport, PredictionDir, ScoreGrid, TieRule,
};
use crate::refiner::{dataset_loss, evaluate_delta1, init_params, synthetic_dataset, train_toy, RefinerConfig, TrainOptions};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DEPTHKIT_OUT";

#[derive(Debug, Parser)]
#[command(name = "depthkit", version, about = "Affine-invariant depth evaluation and toy preimage refinement")]
struct Cli {
    /// Output directory; defaults to $DEPTHKIT_OUT, then the current directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a prediction directory against a manifest.
    Evaluate(EvaluateArgs),
    /// Pixel-wise average of two prediction directories, plus oracle fractions.
    Combine(CombineArgs),
    /// Per-image oracle selection between two reports.
    Oracle(OracleArgs),
    /// Average rank of the methods in a set of reports.
    Rank(RankArgs),
    /// Per-category box statistics and a box-plot SVG.
    Categories(CategoriesArgs),
    /// Pool the attention records of a raster container.
    PoolAttn(PoolArgs),
    /// Train the toy refiner on synthetic scenes.
    TrainToy(TrainArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Time refiner inference per output resolution.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConvertArg {
    DepthToDisparity,
    DisparityToDepth,
}

impl From<ConvertArg> for Conversion {
    fn from(c: ConvertArg) -> Self {
        match c {
            ConvertArg::DepthToDisparity => Conversion::DepthToDisparity,
            ConvertArg::DisparityToDepth => Conversion::DisparityToDepth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Delta1,
    Absrel,
    Both,
}

impl CriterionArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            CriterionArg::Delta1 => vec![Metric::Delta1],
            CriterionArg::Absrel => vec![Metric::AbsRel],
            CriterionArg::Both => vec![Metric::Delta1, Metric::AbsRel],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Delta1,
    Absrel,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Delta1 => Metric::Delta1,
            MetricArg::Absrel => Metric::AbsRel,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TiesArg {
    /// Tied methods share the best of their positions.
    Min,
    /// Tied methods share the mean of their positions.
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<image id>.pfm` predictions.
    #[arg(long)]
    pred: PathBuf,
    /// Method name; defaults to the prediction directory name.
    #[arg(long)]
    method: Option<String>,
    /// Convert predictions into the manifest's space before scoring.
    #[arg(long, value_enum)]
    convert_pred: Option<ConvertArg>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Add a run_metadata field to the JSON report.
    #[arg(long)]
    run_metadata: bool,
}

#[derive(Debug, Args)]
struct CombineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pred_a: PathBuf,
    #[arg(long)]
    pred_b: PathBuf,
    #[arg(long)]
    method_a: Option<String>,
    #[arg(long)]
    method_b: Option<String>,
    /// Name of the averaged method and of its output directory.
    #[arg(long, default_value = "pixel-average")]
    method: String,
    #[arg(long, value_enum)]
    convert_pred: Option<ConvertArg>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Report of the first method; wins ties.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    criterion: CriterionArg,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// CSV or JSON reports; together they must cover every (method, dataset) pair.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "min")]
    ties: TiesArg,
}

#[derive(Debug, Args)]
struct CategoriesArgs {
    #[arg(long)]
    report: PathBuf,
    /// Manifest supplying image categories, for reports that lack them.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "delta1")]
    metric: MetricArg,
    /// Method to plot when the report holds several.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Refiner configuration as JSON; defaults to the built-in toy model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of synthetic training scenes.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Output side lengths in pixels.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, value_enum, default_value = "f32")]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn need_file(p: &Path, what: &str) -> CliResult {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", p.display())))
    }
}

fn need_dir(p: &Path, what: &str) -> CliResult {
    if p.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", p.display())))
    }
}

fn need_jobs(jobs: usize) -> CliResult {
    if jobs == 0 {
        Err(usage("--jobs must be at least 1"))
    } else {
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "prediction".into())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

struct Ctx {
    out_dir: PathBuf,
    argv: Vec<String>,
}

impl Ctx {
    fn out(&self, name: &str) -> Result<PathBuf> {
        create_dir(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }

    fn metadata(&self) -> RunMetadata {
        RunMetadata {
            tool: "depthkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: self.argv.clone(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    fn write_report(&self, report: &MetricReport, metadata: bool) -> Result<()> {
        let stem = format!("{}.{}", report.method, report.dataset);
        write_text(&self.out(&format!("{stem}.csv"))?, &report_csv(std::slice::from_ref(report))?)?;
        let meta = metadata.then(|| self.metadata());
        write_text(&self.out(&format!("{stem}.json"))?, &report_json(report, meta.as_ref())?)
    }
}

fn print_report(r: &MetricReport) {
    println!(
        "{} on {}: delta1 {} absrel {} ({} images, {} degenerate)",
        r.method,
        r.dataset,
        pct(r.aggregate_delta1),
        pct(r.aggregate_absrel),
        r.per_image.len(),
        r.per_image.iter().filter(|m| m.degenerate).count()
    );
}

fn load_checked_manifest(path: &Path) -> CliResult<Manifest> {
    need_file(path, "manifest")?;
    Ok(load_manifest(path)?)
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult {
    need_jobs(a.jobs)?;
    need_dir(&a.pred, "prediction directory")?;
    let manifest = load_checked_manifest(&a.manifest)?;
    let method = a.method.unwrap_or_else(|| dir_name(&a.pred));
    let source = PredictionDir::new(&a.pred).with_conversion(a.convert_pred.map(Conversion::from));
    let report = evaluate_dataset(&manifest, &source, &method, a.jobs)?;
    ctx.write_report(&report, a.run_metadata)?;
    print_report(&report);
    Ok(())
}

#[derive(Serialize)]
struct FractionRow {
    dataset: String,
    criterion: Metric,
    method_a: String,
    method_b: String,
    fraction_a: f64,
    fraction_b: f64,
    ties: usize,
    oracle_delta1: f64,
    oracle_absrel: f64,
}

fn fraction_row(o: &OracleResult, a: &str, b: &str) -> FractionRow {
    FractionRow {
        dataset: o.report.dataset.clone(),
        criterion: o.criterion,
        method_a: a.to_string(),
        method_b: b.to_string(),
        fraction_a: o.fraction_a,
        fraction_b: o.fraction_b,
        ties: o.ties.len(),
        oracle_delta1: o.report.aggregate_delta1,
        oracle_absrel: o.report.aggregate_absrel,
    }
}

fn print_fraction(f: &FractionRow) {
    println!(
        "oracle by {} on {}: delta1 {} absrel {}, selected {}/{} = {:.1}%/{:.1}%",
        f.criterion.name(),
        f.dataset,
        pct(f.oracle_delta1),
        pct(f.oracle_absrel),
        f.method_a,
        f.method_b,
        f.fraction_a,
        f.fraction_b
    );
}

fn combine(ctx: &Ctx, a: CombineArgs) -> CliResult {
    need_jobs(a.jobs)?;
    need_dir(&a.pred_a, "prediction directory")?;
    need_dir(&a.pred_b, "prediction directory")?;
    let manifest = load_checked_manifest(&a.manifest)?;
    let conversion = a.convert_pred.map(Conversion::from);
    let src_a = PredictionDir::new(&a.pred_a).with_conversion(conversion);
    let src_b = PredictionDir::new(&a.pred_b).with_conversion(conversion);
    let name_a = a.method_a.unwrap_or_else(|| dir_name(&a.pred_a));
    let name_b = a.method_b.unwrap_or_else(|| dir_name(&a.pred_b));

    let averaged = average_dataset(&manifest, &src_a, &src_b, a.jobs)?;
    let dir = ctx.out(&a.method)?;
    create_dir(&dir)?;
    for (id, map) in &averaged.0 {
        write_pfm(map, dir.join(format!("{id}.pfm")))?;
    }
    let report = evaluate_dataset(&manifest, &averaged, &a.method, a.jobs)?;
    ctx.write_report(&report, false)?;
    print_report(&report);

    let ra = evaluate_dataset(&manifest, &src_a, &name_a, a.jobs)?;
    let rb = evaluate_dataset(&manifest, &src_b, &name_b, a.jobs)?;
    let mut rows = Vec::new();
    for m in [Metric::Delta1, Metric::AbsRel] {
        let o = image_oracle(&ra, &rb, m)?;
        rows.push(fraction_row(&o, &name_a, &name_b));
    }
    for r in &rows {
        print_fraction(r);
    }
    write_text(&ctx.out("fractions.json")?, &(serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n"))?;
    Ok(())
}

fn read_report_files(paths: &[PathBuf]) -> CliResult<Vec<MetricReport>> {
    let mut out = Vec::new();
    for p in paths {
        need_file(p, "report")?;
        out.extend(read_reports(p)?);
    }
    Ok(out)
}

fn oracle(ctx: &Ctx, a: OracleArgs) -> CliResult {
    let reports_a = read_report_files(std::slice::from_ref(&a.a))?;
    let reports_b = read_report_files(std::slice::from_ref(&a.b))?;
    let mut rows = Vec::new();
    let mut oracle_reports: BTreeMap<&'static str, Vec<MetricReport>> = BTreeMap::new();
    for ra in &reports_a {
        let rb = reports_b
            .iter()
            .find(|r| r.dataset == ra.dataset)
            .ok_or_else(|| Error::invalid(format!("{} has no report on {}", a.b.display(), ra.dataset)))?;
        for m in a.criterion.metrics() {
            let o = image_oracle(ra, rb, m)?;
            rows.push(fraction_row(&o, &ra.method, &rb.method));
            oracle_reports.entry(m.name()).or_default().push(o.report);
        }
    }
    if let Some(extra) = reports_b.iter().find(|rb| !reports_a.iter().any(|ra| ra.dataset == rb.dataset)) {
        return Err(Error::invalid(format!("{} has no report on {}", a.a.display(), extra.dataset)).into());
    }
    for r in &rows {
        print_fraction(r);
    }
    for (name, reports) in &oracle_reports {
        write_text(&ctx.out(&format!("oracle-{name}.csv"))?, &report_csv(reports)?)?;
    }
    write_text(&ctx.out("oracle-fractions.json")?, &(serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n"))?;
    Ok(())
}

fn rank(ctx: &Ctx, a: RankArgs) -> CliResult {
    let reports = read_report_files(&a.reports)?;
    let tie = match a.ties {
        TiesArg::Min => TieRule::Competition,
        TiesArg::Mean => TieRule::Fractional,
    };
    let ranking = average_rank_with(&ScoreGrid::from_reports(&reports)?, tie)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "average_rank".into(), "rounded".into()];
    header.extend(ranking.columns.iter().map(|(d, m)| format!("{d}:{}", m.name())));
    w.write_record(&header).map_err(Error::from)?;
    for i in ranking.order() {
        let mut row = vec![ranking.methods[i].clone(), ranking.average_rank[i].to_string(), format!("{:.1}", ranking.rounded[i])];
        row.extend(ranking.ranks[i].iter().map(|r| r.to_string()));
        w.write_record(&row).map_err(Error::from)?;
        println!("{:.1}  {}", ranking.rounded[i], ranking.methods[i]);
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    write_text(&ctx.out("ranking.csv")?, &String::from_utf8(bytes).expect("CSV of UTF-8 fields"))?;
    Ok(())
}

fn categories(ctx: &Ctx, a: CategoriesArgs) -> CliResult {
    let mut reports = read_report_files(std::slice::from_ref(&a.report))?;
    let mut report = match &a.method {
        Some(m) => {
            let i = reports
                .iter()
                .position(|r| &r.method == m)
                .ok_or_else(|| Error::invalid(format!("{} has no method {m}", a.report.display())))?;
            reports.swap_remove(i)
        }
        None if reports.len() == 1 => reports.remove(0),
        None => return Err(usage("the report holds several methods; choose one with --method")),
    };
    if let Some(path) = &a.manifest {
        let manifest = load_checked_manifest(path)?;
        let by_id: BTreeMap<&str, &Option<String>> = manifest.entries.iter().map(|e| (e.id.as_str(), &e.category)).collect();
        for m in &mut report.per_image {
            if let Some(c) = by_id.get(m.id.as_str()) {
                m.category = (*c).clone();
            }
        }
    }
    let metric = Metric::from(a.metric);
    let stats = category_stats(&report, metric)?;
    let stem = format!("categories-{}-{}", report.method, metric.name());
    write_text(&ctx.out(&format!("{stem}.json"))?, &(serde_json::to_string_pretty(&stats).map_err(Error::from)? + "\n"))?;
    crate::io::render_boxplot_svg(&stats, ctx.out(&format!("{stem}.svg"))?)?;
    for s in &stats {
        println!(
            "{}: n {} median {:.4} q1 {:.4} q3 {:.4} iqr {:.4} outliers {}",
            s.category,
            s.stats.count,
            s.stats.median,
            s.stats.q1,
            s.stats.q3,
            s.stats.iqr,
            s.outlier_ids.len()
        );
    }
    Ok(())
}

fn pool_attn(a: PoolArgs) -> CliResult {
    need_file(&a.input, "container")?;
    let pooled = pool_container(&read_container(&a.input)?)?;
    write_container(&pooled, &a.output)?;
    println!("{} records written to {}", pooled.records.len(), a.output.display());
    Ok(())
}

fn read_config(path: Option<&Path>) -> CliResult<RefinerConfig> {
    let Some(path) = path else {
        return Ok(RefinerConfig::default());
    };
    need_file(path, "config")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: RefinerConfig = serde_path_to_error::deserialize(&mut de).map_err(crate::io::manifest::json_error)?;
    config.validate()?;
    Ok(config)
}

fn train(ctx: &Ctx, a: TrainArgs) -> CliResult {
    if a.steps == 0 || a.samples == 0 || a.batch_size == 0 {
        return Err(usage("--steps, --samples and --batch-size must be at least 1"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(usage("--lr must be positive"));
    }
    let config = read_config(a.config.as_deref())?;
    let data = synthetic_dataset(&config, a.samples, a.seed)?;
    let options = TrainOptions { steps: a.steps, lr: a.lr, seed: a.seed, batch_size: a.batch_size };
    let before = dataset_loss(&init_params(&config, a.seed)?, &data)?;
    let report = train_toy(&config, &data, &options)?;
    let after = dataset_loss(&report.params, &data)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.history {
        w.serialize(r).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    write_text(&ctx.out("loss_history.csv")?, &String::from_utf8(bytes).expect("CSV of UTF-8 fields"))?;
    write_container(&params_to_container(&report.params)?, ctx.out("params.dkrc")?)?;
    write_text(&ctx.out("config.json")?, &(serde_json::to_string_pretty(&config).map_err(Error::from)? + "\n"))?;
    println!("training-set loss {:.4} -> {:.4} over {} steps", before.total, after.total, a.steps);
    println!("training-set delta1 {}", pct(evaluate_delta1(&report.params, &data)?));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult<bool> {
    let checks = run_gradient_suite(a.seed)?;
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        println!("{:<22} {:.3e} < {:.0e} {}", c.name, c.max_rel_error, c.tolerance, if c.passed() { "ok" } else { "FAILED" });
    }
    Ok(ok)
}

fn bench(ctx: &Ctx, a: BenchArgs) -> CliResult {
    if a.runs == 0 || a.resolutions.is_empty() {
        return Err(usage("--runs must be at least 1 and --resolutions non-empty"));
    }
    let config = read_config(a.config.as_deref())?;
    let f = 1usize << config.stages;
    if let Some(r) = a.resolutions.iter().find(|&&r| r == 0 || r % f != 0 || r < 16) {
        return Err(usage(format!("resolution {r} must be at least 16 and divisible by {f}")));
    }
    let precision = match a.precision {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    };
    let rows = bench_refiner(&config, &a.resolutions, a.runs, precision, a.seed)?;
    println!("resolution  precision  mean_ms  std_ms  median_ms  iqr_ms");
    for r in &rows {
        println!(
            "{:>10}  {:>9}  {:>7.3}  {:>6.3}  {:>9.3}  {:>6.3}",
            format!("{0}x{0}", r.resolution),
            r.precision.name(),
            r.mean_ms,
            r.std_ms,
            r.median_ms,
            r.q3_ms - r.q1_ms
        );
    }
    write_text(&ctx.out("bench.csv")?, &bench_csv(&rows)?)?;
    Ok(())
}

/// Runs one command line (program name first) and returns its exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx { out_dir, argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect() };
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Combine(a) => combine(&ctx, a),
        Command::Oracle(a) => oracle(&ctx, a),
        Command::Rank(a) => rank(&ctx, a),
        Command::Categories(a) => categories(&ctx, a),
        Command::PoolAttn(a) => pool_attn(a),
        Command::TrainToy(a) => train(&ctx, a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: gradient check failed");
                return 2;
            }
            Err(e) => Err(e),
        },
        Command::Bench(a) => bench(&ctx, a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
