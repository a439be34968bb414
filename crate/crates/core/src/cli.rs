//! The `cvboot` command line.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::io::{
    from_json, read_dataset, read_grid, read_prediction_matrix, to_json, write_prediction_matrix, DatasetOptions,
    PredictionMatrix, ReportDocument, StudyDocument,
};
use crate::learners::{BuiltinPipeline, PredictMode};
use crate::metrics::Metric;
use crate::protocols::{
    bbc, run_bced, run_cv, run_cvt_repeated, run_ncv, tt_correct, BbcSettings, BcedSettings, ProtocolReport,
};
use crate::resampling::{FoldPlan, SeedPlan, StreamTag};
use crate::selection::SelectionMode;
use crate::simulation::{run_setting, summarize, LatentMode, Preset, SimSetting, StudyConfig};

/// Environment variable fixing the number of worker threads.
pub const THREADS_ENV: &str = "CVBOOT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "cvboot",
    version,
    about = "Bias-corrected performance estimation for tuned learners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Correct the winner's estimate from a prediction matrix.
    Correct(CorrectArgs),
    /// Run a protocol with the built-in learners on a dataset.
    Run(RunArgs),
    /// Run the synthetic bias study.
    Simulate(SimulateArgs),
    /// Print a summary of a report or study document.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    ZeroOne,
    SquaredError,
    Auc,
    CIndex,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::ZeroOne => Metric::ZeroOne,
            MetricArg::SquaredError => Metric::SquaredError,
            MetricArg::Auc => Metric::Auc,
            MetricArg::CIndex => Metric::CIndex,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    Pooled,
    FoldAveraged,
}

impl From<SelectionArg> for SelectionMode {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Pooled => SelectionMode::Pooled,
            SelectionArg::FoldAveraged => SelectionMode::FoldAveraged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Bbc,
    Tt,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Cv,
    Cvt,
    Ncv,
    Bced,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Smoke,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LatentArg {
    PerCell,
    SharedRow,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    /// Bootstrap iterations.
    #[arg(short = 'B', long, default_value_t = 1000)]
    bootstraps: usize,
    /// Miscoverage of the percentile interval.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "pooled")]
    selection: SelectionArg,
}

impl BootstrapArgs {
    fn settings(&self) -> BbcSettings {
        BbcSettings {
            bootstraps: self.bootstraps,
            alpha: self.alpha,
            seed: self.seed,
            mode: self.selection.into(),
        }
    }
}

#[derive(Args, Debug)]
struct CorrectArgs {
    /// Prediction matrix file.
    matrix: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "bbc")]
    method: Method,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Leave out folds on which the metric is undefined (TT only).
    #[arg(long)]
    skip_degenerate_folds: bool,
    /// Report file; standard output when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Dataset file (delimited, with a header).
    #[arg(long)]
    data: PathBuf,
    /// Grid specification (JSON).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(short = 'K', long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    #[arg(long, default_value_t = 0.99)]
    alpha_drop: f64,
    #[arg(long, default_value_t = 50)]
    min_oos: usize,
    /// Fold partitions (CVT only); more than one adds a bootstrap
    /// correction over all repeats.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Configuration index for plain CV.
    #[arg(long, default_value_t = 0)]
    config: usize,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long)]
    event_column: Option<String>,
    #[arg(long)]
    id_column: Option<String>,
    /// Also write the pooled predictions as a matrix file.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, conflicts_with = "settings", required_unless_present = "settings")]
    preset: Option<PresetArg>,
    /// JSON array of settings.
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(short = 'K', long, default_value_t = 10)]
    folds: usize,
    #[arg(short = 'B', long, default_value_t = 1000)]
    bootstraps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha_drop: f64,
    #[arg(long, default_value_t = 50)]
    min_oos: usize,
    /// Master seed of the preset settings.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the replicate count of every setting.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the latent mode of every setting.
    #[arg(long, value_enum)]
    latent: Option<LatentArg>,
    /// JSON output.
    #[arg(long, short)]
    out: PathBuf,
    /// Flat table output; defaults to the JSON path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report or study document.
    file: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Compute(e.to_string())
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = configure_threads().and_then(|_| match cli.command {
        Command::Correct(a) => correct(a),
        Command::Run(a) => run_protocol(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    });
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Compute(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn bootstrap_params(params: &mut BTreeMap<String, Value>, b: &BootstrapArgs) {
    params.insert("bootstraps".into(), json!(b.bootstraps));
    params.insert("alpha".into(), json!(b.alpha));
    params.insert("selection".into(), json!(SelectionMode::from(b.selection)));
}

fn correct(a: CorrectArgs) -> Result<(), Failure> {
    let metric: Metric = a.metric.into();
    let matrix = read_prediction_matrix(&a.matrix)?;
    let store = &matrix.store;
    let settings = a.bootstrap.settings();
    let mut params = BTreeMap::new();
    params.insert("matrix".into(), json!(a.matrix.display().to_string()));
    params.insert("method".into(), json!(format!("{:?}", a.method).to_lowercase()));
    bootstrap_params(&mut params, &a.bootstrap);
    params.insert("skip_degenerate_folds".into(), json!(a.skip_degenerate_folds));
    params.insert("samples".into(), json!(store.n_samples()));
    params.insert("configurations".into(), json!(store.n_configs()));
    params.insert("folds".into(), json!(store.n_folds()));
    params.insert("repeats".into(), json!(store.n_repeats()));
    let mut doc = ReportDocument::new("correct", metric, a.bootstrap.seed, params);
    if matches!(a.method, Method::Bbc | Method::Both) {
        doc.results
            .push(bbc(store, metric, &settings, None)?.report(store, metric, &settings));
    }
    if matches!(a.method, Method::Tt | Method::Both) {
        let tt = tt_correct(store, metric, settings.mode, a.skip_degenerate_folds)?;
        if !tt.skipped_folds.is_empty() {
            eprintln!("warning: skipped degenerate folds {:?}", tt.skipped_folds);
        }
        doc.results.push(tt.report(store, metric, settings.mode));
    }
    emit(&to_json(&doc)?, a.out.as_deref())
}

fn run_protocol(a: RunArgs) -> Result<(), Failure> {
    let metric: Metric = a.metric.into();
    if a.repeats == 0 {
        return Err(Failure::Usage("--repeats must be at least 1".into()));
    }
    if a.repeats > 1 && a.protocol != ProtocolArg::Cvt {
        return Err(Failure::Usage("--repeats applies to --protocol cvt only".into()));
    }
    let options = DatasetOptions {
        label_column: a.label_column.clone(),
        event_column: a.event_column.clone(),
        id_column: a.id_column.clone(),
    };
    let file = std::fs::File::open(&a.data).map_err(|e| Failure::Compute(format!("{}: {e}", a.data.display())))?;
    let (data, ids) = read_dataset(file, &options)?;
    let grid = read_grid(&a.grid)?;
    if a.protocol == ProtocolArg::Cv && a.config >= grid.len() {
        return Err(Failure::Usage(format!(
            "--config {} is out of range for {} configurations",
            a.config,
            grid.len()
        )));
    }
    let seeds = SeedPlan::new(a.bootstrap.seed);
    let plans = (0..a.repeats)
        .map(|r| FoldPlan::stratified(data.labels(), a.folds, &mut seeds.stream(StreamTag::FoldPlan, r as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let pipeline = BuiltinPipeline::new(grid, data, PredictMode::for_metric(metric));
    let settings = a.bootstrap.settings();
    let mode = settings.mode;

    let mut params = BTreeMap::new();
    params.insert("data".into(), json!(a.data.display().to_string()));
    params.insert("grid".into(), json!(a.grid.display().to_string()));
    params.insert("protocol".into(), json!(format!("{:?}", a.protocol).to_lowercase()));
    params.insert("folds".into(), json!(a.folds));
    bootstrap_params(&mut params, &a.bootstrap);
    params.insert("alpha_drop".into(), json!(a.alpha_drop));
    params.insert("min_oos".into(), json!(a.min_oos));
    params.insert("repeats".into(), json!(a.repeats));
    params.insert("configurations".into(), json!(pipeline.grid().ids()));
    params.insert("samples".into(), json!(pipeline.data().len()));

    let mut results: Vec<ProtocolReport> = Vec::new();
    let store = match a.protocol {
        ProtocolArg::Cv => {
            params.insert("config".into(), json!(a.config));
            let run = run_cv(&pipeline, a.config, &plans[0], metric)?;
            results.push(run.report);
            run.store
        }
        ProtocolArg::Cvt => {
            let run = run_cvt_repeated(&pipeline, &plans, metric, mode)?;
            results.push(run.report);
            if a.repeats > 1 {
                let store = run.store.as_ref().expect("CVT keeps its predictions");
                let mut report = bbc(store, metric, &settings, None)?.report(store, metric, &settings);
                report.models_trained = results[0].models_trained;
                results.push(report);
            }
            run.store
        }
        ProtocolArg::Ncv => {
            let run = run_ncv(&pipeline, &plans[0], metric, mode)?;
            results.push(run.report);
            run.store
        }
        ProtocolArg::Bced => {
            let bced = BcedSettings {
                bbc: settings,
                alpha_drop: a.alpha_drop,
                min_oos: a.min_oos,
            };
            let run = run_bced(&pipeline, &plans[0], metric, &bced)?;
            results.push(run.report);
            run.store
        }
    };
    if pipeline.fallbacks() > 0 {
        eprintln!(
            "warning: {} trainings saw a single class and fell back to the majority rule",
            pipeline.fallbacks()
        );
    }
    if let (Some(path), Some(store)) = (a.dump_matrix.as_deref(), store) {
        let matrix = PredictionMatrix {
            sample_ids: ids,
            repeat_column: store.n_repeats() > 1,
            store,
        };
        let file = std::fs::File::create(path).map_err(|e| Failure::Compute(format!("{}: {e}", path.display())))?;
        write_prediction_matrix(&matrix, std::io::BufWriter::new(file))?;
    }
    let mut doc = ReportDocument::new("run", metric, a.bootstrap.seed, params);
    doc.results = results;
    emit(&to_json(&doc)?, a.out.as_deref())
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut settings: Vec<SimSetting> = match (&a.preset, &a.settings) {
        (Some(PresetArg::Smoke), _) => Preset::Smoke.settings(a.seed),
        (Some(PresetArg::Full), _) => Preset::Full.settings(a.seed),
        (None, Some(path)) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Compute(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Compute(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Failure::Usage("give --preset or --settings".into())),
    };
    for s in settings.iter_mut() {
        if let Some(r) = a.replicates {
            s.reps = r;
        }
        if let Some(l) = a.latent {
            s.latent = match l {
                LatentArg::PerCell => LatentMode::PerCell,
                LatentArg::SharedRow => LatentMode::SharedRow,
            };
        }
    }
    let config = StudyConfig {
        k: a.folds,
        bootstraps: a.bootstraps,
        alpha: a.alpha,
        alpha_drop: a.alpha_drop,
        min_oos: a.min_oos,
        ..StudyConfig::default()
    };
    for s in &settings {
        s.validate(config.k)?;
    }
    let mut rows = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        eprintln!(
            "[{}/{}] N={} C={} Beta({}, {}) x {}",
            i + 1,
            settings.len(),
            s.n,
            s.c,
            s.beta_a,
            s.beta_b,
            s.reps
        );
        rows.extend(summarize(s, &run_setting(s, &config)?));
    }
    let doc = StudyDocument::new(a.seed, config, rows);
    emit(&to_json(&doc)?, Some(&a.out))?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let file =
        std::fs::File::create(&csv_path).map_err(|e| Failure::Compute(format!("{}: {e}", csv_path.display())))?;
    doc.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.file).map_err(|e| Failure::Compute(format!("{}: {e}", a.file.display())))?;
    let value: Value = serde_json::from_str(&text)?;
    let mut out = String::new();
    if value.get("command").and_then(Value::as_str) == Some("simulate") {
        let doc: StudyDocument = from_json(&text)?;
        out.push_str(&format!(
            "{:>6} {:>6} {:>6} {:>9} {:>10} {:>9} {:>10} {:>9}\n",
            "N", "C", "mu", "protocol", "bias", "se", "models", "coverage"
        ));
        for r in &doc.rows {
            out.push_str(&format!(
                "{:>6} {:>6} {:>6.2} {:>9} {:>10.4} {:>9.4} {:>10.1} {:>9}\n",
                r.setting.n,
                r.setting.c,
                r.setting.mu(),
                r.protocol.name(),
                r.mean_bias,
                r.se_bias,
                r.mean_models_trained,
                r.coverage.map_or("-".to_string(), |c| format!("{c:.3}"))
            ));
        }
    } else {
        let doc: ReportDocument = from_json(&text)?;
        out.push_str(&format!(
            "{} {} ({}), metric {}, seed {}\n",
            doc.tool, doc.version, doc.command, doc.metric, doc.seed
        ));
        for r in &doc.results {
            let ci = r.ci.map_or("-".to_string(), |[lb, ub]| format!("[{lb:.4}, {ub:.4}]"));
            out.push_str(&format!(
                "{:<5} estimate {:.4}  ci {}  selected {} ({})  models {}",
                r.protocol.name(),
                r.estimate,
                ci,
                r.selected_config_id,
                r.selected_config,
                r.models_trained
            ));
            if let Some(bias) = r.tt_bias {
                out.push_str(&format!("  tt-bias {bias:.4}"));
            }
            if let Some(drops) = &r.drop_trace {
                out.push_str(&format!("  dropped {}", drops.len()));
            }
            out.push('\n');
        }
    }
    emit(&out, None)
}
