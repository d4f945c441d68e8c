//! Command-line front end: dataset generation, training, evaluation,
//! gradient checking, hubness diagnostics and multi-seed loss comparisons.
//! Every flag can also be set through an environment variable with the
//! `CROSSMODAL_` prefix (for example `CROSSMODAL_SEED=7`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crossmodal_core::eval::Direction;
use crossmodal_core::{
    benchmark_spec, benchmark_split, cross_similarity, evaluate_encoder, generate_synthetic,
    gradient_check, history_csv, hubness_csv, hubness_report, load_dataset, load_encoder,
    metrics_csv, save_dataset, save_encoder, train, variant_config, write_text, BenchmarkVariant,
    EpochRecord, Error as CoreError, EvalSummary, FeatureDataset, GradCheckLoss, LossKind,
    SyntheticProvenance, SyntheticSpec, TrainConfig, DEFAULT_FD_STEP, DEFAULT_FD_TOLERANCE,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Batch and dimensions used by the gradcheck command; small enough that a
/// full central-difference sweep over every parameter runs in well under a
/// second per loss.
const GRADCHECK_BATCH: usize = 8;
const GRADCHECK_DIM: usize = 8;

const COMPARE_SEEDS: u64 = 5;

#[derive(Debug)]
enum Failure {
    Core(CoreError),
    Io { path: PathBuf, message: String },
    Usage(String),
    Numeric(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => classify(e),
            Failure::Io { .. } => EXIT_IO,
            Failure::Usage(_) => EXIT_CONFIG,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io { path, message } => write!(f, "{}: {message}", path.display()),
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

/// Maps library errors onto the three documented exit classes: bad
/// configuration or inputs, file problems, numerical aborts.
fn classify(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidConfig(_)
        | CoreError::Parse { .. }
        | CoreError::ShapeMismatch { .. }
        | CoreError::DataLength { .. }
        | CoreError::EmptyInput(_)
        | CoreError::BankTooSmall { .. }
        | CoreError::NotEnoughNeighbours { .. } => EXIT_CONFIG,
        CoreError::Io { .. }
        | CoreError::BadMagic { .. }
        | CoreError::VersionMismatch { .. }
        | CoreError::TruncatedPayload { .. } => EXIT_IO,
        CoreError::NonFinite { .. }
        | CoreError::Singular { .. }
        | CoreError::PositiveTermTooSmall { .. }
        | CoreError::TrainingDiverged { .. } => EXIT_NUMERIC,
    }
}

#[derive(Parser)]
#[command(
    name = "crossmodal",
    version,
    about = "Cross-modal retrieval workbench: synthetic data, four alignment losses, metrics",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical abort.\n\
                  Every flag has an environment override named CROSSMODAL_<FLAG>."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset (two feature files plus manifest).
    Generate(GenerateArgs),
    /// Train an encoder pair; writes model, CSV metrics and a run manifest.
    Train(TrainArgs),
    /// Score a saved encoder on a dataset and print metrics CSV.
    Eval(EvalArgs),
    /// Compare analytic encoder gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print k-occurrence hubness statistics as CSV.
    Hubness(HubnessArgs),
    /// Train every loss variant over a seed grid and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Spec file (TOML mirroring the synthetic spec fields); defaults to the
    /// standard benchmark spec when omitted.
    #[arg(long, env = "CROSSMODAL_CONFIG")]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long, env = "CROSSMODAL_OUT")]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long, env = "CROSSMODAL_SEED")]
    seed: Option<u64>,
    /// Write into an existing output directory.
    #[arg(long, env = "CROSSMODAL_OVERWRITE")]
    overwrite: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config file (TOML mirroring the train config fields).
    #[arg(long, env = "CROSSMODAL_CONFIG")]
    config: PathBuf,
    /// Dataset directory produced by `generate`.
    #[arg(long, env = "CROSSMODAL_DATA")]
    data: PathBuf,
    /// Output run directory.
    #[arg(long, env = "CROSSMODAL_OUT")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, env = "CROSSMODAL_SEED")]
    seed: Option<u64>,
    /// Overrides the config's loss (SUM, MAX, NCA or HAL).
    #[arg(long, env = "CROSSMODAL_LOSS", value_parser = parse_loss_kind)]
    loss: Option<LossKind>,
    /// Write into an existing output directory.
    #[arg(long, env = "CROSSMODAL_OVERWRITE")]
    overwrite: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved encoder file (.embw).
    model: PathBuf,
    /// Dataset directory to score on.
    #[arg(long, env = "CROSSMODAL_DATA")]
    data: PathBuf,
    /// Also write the metrics CSV to this file.
    #[arg(long, env = "CROSSMODAL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Loss to check (SUM, MAX, NCA, HAL or HAL+MB); all five when omitted.
    #[arg(long, env = "CROSSMODAL_LOSS", value_parser = parse_gradcheck_loss)]
    loss: Option<GradCheckLoss>,
    #[arg(long, env = "CROSSMODAL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct HubnessArgs {
    /// Saved encoder file (.embw); raw features are compared when omitted.
    model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, env = "CROSSMODAL_DATA")]
    data: PathBuf,
    /// Neighbourhood size for the occurrence counts.
    #[arg(long, env = "CROSSMODAL_K", default_value_t = 10)]
    k: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long, env = "CROSSMODAL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset directory; the standard per-seed benchmark is generated on
    /// the fly when omitted.
    #[arg(long, env = "CROSSMODAL_DATA")]
    data: Option<PathBuf>,
    /// Output directory for compare.csv and curves.csv.
    #[arg(long, env = "CROSSMODAL_OUT")]
    out: PathBuf,
    /// First seed of the five-seed grid.
    #[arg(long, env = "CROSSMODAL_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent (loss, seed) cells.
    #[arg(long, env = "CROSSMODAL_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Write into an existing output directory.
    #[arg(long, env = "CROSSMODAL_OVERWRITE")]
    overwrite: bool,
}

fn parse_loss_kind(s: &str) -> Result<LossKind, String> {
    match s.to_ascii_uppercase().as_str() {
        "SUM" => Ok(LossKind::Sum),
        "MAX" => Ok(LossKind::Max),
        "NCA" => Ok(LossKind::Nca),
        "HAL" => Ok(LossKind::Hal),
        other => Err(format!("unknown loss {other}; expected SUM, MAX, NCA or HAL")),
    }
}

fn parse_gradcheck_loss(s: &str) -> Result<GradCheckLoss, String> {
    s.parse::<GradCheckLoss>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Hubness(args) => cmd_hubness(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn parse_toml<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let body = fs::read_to_string(path)
        .map_err(|e| Failure::Io { path: path.to_path_buf(), message: e.to_string() })?;
    toml::from_str(&body).map_err(|e| {
        Failure::Core(CoreError::Parse { path: path.to_path_buf(), message: e.to_string() })
    })
}

fn to_toml<T: Serialize>(value: &T, path: &Path) -> Result<String, Failure> {
    toml::to_string_pretty(value).map_err(|e| {
        Failure::Core(CoreError::Parse { path: path.to_path_buf(), message: e.to_string() })
    })
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<(), Failure> {
    if dir.exists() && !overwrite {
        return Err(Failure::Usage(format!(
            "output directory {} already exists; pass --overwrite to reuse it",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Io { path: dir.to_path_buf(), message: e.to_string() })
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(path) => parse_toml(path)?,
        None => benchmark_spec(args.seed.unwrap_or(0), 0.0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    prepare_out_dir(&args.out, args.overwrite)?;
    let generated = generate_synthetic(&spec)?;
    let provenance = SyntheticProvenance {
        spec,
        relabeled_captions: generated.relabeled.len(),
        hub_images: generated.hub_images.len(),
        hub_captions: generated.hub_captions.len(),
    };
    save_dataset(&args.out, &generated.dataset, Some(provenance))?;
    println!(
        "wrote {} images x {} captions each ({} text rows) to {}",
        generated.dataset.n_images(),
        generated.dataset.captions_per_image(),
        generated.dataset.n_pairs(),
        args.out.display()
    );
    Ok(())
}

/// Everything needed to reproduce and audit one training run.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunManifest<'a> {
    code_version: &'a str,
    seed: u64,
    train_images: usize,
    val_images: usize,
    wall_clock_secs: f64,
    best_epoch: usize,
    best_rsum: f64,
    config: &'a TrainConfig,
    final_reports: &'a EvalSummary,
    history: &'a [EpochRecord],
}

/// Carves a validation split off the tail of the dataset (last fifth of the
/// images) and trains on the rest.
fn split_for_training(data: &FeatureDataset) -> Result<(FeatureDataset, FeatureDataset), Failure> {
    Ok(benchmark_split(data)?)
}

fn run_training(
    cfg: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<(f64, EvalSummary), Failure> {
    let started = Instant::now();
    let full = load_dataset(data_dir)?;
    let (train_set, val_set) = split_for_training(&full)?;
    let outcome = train(&train_set, &val_set, cfg)?;
    let final_reports = evaluate_encoder(&outcome.encoder, &val_set)?;

    save_encoder(&out_dir.join("encoder.embw"), &outcome.encoder)?;
    write_text(&out_dir.join("history.csv"), &history_csv(&outcome.history))?;
    write_text(&out_dir.join("metrics.csv"), &metrics_csv(&final_reports))?;
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        train_images: train_set.n_images(),
        val_images: val_set.n_images(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        best_epoch: outcome.best_epoch,
        best_rsum: outcome.best_rsum,
        config: cfg,
        final_reports: &final_reports,
        history: &outcome.history,
    };
    let manifest_path = out_dir.join("run.toml");
    write_text(&manifest_path, &to_toml(&manifest, &manifest_path)?)?;
    Ok((outcome.best_rsum, final_reports))
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg: TrainConfig = parse_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(loss) = args.loss {
        cfg.loss_kind = loss;
    }
    cfg.validate()?;
    prepare_out_dir(&args.out, args.overwrite)?;
    let (best_rsum, final_reports) = run_training(&cfg, &args.data, &args.out)?;
    println!(
        "{} seed {}: best rsum {:.2}, final r@1 {:.2}/{:.2}; artifacts in {}",
        cfg.loss_kind,
        cfg.seed,
        best_rsum,
        final_reports.image_to_text.r_at_1,
        final_reports.text_to_image.r_at_1,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let encoder = load_encoder(&args.model)?;
    let data = load_dataset(&args.data)?;
    let summary = evaluate_encoder(&encoder, &data)?;
    let csv = metrics_csv(&summary);
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let losses: Vec<GradCheckLoss> = match args.loss {
        Some(l) => vec![l],
        None => GradCheckLoss::ALL.to_vec(),
    };
    println!("loss     seed  textBlockMaxRel  imageBlockMaxRel  resampled  status");
    let mut failures = 0;
    for loss in losses {
        let report = gradient_check(loss, args.seed, GRADCHECK_BATCH, GRADCHECK_DIM, DEFAULT_FD_STEP)?;
        let ok = report.passed(DEFAULT_FD_TOLERANCE);
        failures += usize::from(!ok);
        println!(
            "{:8} {:>4}  {:>15.3e}  {:>16.3e}  {:>9}  {}",
            loss.to_string(),
            args.seed,
            report.text_max_rel,
            report.image_max_rel,
            report.resampled,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failures > 0 {
        return Err(Failure::Numeric(format!(
            "{failures} loss(es) exceeded the {DEFAULT_FD_TOLERANCE:.0e} gradient tolerance"
        )));
    }
    Ok(())
}

fn cmd_hubness(args: HubnessArgs) -> Result<(), Failure> {
    let data = load_dataset(&args.data)?;
    let s = match &args.model {
        Some(model) => {
            let encoder = load_encoder(model)?;
            let (text_enc, image_enc) = encoder.encode(data.text_features(), data.image_features())?;
            cross_similarity(&text_enc, &image_enc)?
        }
        None => {
            if data.text_dim() != data.image_dim() {
                return Err(Failure::Usage(format!(
                    "raw-feature hubness needs matching dimensions, got dText {} vs dImage {}; \
                     pass a model file to compare in the joint space",
                    data.text_dim(),
                    data.image_dim()
                )));
            }
            cross_similarity(data.text_features(), data.image_features())?
        }
    };
    let reports = [
        hubness_report(&s, args.k, Direction::TextToImage)?,
        hubness_report(&s, args.k, Direction::ImageToText)?,
    ];
    let csv = hubness_csv(&reports);
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
    } else {
        print!("{csv}");
    }
    Ok(())
}

struct CellOutcome {
    final_rsum: f64,
    best_rsum: f64,
    best_epoch: usize,
    mean_r_at_1: f64,
    hub_skewness: f64,
    curve: Vec<f64>,
}

fn run_cell(
    variant: BenchmarkVariant,
    seed: u64,
    shared: Option<&(FeatureDataset, FeatureDataset)>,
) -> Result<CellOutcome, CoreError> {
    let generated;
    let split;
    let (train_set, val_set) = match shared {
        Some((t, v)) => (t, v),
        None => {
            generated = generate_synthetic(&benchmark_spec(seed, 0.0))?;
            split = benchmark_split(&generated.dataset)?;
            (&split.0, &split.1)
        }
    };
    let cfg = variant_config(variant, seed);
    let outcome = train(train_set, val_set, &cfg)?;
    let summary = evaluate_encoder(&outcome.encoder, val_set)?;
    let (text_enc, image_enc) =
        outcome.encoder.encode(val_set.text_features(), val_set.image_features())?;
    let s = cross_similarity(&text_enc, &image_enc)?;
    let hubs = hubness_report(&s, 10, Direction::TextToImage)?;
    Ok(CellOutcome {
        final_rsum: outcome.history.last().map_or(0.0, |e| e.rsum),
        best_rsum: outcome.best_rsum,
        best_epoch: outcome.best_epoch,
        mean_r_at_1: (summary.image_to_text.r_at_1 + summary.text_to_image.r_at_1) / 2.0,
        hub_skewness: hubs.skewness,
        curve: outcome.history.iter().map(|e| e.rsum).collect(),
    })
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    prepare_out_dir(&args.out, args.overwrite)?;
    let shared = match &args.data {
        Some(dir) => {
            let full = load_dataset(dir)?;
            Some(split_for_training(&full)?)
        }
        None => None,
    };

    let cells: Vec<(BenchmarkVariant, u64)> = BenchmarkVariant::ALL
        .into_iter()
        .flat_map(|v| (args.seed..args.seed + COMPARE_SEEDS).map(move |s| (v, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Failure::Usage(format!("cannot build a {}-thread pool: {e}", args.jobs)))?;
    let results: Vec<Result<CellOutcome, CoreError>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(variant, seed)| run_cell(variant, seed, shared.as_ref()))
            .collect()
    });

    let mut table = String::from("loss,seed,status,finalRsum,bestRsum,bestEpoch,meanRAt1,hubSkewness\n");
    let mut curves = String::from("loss,seed,epoch,rsum\n");
    let mut first_error: Option<u8> = None;
    for variant in BenchmarkVariant::ALL {
        let mut done = Vec::new();
        for (&(_, seed), result) in cells.iter().zip(&results).filter(|((v, _), _)| *v == variant) {
            match result {
                Ok(cell) => {
                    table.push_str(&format!(
                        "{variant},{seed},ok,{},{},{},{},{}\n",
                        cell.final_rsum,
                        cell.best_rsum,
                        cell.best_epoch,
                        cell.mean_r_at_1,
                        cell.hub_skewness
                    ));
                    for (epoch, rsum) in cell.curve.iter().enumerate() {
                        curves.push_str(&format!("{variant},{seed},{epoch},{rsum}\n"));
                    }
                    done.push(cell);
                }
                Err(e) => {
                    eprintln!("cell {variant} seed {seed} aborted: {e}");
                    first_error.get_or_insert(classify(e));
                    table.push_str(&format!("{variant},{seed},aborted,,,,,\n"));
                }
            }
        }
        if !done.is_empty() {
            let n = done.len() as f64;
            let mean = |f: &dyn Fn(&&CellOutcome) -> f64| done.iter().map(f).sum::<f64>() / n;
            table.push_str(&format!(
                "{variant},mean,ok,{},{},{},{},{}\n",
                mean(&|c| c.final_rsum),
                mean(&|c| c.best_rsum),
                mean(&|c| c.best_epoch as f64),
                mean(&|c| c.mean_r_at_1),
                mean(&|c| c.hub_skewness)
            ));
        }
    }
    write_text(&args.out.join("compare.csv"), &table)?;
    write_text(&args.out.join("curves.csv"), &curves)?;
    print!("{table}");
    if let Some(code) = first_error {
        return Err(match code {
            EXIT_CONFIG => Failure::Usage("at least one comparison cell aborted".into()),
            EXIT_IO => Failure::Io { path: args.out, message: "at least one comparison cell aborted".into() },
            _ => Failure::Numeric("at least one comparison cell aborted".into()),
        });
    }
    Ok(())
}
