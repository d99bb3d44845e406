use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pwtk::config::PipelineConfig;
use pwtk::io::case::read_case_dir;
use pwtk::io::raw;
use pwtk::metrics::{
    evaluate_corpus, parse_metrics_csv, NmiMatrix, DEFAULT_BINS, DEFAULT_THRESHOLD,
};
use pwtk::model::ModelKind;
use pwtk::pipeline::{
    case_dirs, load_or_preprocess, load_training_patches, log_event, preprocess_bundle,
    save_preprocessed, synth_to_dir, window_bundle, write_window,
};
use pwtk::plot::{hd_dice_scatter, nmi_heatmap};
use pwtk::predict::{nmi_report, predict_case};
use pwtk::temporal::WINDOW_LENGTH;
use pwtk::train::{load_checkpoint, loss_csv, save_checkpoint, train, TrainConfig};
use pwtk::{Error, Result};

/// Perfusion lesion-outcome segmentation toolkit.
#[derive(Debug, Parser)]
#[command(name = "pwtk", version, arg_required_else_help = true)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed; overrides the configuration's seeds.
    #[arg(long, global = true, env = "PWTK_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a phantom corpus, one directory per case.
    Synth(SynthArgs),
    /// Detect the contrast peak and cut the PWI window of one case.
    Window(WindowArgs),
    /// Window, resize, clip, scale and sample patches.
    Preprocess(PreprocessArgs),
    /// Train one architecture on preprocessed patches.
    Train(TrainArgs),
    /// Full-volume inference by overlapping tiles.
    Predict(PredictArgs),
    /// Dice, Hausdorff, ASSD, precision and recall per case.
    Evaluate(EvaluateArgs),
    /// NMI between learned PWI features and the standard maps.
    Nmi(NmiArgs),
    /// SVG figures from metric and NMI tables.
    Report(ReportArgs),
    /// Gradient checks and metric oracles.
    Selftest,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of cases.
    #[arg(long, default_value_t = 4)]
    cases: usize,
    /// Pipeline configuration; its `phantom` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Case directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output `.pwt`; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    /// Window length in acquisitions.
    #[arg(long, default_value_t = WINDOW_LENGTH)]
    length: usize,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// A case directory, or a directory of case directories.
    #[arg(long)]
    case: PathBuf,
    /// Output directory; one subdirectory per case when `--case` holds several.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline configuration; its `preproc` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-cut PWI window to use instead of detecting one (single case only).
    #[arg(long)]
    window: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// A preprocessed case directory or a directory of them.
    #[arg(long)]
    data: PathBuf,
    /// Architecture: standard, data-driven, single or branched.
    #[arg(long)]
    arch: ModelKind,
    /// Pipeline configuration; its `arch` and `train` sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; `loss.csv` is written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Use the published learning rate (1e-5) and batch size (4).
    #[arg(long)]
    paper_hparams: bool,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// A case directory (raw or preprocessed), or a directory of them.
    #[arg(long)]
    case: PathBuf,
    /// Output `.pwt`, or a directory of `<case_id>.pwt` for several cases.
    #[arg(long)]
    out: PathBuf,
    /// Tile side (default: the training patch size).
    #[arg(long)]
    patch: Option<usize>,
    /// Pipeline configuration used to preprocess raw cases.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of `<case_id>.pwt` probability maps.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of case directories holding `gt.pwt`.
    #[arg(long)]
    gt: PathBuf,
    /// Output CSV.
    #[arg(long)]
    report: PathBuf,
    /// Binarization threshold (strict).
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
}

#[derive(Debug, Args)]
struct NmiArgs {
    /// Branched-model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Case directory (raw or preprocessed).
    #[arg(long)]
    case: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Histogram bins per axis.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Tile side (default: the training patch size).
    #[arg(long)]
    patch: Option<usize>,
    /// Pipeline configuration used to preprocess a raw case.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metrics table, as `PATH` or `NAME=PATH`; repeat once per method.
    #[arg(long, required = true)]
    metrics: Vec<String>,
    /// NMI table to draw as a heatmap.
    #[arg(long)]
    nmi: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn is_case_dir(dir: &Path) -> bool {
    dir.join("pwi.pwt").is_file() || dir.join("case.json").is_file()
}

fn cases_under(dir: &Path) -> Result<Vec<PathBuf>> {
    if is_case_dir(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let v = case_dirs(dir)?;
    if v.is_empty() {
        return Err(Error::Data(format!(
            "no case directories under {}",
            dir.display()
        )));
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Parameter("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(e.to_string()))?;
    }
    let seed_override = cli.seed;
    match cli.command {
        Command::Synth(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let seed = seed_override.unwrap_or(cfg.seed);
            let ids = synth_to_dir(&cfg.phantom, a.cases, seed, &a.out)?;
            log_event("synth", "done", json!({ "cases": ids.len(), "out": a.out }));
        }
        Command::Window(a) => {
            let seed = seed_override.unwrap_or(0);
            let bundle = read_case_dir(&a.input)?;
            let w = window_bundle(&bundle, a.length, seed)?;
            write_window(&w, &a.out)?;
            log_event(
                "window",
                "done",
                json!({ "case_id": bundle.case_id, "peak_index": w.peak_index, "start": w.start, "length": w.length }),
            );
        }
        Command::Preprocess(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let seed = seed_override.unwrap_or(cfg.seed);
            let dirs = cases_under(&a.case)?;
            if a.window.is_some() && dirs.len() > 1 {
                return Err(Error::Parameter("--window needs a single case".into()));
            }
            let single = dirs.len() == 1 && is_case_dir(&a.case);
            for dir in dirs {
                let mut bundle = read_case_dir(&dir)?;
                let mut window = None;
                if let Some(w) = &a.window {
                    bundle.pwi = raw::load_volume4d(w)?;
                    if let Ok(text) = std::fs::read_to_string(w.with_extension("json")) {
                        window = serde_json::from_str(&text).ok();
                    }
                }
                let (case, patches, detected) =
                    preprocess_bundle(bundle, &cfg.preproc, WINDOW_LENGTH, seed)?;
                let out = if single {
                    a.out.clone()
                } else {
                    a.out.join(&case.case_id)
                };
                save_preprocessed(&case, &patches, detected.or(window), &out)?;
                log_event(
                    "preprocess",
                    "case",
                    json!({
                        "case_id": case.case_id,
                        "patches": patches.len(),
                        "degenerate": case.degenerate.iter().map(|k| k.label()).collect::<Vec<_>>(),
                    }),
                );
            }
        }
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let mut tc: TrainConfig = cfg.train.clone();
            if a.paper_hparams {
                tc.learning_rate = TrainConfig::PUBLISHED_LEARNING_RATE;
                tc.batch_size = 4;
            }
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            if let Some(s) = seed_override {
                tc.seed = s;
            }
            tc.validate()?;
            let patches = load_training_patches(&a.data)?;
            log_event(
                "train",
                "start",
                json!({ "arch": a.arch.name(), "patches": patches.len(), "epochs": tc.epochs, "learning_rate": tc.learning_rate }),
            );
            let ck = train(&patches, a.arch, &cfg.arch, &tc, |r| {
                log_event(
                    "train",
                    "epoch",
                    json!({ "epoch": r.epoch, "train_loss": r.train_loss, "val_dice": r.val_dice }),
                );
            })?;
            save_checkpoint(&ck, &a.out)?;
            write_text(
                &a.out.with_file_name("loss.csv"),
                &loss_csv(&ck.meta.history),
            )?;
            log_event(
                "train",
                "done",
                json!({ "best_epoch": ck.meta.best_epoch, "out": a.out }),
            );
        }
        Command::Predict(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let seed = seed_override.unwrap_or(cfg.seed);
            let ck = load_checkpoint(&a.model)?;
            let patch = a.patch.unwrap_or(ck.meta.patch_size);
            let model = ck.into_model(None)?;
            let dirs = cases_under(&a.case)?;
            let single = is_case_dir(&a.case);
            for dir in dirs {
                let case = load_or_preprocess(&dir, &cfg.preproc, model.config.pwi_channels, seed)?;
                let prob = predict_case(&model, &case, patch)?;
                let out = if single {
                    a.out.clone()
                } else {
                    a.out.join(format!("{}.pwt", case.case_id))
                };
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    create_dir(parent)?;
                }
                raw::save(&out, &raw::write_volume3d(&prob))?;
                log_event(
                    "predict",
                    "case",
                    json!({ "case_id": case.case_id, "out": out }),
                );
            }
        }
        Command::Evaluate(a) => {
            let report = evaluate_corpus(&a.pred, &a.gt, a.threshold)?;
            write_text(&a.report, &report.to_csv())?;
            log_event(
                "evaluate",
                "done",
                json!({
                    "cases": report.rows.len(),
                    "dice_mean": report.dice.mean,
                    "undefined_distance": report.undefined_distance,
                }),
            );
        }
        Command::Nmi(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let seed = seed_override.unwrap_or(cfg.seed);
            let ck = load_checkpoint(&a.model)?;
            let patch = a.patch.unwrap_or(ck.meta.patch_size);
            let model = ck.into_model(Some(ModelKind::Branched))?;
            let case = load_or_preprocess(&a.case, &cfg.preproc, model.config.pwi_channels, seed)?;
            let m = nmi_report(&model, &case, a.bins, patch)?;
            write_text(&a.out, &m.to_csv())?;
            log_event(
                "nmi",
                "done",
                json!({ "case_id": case.case_id, "max": m.max(), "below_0_2": m.max() < 0.2 }),
            );
        }
        Command::Report(a) => {
            let mut methods = Vec::new();
            for spec in &a.metrics {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let n = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        (n, p)
                    }
                };
                methods.push((name, parse_metrics_csv(&read_text(&path)?)?));
            }
            create_dir(&a.out)?;
            write_text(&a.out.join("hd_vs_dice.svg"), &hd_dice_scatter(&methods))?;
            if let Some(p) = &a.nmi {
                let m = NmiMatrix::from_csv(&read_text(p)?)?;
                write_text(&a.out.join("nmi_heatmap.svg"), &nmi_heatmap(&m))?;
            }
            log_event(
                "report",
                "done",
                json!({ "methods": methods.len(), "out": a.out }),
            );
        }
        Command::Selftest => {
            let checks = pwtk::selftest::run_all(seed_override.unwrap_or(0))?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                log_event("selftest", "check", json!(c));
            }
            if failed > 0 {
                return Err(Error::Numerical(format!(
                    "{failed} self-test checks failed"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log_event(
                "error",
                "failed",
                json!({ "message": e.to_string(), "exit_code": e.exit_code() }),
            );
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
