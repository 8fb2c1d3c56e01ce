//! `cacps` command line: dataset generation, training, augmentation preview,
//! inference, evaluation and report tables.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 diverged training, 1 anything else. Failures print one line on stderr:
//! `error code=<code>: <message>`.

pub mod augment;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use cacps::phantom::{self, io, load_dataset, Dataset, ManifestEntry, Split};
use cacps::segnet::SegNetParams;
use cacps::train::{self, checkpoint_name, evaluate_dice, RunConfig};
use cacps::{Error, ErrorKind, Image, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "cacps",
    version,
    about = "Semi-supervised phantom segmentation with CACPS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Config overrides as key=value.
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset into the output directory.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured CACPS models.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides paths.data_dir.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write Fourier-augmented previews of dataset samples.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required = true)]
        samples: Vec<String>,
        /// Partner sample id; defaults to the next sample in the manifest.
        #[arg(long)]
        partner: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1")]
        lambdas: Vec<f64>,
    },
    /// Predict masks with trained checkpoints.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory; overrides paths.checkpoint_dir.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Score predicted masks against the dataset's ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of `<sample_id>.phm` predictions.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Summarize metrics CSVs into a per-method dice table.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSVs, optionally labeled as method=path.
        #[arg(required = true)]
        runs: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn admits(self, e: &ManifestEntry) -> bool {
        match self {
            SplitArg::Train => e.split == Split::Train,
            SplitArg::Val => e.split == Split::Val,
            SplitArg::Test => e.split == Split::Test,
            SplitArg::All => true,
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config | ErrorKind::Unsupported => 2,
        ErrorKind::Data
        | ErrorKind::Format
        | ErrorKind::Io
        | ErrorKind::Label
        | ErrorKind::Checkpoint
        | ErrorKind::Shape => 3,
        ErrorKind::Diverged => 4,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("error code=usage: {}", line.trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error code={}: {}",
                e.kind().code(),
                e.message().replace('\n', " ")
            );
            exit_code(e.kind())
        }
    }
}

fn load_config(common: &Common, data: Option<&Path>) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(d) = data {
        overrides.push(format!("paths.data_dir={}", d.display()));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.paths.data_dir.as_deref().ok_or_else(|| {
        Error::new(
            ErrorKind::Config,
            "no dataset: pass --data or set paths.data_dir",
        )
    })?;
    load_dataset(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::new(ErrorKind::Io, format!("{}: {e}", dir.display())))
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::new(ErrorKind::Io, format!("{}: {e}", path.display())))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common } => {
            let cfg = load_config(&common, None)?;
            let ds = phantom::build_dataset(&cfg.data, &common.out)?;
            let labeled = ds.manifest.samples.iter().filter(|e| e.labeled).count();
            println!(
                "wrote {} samples ({labeled} labeled) to {}",
                ds.manifest.samples.len(),
                common.out.display()
            );
        }
        Command::Train { common, data } => {
            let cfg = load_config(&common, data.as_deref())?;
            let ds = open_dataset(&cfg)?;
            create_dir(&common.out)?;
            let outcome = train::train_run(&cfg, &ds, &common.out)?;
            for row in outcome.rows.iter().filter(|r| r.val_dice.is_some()) {
                if row.epoch + 1 == cfg.train.epochs {
                    let d = row.val_dice.expect("filtered");
                    println!(
                        "model {}: val dice LV {:.4} MYO {:.4} RV {:.4} avg {:.4}",
                        row.model_id,
                        d[0],
                        d[1],
                        d[2],
                        d.iter().sum::<f64>() / 3.0
                    );
                }
            }
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Command::Augment {
            common,
            data,
            samples,
            partner,
            lambdas,
        } => {
            let cfg = load_config(&common, data.as_deref())?;
            let ds = open_dataset(&cfg)?;
            let summary = augment::augment_preview(
                &cfg,
                &ds,
                &samples,
                partner.as_deref(),
                &lambdas,
                &common.out,
            )?;
            println!("{}", summary.display());
        }
        Command::Infer {
            common,
            data,
            checkpoints,
            split,
        } => {
            let mut cfg = load_config(&common, data.as_deref())?;
            if checkpoints.is_some() {
                cfg.paths.checkpoint_dir = checkpoints;
            }
            let ds = open_dataset(&cfg)?;
            let dir = cfg.paths.checkpoint_dir.clone().ok_or_else(|| {
                Error::new(
                    ErrorKind::Config,
                    "no checkpoints: pass --checkpoints or set paths.checkpoint_dir",
                )
            })?;
            let n = infer(&ds, &dir, split, &common.out)?;
            println!("wrote {n} predicted masks to {}", common.out.display());
        }
        Command::Eval {
            common,
            data,
            predictions,
            split,
        } => {
            let cfg = load_config(&common, data.as_deref())?;
            let ds = open_dataset(&cfg)?;
            let avg = eval(&ds, &predictions, split, &common.out)?;
            println!("avg dice {avg:.4}");
        }
        Command::Report { out, runs } => {
            let table = report::build_report(&runs)?;
            create_dir(&out)?;
            report::write_report(&table, &out)?;
            print!("{}", report::render_text(&table));
        }
    }
    Ok(())
}

/// Loads whichever complete models (net1+net2, net3+net4) exist in `dir`.
pub fn load_models(dir: &Path) -> Result<Vec<[SegNetParams; 2]>> {
    let mut models = Vec::new();
    for m in 1..=2u8 {
        let paths = [
            dir.join(checkpoint_name(m, 0)),
            dir.join(checkpoint_name(m, 1)),
        ];
        if paths.iter().all(|p| p.is_file()) {
            models.push([
                SegNetParams::load(&paths[0])?,
                SegNetParams::load(&paths[1])?,
            ]);
        }
    }
    if models.is_empty() {
        return Err(Error::new(
            ErrorKind::Checkpoint,
            format!("no complete model checkpoints in {}", dir.display()),
        ));
    }
    Ok(models)
}

fn infer(ds: &Dataset, ckpt_dir: &Path, split: SplitArg, out: &Path) -> Result<usize> {
    let models = load_models(ckpt_dir)?;
    let entries: Vec<&ManifestEntry> = ds
        .manifest
        .samples
        .iter()
        .filter(|e| split.admits(e))
        .collect();
    if entries.is_empty() {
        return Err(Error::new(ErrorKind::Data, "selected split has no samples"));
    }
    let images: Vec<Image> = entries
        .iter()
        .map(|e| ds.load(e).map(|s| s.image))
        .collect::<Result<_>>()?;
    let refs: Vec<&Image> = images.iter().collect();
    let pairs: Vec<&[SegNetParams]> = models.iter().map(|m| &m[..]).collect();
    let preds = train::ensemble_predict(&pairs, &refs)?;
    create_dir(out)?;
    for (e, p) in entries.iter().zip(&preds) {
        io::save_mask(&out.join(format!("{}.phm", e.sample_id)), p)?;
    }
    Ok(preds.len())
}

fn eval(ds: &Dataset, pred_dir: &Path, split: SplitArg, out: &Path) -> Result<f64> {
    let entries: Vec<&ManifestEntry> = ds
        .manifest
        .samples
        .iter()
        .filter(|e| split.admits(e) && e.labeled)
        .collect();
    let mut preds = Vec::with_capacity(entries.len());
    let mut truths = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = pred_dir.join(format!("{}.phm", e.sample_id));
        if !path.is_file() {
            return Err(Error::new(
                ErrorKind::Data,
                format!("no prediction for {} at {}", e.sample_id, path.display()),
            ));
        }
        preds.push(io::load_mask(&path)?);
        truths.push(ds.load(e)?.mask);
    }
    let summary = evaluate_dice(
        entries
            .iter()
            .zip(preds.iter().zip(&truths))
            .map(|(e, (p, t))| (e.sample_id.as_str(), p, t.as_ref())),
    )?;
    create_dir(out)?;
    let path = out.join("dice.csv");
    let csv_err = |e: csv::Error| Error::new(ErrorKind::Io, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([
        "sample_id",
        "domain_id",
        "dice_LV",
        "dice_MYO",
        "dice_RV",
        "dice_avg",
    ])
    .map_err(csv_err)?;
    for (e, (id, d)) in entries.iter().zip(&summary.per_sample) {
        let avg = d.iter().sum::<f64>() / 3.0;
        let rec = [
            id.clone(),
            e.domain_id.to_string(),
            d[0].to_string(),
            d[1].to_string(),
            d[2].to_string(),
            avg.to_string(),
        ];
        w.write_record(rec).map_err(csv_err)?;
    }
    let m = summary.mean;
    let mean_rec = [
        "mean".to_string(),
        String::new(),
        m[0].to_string(),
        m[1].to_string(),
        m[2].to_string(),
        summary.average().to_string(),
    ];
    w.write_record(mean_rec).map_err(csv_err)?;
    w.flush()
        .map_err(|e| Error::new(ErrorKind::Io, format!("{}: {e}", path.display())))?;
    write_json(
        &out.join("eval_summary.json"),
        &json!({
            "samples": entries.len(),
            "dice_LV": m[0],
            "dice_MYO": m[1],
            "dice_RV": m[2],
            "dice_avg": summary.average(),
        }),
    )?;
    Ok(summary.average())
}
