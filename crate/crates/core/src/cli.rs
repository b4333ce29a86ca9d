//! The `syncgan` executable: argument parsing, subcommands and run manifests.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::idx::IdxArray;
use crate::data::paired::{ClassMap, DatasetManifest};
use crate::data::surrogate::{FREQUENCIES, KINDS};
use crate::data::{
    build_instrument_dataset, build_paired_dataset, build_rotated_dataset, byte_to_unit, load_idx, read_idx,
    unit_to_byte, write_idx, DataError, IdxData, PairedDataset, RawImageCorpus,
};
use crate::error::{Error, Result};
use crate::eval::{
    semi_supervised_sweep, sync_rate, train_classifier, write_sweep_csv, Classifier, ClassifierConfig, SyncRateReport,
    STREAM_EVAL,
};
use crate::inversion::{transfer, InversionConfig};
use crate::model::{Modality, SyncGanModel};
use crate::pgm::{grid, Gray};
use crate::tensor::Tensor;
use crate::trainer::{apply_semi_rate, seeded_rng, train, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const DATA_DIR_ENV: &str = "SYNCGAN_DATA_DIR";
const STREAM_DATA: u64 = 4;

#[derive(Debug, Parser)]
#[command(name = "syncgan", version, about = "Synchronized GANs for cross-domain generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a model from a JSON config, or resume from a checkpoint.
    Train(TrainArgs),
    /// Sample paired outputs from a checkpoint as PGM images.
    Generate(GenerateArgs),
    /// Carry an IDX image into the other modality through latent inversion.
    Transfer(TransferArgs),
    /// Measure the synchronous rate of a checkpoint.
    EvalSync(EvalArgs),
    /// Train one model per semi-supervised rate and compare sync rates.
    Sweep(SweepArgs),
    /// Build and serialize a paired dataset.
    MakeData(MakeDataArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// JSON file whose keys are TrainConfig field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory; overrides the config's `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TransferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// IDX file holding one image (or a stack of images) of the source modality.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub from: u8,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub to: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Labelled dataset for the classifiers; defaults to the checkpoint's.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of generated pairs.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated semi-supervised rates in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// MNIST digits paired with Fashion-MNIST garments by class.
    MnistPair,
    /// MNIST digits paired with their 90° rotation.
    Rot90,
    /// Synthetic glyph images paired with rendered tones.
    InstrumentSurrogate,
}

impl DataKind {
    fn name(self) -> &'static str {
        match self {
            DataKind::MnistPair => "mnist-pair",
            DataKind::Rot90 => "rot90",
            DataKind::InstrumentSurrogate => "instrument-surrogate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MakeDataArgs {
    #[arg(value_enum)]
    pub kind: DataKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults: 30000 for the MNIST kinds, 1250 for the surrogate.
    #[arg(long)]
    pub n_pairs: Option<usize>,
    /// Comma-separated class labels to keep (MNIST kinds).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u8>>,
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub semi_rate: f64,
    /// Directory with `train-images-idx3-ubyte[.gz]` and `train-labels-idx1-ubyte[.gz]`;
    /// defaults to `$SYNCGAN_DATA_DIR/mnist`.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Same layout as `--mnist-dir`; defaults to `$SYNCGAN_DATA_DIR/fashion-mnist`.
    #[arg(long)]
    pub fashion_dir: Option<PathBuf>,
    /// Pooling factor applied to the 64×128 audio raster.
    #[arg(long, default_value_t = 4)]
    pub audio_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written to every successful run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub command: Command,
    /// Training configuration after file loading and flag overrides.
    pub config: Option<TrainConfig>,
    pub seed: u64,
    /// Files written by the run, relative to its output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

struct Outcome {
    config: Option<TrainConfig>,
    seed: u64,
    artifacts: Vec<String>,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Transfer(_) => "transfer",
        Command::EvalSync(_) => "eval-sync",
        Command::Sweep(_) => "sweep",
        Command::MakeData(_) => "make-data",
        Command::Replay(_) => "replay",
    }
}

fn out_dir(c: &Command) -> &Path {
    match c {
        Command::Train(a) => &a.out,
        Command::Generate(a) => &a.out,
        Command::Transfer(a) => &a.out,
        Command::EvalSync(a) => &a.out,
        Command::Sweep(a) => &a.out,
        Command::MakeData(a) => &a.out,
        Command::Replay(a) => &a.out,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command, None) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command; `pinned` replaces the training config a replayed
/// manifest recorded.
pub fn execute(command: Command, pinned: Option<TrainConfig>) -> Result<()> {
    if let Command::Replay(a) = &command {
        let m = RunManifest::load(&a.manifest)?;
        let mut inner = m.command;
        if matches!(inner, Command::Replay(_)) {
            return Err(Error::Config("a replay manifest cannot replay itself".into()));
        }
        set_out(&mut inner, a.out.clone());
        return execute(inner, m.config);
    }
    let started = unix_ms();
    let out = out_dir(&command).to_path_buf();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let outcome = match &command {
        Command::Train(a) => cmd_train(a, pinned)?,
        Command::Generate(a) => cmd_generate(a)?,
        Command::Transfer(a) => cmd_transfer(a)?,
        Command::EvalSync(a) => cmd_eval_sync(a)?,
        Command::Sweep(a) => cmd_sweep(a, pinned)?,
        Command::MakeData(a) => cmd_make_data(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let manifest = RunManifest {
        subcommand: subcommand_name(&command).to_string(),
        command,
        config: outcome.config,
        seed: outcome.seed,
        artifacts: outcome.artifacts,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

fn set_out(c: &mut Command, out: PathBuf) {
    match c {
        Command::Train(a) => a.out = out,
        Command::Generate(a) => a.out = out,
        Command::Transfer(a) => a.out = out,
        Command::EvalSync(a) => a.out = out,
        Command::Sweep(a) => a.out = out,
        Command::MakeData(a) => a.out = out,
        Command::Replay(a) => a.out = out,
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn load_dataset(path: Option<&PathBuf>) -> Result<PairedDataset> {
    let path = path.ok_or_else(|| Error::Config("no dataset: pass --dataset or set `dataset` in the config".into()))?;
    Ok(PairedDataset::load(path)?.0)
}

/// Resolves the training configuration: a pinned one from a manifest, a
/// config file, a checkpoint's stored config, or a file consistent with it.
fn resolve_train_config(
    a: &TrainArgs,
    pinned: Option<TrainConfig>,
    stored: Option<&TrainConfig>,
) -> Result<TrainConfig> {
    let mut cfg = match (pinned, &a.config, stored) {
        (Some(p), _, _) => p,
        (None, Some(path), None) => TrainConfig::from_json_file(path)?,
        (None, Some(path), Some(stored)) => {
            let file = TrainConfig::from_json_file(path)?;
            let comparable = TrainConfig {
                iterations: stored.iterations,
                checkpoint_every: stored.checkpoint_every,
                dataset: stored.dataset.clone(),
                ..file.clone()
            };
            if &comparable != stored {
                return Err(Error::Config(
                    "a resumed run may only change iterations, checkpoint_every and dataset".into(),
                ));
            }
            file
        }
        (None, None, Some(stored)) => stored.clone(),
        (None, None, None) => return Err(Error::Config("train needs --config or --ckpt".into())),
    };
    if let Some(seed) = a.seed {
        if stored.is_some_and(|s| s.seed != seed) {
            return Err(Error::Config("--seed cannot change the seed of a resumed run".into()));
        }
        cfg.seed = seed;
    }
    if let Some(ds) = &a.dataset {
        cfg.dataset = Some(ds.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, pinned: Option<TrainConfig>) -> Result<Outcome> {
    let ckpt = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let stored = ckpt.as_ref().map(Checkpoint::config).transpose()?;
    let cfg = resolve_train_config(a, pinned, stored.as_ref())?;
    let mut ds = load_dataset(cfg.dataset.as_ref())?;
    apply_semi_rate(&mut ds, &cfg)?;
    let mut trainer = match &ckpt {
        Some(c) => {
            let mut t = c.restore()?;
            if t.model.data_dims() != ds.dims() {
                return Err(DataError::Invalid(format!(
                    "dataset dims {:?} do not match the checkpoint's {:?}",
                    ds.dims(),
                    t.model.data_dims()
                ))
                .into());
            }
            t.set_budget(cfg.iterations, cfg.checkpoint_every);
            if let Some(ds_path) = &cfg.dataset {
                t.set_dataset(ds_path.clone());
            }
            t
        }
        None => Trainer::for_dataset(cfg.clone(), &ds)?,
    };
    let outcome = train(&mut trainer, &ds, &a.out)?;
    println!(
        "trained {} iterations (now at {}); final checkpoint {}",
        outcome.iterations_run,
        trainer.iteration(),
        outcome.final_checkpoint.display()
    );
    let mut artifacts = vec![file_name(&outcome.metrics_csv)];
    artifacts.extend(outcome.checkpoints.iter().map(|p| file_name(p)));
    artifacts.push(file_name(&outcome.final_checkpoint));
    Ok(Outcome {
        seed: cfg.seed,
        config: Some(trainer.config().clone()),
        artifacts,
    })
}

fn to_gray(row: &[f64], shape: [usize; 2]) -> Result<Gray> {
    Gray::from_unit(row, shape[0], shape[1])
}

fn cmd_generate(a: &GenerateArgs) -> Result<Outcome> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let model = ckpt.model()?;
    let shapes = ckpt.data_shapes()?;
    let mut artifacts = Vec::new();
    if a.n > 0 {
        let mut rng = seeded_rng(a.seed, STREAM_EVAL);
        let z = Tensor::randn(vec![a.n, model.latent_dim()], &mut rng);
        let outs = [
            model.generate(&z, Modality::First)?,
            model.generate(&z, Modality::Second)?,
        ];
        let mut tiles = Vec::with_capacity(2 * a.n);
        for i in 0..a.n {
            for (m, x) in outs.iter().enumerate() {
                let d = x.cols();
                let g = to_gray(&x.data()[i * d..(i + 1) * d], shapes[m])?;
                let name = format!("pair_{i}_m{}.pgm", m + 1);
                g.save(&a.out.join(&name))?;
                artifacts.push(name);
                tiles.push(g);
            }
        }
        let cols = 2 * (a.n as f64).sqrt().ceil() as usize;
        grid(&tiles, cols)?.save(&a.out.join("grid.pgm"))?;
        artifacts.push("grid.pgm".into());
    }
    println!("wrote {} pairs to {}", a.n, a.out.display());
    Ok(Outcome {
        config: Some(ckpt.config()?),
        seed: a.seed,
        artifacts,
    })
}

/// Reads the rows of an IDX file as `[-1, 1]` vectors of length `dim`. Bytes
/// are rescaled; other element types are taken as already normalized.
fn read_rows(path: &Path, dim: usize) -> Result<Tensor> {
    let arr = read_idx(path)?;
    let values = match &arr.data {
        IdxData::U8(b) => b.iter().map(|&v| byte_to_unit(v as f64)).collect(),
        other => other.to_f64(),
    };
    if dim == 0 || values.is_empty() || values.len() % dim != 0 {
        return Err(Error::format(
            path,
            format!(
                "{} values (dims {:?}) do not form rows of {dim}",
                values.len(),
                arr.dims
            ),
        ));
    }
    Ok(Tensor::new(vec![values.len() / dim, dim], values)?)
}

fn cmd_transfer(a: &TransferArgs) -> Result<Outcome> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let model: SyncGanModel = ckpt.model()?;
    let shapes = ckpt.data_shapes()?;
    let from = Modality::try_from(a.from)?;
    let to = Modality::try_from(a.to)?;
    let defaults = InversionConfig::default();
    let cfg = InversionConfig {
        eta: a.eta.unwrap_or(defaults.eta),
        max_steps: a.max_steps.unwrap_or(defaults.max_steps),
        restarts: a.restarts.unwrap_or(defaults.restarts),
        ..defaults
    };
    let x = read_rows(&a.input, model.data_dims()[from.index()])?;
    let mut rng = seeded_rng(a.seed, STREAM_EVAL);
    let (y, inv) = transfer(&model, &x, from, to, &cfg, &mut rng)?;
    for (i, mse) in inv.mse.iter().enumerate() {
        if inv.all_restarts_aborted(i) {
            eprintln!("warning: every restart for image {i} hit a non-finite gradient; result is best effort");
        }
        println!("mse {mse:.6e}");
    }
    let [h, w] = shapes[to.index()];
    let bytes: Vec<u8> = y.data().iter().map(|&v| unit_to_byte(v)).collect();
    write_idx(
        &a.out.join("transfer.idx"),
        &IdxArray::new(vec![y.rows(), h, w], IdxData::U8(bytes))?,
    )?;
    let d = y.cols();
    let tiles = (0..y.rows())
        .map(|i| to_gray(&y.data()[i * d..(i + 1) * d], [h, w]))
        .collect::<Result<Vec<_>>>()?;
    grid(&tiles, tiles.len())?.save(&a.out.join("transfer.pgm"))?;
    Ok(Outcome {
        config: Some(ckpt.config()?),
        seed: a.seed,
        artifacts: vec!["transfer.idx".into(), "transfer.pgm".into()],
    })
}

fn concept_labels(ds: &PairedDataset) -> Result<&[usize]> {
    ds.concept
        .as_deref()
        .ok_or_else(|| DataError::Invalid("dataset has no concept labels".into()).into())
}

fn classifiers(ds: &PairedDataset, seed: u64) -> Result<(Classifier, Classifier)> {
    let labels = concept_labels(ds)?;
    let mut rng = seeded_rng(seed, STREAM_EVAL);
    let cfg = ClassifierConfig::default();
    let c1 = train_classifier(&ds.items1, labels, &cfg, &mut rng)?;
    let c2 = train_classifier(&ds.items2, labels, &cfg, &mut rng)?;
    Ok((c1, c2))
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    #[serde(flatten)]
    report: &'a SyncRateReport,
    classifier_heldout_accuracy: [f64; 2],
}

fn cmd_eval_sync(a: &EvalArgs) -> Result<Outcome> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let cfg = ckpt.config()?;
    let model = ckpt.model()?;
    let ds = load_dataset(a.dataset.as_ref().or(cfg.dataset.as_ref()))?;
    if ds.dims() != model.data_dims() {
        return Err(DataError::Invalid(format!(
            "dataset dims {:?} do not match the model's {:?}",
            ds.dims(),
            model.data_dims()
        ))
        .into());
    }
    let (c1, c2) = classifiers(&ds, a.seed)?;
    let mut rng = seeded_rng(a.seed, STREAM_EVAL + 1);
    let report = sync_rate(&model, &c1, &c2, a.n, &mut rng)?.with_config(&cfg);
    let acc = [c1.heldout_accuracy, c2.heldout_accuracy];
    write_json(
        &a.out.join("eval_sync.json"),
        &EvalReport {
            report: &report,
            classifier_heldout_accuracy: acc,
        },
    )?;
    let csv_path = a.out.join("eval_sync.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "n_pairs",
        "n_agree",
        "sync_rate",
        "clf1_heldout_accuracy",
        "clf2_heldout_accuracy",
    ])?;
    w.write_record([
        report.n_pairs.to_string(),
        report.n_agree.to_string(),
        report.sync_rate.to_string(),
        acc[0].to_string(),
        acc[1].to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "sync_rate {:.4} ({}/{}); classifier held-out accuracy {:.4} / {:.4}",
        report.sync_rate, report.n_agree, report.n_pairs, acc[0], acc[1]
    );
    Ok(Outcome {
        config: Some(cfg),
        seed: a.seed,
        artifacts: vec!["eval_sync.json".into(), "eval_sync.csv".into()],
    })
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    semi_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a SyncRateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn cmd_sweep(a: &SweepArgs, pinned: Option<TrainConfig>) -> Result<Outcome> {
    let mut cfg = match pinned {
        Some(p) => p,
        None => TrainConfig::from_json_file(&a.config)?,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(ds) = &a.dataset {
        cfg.dataset = Some(ds.clone());
    }
    cfg.validate()?;
    if let Some(bad) = a.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Config(format!("sweep rate {bad} outside (0, 1]")));
    }
    let ds = load_dataset(cfg.dataset.as_ref())?;
    let (c1, c2) = classifiers(&ds, cfg.seed)?;
    let cells = semi_supervised_sweep(&a.rates, &cfg, &ds, &c1, &c2, a.n);
    write_sweep_csv(&a.out.join("sweep.csv"), &cells)?;
    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|c| SweepRow {
            semi_rate: c.rate,
            report: c.outcome.as_ref().ok(),
            error: c.outcome.as_ref().err().map(String::as_str),
        })
        .collect();
    write_json(&a.out.join("sweep.json"), &rows)?;
    let mut failed = 0;
    for c in &cells {
        match &c.outcome {
            Ok(r) => println!("semi_rate {} sync_rate {:.4}", c.rate, r.sync_rate),
            Err(e) => {
                failed += 1;
                eprintln!("semi_rate {} failed: {e}", c.rate);
            }
        }
    }
    if failed > 0 {
        return Err(Error::Format {
            path: a.out.join("sweep.csv").display().to_string(),
            msg: format!("{failed} of {} sweep cells failed", cells.len()),
        });
    }
    Ok(Outcome {
        seed: cfg.seed,
        config: Some(cfg),
        artifacts: vec!["sweep.csv".into(), "sweep.json".into()],
    })
}

fn corpus_dir(flag: Option<&PathBuf>, sub: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(|root| PathBuf::from(root).join(sub))
        .ok_or_else(|| {
            Error::Config(format!(
                "no corpus directory: pass a --{sub}-dir flag or set {DATA_DIR_ENV}"
            ))
        })
}

fn find_file(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Loads the training split of an MNIST-layout corpus directory.
pub fn load_corpus_dir(dir: &Path) -> Result<RawImageCorpus> {
    Ok(load_idx(
        &find_file(dir, "train-images-idx3-ubyte"),
        &find_file(dir, "train-labels-idx1-ubyte"),
    )?)
}

fn cmd_make_data(a: &MakeDataArgs) -> Result<Outcome> {
    let mut rng = seeded_rng(a.seed, STREAM_DATA);
    let all: Vec<u8> = (0..10).collect();
    let classes = a.classes.clone().unwrap_or(all);
    let mut manifest = DatasetManifest {
        kind: a.kind.name().to_string(),
        n_pairs: 0,
        semi_rate: a.semi_rate,
        seed: a.seed,
        shapes: [[0, 0]; 2],
        image_size: None,
        class_map: None,
        frequencies_hz: None,
        audio_pool: None,
    };
    let ds = match a.kind {
        DataKind::MnistPair => {
            let map = ClassMap::mnist_fashion().restrict(&classes);
            let mnist = load_corpus_dir(&corpus_dir(a.mnist_dir.as_ref(), "mnist")?)?;
            let fashion = load_corpus_dir(&corpus_dir(a.fashion_dir.as_ref(), "fashion-mnist")?)?;
            let n = a.n_pairs.unwrap_or(30000);
            let ds = build_paired_dataset(&mnist, &fashion, &map, n, a.semi_rate, a.image_size, &mut rng)?;
            manifest.image_size = Some(a.image_size);
            manifest.class_map = Some(map);
            ds
        }
        DataKind::Rot90 => {
            let mnist = load_corpus_dir(&corpus_dir(a.mnist_dir.as_ref(), "mnist")?)?;
            let n = a.n_pairs.unwrap_or(30000);
            let ds = build_rotated_dataset(&mnist, &classes, n, a.semi_rate, a.image_size, &mut rng)?;
            manifest.image_size = Some(a.image_size);
            manifest.class_map = Some(ClassMap::identity(&classes));
            ds
        }
        DataKind::InstrumentSurrogate => {
            let n = a.n_pairs.unwrap_or(250 * KINDS);
            if n == 0 || !n.is_multiple_of(KINDS) {
                return Err(Error::Config(format!(
                    "--n-pairs must be a positive multiple of {KINDS}, got {n}"
                )));
            }
            let ds = build_instrument_dataset(n / KINDS, a.semi_rate, a.audio_pool, &mut rng)?;
            manifest.frequencies_hz = Some(FREQUENCIES.to_vec());
            manifest.audio_pool = Some(a.audio_pool);
            ds
        }
    };
    manifest.n_pairs = ds.len();
    manifest.shapes = ds.shapes;
    ds.save(&a.out, &manifest)?;
    println!("wrote {} {} pairs to {}", ds.len(), manifest.kind, a.out.display());
    let artifacts = [
        "items1.idx",
        "items2.idx",
        "pair_id.idx",
        "paired_mask.idx",
        "dataset.json",
    ]
    .into_iter()
    .chain(ds.concept.is_some().then_some("concept.idx"))
    .map(String::from)
    .collect();
    Ok(Outcome {
        config: None,
        seed: a.seed,
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_subcommand() {
        let cases: &[&[&str]] = &[
            &["syncgan", "train", "--config", "c.json", "--out", "o"],
            &["syncgan", "generate", "--ckpt", "k", "--n", "4", "--out", "o"],
            &[
                "syncgan", "transfer", "--ckpt", "k", "--input", "x.idx", "--from", "1", "--to", "2", "--out", "o",
            ],
            &["syncgan", "eval-sync", "--ckpt", "k", "--out", "o"],
            &["syncgan", "sweep", "--config", "c", "--rates", "0.4,1.0", "--out", "o"],
            &["syncgan", "make-data", "rot90", "--classes", "0,1", "--out", "o"],
            &["syncgan", "replay", "--manifest", "m", "--out", "o"],
        ];
        for args in cases {
            Cli::try_parse_from(*args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
        let Command::Sweep(s) = Cli::try_parse_from(cases[4]).unwrap().command else {
            panic!("expected sweep");
        };
        assert_eq!(s.rates, vec![0.4, 1.0]);
    }

    #[test]
    fn rejects_bad_modality() {
        let r = Cli::try_parse_from([
            "syncgan", "transfer", "--ckpt", "k", "--input", "x", "--from", "3", "--to", "1", "--out", "o",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn command_round_trips_through_json() {
        let cli = Cli::try_parse_from([
            "syncgan",
            "make-data",
            "instrument-surrogate",
            "--out",
            "o",
            "--seed",
            "3",
        ])
        .unwrap();
        let json = serde_json::to_string(&cli.command).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cli.command);
    }

    #[test]
    fn usage_errors_exit_with_config_status() {
        assert_eq!(run(["syncgan", "train"]), 1);
        assert_eq!(run(["syncgan", "--help"]), 0);
    }
}
