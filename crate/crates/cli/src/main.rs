mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use declip_core::data::corpus::{CorpusKind, CorpusSpec};
use declip_core::data::{AudioSpec, SyntheticSpec};
use declip_core::eval::{self, evaluate, shift_experiment, ShiftSetup, SweepCell, SyntheticRun};
use declip_core::train::{train, Checkpoint, TrainOptions};
use declip_core::{ClipConfig, Dataset};

use config::{ArchArgs, BlendArgs, TrainFile, TrainOverrides};

#[derive(Parser)]
#[command(name = "declip", version, about = "Self-supervised declipping: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test dataset pair, or a procedural audio corpus.
    #[command(subcommand)]
    GenData(GenData),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a test set (writes an SDR report CSV).
    Eval(EvalArgs),
    /// Train and evaluate one synthetic run per grid cell.
    #[command(subcommand)]
    Sweep(Sweep),
    /// Supervised on corpus A versus self-supervised on A and B, scored on B.
    Shift(ShiftArgs),
    /// Declip a WAV file with a trained checkpoint.
    Declip(DeclipArgs),
}

#[derive(Subcommand)]
enum GenData {
    /// Signals on a random subspace, rescaled to an exact clip proportion.
    Synthetic {
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 0.3)]
        v: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        num_signals: usize,
        #[arg(long, default_value_t = 200)]
        num_test: usize,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: DataOut,
    },
    /// Windowed, clipped WAV recordings split per file.
    Audio {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
        #[arg(long, default_value_t = 1.0)]
        window_seconds: f64,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        /// Skip per-file peak normalization.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: DataOut,
    },
    /// Procedural music or speech recordings written as WAV files.
    Corpus {
        #[arg(long)]
        kind: CorpusKind,
        #[arg(long, default_value_t = 20)]
        files: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 8000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct DataOut {
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    /// Also export the test set as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// TOML file with `[arch]` and `[train]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Final checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log (appended).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Test set whose blended mean SDR is logged each epoch.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Train on measurements only even if the dataset carries ground truth.
    #[arg(long)]
    drop_ground_truth: bool,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    blend: BlendArgs,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    blend: BlendArgs,
}

#[derive(clap::Args)]
struct SweepCommon {
    /// TOML describing the base synthetic run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sweep {
    /// Grid over subspace dimension and clip proportion.
    Subspace {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        d: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
        v: Vec<f64>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// Upper bound of the gain distribution.
    Gmax {
        #[arg(long, value_delimiter = ',', default_value = "1.0,1.25,1.5,2.0,3.0,5.0")]
        g_max: Vec<f64>,
        #[command(flatten)]
        common: SweepCommon,
    },
}

#[derive(clap::Args)]
struct ShiftArgs {
    /// TOML with `arch`, `supervised`, `self_supervised` and `blend`.
    #[arg(long)]
    config: PathBuf,
    /// Corpus A training set (with ground truth).
    #[arg(long)]
    train_a: PathBuf,
    /// Corpus B training set (ground truth ignored).
    #[arg(long)]
    train_b: PathBuf,
    /// Corpus B test set (with ground truth).
    #[arg(long)]
    test_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for the two trained checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DeclipArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// Window length in samples (defaults to the network's input length, or
    /// one second).
    #[arg(long)]
    window: Option<usize>,
    #[command(flatten)]
    blend: BlendArgs,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn save_pair(train: &Dataset, test: &Dataset, out: &DataOut) -> Result<()> {
    train.save(&out.train_out)?;
    test.save(&out.test_out)?;
    if let Some(csv) = &out.csv {
        let mut w = create(csv)?;
        test.export_csv(&mut w)?;
        w.flush()?;
    }
    eprintln!("wrote {} train and {} test items", train.len(), test.len());
    Ok(())
}

fn gen_data(cmd: GenData) -> Result<()> {
    match cmd {
        GenData::Synthetic { d, v, n, num_signals, num_test, mu, seed, out } => {
            let spec = SyntheticSpec {
                ambient_dim: n,
                subspace_dim: d,
                num_signals,
                num_test,
                clip_proportion: v,
                mu,
                seed,
            };
            let (train, test) = spec.generate()?;
            save_pair(&train, &test, &out)
        }
        GenData::Audio { inputs, sample_rate, window_seconds, mu, no_normalize, test_fraction, seed, out } => {
            let spec = AudioSpec {
                paths: inputs,
                sample_rate,
                window_seconds,
                mu,
                normalize: !no_normalize,
                test_fraction,
                seed,
            };
            let (train, test) = spec.build()?;
            save_pair(&train, &test, &out)
        }
        GenData::Corpus { kind, files, seconds, sample_rate, seed, out_dir } => {
            let spec = CorpusSpec {
                kind,
                num_files: files,
                seconds_per_file: seconds,
                sample_rate,
                seed,
            };
            let paths = spec.write(&out_dir)?;
            eprintln!("wrote {} files to {}", paths.len(), out_dir.display());
            Ok(())
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut data = load_dataset(&args.data)?;
    if args.drop_ground_truth {
        data = data.measurements_only();
    }
    let len = data.signal_len().context("dataset items must share one length")?;
    let (base_arch, mut cfg) = match &args.config {
        Some(path) => {
            let file: TrainFile = config::read_toml(path)?;
            (Some(file.arch), file.train)
        }
        None => {
            let Some(epochs) = args.overrides.epochs else {
                bail!("either --config or --epochs is required");
            };
            let kind = args.overrides.loss.unwrap_or(declip_core::LossKind::McEi);
            (None, declip_core::TrainConfig::new(declip_core::LossConfig::new(kind), epochs))
        }
    };
    args.overrides.apply(&mut cfg)?;
    let arch = args.arch.resolve(base_arch, len, cfg.use_mask_channel)?;
    let validation = args.validation.as_deref().map(load_dataset).transpose()?;
    let blend = args.blend.config()?;
    let resume = args
        .resume
        .as_deref()
        .map(|p| Checkpoint::load_for(p, &arch).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let progress = |r: &declip_core::train::EpochRecord| {
        let val = r.val_sdr_db.map(|v| format!(" val_sdr {v:.2} dB")).unwrap_or_default();
        eprintln!("epoch {:>4}  loss {:.6}{val}  ({:.1}s)", r.epoch, r.loss, r.seconds);
    };
    let outcome = train(
        &cfg,
        &data,
        &arch,
        TrainOptions {
            checkpoint_dir: args.checkpoint_dir,
            log_path: args.log,
            validation: validation.as_ref().map(|v| (v, blend)),
            resume,
            on_epoch: Some(&progress),
        },
    )?;
    outcome.checkpoint.save(&args.out)?;
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = load_dataset(&args.data)?;
    let report = evaluate(&ck, &data, &args.blend.config()?)?;
    let mut w = create(&args.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    eprintln!(
        "model {:.2} ± {:.2} dB, identity {:.2} ± {:.2} dB over {} items",
        report.model.mean,
        report.model.std,
        report.identity.mean,
        report.identity.std,
        report.model.per_item.len()
    );
    Ok(())
}

fn sweep_base(common: &SweepCommon) -> Result<SyntheticRun> {
    let mut base = match &common.config {
        Some(path) => config::read_toml(path)?,
        None => config::default_synthetic_run()?,
    };
    if let Some(e) = common.epochs {
        base.train.epochs = e;
    }
    if let Some(s) = common.seed {
        base.train.seed = s;
        base.data.seed = s;
    }
    Ok(base)
}

fn run_sweep(cmd: Sweep) -> Result<()> {
    let report = |c: &SweepCell| match c.model_mean() {
        Some(m) => eprintln!("d={} v={} g=[{}, {}]: {m:.2} dB", c.d, c.v, c.g_min, c.g_max),
        None => eprintln!("d={} v={} g=[{}, {}]: failed", c.d, c.v, c.g_min, c.g_max),
    };
    let (result, out) = match cmd {
        Sweep::Subspace { d, v, common } => {
            let base = sweep_base(&common)?;
            (eval::sweep_subspace(&base, &d, &v, common.checkpoint_dir.as_deref(), &report)?, common.out)
        }
        Sweep::Gmax { g_max, common } => {
            let base = sweep_base(&common)?;
            (eval::sweep_gmax(&base, &g_max, common.checkpoint_dir.as_deref(), &report)?, common.out)
        }
    };
    let mut w = create(&out)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_shift(args: ShiftArgs) -> Result<()> {
    let setup: ShiftSetup = config::read_toml(&args.config)?;
    config::check_shift_setup(&setup)?;
    let a = load_dataset(&args.train_a)?;
    let b = load_dataset(&args.train_b)?;
    let b_test = load_dataset(&args.test_b)?;
    let report = shift_experiment(&a, &b, &b_test, &setup)?;
    let mut w = create(&args.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        report.supervised_checkpoint.save(dir.join("supervised.ckpt"))?;
        report.self_supervised_checkpoint.save(dir.join("self_supervised.ckpt"))?;
    }
    eprintln!(
        "identity {:.2} dB, supervised {:.2} dB, self-supervised {:.2} dB",
        report.identity.mean, report.supervised.mean, report.self_supervised.mean
    );
    Ok(())
}

fn run_declip(args: DeclipArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let cfg = ClipConfig::new(args.mu)?;
    let n = eval::declip_file(&args.input, &args.output, &ck, &cfg, &args.blend.config()?, args.window)?;
    eprintln!("wrote {n} samples to {}", args.output.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(cmd) => gen_data(cmd),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(cmd) => run_sweep(cmd),
        Command::Shift(args) => run_shift(args),
        Command::Declip(args) => run_declip(args),
    }
}
