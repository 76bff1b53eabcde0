//! Command-line front end: argument parsing, dataset and checkpoint
//! plumbing, output files and exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_features, save_features, split, Dataset, FileFormat};
use crate::error::{Error, Result};
use crate::gradsuite::{run_grad_suite, GradSuiteOptions};
use crate::model::{build_variant, Model, ModelConfig, Variant};
use crate::nn::Checkpoint;
use crate::train::{
    gate_attention_report, predict, probe_codes, train, Confusion, MetricsReport, Trainer,
};

/// Success.
pub const EXIT_OK: u8 = 0;
/// A check ran and failed.
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Invalid configuration or arguments.
pub const EXIT_CONFIG: u8 = 2;
/// IO, parse or file-format failure.
pub const EXIT_IO: u8 = 3;
/// Training hit a non-finite value.
pub const EXIT_NUMERIC: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Format(_) => EXIT_IO,
        Error::NumericAbort { .. } | Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => EXIT_NUMERIC,
        Error::Config(_) | Error::Contract(_) | Error::Dimension { .. } | Error::Domain { .. } => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mlsgan", version, about = "Multi-level sequence GAN for group activity recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (for `gen-data`: the dataset file).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it to disk.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one variant; writes a checkpoint, metrics CSV and report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to write (and to read with --resume).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Continue from --checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train all six variants on one split and tabulate MCA and MPCA.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a softmax layer on a frozen generator's codes.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also probe the same architecture at its initial weights.
        #[arg(long)]
        baseline: bool,
    },
    /// Finite-difference check of every differentiable component.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.out_dir());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.paths.dataset {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("dataset {} not found", path.display()),
                )));
            }
            load_features(path)
        }
        None => generate_synthetic(&cfg.data),
    }
}

fn split_dataset(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = dataset(cfg)?;
    let (train, test) = split(&ds, cfg.split.train_fraction, cfg.split.seed)?;
    log::info!(
        "split train {:016x} ({}) test {:016x} ({})",
        train.fingerprint(),
        train.len(),
        test.fingerprint(),
        test.len()
    );
    Ok((train, test))
}

fn checkpoint_path(explicit: &Option<PathBuf>, cfg: &RunConfig, fallback: PathBuf) -> PathBuf {
    explicit
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or(fallback)
}

fn required_checkpoint(explicit: &Option<PathBuf>, cfg: &RunConfig) -> Result<Checkpoint> {
    let path = explicit
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint given (--checkpoint or paths.checkpoint)".into()))?;
    Checkpoint::load(&path)
}

fn check_shape(model: &Model, ds: &Dataset) -> Result<()> {
    let c = &model.config;
    if (c.agents, c.steps, c.features, c.classes) != (ds.agents, ds.steps, ds.features, ds.classes) {
        return Err(Error::Format(format!(
            "checkpoint expects N={} T={} d={} k={}, dataset has N={} T={} d={} k={}",
            c.agents, c.steps, c.features, c.classes, ds.agents, ds.steps, ds.features, ds.classes
        )));
    }
    Ok(())
}

fn gen_data(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let path = common
        .out
        .clone()
        .or_else(|| cfg.paths.dataset.clone())
        .ok_or_else(|| Error::Config("gen-data needs --out or paths.dataset".into()))?;
    let ds = generate_synthetic(&cfg.data)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_features(&path, &ds, cfg.paths.format.unwrap_or(FileFormat::Binary))?;
    println!("samples {}", ds.len());
    for (c, n) in ds.class_histogram().iter().enumerate() {
        println!("class {c} {n}");
    }
    Ok(EXIT_OK)
}

fn run_train(common: &Common, ckpt: &Option<PathBuf>, variant: Option<Variant>, resume: bool) -> Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.train.variant = v;
    }
    let out = out_dir(common, &cfg)?;
    let name = cfg.train.variant.name();
    let ckpt_path = checkpoint_path(ckpt, &cfg, out.join(format!("{name}.ckpt")));
    let saved = if resume { Some(Checkpoint::load(&ckpt_path)?) } else { None };
    let (train_set, test_set) = split_dataset(&cfg)?;

    let mut trainer = match &saved {
        Some(s) => Trainer::resume(cfg.train.clone(), s)?,
        None => Trainer::new(cfg.train.clone(), ModelConfig::for_dataset(&train_set, cfg.model))?,
    };
    check_shape(&trainer.model, &train_set)?;
    let history = trainer.fit(&train_set, Some(&test_set))?;
    let report = MetricsReport::new(trainer.evaluate(&test_set)?, history);

    trainer.checkpoint().save(&ckpt_path)?;
    write(&out.join(format!("{name}_metrics.csv")), &report.csv())?;
    let summary = report.summary(name);
    write(&out.join(format!("{name}_report.txt")), &summary)?;
    if trainer.model.generator.fusion.is_gated() {
        let gates = gate_attention_report(&trainer.model, &test_set)?;
        write(&out.join(format!("{name}_gates.txt")), &gates.to_text())?;
    }
    print!("{summary}");
    Ok(EXIT_OK)
}

fn run_eval(common: &Common, ckpt: &Option<PathBuf>) -> Result<u8> {
    let cfg = load_config(common)?;
    let out = out_dir(common, &cfg)?;
    let model = Model::from_checkpoint(&required_checkpoint(ckpt, &cfg)?)?;
    let (_, test) = split_dataset(&cfg)?;
    check_shape(&model, &test)?;
    let predicted = predict(&model, &test, cfg.train.z_samples, cfg.train.seed)?;
    let confusion = Confusion::from_predictions(&test.labels(), &predicted, test.classes)?;
    let summary = MetricsReport::new(confusion, Vec::new()).summary(model.variant.name());
    write(&out.join("eval_report.txt"), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn csv_field(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

fn run_ablate(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let out = out_dir(common, &cfg)?;
    let (train_set, test_set) = split_dataset(&cfg)?;
    println!(
        "split train {:016x} test {:016x}",
        train_set.fingerprint(),
        test_set.fingerprint()
    );
    let model_config = ModelConfig::for_dataset(&train_set, cfg.model);
    let mut table = String::from("variant,mca,mpca,status\n");
    for variant in Variant::ALL {
        let mut tc = cfg.train.clone();
        tc.variant = variant;
        match train(&tc, model_config, &train_set, &test_set) {
            Ok(outcome) => {
                let r = &outcome.report;
                let _ = writeln!(table, "{variant},{},{},ok", r.mca, r.mpca);
                write(&out.join(format!("ablation_{variant}_metrics.csv")), &r.csv())?;
                println!("{variant} mca {:.4} mpca {:.4}", r.mca, r.mpca);
            }
            Err(e) => {
                log::error!("{variant} failed: {e}");
                let _ = writeln!(table, "{variant},,,failed: {}", csv_field(&e.to_string()));
                println!("{variant} failed: {e}");
            }
        }
    }
    write(&out.join("ablation.csv"), &table)?;
    Ok(EXIT_OK)
}

fn run_probe(common: &Common, ckpt: &Option<PathBuf>, baseline: bool) -> Result<u8> {
    let cfg = load_config(common)?;
    let out = out_dir(common, &cfg)?;
    let model = Model::from_checkpoint(&required_checkpoint(ckpt, &cfg)?)?;
    let (train_set, test_set) = split_dataset(&cfg)?;
    check_shape(&model, &train_set)?;
    let trained = probe_codes(&model, &train_set, &test_set, &cfg.probe)?;
    let mut text = trained.report.summary(&format!("probe {}", model.variant));
    if baseline {
        let initial = build_variant(model.variant, model.config, cfg.train.seed)?;
        let base = probe_codes(&initial, &train_set, &test_set, &cfg.probe)?;
        text.push_str(&base.report.summary(&format!("probe {} initial", model.variant)));
    }
    write(&out.join("probe_report.txt"), &text)?;
    print!("{text}");
    Ok(EXIT_OK)
}

fn run_grad_check(seed: u64, inject_sign_flip: bool) -> Result<u8> {
    let report = run_grad_suite(&GradSuiteOptions {
        seed,
        inject_sign_flip,
        ..Default::default()
    })?;
    print!("{}", report.to_text());
    if report.passed() {
        return Ok(EXIT_OK);
    }
    for c in report.failed() {
        eprintln!("gradient check failed: {} max_rel_error {:.3e}", c.name, c.max_rel_error);
    }
    Ok(EXIT_CHECK_FAILED)
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenData { common } => gen_data(&common),
        Command::Train {
            common,
            checkpoint,
            variant,
            resume,
        } => run_train(&common, &checkpoint, variant, resume),
        Command::Eval { common, checkpoint } => run_eval(&common, &checkpoint),
        Command::Ablate { common } => run_ablate(&common),
        Command::Probe {
            common,
            checkpoint,
            baseline,
        } => run_probe(&common, &checkpoint, baseline),
        Command::GradCheck {
            seed,
            inject_sign_flip,
        } => run_grad_check(seed, inject_sign_flip),
    }
}

/// Entry point shared by the binary: parses `args`, runs, and maps errors
/// to exit codes after printing them.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
