//! The `paon` command line: one subcommand per check or experiment.
//!
//! Every command reads `key=value` settings (defaults, then `--config`,
//! then repeatable `--set`), writes `manifest.txt` with the resolved
//! settings into its output directory and then its CSV artifacts. Feeding
//! a manifest back through `paon replay` reproduces the CSVs bit for bit.
//!
//! Exit status: 0 when every check passed, 1 when a check failed, 2 on
//! usage, configuration or runtime errors.

mod approx;
mod checks;
mod runs;
pub mod settings;

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::shifter::ShifterConfig;
use crate::train::{AugmentConfig, LossKind, OptimizerKind, Schedule, TrainConfig};
pub use settings::{key, manifest_command, Key, Settings};

#[derive(Parser, Debug)]
#[command(
    name = "paon",
    version,
    about = "Padé neuron layers: property checks, op counts and toy training runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Config file with one `key=value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default `paon-out/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit scalar [1/1] and [2/0] neurons to a rational teacher.
    Approx(RunArgs),
    /// Compare tape gradients with central differences for PaLa layers.
    Gradcheck(RunArgs),
    /// Analytic MAC/FLOP counts for one convolution geometry.
    Count(RunArgs),
    /// Short toy SR run logging near-zero denominators per layer.
    Singularity(RunArgs),
    /// Train a super-resolution network on synthetic textures.
    TrainSr(RunArgs),
    /// Train a residual classifier on synthetic shapes or CIFAR-10.
    TrainCls(RunArgs),
    /// PSNR/SSIM of a trained SR checkpoint or of two PPM images.
    Eval(RunArgs),
    /// Check that [1/0] and [2/0] layers equal conv and quadratic forms.
    ReduceCheck(RunArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the settings a command accepts, with defaults.
    Keys { command: String },
}

pub const COMMANDS: [&str; 8] = [
    "approx",
    "gradcheck",
    "count",
    "singularity",
    "train-sr",
    "train-cls",
    "eval",
    "reduce-check",
];

/// Settings schema of `command`.
pub fn schema(command: &str) -> Result<Vec<Key>> {
    Ok(match command {
        "approx" => approx::schema(),
        "gradcheck" => checks::gradcheck_schema(),
        "count" => checks::count_schema(),
        "reduce-check" => checks::reduce_schema(),
        "singularity" => runs::singularity_schema(),
        "train-sr" => runs::train_sr_schema(),
        "train-cls" => runs::train_cls_schema(),
        "eval" => runs::eval_schema(),
        _ => return Err(Error::Config(format!("unknown command `{command}`"))),
    })
}

/// Runs `settings` into `out`; `Ok(false)` means a check failed.
pub fn execute(settings: &Settings, out: &Path) -> Result<bool> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(out, "manifest.txt", &settings.manifest())?;
    match settings.command() {
        "approx" => approx::run(settings, out),
        "gradcheck" => checks::gradcheck(settings, out),
        "count" => checks::count(settings, out),
        "reduce-check" => checks::reduce_check(settings, out),
        "singularity" => runs::singularity(settings, out),
        "train-sr" => runs::train_sr(settings, out),
        "train-cls" => runs::train_cls(settings, out),
        "eval" => runs::eval(settings, out),
        c => Err(Error::Config(format!("unknown command `{c}`"))),
    }
}

fn resolve(command: &str, args: &RunArgs) -> Result<(Settings, PathBuf)> {
    let mut s = Settings::new(command, schema(command)?);
    if let Some(path) = &args.config {
        s.apply_file(path)?;
    }
    for item in &args.set {
        s.assign(item)?;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("paon-out").join(command));
    Ok((s, out))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<bool>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(true);
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let (command, args) = match cli.command {
        Command::Approx(a) => ("approx", a),
        Command::Gradcheck(a) => ("gradcheck", a),
        Command::Count(a) => ("count", a),
        Command::Singularity(a) => ("singularity", a),
        Command::TrainSr(a) => ("train-sr", a),
        Command::TrainCls(a) => ("train-cls", a),
        Command::Eval(a) => ("eval", a),
        Command::ReduceCheck(a) => ("reduce-check", a),
        Command::Replay { manifest, out } => {
            let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let command = manifest_command(&text)?;
            let mut s = Settings::new(&command, schema(&command)?);
            s.apply_text(&text, &manifest.display().to_string())?;
            return execute(&s, &out);
        }
        Command::Keys { command } => {
            print!("{}", Settings::describe(&schema(&command)?));
            return Ok(true);
        }
    };
    let (settings, out) = resolve(command, &args)?;
    execute(&settings, &out)
}

/// Entry point of the binary: runs and maps the outcome to an exit code.
pub fn main_exit_code() -> i32 {
    match run(std::env::args_os()) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("FAILED: at least one check did not pass");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parse_bool(s: &Settings, name: &str) -> Result<bool> {
    match s.raw(name) {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        v => Err(Error::Config(format!(
            "bad value `{v}` for `{name}`: expected true or false"
        ))),
    }
}

/// `off`, `kernel` (kernel-wise with `shift_b`) or `element` (element-wise
/// with `shift_ks`); channels are filled in by the layer.
fn parse_shifter(s: &Settings) -> Result<Option<ShifterConfig>> {
    match s.raw("shifter") {
        "off" | "none" => Ok(None),
        "kernel" => Ok(Some(ShifterConfig::kernel_wise(1, s.get("shift_b")?))),
        "element" => Ok(Some(ShifterConfig::element_wise(1, s.get("shift_ks")?))),
        v => Err(Error::Config(format!(
            "bad shifter `{v}`: expected off, kernel or element"
        ))),
    }
}

fn parse_form(s: &Settings) -> Result<bool> {
    match s.raw("form") {
        "smoothed" => Ok(true),
        "vanilla" => Ok(false),
        v => Err(Error::Config(format!(
            "bad form `{v}`: expected smoothed or vanilla"
        ))),
    }
}

/// Keys shared by the training commands, with per-command defaults.
fn train_keys(
    iterations: &'static str,
    batch: &'static str,
    lr: &'static str,
    lr_min: &'static str,
    eval_every: &'static str,
) -> Vec<Key> {
    vec![
        key("train_seed", "3", "seed of batch sampling and augmentation"),
        key("iterations", iterations, "optimizer steps"),
        key("batch", batch, "samples per step"),
        key("lr", lr, "initial learning rate of the cosine schedule"),
        key("lr_min", lr_min, "final learning rate"),
        key("weight_decay", "0", "AdamW decoupled weight decay"),
        key("clip", "1", "global gradient-norm limit, 0 disables"),
        key(
            "augment",
            "true",
            "flips, 90 degree rotation and channel shuffle",
        ),
        key(
            "noise_snr_db",
            "40",
            "additive noise SNR in dB on inputs, 0 disables",
        ),
        key(
            "eval_every",
            eval_every,
            "evaluate every N steps (and at the end)",
        ),
        key(
            "threshold",
            "0.01",
            "denominator magnitude counted as a singularity event",
        ),
    ]
}

fn train_config(s: &Settings, loss: LossKind) -> Result<TrainConfig> {
    let clip: f64 = s.get("clip")?;
    let snr: f64 = s.get("noise_snr_db")?;
    let augment = if parse_bool(s, "augment")? {
        AugmentConfig::default()
    } else {
        AugmentConfig::none()
    };
    let cfg = TrainConfig {
        iterations: s.get("iterations")?,
        batch_size: s.get("batch")?,
        loss,
        optimizer: OptimizerKind::AdamW {
            weight_decay: s.get("weight_decay")?,
        },
        schedule: Schedule::Cosine {
            lr0: s.get("lr")?,
            lr_min: s.get("lr_min")?,
        },
        clip_norm: (clip > 0.0).then_some(clip),
        augment: AugmentConfig {
            snr_db: (snr > 0.0).then_some(snr),
            ..augment
        },
        seed: s.get("train_seed")?,
        eval_every: s.get("eval_every")?,
        singularity_threshold: s.get("threshold")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `x` as a fixed-width scientific literal for CSV output.
fn sci(x: f64) -> String {
    format!("{x:.9e}")
}
