mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rawdet_core::rng::RNG_ALGORITHM;

#[derive(Debug, Parser)]
#[command(name = "rawdet", about = "Synthetic RAW data, ISP, dataset and evaluation tools")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with flag values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert sRGB PNGs into noisy 16-bit Bayer PNGs with JSON sidecars.
    Synthesize(SynthesizeArgs),
    /// Develop Bayer PNGs into 3-channel images.
    Develop(DevelopArgs),
    /// Split an annotation index per condition into train.json and test.json.
    Split(SplitArgs),
    /// Rescale an annotation index to a fixed image size.
    Downsample(DownsampleArgs),
    /// Cut an annotation index into overlapping tiles.
    Slice(SliceArgs),
    /// Dataset statistics: report.json plus one CSV per figure.
    Stats(StatsArgs),
    /// COCO-style AP with condition breakdown.
    Eval(EvalArgs),
    /// Synthesize one dataset per (brightness, noise level) pair.
    Sweep(SweepArgs),
    /// Verify distillation gradients against finite differences.
    DistillCheck(DistillCheckArgs),
}

/// `W x H` image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl FromStr for Dims {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
        let d = Dims {
            width: parse(w)?,
            height: parse(h)?,
        };
        if d.width == 0 || d.height == 0 {
            return Err("sizes must be positive".into());
        }
        Ok(d)
    }
}

/// A fixed value `v` or a range `lo:hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanArg {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for SpanArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = match s.split_once(':') {
            Some((a, b)) => (num(a)?, num(b)?),
            None => {
                let v = num(s)?;
                (v, v)
            }
        };
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(format!("{s:?} is not a positive value or lo:hi range"));
        }
        Ok(SpanArg { lo, hi })
    }
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON list of camera profiles (default: built-in bank).
    #[arg(long)]
    pub profile_bank: Option<PathBuf>,
    /// Target mean 16-bit brightness, fixed or lo:hi (log-uniform).
    #[arg(long, default_value = "64:16384")]
    pub brightness: SpanArg,
    /// Noise level n (shot = n²·1e-5, read = n²·1e-6), fixed or lo:hi.
    #[arg(long, default_value = "1:10")]
    pub noise_level: SpanArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Png16,
    Tensor,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Order {
    DevelopFirst,
    DownsampleFirst,
}

#[derive(Debug, Args)]
pub struct DevelopArgs {
    /// Directory of Bayer PNGs with sidecars.
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2.2)]
    pub gamma: f64,
    /// Resize to WIDTHxHEIGHT.
    #[arg(long)]
    pub target: Option<Dims>,
    #[arg(long, value_enum, default_value = "develop-first")]
    pub order: Order,
    #[arg(long, value_enum, default_value = "png16")]
    pub format: OutputFormat,
    /// Run the full forward ISP (white balance, colour matrix, tone curve)
    /// from the sidecar instead of gamma only.
    #[arg(long)]
    pub full_isp: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "2000x1333")]
    pub target: Dims,
    /// Boxes smaller than this area after scaling are marked ignored.
    #[arg(long, default_value_t = 1024.0)]
    pub min_area: f64,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1280)]
    pub tile: u32,
    #[arg(long, default_value_t = 300)]
    pub overlap: u32,
    #[arg(long, default_value_t = 0.4)]
    pub keep_frac: f64,
    /// Drop tiles without annotations.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = true, default_missing_value = "true")]
    pub drop_empty: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// sRGB images named as in the index, for the brightness figure.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingArg {
    Downsampled,
    Sliced,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, value_enum, default_value = "downsampled")]
    pub setting: SettingArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "791,80")]
    pub brightness_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub noise_list: Vec<f64>,
    #[arg(long)]
    pub profile_bank: Option<PathBuf>,
    /// Profile name within the bank.
    #[arg(long, default_value = "camera-a")]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DistillCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    /// Random distribution pairs for the non-negativity check.
    #[arg(long, default_value_t = 100_000)]
    pub kl_pairs: usize,
}

fn command() -> clap::Command {
    let version: &'static str =
        Box::leak(format!("{} (rng: {RNG_ALGORITHM})", env!("CARGO_PKG_VERSION")).into_boxed_str());
    Cli::command().version(version)
}

/// Parses `args`, splicing in flags from `--config` when present.
fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let mut cmd = command();
    let (config_path, sub_pos) = config::scan(&args);
    let args = match (config_path, sub_pos) {
        (Some(path), Some(pos)) => {
            let name = args[pos].to_string_lossy().into_owned();
            match cmd.find_subcommand(&name) {
                Some(sub) => match config::flags_for(path.as_ref(), sub) {
                    Ok(extra) => {
                        let mut merged = args[..=pos].to_vec();
                        merged.extend(extra);
                        merged.extend_from_slice(&args[pos + 1..]);
                        merged
                    }
                    Err(e) => {
                        return Err(cmd.error(clap::error::ErrorKind::InvalidValue, format!("{e:#}")))
                    }
                },
                None => args,
            }
        }
        _ => args,
    };
    let matches = cmd.try_get_matches_from_mut(args)?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let threads = match (cli.threads, &cli.config) {
        (Some(n), _) => Some(n),
        (None, Some(path)) => match config::threads(path) {
            Ok(n) => n,
            Err(e) => {
                log::error!("{e:#}");
                return ExitCode::from(2);
            }
        },
        (None, None) => None,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            log::error!("--threads must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            log::error!("cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Error chain joined by `: `, skipping causes the previous message
/// already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn dims_and_spans() {
        assert_eq!("2000x1333".parse::<Dims>().unwrap(), Dims { width: 2000, height: 1333 });
        assert!("2000".parse::<Dims>().is_err());
        assert!("0x5".parse::<Dims>().is_err());
        assert_eq!("80".parse::<SpanArg>().unwrap(), SpanArg { lo: 80.0, hi: 80.0 });
        assert_eq!("64:16384".parse::<SpanArg>().unwrap(), SpanArg { lo: 64.0, hi: 16384.0 });
        assert!("9:3".parse::<SpanArg>().is_err());
        assert!("-1".parse::<SpanArg>().is_err());
    }

    #[test]
    fn drop_empty_accepts_bare_and_valued_forms() {
        let parse_slice = |extra: &[&str]| {
            let mut v = vec!["rawdet", "slice", "--index", "i.json", "--out", "o.json"];
            v.extend_from_slice(extra);
            match parse(v.into_iter().map(OsString::from).collect()).unwrap().command {
                Command::Slice(a) => a.drop_empty,
                _ => unreachable!(),
            }
        };
        assert!(parse_slice(&[]));
        assert!(parse_slice(&["--drop-empty"]));
        assert!(!parse_slice(&["--drop-empty=false"]));
        assert!(parse_slice(&["--drop-empty=false", "--drop-empty"]));
    }
}
