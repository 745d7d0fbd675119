use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enhance_cli::{cmd_enhance, cmd_metrics, cmd_selftest, CliError, EngineConfig, EnhanceOptions, MetricsOptions, Profile};

#[derive(Parser)]
#[command(name = "enhance", version, about = "Training-free guided diffusion image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one image.
    Enhance {
        #[arg(long)]
        config: Option<PathBuf>,
        /// PNG or RTF1 input.
        input: PathBuf,
        /// Output path; `.rtf` writes RTF1, anything else PNG.
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the per-step trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score an enhanced image against its original.
    Metrics {
        original: PathBuf,
        enhanced: PathBuf,
        /// Supplies `metrics.loe_cap` and `metrics.snr_scale`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        /// Traced signal mask (white = signal) for the SNR columns.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9")]
        radii: Vec<usize>,
        #[arg(long)]
        pred_mask: Option<PathBuf>,
        #[arg(long)]
        gt_mask: Option<PathBuf>,
        /// Use every pixel pair instead of the strided subset.
        #[arg(long)]
        exact_loe: bool,
        /// Append the row (header only for a new file) instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle suites.
    Selftest {
        #[arg(long, default_value = "fast")]
        profile: Profile,
    },
    /// Print the default configuration.
    Defaults,
}

fn init_logging() {
    let level = std::env::var("ENHANCE_LOG_LEVEL").unwrap_or_else(|_| "error".into());
    let filter = match level.as_str() {
        "error" | "info" | "debug" => level,
        other => {
            eprintln!("ENHANCE_LOG_LEVEL={other:?} not recognised; using error");
            "error".into()
        }
    };
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();
}

fn append_csv(path: &PathBuf, csv: &str) -> Result<(), CliError> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let body = if fresh { csv } else { csv.split_once('\n').map_or(csv, |(_, row)| row) };
    file.write_all(body.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Enhance {
            config,
            input,
            output,
            seed,
            workers,
            trace,
        } => {
            let summary = cmd_enhance(&EnhanceOptions {
                config,
                input,
                output,
                seed,
                workers,
                trace,
            })?;
            println!("{summary}");
        }
        Command::Metrics {
            original,
            enhanced,
            config,
            id,
            signal,
            radii,
            pred_mask,
            gt_mask,
            exact_loe,
            out,
        } => {
            let cfg = match config {
                Some(p) => EngineConfig::load(&p)?,
                None => EngineConfig::default(),
            };
            let opts = MetricsOptions {
                id,
                signal,
                radii,
                pred_mask,
                gt_mask,
                exact_loe,
                loe_cap: cfg.loe_cap,
                snr_scale: cfg.snr_scale,
                ..MetricsOptions::new(original, enhanced)
            };
            let csv = cmd_metrics(&opts)?;
            match out {
                Some(path) => append_csv(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Selftest { profile } => {
            let report = cmd_selftest(profile);
            println!("{report}");
            return Ok(report.exit_code());
        }
        Command::Defaults => print!("{}", EngineConfig::default().serialize()),
    }
    Ok(0)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
