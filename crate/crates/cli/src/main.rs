mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spc", version, about = "Single-pixel classification of moving digits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network on MNIST and save it.
    Train(TrainArgs),
    /// Evaluate a saved model on the MNIST test split.
    Test(TestArgs),
    /// Turn a model's first-layer kernels into binary mirror patterns.
    ExportPatterns(ExportArgs),
    /// Simulate the rotating-disk bench and record the photodiode stream.
    Simulate(SimulateArgs),
    /// Classify a recorded stream frame by frame.
    Classify(ClassifyArgs),
    /// Time per-frame classification against the frame budget.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding the uncompressed MNIST IDX files.
    #[arg(long, value_name = "DIR", default_value = "data/mnist")]
    mnist_dir: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "model.spcm")]
    out: PathBuf,
    /// Per-epoch CSV: epoch, train_loss, test_accuracy.
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 1e-3, value_parser = positive, allow_negative_numbers = true)]
    lr: f64,
    /// Chance that a training sample is augmented in a given epoch.
    #[arg(long, default_value_t = 0.5, value_parser = probability, allow_negative_numbers = true)]
    augment_prob: f64,
    /// Largest shift in pixels along each axis.
    #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(0..28))]
    max_shift: u64,
    /// Largest rotation in degrees.
    #[arg(long, default_value_t = 15.0, value_parser = non_negative, allow_negative_numbers = true)]
    max_rotation: f64,
    /// Train on the first N training images only.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    train_limit: Option<u64>,
    /// Evaluate on the first N test images only.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    test_limit: Option<u64>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "data/mnist")]
    mnist_dir: PathBuf,
    /// Also score features measured through this pattern pack.
    #[arg(long, value_name = "PATH")]
    pack: Option<PathBuf>,
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    limit: Option<u64>,
    /// Print the class probabilities for one test image.
    #[arg(long, value_name = "INDEX")]
    index: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "patterns.spcp")]
    out: PathBuf,
    /// Mirrors per digit pixel along each axis.
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..=64))]
    upsample: u64,
    /// Write PGM previews of each gray kernel and its dithered pattern here.
    #[arg(long, value_name = "DIR")]
    preview_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_name = "PATH")]
    pack: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "data/mnist")]
    mnist_dir: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "stream.spcs")]
    out: PathBuf,
    /// Ground-truth sidecar CSV [default: OUT with extension .truth.csv].
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
    /// Also record an open-window run for gain calibration.
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
    /// Disk angular velocity in rad/s.
    #[arg(long, value_name = "RAD_PER_S", value_parser = finite, allow_negative_numbers = true, conflicts_with = "motor_voltage")]
    omega: Option<f64>,
    /// Motor drive voltage; one of 0, 1.5, 2, 2.5, 3, 3.5, 4.
    #[arg(long, value_name = "VOLTS", value_parser = motor_voltage, allow_negative_numbers = true)]
    motor_voltage: Option<f64>,
    /// Detector noise σ at 17 850 Hz, volts.
    #[arg(long, value_name = "VOLTS", default_value_t = 0.002, value_parser = non_negative, allow_negative_numbers = true)]
    sigma0: f64,
    /// Detector gain, volts per unit transmitted intensity.
    #[arg(long, value_name = "VOLTS", default_value_t = 5.0, value_parser = positive, allow_negative_numbers = true)]
    alpha: f64,
    /// Detector dark level, volts.
    #[arg(long, value_name = "VOLTS", default_value_t = 0.1, value_parser = finite, allow_negative_numbers = true)]
    dark: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for drawing the eight test digits.
    #[arg(long, default_value_t = 0)]
    digit_seed: u64,
    /// Explicit test-set indices for the eight digits, comma separated.
    #[arg(long, value_name = "I,..", value_delimiter = ',', num_args = 8)]
    digits: Option<Vec<usize>>,
    /// Passes through all patterns.
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    loops: u64,
    #[arg(long, value_name = "HZ", default_value_t = 17_850.0, value_parser = positive, allow_negative_numbers = true)]
    dmd_rate: f64,
    #[arg(long, value_name = "HZ", default_value_t = 500_000.0, value_parser = positive, allow_negative_numbers = true)]
    adc_rate: f64,
    /// Angle of digit 0 from the window at t = 0 [default: 0 when static, -22.5 when moving].
    #[arg(long, value_name = "DEG", value_parser = finite, allow_negative_numbers = true)]
    start_angle: Option<f64>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, value_name = "PATH")]
    stream: PathBuf,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pack: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "events.csv")]
    events: PathBuf,
    /// Ground-truth CSV to score against.
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
    /// Write the summary as CSV here as well.
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
    /// Known detector gain, volts per unit intensity [default: the stream header's].
    #[arg(long, value_name = "VOLTS", value_parser = positive, allow_negative_numbers = true, conflicts_with = "reference")]
    alpha: Option<f64>,
    /// Open-window stream to estimate the gain from.
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
    /// Known dark level in volts; skips dark-interval detection.
    #[arg(long, value_name = "VOLTS", value_parser = finite, allow_negative_numbers = true)]
    dark: Option<f64>,
    /// Presence threshold above dark, volts [default: 5σ of the dark level].
    #[arg(long, value_name = "VOLTS", value_parser = positive, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Fraction of a digit's ink that must be in the window for a frame to be scored.
    #[arg(long, default_value_t = 1.0, value_parser = probability, allow_negative_numbers = true)]
    min_visible_ink: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pack: PathBuf,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "HZ", default_value_t = 17_850.0, value_parser = positive, allow_negative_numbers = true)]
    dmd_rate: f64,
    #[arg(long, value_name = "HZ", default_value_t = 500_000.0, value_parser = positive, allow_negative_numbers = true)]
    adc_rate: f64,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| e.to_string())
}

fn finite(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err("must be non-negative".into())
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be between 0 and 1".into())
    }
}

fn motor_voltage(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    match spc_core::optics::motor_voltage_to_omega(v) {
        Some(_) => Ok(v),
        None => Err("not a tabulated motor voltage (0, 1.5, 2, 2.5, 3, 3.5, 4)".into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Test(a) => commands::test(a),
        Command::ExportPatterns(a) => commands::export_patterns(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Classify(a) => commands::classify(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins an error chain, skipping causes a message already spells out.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out.replace('\n', " ")
}
