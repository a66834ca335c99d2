//! Command-line front end. Exit codes: 0 success, 1 usage, 2 I/O or
//! malformed input, 3 numerical failure (divergence or gradcheck mismatch).

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::chanvese::{evolve, EvolveOptions};
use crate::error::Error;
use crate::fields::{BinaryMask, FeatureField};
use crate::io::{self, Mode, RunConfig};
use crate::metrics::{boundary_f1, mask_iou};
use crate::synth::{self, SynthSpec};
use crate::tsdf::mask_to_tsdf;
use crate::unrolled::{gradcheck, GradcheckConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const THREADS_ENV: &str = "LEVELSET_THREADS";

/// Gradient checks at or above this relative error fail.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "levelset", version, about = "Unrolled Chan-Vese level-set segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment an image or feature field from an initial mask or box.
    Segment(SegmentArgs),
    /// Like `segment`, but the eps and dt schedules must be given explicitly.
    Evolve(SegmentArgs),
    /// Compare a predicted mask against ground truth.
    Eval(EvalArgs),
    /// Check reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic instance.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Key-value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// PNG/PGM image, or an .lsf feature field.
    #[arg(long)]
    input: Option<String>,
    /// Initial mask PNG.
    #[arg(long)]
    init_mask: Option<String>,
    /// Initial box `row0,col0,row1,col1` (inclusive).
    #[arg(long)]
    init_box: Option<String>,
    /// `classic` or `feature`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    /// One value, or one per step.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    /// One value, or one per step.
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    /// Truncation distance in pixels for the initial TSDF.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Treat region means as constants (ablation; affects gradients only).
    #[arg(long)]
    detach_constants: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = io::DEFAULT_STEPS)]
    steps: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// Backpropagate a zero cotangent.
    #[arg(long)]
    zero_cotangent: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Key-value instance description.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Image { .. } | Error::Format(_) => EXIT_IO,
            Error::Divergence { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Dimension(_) | Error::Parameter(_) | Error::Contract(_) | Error::Generation(_) => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Segment(a) => cmd_segment(&a, false),
        Command::Evolve(a) => cmd_segment(&a, true),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Worker count from `LEVELSET_THREADS`; unset means all cores.
fn threads_from_env() -> std::result::Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{THREADS_ENV} must be a nonnegative integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_config(a: &SegmentArgs) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| Failure::from(Error::Io { path: path.clone(), source }))?;
            RunConfig::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let flags = [
        ("input", &a.input),
        ("init_mask", &a.init_mask),
        ("init_box", &a.init_box),
        ("mode", &a.mode),
        ("steps", &a.steps),
        ("lambda1", &a.lambda1),
        ("lambda2", &a.lambda2),
        ("mu", &a.mu),
        ("eps", &a.eps),
        ("dt", &a.dt),
        ("tau", &a.tau),
        ("seed", &a.seed),
        ("out", &a.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| Failure::usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    Ok(cfg)
}

fn load_features(path: &Path, mode: Mode) -> crate::Result<FeatureField> {
    let is_field_file = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("lsf"));
    let f = if is_field_file {
        io::read_field_file(path)?
    } else {
        FeatureField::from_scalar(&io::read_grayscale(path)?)
    };
    Ok(match mode {
        Mode::Classic if f.channels() > 1 => FeatureField::from_scalar(&f.mean_projection()),
        _ => f,
    })
}

fn box_mask(h: usize, w: usize, (r0, c0, r1, c1): (usize, usize, usize, usize)) -> crate::Result<BinaryMask> {
    if r1 >= h || c1 >= w {
        return Err(Error::Dimension(format!("box {r0},{c0},{r1},{c1} exceeds the {h}x{w} grid")));
    }
    BinaryMask::from_fn(h, w, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c))
}

fn cmd_segment(a: &SegmentArgs, explicit_schedules: bool) -> CliResult {
    let cfg = load_config(a)?;
    if explicit_schedules && (cfg.eps.is_none() || cfg.dt.is_none()) {
        return Err(Failure::usage("evolve needs explicit --eps and --dt schedules"));
    }
    let input = cfg.input.as_deref().ok_or_else(|| Failure::usage("no input given (--input)"))?;
    let hypers = cfg.hypers().map_err(|e| Failure::usage(e.to_string()))?;
    let features = load_features(input, cfg.mode)?;
    let (h, w) = features.shape();

    let init = match (&cfg.init_mask, cfg.init_box) {
        (Some(path), _) => io::read_mask(path)?,
        (None, Some(b)) => box_mask(h, w, b)?,
        (None, None) => return Err(Failure::usage("no initialization given (--init-mask or --init-box)")),
    };
    if init.shape() != (h, w) {
        return Err(Failure::usage(format!("init mask is {:?} but input is {:?}", init.shape(), (h, w))));
    }
    let phi0 = mask_to_tsdf(&init, cfg.tau)?;

    let opts = EvolveOptions {
        threads: threads_from_env()?,
        detach_constants: a.detach_constants,
        ..EvolveOptions::default()
    };
    let result = evolve(&features, &phi0, &hypers, &opts).map_err(|e| match e {
        Error::Divergence { step } => Failure { code: EXIT_NUMERIC, message: format!("evolution diverged at step {step}") },
        other => other.into(),
    })?;

    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|source| Failure::from(Error::Io { path: out.clone(), source }))?;
    let mask = result.mask();
    io::write_mask_png(&out.join("mask.png"), &mask)?;
    io::write_scalar_field_file(&out.join("phi.lsf"), &result.phi_final)?;
    let csv_path = out.join("energies.csv");
    fs::write(&csv_path, io::energies_csv(&result.energies))
        .map_err(|source| Failure::from(Error::Io { path: csv_path, source }))?;

    println!("steps={}", hypers.steps());
    println!("energy_initial={}", result.energies[0]);
    println!("energy_final={}", result.energies[result.energies.len() - 1]);
    println!("mask_pixels={}", mask.count());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let pred = io::read_mask(&a.pred)?;
    let gt = io::read_mask(&a.gt)?;
    if pred.shape() != gt.shape() {
        return Err(Failure::usage(format!("mask shapes differ: {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    println!("iou={}", mask_iou(&pred, &gt)?);
    println!("f1_1px={}", boundary_f1(&pred, &gt, 1.0)?);
    println!("f1_2px={}", boundary_f1(&pred, &gt, 2.0)?);
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult {
    if a.size == 0 || a.channels == 0 {
        return Err(Failure::usage("size and channels must be positive"));
    }
    let cfg = GradcheckConfig {
        seed: a.seed,
        instances: a.instances,
        size: a.size,
        channels: a.channels,
        steps: a.steps,
        fd_step: a.fd_step,
        zero_cotangent: a.zero_cotangent,
    };
    let report = gradcheck(&cfg)?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    println!("instances={}", a.instances);
    println!("components_checked={}", report.components_checked);
    println!("max_rel_error={:e}", report.max_rel_error);
    if let Some((idx, comp, analytic, numeric)) = report.worst {
        println!("worst=instance {idx} {comp:?} analytic={analytic:e} numeric={numeric:e}");
    }
    println!("status={}", if pass { "pass" } else { "fail" });
    let _ = std::io::stdout().flush();
    if pass {
        Ok(())
    } else {
        Err(Failure { code: EXIT_NUMERIC, message: format!("max relative error {:e} >= {GRADCHECK_TOLERANCE:e}", report.max_rel_error) })
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let mut spec = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| Failure::from(Error::Io { path: path.clone(), source }))?;
            io::parse_synth_spec(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::intensity(0, 128, synth::ShapeFamily::Disk, 0.1),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let inst = synth::generate(&spec)?;
    let out = &a.out;
    fs::create_dir_all(out).map_err(|source| Failure::from(Error::Io { path: out.clone(), source }))?;
    io::write_field_file(&out.join("features.lsf"), &inst.features)?;
    io::write_mask_png(&out.join("gt_mask.png"), &inst.mask)?;
    io::write_scalar_field_file(&out.join("gt_tsdf.lsf"), inst.tsdf.field())?;
    io::write_gray_png(&out.join("image.png"), &inst.features.mean_projection())?;
    let spec_path = out.join("spec.txt");
    fs::write(&spec_path, io::synth_spec_to_text(&spec))
        .map_err(|source| Failure::from(Error::Io { path: spec_path, source }))?;
    if let Some((r0, c0, r1, c1)) = inst.mask.bounding_box() {
        println!("gt_box={r0},{c0},{r1},{c1}");
    }
    println!("gt_pixels={}", inst.mask.count());
    Ok(())
}
