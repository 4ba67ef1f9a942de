//! Command-line front end: register, warp labels, evaluate, make phantoms.
//!
//! Exit codes: 0 on success, 1 on any runtime error, 2 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use atlasreg::io::{read_displacement, read_labels, read_volume, write_atomic, write_displacement, write_labels, write_volume};
use atlasreg::phantom::{generate, PhantomSpec};
use atlasreg::pipeline::{evaluate, propagate_with, traces_to_csv, MetricsTable};
use atlasreg::transform::folding_fraction;
use atlasreg::volume::Dims;
use atlasreg::optimizer::FOLDING_MARGIN;
use atlasreg::{register, OptimizerConfig};

/// Output names inside a result directory.
const DISPLACEMENT: &str = "displacement.vvol";
const WARPED_IMAGE: &str = "warped_image.vvol";
const WARPED_LABELS: &str = "warped_labels.vvol";
const METRICS: &str = "metrics.csv";
const TRACE: &str = "loss_trace.csv";
const CONFIG: &str = "config.toml";

#[derive(Parser)]
#[command(name = "atlasreg", version, about = "Atlas-to-patient deformable registration and label propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the affine + dense cascade and write every artifact to a result directory.
    Register(RegisterArgs),
    /// Carry atlas labels through a saved displacement.
    WarpLabels(WarpLabelsArgs),
    /// Recompute metrics from a result directory.
    Evaluate(EvaluateArgs),
    /// Materialize a phantom pair with its ground-truth displacement.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long)]
    patient: PathBuf,
    #[arg(long)]
    atlas_labels: Option<PathBuf>,
    /// Enables the segmentation term; omit for unsupervised registration.
    #[arg(long)]
    patient_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// TOML optimizer settings; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated labels to score (default: every patient label).
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

#[derive(Args)]
struct WarpLabelsArgs {
    #[arg(long)]
    atlas_labels: PathBuf,
    #[arg(long)]
    displacement: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep interpolated channels instead of exclusive masks.
    #[arg(long)]
    soft: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory written by `register`.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    patient_labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Metrics CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Built-in scene and deformation.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// TOML phantom description.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Grid size for presets: `N` or `NXxNYxNZ`.
    #[arg(long, value_parser = parse_dims, default_value = "64")]
    dims: Dims,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [n] if n > 0 => Ok([n; 3]),
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("expected N or NXxNYxNZ with positive sizes, got `{s}`")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_register(a: RegisterArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => OptimizerConfig::from_file(p)?,
        None => OptimizerConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let m = read_volume(&a.atlas)?;
    let f = read_volume(&a.patient)?;
    let s_a = a.atlas_labels.as_deref().map(read_labels).transpose()?;
    let s_f = a.patient_labels.as_deref().map(read_labels).transpose()?;
    if s_f.is_some() && s_a.is_none() {
        bail!("--patient-labels requires --atlas-labels");
    }
    create_dir(&a.out)?;

    let result = register(&m, &f, s_a.as_ref(), s_f.as_ref(), &cfg)?;
    write_displacement(&a.out.join(DISPLACEMENT), &result.composed)?;
    write_volume(&a.out.join(WARPED_IMAGE), &result.warp_image(&m)?.with_spacing(f.spacing()))?;
    let metrics = match &s_a {
        Some(s_a) => {
            let warped = propagate_with(s_a, &result.composed)?;
            write_labels(&a.out.join(WARPED_LABELS), &warped.masks)?;
            evaluate(&result, &warped.masks, s_f.as_ref(), a.labels.as_deref())?
        }
        None => MetricsTable {
            rows: Vec::new(),
            folding_fraction: result.folding_fraction,
            stages: Vec::new(),
        },
    };
    write_atomic(&a.out.join(METRICS), metrics.to_csv().as_bytes())?;
    write_atomic(&a.out.join(TRACE), traces_to_csv(&result.traces).as_bytes())?;
    write_atomic(&a.out.join(CONFIG), cfg.to_toml_string().as_bytes())?;

    print!("{}", metrics.summary());
    println!(
        "objective {:.6} -> {:.6} in {:.1} s",
        result.initial_objective.total, result.final_objective.total, result.runtime_secs
    );
    Ok(())
}

fn run_warp_labels(a: WarpLabelsArgs) -> Result<()> {
    let s_a = read_labels(&a.atlas_labels)?;
    let disp = read_displacement(&a.displacement)?;
    let warped = propagate_with(&s_a, &disp)?;
    write_labels(&a.out, if a.soft { &warped.soft } else { &warped.masks })?;
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let warped = read_labels(&a.result.join(WARPED_LABELS))
        .with_context(|| format!("{} holds no warped labels; was --atlas-labels given?", a.result.display()))?;
    let disp = read_displacement(&a.result.join(DISPLACEMENT))?;
    let s_f = a.patient_labels.as_deref().map(read_labels).transpose()?;
    let table = MetricsTable::compute(&warped, s_f.as_ref(), a.labels.as_deref(), folding_fraction(&disp, FOLDING_MARGIN))?;
    match &a.out {
        Some(p) => {
            write_atomic(p, table.to_csv().as_bytes())?;
            print!("{}", table.summary());
        }
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn run_phantom(a: PhantomArgs) -> Result<()> {
    let spec = match (&a.preset, &a.spec) {
        (Some(name), None) => PhantomSpec::preset(name, a.dims)?,
        (None, Some(path)) => PhantomSpec::from_file(path)?,
        _ => bail!("exactly one of --preset and --spec is required"),
    };
    let p = generate(&spec)?;
    create_dir(&a.out)?;
    write_volume(&a.out.join("atlas.vvol"), &p.atlas)?;
    write_volume(&a.out.join("patient.vvol"), &p.patient)?;
    write_labels(&a.out.join("atlas_labels.vvol"), &p.atlas_labels)?;
    write_labels(&a.out.join("patient_labels.vvol"), &p.patient_labels)?;
    write_displacement(&a.out.join("ground_truth.vvol"), &p.ground_truth)?;
    write_atomic(&a.out.join("phantom.toml"), spec.to_toml_string().as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Register(a) => run_register(a),
        Command::WarpLabels(a) => run_warp_labels(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Phantom(a) => run_phantom(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("atlasreg: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
