//! Command-line front end for the electrode detection pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use utelocate::detection::{detect_electrodes, read_labeled_csv, PipelineConfig};
use utelocate::error::{Error, Result};
use utelocate::evaluation::{compare_methods, detection_stats, position_errors, DetectionReport};
use utelocate::pancake::{pancake_project, pancake_to_csv, write_pancake_pgm};
use utelocate::phantom::{generate_phantom, points_to_csv, PhantomSpec};
use utelocate::template::{default_template, load_template, ElectrodeTemplate};
use utelocate::volume::{read_nifti, write_nifti};

#[derive(Parser)]
#[command(
    name = "utelocate",
    version,
    about = "Detect and label EEG electrodes in paired T1/UTE MRI volumes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full detection pipeline on a T1/UTE pair
    Detect(DetectArgs),
    /// Generate a synthetic phantom with known electrode positions
    Phantom(PhantomArgs),
    /// Score a detection CSV against ground truth
    Eval(EvalArgs),
    /// Compare two evaluation reports with a paired t-test
    Compare(CompareArgs),
    /// Render a labeled electrode set as a flattened (pancake) view
    Pancake(PancakeArgs),
}

#[derive(Args)]
struct DetectArgs {
    /// T1-weighted volume (NIfTI-1)
    #[arg(long)]
    t1: PathBuf,
    /// UTE volume (NIfTI-1)
    #[arg(long)]
    ute: PathBuf,
    /// Electrode template CSV (default: built-in 65-channel 10-10 cap)
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output CSV of labeled electrode positions
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON twin with transform and configuration
    #[arg(long)]
    json: Option<PathBuf>,
    /// Pipeline configuration JSON (flags below override it)
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    outer_margin_mm: Option<f64>,
    #[arg(long)]
    inner_margin_mm: Option<f64>,
    #[arg(long)]
    gate_dist_mm: Option<f64>,
    #[arg(long)]
    refine_radius_mm: Option<f64>,
    #[arg(long)]
    r_min_mm: Option<f64>,
    #[arg(long)]
    r_max_mm: Option<f64>,
    #[arg(long)]
    edge_frac: Option<f64>,
    #[arg(long)]
    nms_min_dist_mm: Option<f64>,
    #[arg(long)]
    max_candidates: Option<usize>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom specification JSON (default: built-in spec)
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Directory receiving t1.nii, ute.nii, truth.csv, fiducials.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the RNG seed from the spec
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Detected electrode CSV (label,x_mm,y_mm,z_mm,...)
    #[arg(long)]
    detected: PathBuf,
    /// Ground-truth CSV (label,x_mm,y_mm,z_mm)
    #[arg(long)]
    truth: PathBuf,
    /// Detection criterion: position error below this counts as correct
    #[arg(long, default_value_t = 10.0)]
    threshold_mm: f64,
    /// Output report JSON
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Evaluation report JSON for method A (e.g. the UTE pipeline)
    #[arg(long)]
    a: PathBuf,
    /// Evaluation report JSON for method B (e.g. the fiducial baseline)
    #[arg(long)]
    b: PathBuf,
    /// Output comparison JSON
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PancakeArgs {
    /// Labeled electrode CSV (label,x_mm,y_mm,z_mm,...)
    #[arg(long)]
    electrodes: PathBuf,
    /// Output CSV of projected (u, v) coordinates
    #[arg(long)]
    out: PathBuf,
    /// Optional PGM raster output
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Raster size in pixels
    #[arg(long, default_value_t = 512)]
    size: usize,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents.as_ref()).map_err(|e| Error::IoFailure {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::IoFailure {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::BadInput {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn load_template_arg(path: &Option<PathBuf>) -> Result<ElectrodeTemplate> {
    match path {
        Some(p) => load_template(p),
        None => Ok(default_template()),
    }
}

fn run_detect(args: &DetectArgs) -> Result<()> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.outer_margin_mm {
        cfg.outer_margin_mm = v;
    }
    if let Some(v) = args.inner_margin_mm {
        cfg.inner_margin_mm = v;
    }
    if let Some(v) = args.gate_dist_mm {
        cfg.gate_dist_mm = v;
    }
    if let Some(v) = args.refine_radius_mm {
        cfg.refine_radius_mm = v;
    }
    if let Some(v) = args.r_min_mm {
        cfg.hough.r_min_mm = v;
    }
    if let Some(v) = args.r_max_mm {
        cfg.hough.r_max_mm = v;
    }
    if let Some(v) = args.edge_frac {
        cfg.hough.grad_threshold_frac = v;
    }
    if let Some(v) = args.nms_min_dist_mm {
        cfg.hough.nms_min_dist_mm = v;
    }
    if let Some(v) = args.max_candidates {
        cfg.hough.max_candidates = v;
    }

    let template = load_template_arg(&args.template)?;
    let t1 = read_nifti(&args.t1)?;
    let ute = read_nifti(&args.ute)?;
    let set = detect_electrodes(&t1, &ute, &template, &cfg)?;
    write_file(&args.out, set.to_csv())?;
    if let Some(json_path) = &args.json {
        write_file(json_path, set.to_json())?;
    }
    let hough = set
        .electrodes
        .iter()
        .filter(|e| e.source == utelocate::ElectrodeSource::Hough)
        .count();
    println!(
        "labeled {} electrodes ({} from sphere detection, {} refined) -> {}",
        set.electrodes.len(),
        hough,
        set.electrodes.len() - hough,
        args.out.display()
    );
    Ok(())
}

fn run_phantom(args: &PhantomArgs) -> Result<()> {
    let mut spec: PhantomSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    let template = default_template();
    let phantom = generate_phantom(&spec, &template)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::IoFailure {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    write_nifti(&phantom.t1, args.out_dir.join("t1.nii"))?;
    write_nifti(&phantom.ute, args.out_dir.join("ute.nii"))?;
    write_file(&args.out_dir.join("truth.csv"), points_to_csv(&phantom.truth))?;
    write_file(
        &args.out_dir.join("fiducials.csv"),
        points_to_csv(&phantom.fiducials),
    )?;
    println!(
        "phantom (seed {}) with {} electrodes -> {}",
        spec.rng_seed,
        phantom.truth.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let detected = read_labeled_csv(&args.detected)?;
    let truth = read_labeled_csv(&args.truth)?;
    let pe = position_errors(&detected, &truth)?;
    let report = detection_stats(&pe, args.threshold_mm)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable");
    write_file(&args.report, json)?;
    println!(
        "n={} FN={} FP={} accuracy={:.1}% mean PE={:.2} mm -> {}",
        report.n_channels,
        report.fn_count,
        report.fp_count,
        report.accuracy_pct,
        report.mean_pe_mm,
        args.report.display()
    );
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let ra: DetectionReport = read_json(&args.a)?;
    let rb: DetectionReport = read_json(&args.b)?;
    let cmp = compare_methods(&ra.per_label_pe_mm, &rb.per_label_pe_mm)?;
    let json = serde_json::to_string_pretty(&cmp).expect("serializable");
    write_file(&args.report, json)?;
    match &cmp.t_test {
        Some(tt) => println!(
            "mean A={:.2} mm, mean B={:.2} mm, t={:.3} (df {}), p={:.4}: {}",
            cmp.mean_a_mm, cmp.mean_b_mm, tt.t, tt.df, tt.p_two_sided, cmp.verdict
        ),
        None => println!(
            "mean A={:.2} mm, mean B={:.2} mm: {}",
            cmp.mean_a_mm, cmp.mean_b_mm, cmp.verdict
        ),
    }
    Ok(())
}

fn run_pancake(args: &PancakeArgs) -> Result<()> {
    let points = read_labeled_csv(&args.electrodes)?;
    let projected = pancake_project(&points, None)?;
    write_file(&args.out, pancake_to_csv(&projected))?;
    if let Some(pgm) = &args.pgm {
        write_pancake_pgm(&projected, args.size, pgm)?;
    }
    println!("projected {} electrodes -> {}", projected.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Detect(a) => run_detect(a),
        Cmd::Phantom(a) => run_phantom(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Compare(a) => run_compare(a),
        Cmd::Pancake(a) => run_pancake(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
