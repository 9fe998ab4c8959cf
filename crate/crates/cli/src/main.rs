use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oodgate::{
    evaluate, fit_gaussian, generate, run_filter, score_dataset, select_threshold, DistanceSet,
    Error, ErrorClass, FeatureFormat, FeatureMatrix, FilterConfig, FilterReport, GateMode,
    GaussianStats, GroundTruth, MixtureSpec, MomentDivisor, Stage, ThresholdMethod, DEFAULT_ALPHA,
    DEFAULT_BINS, DEFAULT_SHRINKAGE,
};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "oodgate",
    version,
    about = "Mahalanobis scoring, automatic thresholding and CV-gated filtering of unlabeled features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit mean and regularized covariance to a labeled feature file.
    Fit {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
        shrinkage: f64,
        #[arg(long, default_value = "binary")]
        format: FeatureFormat,
    },
    /// Score unlabeled features; writes one `{"id","distance"}` line per row.
    Score {
        /// Previously fitted statistics.
        #[arg(long, conflicts_with = "labeled", required_unless_present = "labeled")]
        stats: Option<PathBuf>,
        /// Labeled features to fit on the fly.
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
        shrinkage: f64,
        #[arg(long, default_value = "binary")]
        format: FeatureFormat,
    },
    /// Select a threshold for a distance file produced by `score`.
    Threshold {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "otsu")]
        method: ThresholdMethod,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Full pipeline: fit, score, threshold, gate, and write the manifest.
    Filter(FilterArgs),
    /// Generate a seeded Gaussian mixture with ground truth.
    Synth(SynthArgs),
    /// Compare a filter manifest against ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    /// Writes `<prefix>.jsonl`, `<prefix>.keep.txt` and `<prefix>.discard.txt`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value = "otsu")]
    method: ThresholdMethod,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
    shrinkage: f64,
    /// Filter when the gate reports unimodal instead of bimodal.
    #[arg(long, conflicts_with = "bypass_gate")]
    invert_gate: bool,
    /// Always filter at the threshold.
    #[arg(long)]
    bypass_gate: bool,
    #[arg(long, default_value = "population")]
    cv_divisor: MomentDivisor,
    /// Recorded in the manifest; the pipeline itself draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "binary")]
    format: FeatureFormat,
}

#[derive(Args)]
struct SynthArgs {
    /// Writes `<prefix>.labeled.<ext>`, `<prefix>.unlabeled.<ext>` and `<prefix>.truth.json`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 200)]
    n_labeled: usize,
    #[arg(long, default_value_t = 90)]
    n_unlabeled: usize,
    #[arg(long, default_value_t = 0.2)]
    contamination: f64,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    iod_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    ood_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "binary")]
    format: FeatureFormat,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Numerical => ExitCode::from(EXIT_NUMERICAL),
                ErrorClass::Data => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Fit {
            labeled,
            output,
            shrinkage,
            format,
        } => {
            let x = load(&labeled, format)?;
            let stats = fit_gaussian(&x, shrinkage).map_err(|e| e.at_stage(Stage::Fit))?;
            stats.save(&output)?;
            print_json(&json!({
                "output": output,
                "rows": x.rows(),
                "dims": stats.dims(),
                "shrinkage": stats.shrinkage(),
            }));
        }
        Command::Score {
            stats,
            labeled,
            unlabeled,
            output,
            shrinkage,
            format,
        } => {
            let stats = match (stats, labeled) {
                (Some(path), _) => GaussianStats::load(&path).map_err(|e| e.at_stage(Stage::Load))?,
                (None, Some(path)) => fit_gaussian(&load(&path, format)?, shrinkage)
                    .map_err(|e| e.at_stage(Stage::Fit))?,
                (None, None) => unreachable!("clap requires one of --stats/--labeled"),
            };
            let u = load(&unlabeled, format)?;
            let d = score_dataset(&stats, &u).map_err(|e| e.at_stage(Stage::Score))?;
            write(&output, d.to_jsonl())?;
            print_json(&json!({
                "output": output,
                "rows": d.len(),
                "mean": d.mean(),
                "stddev": d.stddev(),
            }));
        }
        Command::Threshold {
            scores,
            method,
            bins,
        } => {
            let text = read(&scores)?;
            let d = DistanceSet::from_jsonl(&text).map_err(|e| e.at_stage(Stage::Load))?;
            let t = select_threshold(&d, method, bins).map_err(|e| e.at_stage(Stage::Threshold))?;
            print_json(&serde_json::to_value(t).expect("threshold serializes"));
        }
        Command::Filter(args) => filter(args)?,
        Command::Synth(args) => synth(args)?,
        Command::Eval { manifest, truth } => {
            let text = read(&manifest)?;
            let report = FilterReport::from_jsonl(&text).map_err(|e| e.at_stage(Stage::Load))?;
            let truth = GroundTruth::load(&truth).map_err(|e| e.at_stage(Stage::Load))?;
            let q = evaluate(&report, &truth).map_err(|e| e.at_stage(Stage::Evaluate))?;
            print_json(&serde_json::to_value(q).expect("quality serializes"));
        }
    }
    Ok(())
}

fn filter(args: FilterArgs) -> Result<(), Error> {
    let gate_mode = match (args.invert_gate, args.bypass_gate) {
        (true, _) => GateMode::Inverted,
        (_, true) => GateMode::Bypassed,
        _ => GateMode::AsWritten,
    };
    let config = FilterConfig {
        method: args.method,
        bins: args.bins,
        alpha: args.alpha,
        shrinkage: args.shrinkage,
        gate_mode,
        divisor: args.cv_divisor,
        seed: args.seed,
    };
    let labeled = load(&args.labeled, args.format)?;
    let unlabeled = load(&args.unlabeled, args.format)?;
    let report = run_filter(&labeled, &unlabeled, &config)?;

    let manifest = with_suffix(&args.out_prefix, "jsonl");
    write(&manifest, report.to_jsonl())?;
    write(&with_suffix(&args.out_prefix, "keep.txt"), lines(report.kept_ids()))?;
    write(&with_suffix(&args.out_prefix, "discard.txt"), lines(report.discarded_ids()))?;
    print_json(&json!({
        "manifest": manifest,
        "tau": report.threshold.tau,
        "method": report.threshold.method,
        "gate_mode": report.gate.mode,
        "decision": report.gate.decision,
        "bimodal": report.gate.bimodal,
        "kept": report.kept_count,
        "discarded": report.discarded_count,
    }));
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Error> {
    let spec = MixtureSpec {
        dims: args.dims,
        n_labeled: args.n_labeled,
        n_unlabeled: args.n_unlabeled,
        contamination: args.contamination,
        separation: args.separation,
        iod_sd: args.iod_sd,
        ood_sd: args.ood_sd,
        seed: args.seed,
    };
    let data = generate(&spec)?;
    let ext = match args.format {
        FeatureFormat::Binary => "feat",
        FeatureFormat::Csv => "csv",
    };
    let labeled = with_suffix(&args.out_prefix, &format!("labeled.{ext}"));
    let unlabeled = with_suffix(&args.out_prefix, &format!("unlabeled.{ext}"));
    let truth = with_suffix(&args.out_prefix, "truth.json");
    data.labeled.save(&labeled, args.format)?;
    data.unlabeled.save(&unlabeled, args.format)?;
    data.truth.save(&truth)?;
    print_json(&json!({
        "labeled": labeled,
        "unlabeled": unlabeled,
        "truth": truth,
        "ood_count": data.truth.ood_count(),
    }));
    Ok(())
}

fn load(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix, Error> {
    FeatureMatrix::load(path, format).map_err(|e| e.at_stage(Stage::Load))
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| {
        let err = if e.kind() == std::io::ErrorKind::NotFound {
            Error::InputNotFound(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        };
        err.at_stage(Stage::Load)
    })
}

fn write(path: &Path, contents: String) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn lines<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    ids.into_iter().flat_map(|id| [id, "\n"]).collect()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}
