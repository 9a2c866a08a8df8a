//! Command-line front end.
//!
//! Output schemas (column order is fixed):
//!
//! - `trajectory.csv`: `method,step,update_error,preservation_error,retention_error,delta_norm,normal_eq_residual,capacity_floor`
//! - `summary.csv`: `record,method,reference,final_preservation_error,mean_update_error,max_retention_error,total_delta_norm`,
//!   one `method` row per run and one `ratio` row per ordered pair (`method / reference`)
//! - `projector.csv`: `retained_dim,source_dim,threshold,mode,spectrum_min,spectrum_q25,spectrum_median,spectrum_q75,spectrum_max`
//! - `spectrum.csv`: `index,eigenvalue`, descending
//! - `threshold_sweep.csv`: `threshold,retained_dim`, ascending threshold
//!
//! The JSON forms hold one object per line with the same field names.
//! Floats use the shortest decimal that round-trips.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::certify::{certify, CheckOutcome};
use crate::config::{resolve, to_resolved_string};
use crate::error::Error;
use crate::harness::{compare_methods, run_experiment, summarize, ExperimentConfig, Trajectory};
use crate::knowledge::generate_world;
use crate::projector::{build_projector_with, ThresholdMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Default output directory when `--output` is absent.
pub const OUTPUT_DIR_ENV: &str = "NSEDIT_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "nsedit-out";

pub const TRAJECTORY_HEADER: &str = "method,step,update_error,preservation_error,retention_error,delta_norm,normal_eq_residual,capacity_floor";
pub const SUMMARY_HEADER: &str = "record,method,reference,final_preservation_error,mean_update_error,max_retention_error,total_delta_norm";
pub const PROJECTOR_HEADER: &str = "retained_dim,source_dim,threshold,mode,spectrum_min,spectrum_q25,spectrum_median,spectrum_q75,spectrum_max";
pub const SPECTRUM_HEADER: &str = "index,eigenvalue";
pub const SWEEP_HEADER: &str = "threshold,retained_dim";

#[derive(Debug, Parser)]
#[command(
    name = "nsedit",
    version,
    about = "Null-space constrained editing of linear associative memories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a sequential-editing experiment and write trajectory and summary tables.
    Run(ExperimentArgs),
    /// Certify the closed-form solvers against the gradient-descent oracle.
    Verify(VerifyArgs),
    /// Write the preserved-key spectrum and the retained dimension per threshold.
    Spectrum(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML configuration file; absent keys take defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory [default: $NSEDIT_OUTPUT_DIR or ./nsedit-out].
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Edit-stream seed; overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// A seed `N` or an inclusive range `A..B`.
    #[arg(long, default_value = "0", value_parser = parse_seed_range)]
    pub seed: SeedRange,
    /// Flip the residual sign inside the alphaedit solve (self-test of the checks).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

pub fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|e| format!("invalid seed `{t}`: {e}"))
    };
    let (first, last) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if first > last {
        return Err(format!("empty seed range {first}..{last}"));
    }
    Ok(SeedRange { first, last })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn json_line<T: Serialize>(out: &mut String, record: &T) {
    out.push_str(&serde_json::to_string(record).expect("records serialize"));
    out.push('\n');
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    record: &'static str,
    #[serde(flatten)]
    inner: &'a T,
}

pub fn render_trajectory(traj: &Trajectory, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(TRAJECTORY_HEADER);
            out.push('\n');
            for s in traj.records() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    s.method,
                    s.step,
                    fmt_f64(s.update_error),
                    fmt_f64(s.preservation_error),
                    fmt_f64(s.retention_error),
                    fmt_f64(s.delta_norm),
                    fmt_f64(s.normal_eq_residual),
                    fmt_f64(s.capacity_floor),
                );
            }
        }
        Format::Json => traj.records().for_each(|s| json_line(&mut out, s)),
    }
    out
}

pub fn render_summary(traj: &Trajectory, format: Format) -> String {
    let methods = summarize(traj);
    let ratios = compare_methods(traj).map(|c| c.ratios).unwrap_or_default();
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(SUMMARY_HEADER);
            out.push('\n');
            for m in &methods {
                let _ = writeln!(
                    out,
                    "method,{},,{},{},{},{}",
                    m.method,
                    fmt_f64(m.final_preservation_error),
                    fmt_f64(m.mean_update_error),
                    fmt_f64(m.max_retention_error),
                    fmt_f64(m.total_delta_norm),
                );
            }
            for r in &ratios {
                let _ = writeln!(
                    out,
                    "ratio,{},{},{},{},{},{}",
                    r.numerator_method,
                    r.denominator_method,
                    fmt_f64(r.final_preservation_error),
                    fmt_f64(r.mean_update_error),
                    fmt_f64(r.max_retention_error),
                    fmt_f64(r.total_delta_norm),
                );
            }
        }
        Format::Json => {
            for m in &methods {
                json_line(
                    &mut out,
                    &Tagged {
                        record: "method",
                        inner: m,
                    },
                );
            }
            for r in &ratios {
                json_line(
                    &mut out,
                    &Tagged {
                        record: "ratio",
                        inner: r,
                    },
                );
            }
        }
    }
    out
}

fn mode_str(mode: ThresholdMode) -> &'static str {
    match mode {
        ThresholdMode::Absolute => "absolute",
        ThresholdMode::Relative => "relative",
    }
}

pub fn render_projector(traj: &Trajectory, format: Format) -> String {
    let s = &traj.projector_summary;
    match format {
        Format::Csv => {
            let q = s.spectrum_quantiles.map(fmt_f64).join(",");
            format!(
                "{PROJECTOR_HEADER}\n{},{},{},{},{q}\n",
                s.retained_dim,
                s.source_dim,
                fmt_f64(s.threshold),
                mode_str(s.mode)
            )
        }
        Format::Json => {
            let mut out = String::new();
            json_line(&mut out, s);
            out
        }
    }
}

/// Files staged in memory and committed together.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file to a temporary name first and renames only once
    /// all of them are on disk.
    pub fn commit(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let pid = std::process::id();
        let mut staged = Vec::new();
        let result = (|| {
            for (name, contents) in &self.files {
                let tmp = dir.join(format!(".{name}.{pid}.tmp"));
                staged.push(tmp.clone());
                fs::write(&tmp, contents)?;
            }
            for ((name, _), tmp) in self.files.iter().zip(&staged) {
                fs::rename(tmp, dir.join(name))?;
            }
            Ok(())
        })();
        if result.is_err() {
            for tmp in &staged {
                let _ = fs::remove_file(tmp);
            }
        }
        result
    }
}

fn output_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    })
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code_for(e)
}

fn resolve_args(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    resolve(args.config.as_deref(), &args.overrides, args.seed)
}

fn commit(outputs: &OutputSet, dir: &Path) -> i32 {
    match outputs.commit(dir) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: writing outputs to {}: {e}", dir.display());
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_run(args: &ExperimentArgs) -> i32 {
    let config = match resolve_args(args) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let traj = match run_experiment(&config) {
        Ok(t) => t,
        Err(e) => return report(&e),
    };
    let ext = args.format.ext();
    let mut outputs = OutputSet::default();
    outputs.add(
        format!("trajectory.{ext}"),
        render_trajectory(&traj, args.format),
    );
    outputs.add(format!("summary.{ext}"), render_summary(&traj, args.format));
    outputs.add(
        format!("projector.{ext}"),
        render_projector(&traj, args.format),
    );
    outputs.add("config.resolved", to_resolved_string(&config));
    let dir = output_dir(&args.output);
    let code = commit(&outputs, &dir);
    if code == EXIT_OK {
        println!(
            "wrote {} trajectory records to {}",
            traj.records().count(),
            dir.display()
        );
    }
    code
}

/// Thresholds probed by `spectrum`: decades from 1e-12 to 1e6 plus the
/// configured one, ascending.
pub fn sweep_thresholds(configured: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (-12..=6).map(|e| 10f64.powi(e)).collect();
    if !t.contains(&configured) {
        t.push(configured);
    }
    t.sort_by(f64::total_cmp);
    t
}

/// Number of eigenvalues at or below the cutoff that `threshold` maps to.
pub fn retained_at(spectrum: &[f64], threshold: f64, mode: ThresholdMode) -> usize {
    let cutoff = match mode {
        ThresholdMode::Absolute => threshold,
        ThresholdMode::Relative => threshold * spectrum.first().copied().unwrap_or(0.0).max(0.0),
    };
    spectrum.iter().filter(|&&l| l <= cutoff).count()
}

pub fn cmd_spectrum(args: &ExperimentArgs) -> i32 {
    let config = match resolve_args(args) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let built = generate_world(&config.world).and_then(|(_, preserved)| {
        build_projector_with(
            preserved.keys(),
            config.solver.threshold,
            config.solver.threshold_mode,
        )
    });
    let projector = match built {
        Ok(p) => p,
        Err(e) => return report(&e),
    };
    let spectrum = projector.spectrum();
    let mode = config.solver.threshold_mode;
    let sweep: Vec<(f64, usize)> = sweep_thresholds(config.solver.threshold)
        .into_iter()
        .map(|t| (t, retained_at(spectrum, t, mode)))
        .collect();

    let mut spec_out = String::new();
    let mut sweep_out = String::new();
    match args.format {
        Format::Csv => {
            spec_out.push_str(SPECTRUM_HEADER);
            spec_out.push('\n');
            for (i, l) in spectrum.iter().enumerate() {
                let _ = writeln!(spec_out, "{i},{}", fmt_f64(*l));
            }
            sweep_out.push_str(SWEEP_HEADER);
            sweep_out.push('\n');
            for (t, k) in &sweep {
                let _ = writeln!(sweep_out, "{},{k}", fmt_f64(*t));
            }
        }
        Format::Json => {
            for (index, eigenvalue) in spectrum.iter().enumerate() {
                json_line(
                    &mut spec_out,
                    &serde_json::json!({ "index": index, "eigenvalue": eigenvalue }),
                );
            }
            for (threshold, retained_dim) in &sweep {
                json_line(
                    &mut sweep_out,
                    &serde_json::json!({ "threshold": threshold, "retained_dim": retained_dim }),
                );
            }
        }
    }
    let ext = args.format.ext();
    let mut outputs = OutputSet::default();
    outputs.add(format!("spectrum.{ext}"), spec_out);
    outputs.add(format!("threshold_sweep.{ext}"), sweep_out);
    outputs.add("config.resolved", to_resolved_string(&config));
    let code = commit(&outputs, &output_dir(&args.output));
    if code == EXIT_OK {
        println!(
            "retained_dim {} of {} at threshold {} ({})",
            projector.retained_dim(),
            projector.source_dim(),
            fmt_f64(config.solver.threshold),
            mode_str(mode)
        );
    }
    code
}

pub fn format_outcome(o: &CheckOutcome) -> String {
    format!(
        "{:>6}  {:<32} {:>12.3e}  {:>9.1e}  {}",
        o.seed,
        o.check,
        o.residual,
        o.tolerance,
        if o.passed { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_verify(args: &VerifyArgs) -> i32 {
    println!(
        "{:>6}  {:<32} {:>12}  {:>9}  result",
        "seed", "check", "residual", "tolerance"
    );
    let mut failed = Vec::new();
    for seed in args.seed.first..=args.seed.last {
        let outcomes = match certify(seed, args.inject_bug) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: seed {seed}: {e}");
                return EXIT_RUNTIME;
            }
        };
        for o in outcomes {
            println!("{}", format_outcome(&o));
            if !o.passed {
                failed.push(o);
            }
        }
    }
    if failed.is_empty() {
        println!("all checks passed");
        EXIT_OK
    } else {
        eprintln!("{} check(s) failed:", failed.len());
        for o in &failed {
            eprintln!("  seed {} {}", o.seed, o.check);
        }
        EXIT_VERIFY_FAILED
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    }
}
