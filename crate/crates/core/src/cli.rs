//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage error, 3 resource limit.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{preset, run_sweep_with_raw, write_raw, write_records, Experiment, SweepConfig, PRESETS};
use crate::qcore::{max_qubits_from_env, LabLayout, MAX_QUBITS_ENV};
use crate::wf::{equilibrate, WfConfig, DEFAULT_DEGENERACY_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

/// Largest lab (pointer included) accepted by `inspect`.
pub const INSPECT_MAX_QUBITS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "wfqd",
    version,
    about = "Wigner's Friend scenarios with measurement modelled by quantum Darwinism",
    after_help = "Layout lists accept inclusive ranges and comma lists, e.g. `1..5` or `2,3,4`.\n\
                  The qubit budget (lab qubits, excluding pointer qubits) defaults to 12 and can be \
                  overridden with the WFQD_MAX_QUBITS environment variable.\n\
                  Exit codes: 0 success, 1 internal failure, 2 usage error, 3 resource limit."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the simple scenario over Friend and environment sizes.
    Wf(WfArgs),
    /// Sweep the extended two-lab scenario over Charlie's lab sizes.
    Ewfs(EwfsArgs),
    /// Run a named sweep (fig3, fig4, fig8, fig9, fig10, fig11).
    Preset(PresetArgs),
    /// Dump |ρ_L| of one equilibrated lab in MatrixMarket coordinate format.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Samples per layout point.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Aggregate CSV path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Also write every per-sample value to this CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Force the dense equilibration path.
    #[arg(long, default_value_t = false)]
    dense: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Relative eigenvalue gap below which levels count as degenerate.
    #[arg(long, default_value_t = DEFAULT_DEGENERACY_TOL)]
    degeneracy_tol: f64,
}

#[derive(Debug, Args)]
struct WfArgs {
    /// Friend qubit counts.
    #[arg(long, default_value = "1..5", value_parser = parse_counts)]
    nf: Counts,
    /// Environment qubit counts.
    #[arg(long, default_value = "2,3,4", value_parser = parse_counts)]
    ne: Counts,
    /// Prior of pointer outcome 0.
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EwfsArgs {
    /// Charlie's Friend qubit counts.
    #[arg(long, default_value = "1..7", value_parser = parse_counts)]
    nc: Counts,
    /// Charlie's environment qubit counts.
    #[arg(long, default_value = "1,2,3", value_parser = parse_counts)]
    nec: Counts,
    /// Debbie's Friend qubits.
    #[arg(long, default_value_t = 1)]
    nd: usize,
    /// Debbie's environment qubits.
    #[arg(long, default_value_t = 1)]
    ned: usize,
    /// Source angle in radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    theta: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct PresetArgs {
    /// Preset name.
    name: String,
    /// Override the preset's sample count (200).
    #[arg(long)]
    samples: Option<usize>,
    /// Override the preset's seed (42).
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregate CSV path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Also write every per-sample value to this CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Force the dense equilibration path.
    #[arg(long, default_value_t = false)]
    dense: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Friend qubits.
    #[arg(long, default_value_t = 3)]
    nf: usize,
    /// Environment qubits.
    #[arg(long, default_value_t = 4)]
    ne: usize,
    /// Prior of pointer outcome 0.
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sample index within the ensemble.
    #[arg(long, default_value_t = 0)]
    sample: u64,
    /// Force the dense equilibration path.
    #[arg(long, default_value_t = false)]
    dense: bool,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

type Counts = Vec<usize>;

/// Parses `a..b` (inclusive), `n`, or comma-separated mixtures of both.
pub fn parse_counts(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
            let b: usize = b.trim().parse().map_err(|_| format!("bad range end in `{part}`"))?;
            if a > b {
                return Err(format!("empty range `{part}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("`{part}` is not a qubit count"))?);
        }
    }
    if out.is_empty() {
        return Err("no qubit counts given".into());
    }
    Ok(out)
}

fn apply_common(config: &mut SweepConfig, c: &CommonArgs) {
    config.n_samples = c.samples;
    config.seed = c.seed;
    config.dense = c.dense;
    config.threads = c.threads;
    config.degeneracy_tol = c.degeneracy_tol;
}

fn open_out(path: &PathBuf) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn sweep_and_write(config: &SweepConfig, out: &PathBuf, raw: Option<&PathBuf>) -> Result<()> {
    let (records, raw_records) = run_sweep_with_raw(config)?;
    write_records(&records, open_out(out)?)?;
    if let Some(path) = raw {
        write_raw(&raw_records, open_out(path)?)?;
    }
    Ok(())
}

/// `|ρ_L|` of one sample as 1-based MatrixMarket coordinates of the nonzero entries.
fn inspect(args: &InspectArgs) -> Result<()> {
    let requested = args.nf + args.ne + 1;
    if requested > INSPECT_MAX_QUBITS {
        return Err(Error::ResourceLimit {
            requested,
            limit: INSPECT_MAX_QUBITS,
        });
    }
    let layout = LabLayout::with_limit(args.nf, args.ne, max_qubits_from_env())?;
    let config = WfConfig::new(layout, args.p0)?.with_seed(args.seed).with_dense(args.dense);
    let rho = equilibrate(&config, args.sample)?.dense_lab()?;
    let m = rho.matrix();
    let entries: Vec<(usize, usize, f64)> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, m[(i, j)].norm()))
        .filter(|&(_, _, v)| v != 0.0)
        .collect();
    let mut w = open_out(&args.out)?;
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(
        w,
        "% |rho_L| n_f={} n_e={} p0={} seed={} sample={}; order S, F, E",
        args.nf, args.ne, args.p0, args.seed, args.sample
    )?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {:?}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Wf(a) => {
            let mut config = SweepConfig::new(Experiment::Wf, a.nf, a.ne);
            config.p0 = a.p0;
            apply_common(&mut config, &a.common);
            sweep_and_write(&config, &a.common.out, a.common.raw.as_ref())
        }
        Command::Ewfs(a) => {
            let mut config = SweepConfig::new(Experiment::Ewfs, a.nc, a.nec);
            config.n_d = a.nd;
            config.n_ed = a.ned;
            config.theta = a.theta;
            apply_common(&mut config, &a.common);
            sweep_and_write(&config, &a.common.out, a.common.raw.as_ref())
        }
        Command::Preset(a) => {
            let mut config = preset(&a.name)?;
            if let Some(n) = a.samples {
                config.n_samples = n;
            }
            if let Some(s) = a.seed {
                config.seed = s;
            }
            config.dense = a.dense;
            config.threads = a.threads;
            sweep_and_write(&config, &a.out, a.raw.as_ref())
        }
        Command::Inspect(a) => inspect(&a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ResourceLimit { .. } => EXIT_RESOURCE,
        Error::InvalidConfig(_) | Error::InvalidLayout(_) | Error::UnknownPreset(_) => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::ResourceLimit { .. }) {
                eprintln!("hint: raise the budget with {MAX_QUBITS_ENV} (dense paths stay capped)");
            }
            if matches!(e, Error::UnknownPreset(_)) {
                eprintln!("known presets: {}", PRESETS.join(", "));
            }
            exit_code(&e)
        }
    }
}
