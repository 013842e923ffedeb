//! Command-line front end: config loading, subcommand dispatch, CSV/report
//! output.
//!
//! A run is described by a TOML config file whose keys mirror the command-line
//! flags (`seed`, `trials`, `steps`, `scheme`, `bits`, `alpha`, `L`, `mu`,
//! `out`, `count_offset_bits`) plus a `problem` key pointing at the instance
//! file; flags override file keys. A problem file may also be passed directly
//! (it is recognized by its `M`/`utility` keys) with every run parameter taken
//! from flags or defaults.
//!
//! All outputs are byte-deterministic given the merged settings: numbers are
//! printed with 17 significant digits, trials use counter-based seeding, and
//! the process exit status is nonzero iff an error or a bound violation
//! occurred.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bounds::{bound_report, BoundReport};
use crate::error::{Error, Result};
use crate::lattice::{count_lattice, DEFAULT_ENUM_BUDGET};
use crate::pd::{build_t_matrix, StepSchedule};
use crate::problem::{
    kkt_residual, solve_optimum, toml_error, validate, NumProblem, Optimum, ValidatedProblem,
    DEFAULT_TOL_NEWTON, DEFAULT_TOL_QUADRATIC,
};
use crate::quantize::rate_summary;
use crate::sim::{
    monte_carlo, reference_config, sample_reference_instance, synthesized_ledger, CurveKind,
    ExperimentConfig, Scheme, SimulationOutput,
};

/// Default trial count when neither flag nor config supplies one.
pub const DEFAULT_TRIALS: usize = 100;
/// Default horizon when neither flag nor config supplies one.
pub const DEFAULT_STEPS: usize = 500;
/// Default start-interval parameter.
pub const DEFAULT_L: u32 = 5;
/// Default bits per symbol for the static scheme.
pub const DEFAULT_STATIC_BITS: u32 = 3;
/// The built-in benchmark scenario name.
pub const REFERENCE_SCENARIO: &str = "reference";

/// Quantized primal-dual simulator and bound calculator.
#[derive(Debug, Parser)]
#[command(name = "qpd", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the instance's KKT system and print the optimum.
    Solve {
        /// Problem file, or a run config with a `problem` key.
        config: PathBuf,
    },
    /// Run the Monte Carlo experiment and write curve + report files.
    Simulate {
        /// Problem file, or a run config with a `problem` key.
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Compute the decay-rate bounds for a configuration and print them.
    Bounds {
        /// Problem file, or a run config with a `problem` key.
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Print the bit-rate summary a configuration would produce.
    Rate {
        /// Problem file, or a run config with a `problem` key.
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a built-in benchmark scenario end to end.
    Reproduce {
        /// Scenario name (`reference`).
        scenario: String,
        #[command(flatten)]
        flags: RunFlags,
    },
}

/// Run parameters as command-line flags. Every flag mirrors a config-file key
/// and overrides it when set.
#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// Base seed for the trial ensemble (and for generated instances).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Steps per trial.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Codec for every exchanged variable: passthrough | zoomin | static.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Bits per symbol for the static scheme.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Zoom factor in (0, 1); also scales the start box. Derived from the
    /// transition matrix when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Start-interval parameter: initial coordinates are uniform on
    /// (-L alpha, L alpha).
    #[arg(long = "L")]
    pub l: Option<u32>,
    /// Constant step size; defaults to half the instance's stability cap.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Output directory for CSV and report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Charge transmitted zoom offsets at ceil(log2(2 max|offset| + 1)) bits
    /// each instead of treating them as free side information.
    #[arg(long)]
    pub count_offset_bits: bool,
}

/// Config-file form of [`RunFlags`]; keys mirror the flags exactly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    problem: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<usize>,
    steps: Option<usize>,
    scheme: Option<String>,
    bits: Option<u32>,
    alpha: Option<f64>,
    #[serde(rename = "L")]
    l: Option<u32>,
    mu: Option<f64>,
    out: Option<PathBuf>,
    count_offset_bits: Option<bool>,
}

/// Fully merged run parameters (flags over file keys over defaults).
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    pub scheme: Scheme,
    pub alpha: Option<f64>,
    pub l: u32,
    pub mu: Option<f64>,
    /// Output directory; `None` means the current directory for subcommands
    /// that always write files, and "print only" for `bounds`.
    pub out: Option<PathBuf>,
    pub count_offset_bits: bool,
}

impl RunSettings {
    fn merge(file: &RunFile, flags: &RunFlags) -> Result<Self> {
        let scheme_name = flags
            .scheme
            .clone()
            .or_else(|| file.scheme.clone())
            .unwrap_or_else(|| "zoomin".into());
        let bits = flags
            .bits
            .or(file.bits)
            .unwrap_or(DEFAULT_STATIC_BITS);
        let scheme = parse_scheme(&scheme_name, bits)?;
        Ok(RunSettings {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            trials: flags.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS),
            steps: flags.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
            scheme,
            alpha: flags.alpha.or(file.alpha),
            l: flags.l.or(file.l).unwrap_or(DEFAULT_L),
            mu: flags.mu.or(file.mu),
            out: flags.out.clone().or_else(|| file.out.clone()),
            count_offset_bits: flags.count_offset_bits || file.count_offset_bits.unwrap_or(false),
        })
    }

    /// Builds the experiment description for a concrete instance.
    pub fn experiment_config(&self, p: &ValidatedProblem) -> Result<ExperimentConfig> {
        let mu = match self.mu {
            Some(mu) => mu,
            None => 0.5 * p.step_cap(),
        };
        Ok(ExperimentConfig {
            scheme: self.scheme,
            l: self.l,
            alpha: self.alpha,
            steps: self.steps,
            trials: self.trials,
            base_seed: self.seed,
            schedule: StepSchedule::constant(mu)?,
            count_offset_bits: self.count_offset_bits,
            record_traces: false,
            tail_fraction: 0.5,
        })
    }
}

fn parse_scheme(name: &str, bits: u32) -> Result<Scheme> {
    match name.to_ascii_lowercase().as_str() {
        "passthrough" => Ok(Scheme::Passthrough),
        "zoomin" | "zoom-in" => Ok(Scheme::ZoomIn),
        "static" => Ok(Scheme::StaticUniform { range: None, bits }),
        other => Err(Error::Param(format!(
            "unknown scheme `{other}` (expected passthrough, zoomin, or static)"
        ))),
    }
}

/// A parsed config: merged run settings plus the loaded instance.
#[derive(Debug)]
pub struct LoadedRun {
    pub settings: RunSettings,
    pub problem: ValidatedProblem,
}

/// Loads a config path: either a run config referencing a problem file, or a
/// problem file itself (all run keys from flags/defaults).
pub fn load_run(config: &Path, flags: &RunFlags) -> Result<LoadedRun> {
    let src = fs::read_to_string(config)?;
    let value: toml::Value = toml::from_str(&src).map_err(|e| toml_error(&src, &e))?;
    let is_problem_file = value.get("utility").is_some() || value.get("M").is_some();

    let (file, problem) = if is_problem_file {
        (RunFile::default(), NumProblem::from_toml_str(&src)?)
    } else {
        let run: RunFile = toml::from_str(&src).map_err(|e| toml_error(&src, &e))?;
        let rel = run.problem.clone().ok_or_else(|| {
            Error::Param(format!(
                "config {} has no `problem` key and is not a problem file",
                config.display()
            ))
        })?;
        // Relative problem paths resolve against the config's directory.
        let path = if rel.is_absolute() {
            rel
        } else {
            config.parent().unwrap_or(Path::new(".")).join(rel)
        };
        (run, NumProblem::from_path(&path)?)
    };

    Ok(LoadedRun {
        settings: RunSettings::merge(&file, flags)?,
        problem: validate(problem)?,
    })
}

fn solve_tol(p: &ValidatedProblem) -> f64 {
    if p.is_quadratic() {
        DEFAULT_TOL_QUADRATIC
    } else {
        DEFAULT_TOL_NEWTON
    }
}

fn format_vector(v: &nalgebra::DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Executes a parsed invocation. `Ok(true)` means success with no bound
/// violations; `Ok(false)` means the run completed but a measured curve
/// crossed a bound.
pub fn run<W: Write>(cli: &Cli, stdout: &mut W) -> Result<bool> {
    match &cli.command {
        Command::Solve { config } => {
            let loaded = load_run(config, &RunFlags::default())?;
            let opt = solve_optimum(&loaded.problem, solve_tol(&loaded.problem))?;
            writeln!(stdout, "x_star = {}", format_vector(&opt.x_star))?;
            writeln!(stdout, "lambda_star = {}", format_vector(&opt.lambda_star))?;
            writeln!(
                stdout,
                "kkt_residual = {:.16e}",
                kkt_residual(&loaded.problem, &opt)
            )?;
            Ok(true)
        }
        Command::Simulate { config, flags } => {
            let loaded = load_run(config, flags)?;
            let opt = solve_optimum(&loaded.problem, solve_tol(&loaded.problem))?;
            execute_experiment(&loaded.problem, &opt, &loaded.settings, stdout)
        }
        Command::Bounds { config, flags } => {
            let loaded = load_run(config, flags)?;
            print_bounds(&loaded.problem, &loaded.settings, stdout)?;
            Ok(true)
        }
        Command::Rate { config, flags } => {
            let loaded = load_run(config, flags)?;
            print_rates(&loaded.problem, &loaded.settings, stdout)?;
            Ok(true)
        }
        Command::Reproduce { scenario, flags } => {
            if scenario != REFERENCE_SCENARIO {
                return Err(Error::Param(format!(
                    "unknown scenario `{scenario}` (available: {REFERENCE_SCENARIO})"
                )));
            }
            let settings = RunSettings::merge(&RunFile::default(), flags)?;
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            let (p, opt) = sample_reference_instance(&mut rng)?;
            let mut cfg = reference_config(
                flags.trials.unwrap_or(10_000),
                flags.steps.unwrap_or(DEFAULT_STEPS),
                settings.seed,
            );
            cfg.count_offset_bits = settings.count_offset_bits;
            let settings = RunSettings {
                trials: cfg.trials,
                steps: cfg.steps,
                scheme: cfg.scheme,
                alpha: cfg.alpha,
                l: cfg.l,
                mu: Some(cfg.schedule.mu_star()),
                ..settings
            };
            execute_with_config(&p, &opt, &cfg, &settings, stdout)
        }
    }
}

/// Runs the experiment described by `settings` and writes `msd.csv` +
/// `report.txt` into the output directory.
fn execute_experiment<W: Write>(
    p: &ValidatedProblem,
    opt: &Optimum,
    settings: &RunSettings,
    stdout: &mut W,
) -> Result<bool> {
    let cfg = settings.experiment_config(p)?;
    execute_with_config(p, opt, &cfg, settings, stdout)
}

fn execute_with_config<W: Write>(
    p: &ValidatedProblem,
    opt: &Optimum,
    cfg: &ExperimentConfig,
    settings: &RunSettings,
    stdout: &mut W,
) -> Result<bool> {
    let out = monte_carlo(p, opt, cfg)?;

    let out_dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("msd.csv");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    write_msd_csv(&mut csv, &out)?;
    csv.flush()?;

    let report_path = out_dir.join("report.txt");
    let mut report = BufWriter::new(File::create(&report_path)?);
    write_sidecar(&mut report, cfg, &out)?;
    report.flush()?;

    writeln!(stdout, "wrote {}", csv_path.display())?;
    writeln!(stdout, "wrote {}", report_path.display())?;
    writeln!(
        stdout,
        "rate_total_bits_per_step = {:.16e}",
        out.rates.r_q_bits
    )?;
    let v = &out.violations;
    if v.ok() {
        writeln!(stdout, "violations = none")?;
    } else {
        writeln!(
            stdout,
            "violations = {} msd, {} dde",
            v.msd.len(),
            v.dde.len()
        )?;
    }
    Ok(v.ok())
}

/// CSV of the measured curves and the finite-time floors, one row per step.
pub fn write_msd_csv<W: Write>(w: &mut W, out: &SimulationOutput) -> std::io::Result<()> {
    writeln!(
        w,
        "k,msd_pd,msd_primal,msd_dual,stderr_pd,dde_empirical,\
         bound_msd_pd,bound_msd_primal,bound_msd_dual"
    )?;
    let c = &out.curves;
    for k in 0..c.msd_pd.len() {
        writeln!(
            w,
            "{k},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            c.msd_pd[k],
            c.msd_primal[k],
            c.msd_dual[k],
            c.stderr_pd[k],
            c.dde_empirical[k],
            out.bound_pd[k],
            out.bound_primal[k],
            out.bound_dual[k],
        )?;
    }
    Ok(())
}

fn scheme_label(scheme: Scheme) -> String {
    match scheme {
        Scheme::Passthrough => "passthrough".into(),
        Scheme::ZoomIn => "zoomin".into(),
        Scheme::StaticUniform { range, bits } => match range {
            Some(r) => format!("static(range={r:.16e}, bits={bits})"),
            None => format!("static(bits={bits})"),
        },
    }
}

fn curve_label(kind: CurveKind) -> &'static str {
    match kind {
        CurveKind::Pd => "pd",
        CurveKind::Primal => "primal",
        CurveKind::Dual => "dual",
    }
}

/// The sidecar report: experiment parameters, decay bounds, rates, and the
/// violation listing.
pub fn write_sidecar<W: Write>(
    w: &mut W,
    cfg: &ExperimentConfig,
    out: &SimulationOutput,
) -> std::io::Result<()> {
    writeln!(w, "# experiment")?;
    writeln!(w, "scheme = {}", scheme_label(out.resolved.scheme))?;
    writeln!(w, "l = {}", out.resolved.l)?;
    writeln!(w, "alpha = {:.16e}", out.resolved.alpha)?;
    writeln!(w, "steps = {}", cfg.steps)?;
    writeln!(w, "trials = {}", cfg.trials)?;
    writeln!(w, "base_seed = {}", cfg.base_seed)?;
    writeln!(w, "mu_star = {:.16e}", cfg.schedule.mu_star())?;
    writeln!(w, "count_offset_bits = {}", cfg.count_offset_bits)?;
    writeln!(w)?;

    writeln!(w, "# decay bounds")?;
    match &out.report {
        Some(report) => report.write_text(w)?,
        None => writeln!(w, "decay_bounds = unavailable (non-quadratic utilities)")?,
    }
    writeln!(w)?;

    writeln!(w, "# rates")?;
    writeln!(w, "rate_x_bits_per_step = {:.16e}", out.rates.r_x_bits)?;
    writeln!(
        w,
        "rate_lambda_bits_per_step = {:.16e}",
        out.rates.r_lambda_bits
    )?;
    writeln!(w, "rate_total_bits_per_step = {:.16e}", out.rates.r_q_bits)?;
    writeln!(w, "rate_x_nats_per_step = {:.16e}", out.rates.r_x_nats)?;
    writeln!(
        w,
        "rate_lambda_nats_per_step = {:.16e}",
        out.rates.r_lambda_nats
    )?;
    writeln!(w, "rate_total_nats_per_step = {:.16e}", out.rates.r_q_nats)?;
    writeln!(
        w,
        "offset_surcharge_bits = {}",
        out.rates.offset_surcharge_bits
    )?;
    writeln!(w, "max_offset = {}", out.max_offset)?;
    writeln!(w)?;

    writeln!(w, "# violations")?;
    let v = &out.violations;
    writeln!(w, "msd_violations = {}", v.msd.len())?;
    writeln!(w, "dde_violations = {}", v.dde.len())?;
    writeln!(w, "checked_dde = {}", v.checked_dde)?;
    writeln!(w, "status = {}", if v.ok() { "ok" } else { "VIOLATED" })?;
    for m in &v.msd {
        writeln!(
            w,
            "msd_violation curve={} k={} ln_msd={:.16e} bound={:.16e} stderr_ln={:.16e}",
            curve_label(m.curve),
            m.k,
            m.ln_msd,
            m.bound,
            m.stderr_ln
        )?;
    }
    for d in &v.dde {
        writeln!(
            w,
            "dde_violation curve={} empirical={:.16e} bound={:.16e}",
            curve_label(d.curve),
            d.empirical,
            d.bound
        )?;
    }
    Ok(())
}

/// Computes and prints the decay-rate bound report for a configuration,
/// writing `report.txt`/`report.csv` when an output directory was set
/// explicitly.
fn print_bounds<W: Write>(
    p: &ValidatedProblem,
    settings: &RunSettings,
    stdout: &mut W,
) -> Result<BoundReport> {
    let cfg = settings.experiment_config(p)?;
    let resolved = cfg.resolve(p)?;
    let ledger = synthesized_ledger(p.m(), p.n(), &resolved, cfg.steps)?;
    let rates = rate_summary(&ledger, cfg.steps, None)?;
    if !rates.is_finite() {
        return Err(Error::Param(
            "the passthrough codec has unbounded bit rate, so the rate-based \
             bounds are vacuous; pick the zoomin or static scheme"
                .into(),
        ));
    }
    let opt = solve_optimum(p, solve_tol(p))?;
    let t = build_t_matrix(p, cfg.schedule.mu_star())?;
    let lattice = count_lattice(t.entries(), 1.0, DEFAULT_ENUM_BUDGET)?;
    let report = bound_report(p, &opt, &t, &rates, &lattice)?;

    let mut text = Vec::new();
    report
        .write_text(&mut text)
        .expect("writing to memory cannot fail");
    stdout.write_all(&text)?;

    if let Some(dir) = &settings.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), &text)?;
        let mut csv = Vec::new();
        report
            .write_csv(&mut csv)
            .expect("writing to memory cannot fail");
        fs::write(dir.join("report.csv"), &csv)?;
    }
    Ok(report)
}

/// Prints the bit-rate summary the configuration's codec produces.
fn print_rates<W: Write>(
    p: &ValidatedProblem,
    settings: &RunSettings,
    stdout: &mut W,
) -> Result<()> {
    let cfg = settings.experiment_config(p)?;
    let resolved = cfg.resolve(p)?;
    let ledger = synthesized_ledger(p.m(), p.n(), &resolved, cfg.steps)?;
    let rates = rate_summary(&ledger, cfg.steps, None)?;
    writeln!(stdout, "scheme = {}", scheme_label(resolved.scheme))?;
    writeln!(stdout, "steps = {}", cfg.steps)?;
    writeln!(stdout, "rate_x_bits_per_step = {:.16e}", rates.r_x_bits)?;
    writeln!(
        stdout,
        "rate_lambda_bits_per_step = {:.16e}",
        rates.r_lambda_bits
    )?;
    writeln!(stdout, "rate_total_bits_per_step = {:.16e}", rates.r_q_bits)?;
    writeln!(stdout, "rate_x_nats_per_step = {:.16e}", rates.r_x_nats)?;
    writeln!(
        stdout,
        "rate_lambda_nats_per_step = {:.16e}",
        rates.r_lambda_nats
    )?;
    writeln!(stdout, "rate_total_nats_per_step = {:.16e}", rates.r_q_nats)?;
    Ok(())
}
