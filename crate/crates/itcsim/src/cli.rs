//! Command-line interface: calibrate scenario truths, run simulation studies,
//! and render static reports.
//!
//! Exit codes: 0 success, 2 user or config error, 3 numerical failure,
//! 4 acceptance-band breach in `--check` mode.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    solve_treatment_coefficient, CalibrateError, DEFAULT_CALIBRATION_DRAWS, DEFAULT_SOLVE_TOL,
};
use crate::dgm::{ScenarioConfig, Study};
use crate::harness::{
    all_passed, desk_linear_checks, desk_logistic_checks, full_profile_checks, read_replicates_csv,
    run_study, summarize, truth_ledger, write_replicates_csv, CheckResult, HarnessError,
    PerformanceSummary, Profile, StudySettings, TruthLedger,
};
use crate::linmod::Family;
use crate::report::{render_svg, render_text};
use crate::stream::calibration_rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

const DEFAULT_SEED: u64 = 1;

/// A run configuration file: the scenario plus optional run settings.
/// Bare `ScenarioConfig` JSON is also accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub run: RunDefaults,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
}

/// Stamp written into derived configs so their origin is reconstructible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub engine_version: String,
    pub target_or: f64,
    pub calibration_draws: usize,
    pub calibration_study: String,
}

/// Provenance record for one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub bootstrap: usize,
    pub threads: usize,
    pub out_dir: String,
    pub profile: Profile,
    pub engine_version: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub seed: u64,
    pub version: String,
    pub profile: Profile,
    pub replicates: usize,
    pub bootstrap: usize,
    pub truth: f64,
    pub ledger: TruthLedger,
    pub summaries: Vec<PerformanceSummary>,
}

#[derive(Parser)]
#[command(
    name = "itcsim",
    version,
    about = "Anchored indirect-comparison simulation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute true marginal effects for a scenario; optionally solve the
    /// treatment coefficient for a target marginal odds ratio
    Calibrate {
        /// Scenario (or scenario+run) JSON file
        #[arg(long)]
        config: PathBuf,
        /// Master seed for the calibration draws
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo draws per integral
        #[arg(long)]
        draws: Option<usize>,
        /// Solve for the coefficient inducing this marginal odds ratio in
        /// study 1, then report truths under the solved value
        #[arg(long, value_name = "OR")]
        target_or: Option<f64>,
        /// Directory for the derived config when --target-or is given
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the simulation study and write replicates.csv, summary.json,
    /// and manifest.json
    Simulate {
        /// Scenario (or scenario+run) JSON file
        #[arg(long)]
        config: PathBuf,
        /// Master seed; recorded in every output artifact
        #[arg(long)]
        seed: Option<u64>,
        /// Number of simulation replicates (overrides the profile)
        #[arg(long)]
        replicates: Option<usize>,
        /// Bootstrap resamples per covariate-adjusted estimate
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Worker threads (0 = all cores)
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Study profile: desk (R=200, B=200) or full (R=2000, B=1000)
        #[arg(long)]
        profile: Option<String>,
        /// Evaluate the acceptance bands for the profile and exit 4 on breach
        #[arg(long)]
        check: bool,
    },
    /// Render report.txt and report.svg from a run directory
    Report {
        /// Directory containing replicates.csv and summary.json
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Calibrate {
            config,
            seed,
            draws,
            target_or,
            out,
        } => cmd_calibrate(&config, seed, draws, target_or, &out),
        Command::Simulate {
            config,
            seed,
            replicates,
            bootstrap,
            threads,
            out,
            profile,
            check,
        } => cmd_simulate(
            &config, seed, replicates, bootstrap, threads, &out, profile, check,
        ),
        Command::Report { out } => cmd_report(&out),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    let config: RunConfig = if value.get("scenario").is_some() {
        serde_json::from_value(value).map_err(|e| format!("bad run config: {e}"))?
    } else {
        let scenario: ScenarioConfig =
            serde_json::from_value(value).map_err(|e| format!("bad scenario config: {e}"))?;
        RunConfig {
            scenario,
            run: RunDefaults::default(),
            provenance: None,
        }
    };
    config
        .scenario
        .validate()
        .map_err(|e| format!("config validation failed: {e}"))?;
    Ok(config)
}

fn calibrate_exit(err: &CalibrateError) -> i32 {
    match err {
        CalibrateError::Config(_)
        | CalibrateError::TooFewDraws(_)
        | CalibrateError::InvalidTarget(_) => EXIT_USER,
        CalibrateError::BracketFailure { .. }
        | CalibrateError::NoConvergence(_)
        | CalibrateError::FamilyMismatch(_) => EXIT_NUMERIC,
    }
}

#[derive(Serialize)]
struct CalibrateOutput<'a> {
    seed: u64,
    version: &'a str,
    draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_or: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solved_beta_t: Option<f64>,
    ledger: TruthLedger,
}

fn cmd_calibrate(
    config_path: &Path,
    seed: Option<u64>,
    draws: Option<usize>,
    target_or: Option<f64>,
    out: &Path,
) -> i32 {
    let run_config = match load_config(config_path) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USER;
        }
    };
    let seed = seed.or(run_config.run.seed).unwrap_or(DEFAULT_SEED);
    let draws = draws.unwrap_or(DEFAULT_CALIBRATION_DRAWS);

    let mut scenario = run_config.scenario.clone();
    let mut solved_beta_t = None;
    if let Some(target) = target_or {
        match solve_treatment_coefficient(
            &scenario,
            Study::S1,
            target,
            draws,
            DEFAULT_SOLVE_TOL,
            &mut calibration_rng(seed, 100),
        ) {
            Ok(beta_t) => {
                scenario.beta_t = beta_t;
                solved_beta_t = Some(beta_t);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return calibrate_exit(&e);
            }
        }
    }

    let ledger = match truth_ledger(&scenario, draws, seed) {
        Ok(l) => l,
        Err(HarnessError::Calibrate(e)) => {
            eprintln!("error: {e}");
            return calibrate_exit(&e);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USER;
        }
    };

    let output = CalibrateOutput {
        seed,
        version: crate::ENGINE_VERSION,
        draws,
        target_or,
        solved_beta_t,
        ledger,
    };
    println!("{}", serde_json::to_string_pretty(&output).unwrap());

    if let Some(target) = target_or {
        let derived = RunConfig {
            scenario,
            run: run_config.run.clone(),
            provenance: Some(Provenance {
                master_seed: seed,
                engine_version: crate::ENGINE_VERSION.to_string(),
                target_or: target,
                calibration_draws: draws,
                calibration_study: "S1".to_string(),
            }),
        };
        if let Err(e) = fs::create_dir_all(out) {
            eprintln!("error: cannot create {}: {e}", out.display());
            return EXIT_USER;
        }
        let path = out.join("calibrated_config.json");
        let body = serde_json::to_string_pretty(&derived).unwrap() + "\n";
        if let Err(e) = fs::write(&path, body) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_USER;
        }
        eprintln!("wrote {}", path.display());
    }
    EXIT_OK
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
    bootstrap: Option<usize>,
    threads: Option<usize>,
    out: &Path,
    profile: Option<String>,
    check: bool,
) -> i32 {
    let run_config = match load_config(config_path) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USER;
        }
    };

    let profile = match profile {
        Some(name) => match Profile::parse(&name) {
            Some(p) => p,
            None => {
                eprintln!("error: unknown profile `{name}` (expected desk or full)");
                return EXIT_USER;
            }
        },
        None => run_config.run.profile.unwrap_or(Profile::Desk),
    };
    let resolved_replicates = replicates
        .or(run_config.run.replicates)
        .or(profile.replicates());
    let resolved_bootstrap = bootstrap
        .or(run_config.run.bootstrap)
        .or(profile.bootstrap());
    let (replicates, bootstrap) = match (resolved_replicates, resolved_bootstrap) {
        (Some(r), Some(b)) if r > 0 => (r, b),
        _ => {
            eprintln!("error: the custom profile needs explicit --replicates and --bootstrap");
            return EXIT_USER;
        }
    };
    // Record `custom` whenever the effective sizes deviate from the profile.
    let effective_profile = if Some(replicates) == profile.replicates()
        && Some(bootstrap) == profile.bootstrap()
    {
        profile
    } else {
        Profile::Custom
    };
    let seed = seed.or(run_config.run.seed).unwrap_or(DEFAULT_SEED);
    let threads = threads.or(run_config.run.threads).unwrap_or(0);

    let mut settings = StudySettings::new(seed, replicates, bootstrap);
    settings.threads = threads;
    settings.progress = true;

    let result = match run_study(&run_config.scenario, &settings) {
        Ok(r) => r,
        Err(HarnessError::Config(e)) => {
            eprintln!("error: {e}");
            return EXIT_USER;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    let truth = result.ledger.estimand;
    let summaries = summarize(&result.records, truth);

    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_USER;
    }
    let write_all = || -> Result<(), String> {
        let file = fs::File::create(out.join("replicates.csv")).map_err(|e| e.to_string())?;
        write_replicates_csv(file, &result.records, seed).map_err(|e| e.to_string())?;

        let summary = SummaryFile {
            seed,
            version: crate::ENGINE_VERSION.to_string(),
            profile: effective_profile,
            replicates,
            bootstrap,
            truth,
            ledger: result.ledger,
            summaries: summaries.clone(),
        };
        let body = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())? + "\n";
        fs::write(out.join("summary.json"), body).map_err(|e| e.to_string())?;

        let manifest = RunManifest {
            config_path: config_path.display().to_string(),
            master_seed: seed,
            replicates,
            bootstrap,
            threads,
            out_dir: out.display().to_string(),
            profile: effective_profile,
            engine_version: crate::ENGINE_VERSION.to_string(),
        };
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())? + "\n";
        fs::write(out.join("manifest.json"), body).map_err(|e| e.to_string())?;
        Ok(())
    };
    if let Err(msg) = write_all() {
        eprintln!("error: cannot write outputs to {}: {msg}", out.display());
        return EXIT_USER;
    }

    print!("{}", render_text(&summaries, seed, truth));

    if check {
        let checks = match (effective_profile, run_config.scenario.family) {
            (Profile::Desk, Family::Logistic) => desk_logistic_checks(&summaries, replicates),
            (Profile::Desk, Family::Linear) => desk_linear_checks(&summaries, replicates),
            (Profile::Full, family) => full_profile_checks(&summaries, family, replicates),
            (Profile::Custom, _) => {
                eprintln!("error: --check needs the desk or full profile");
                return EXIT_USER;
            }
        };
        print_checks(&checks);
        if !all_passed(&checks) {
            return EXIT_CHECK;
        }
    }
    EXIT_OK
}

fn print_checks(checks: &[CheckResult]) {
    for c in checks {
        println!(
            "check {:<18} {} ({})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
}

fn cmd_report(out: &Path) -> i32 {
    let csv_path = out.join("replicates.csv");
    let rows = match fs::File::open(&csv_path)
        .map_err(|e| format!("cannot open {}: {e}", csv_path.display()))
        .and_then(|f| read_replicates_csv(f).map_err(|e| e.to_string()))
    {
        Ok(rows) => rows,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USER;
        }
    };

    let summary_path = out.join("summary.json");
    let summary: SummaryFile = match fs::read_to_string(&summary_path)
        .map_err(|e| format!("cannot read {}: {e}", summary_path.display()))
        .and_then(|text| {
            serde_json::from_str(&text).map_err(|e| format!("bad summary.json: {e}"))
        }) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USER;
        }
    };

    let text = render_text(&summary.summaries, summary.seed, summary.truth);
    let svg = render_svg(&rows, summary.seed, summary.truth);
    if let Err(e) = fs::write(out.join("report.txt"), &text) {
        eprintln!("error: cannot write report.txt: {e}");
        return EXIT_USER;
    }
    if let Err(e) = fs::write(out.join("report.svg"), &svg) {
        eprintln!("error: cannot write report.svg: {e}");
        return EXIT_USER;
    }
    print!("{text}");
    EXIT_OK
}
