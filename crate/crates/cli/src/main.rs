//! `nvsim`: calibration, protocol programs, sweeps and analyses from the
//! command line.
//!
//! Exit codes: 0 success, 2 usage, 3 input that fails to load, parse or
//! validate, 4 failure while simulating or writing results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nvsim::analysis::fidelity::{exact_division, optimize_division, optimize_window, optimize_window_exact, simulate_timestamps};
use nvsim::analysis::spectrum::{esr_spectrum, exact_esr_spectrum, fit_gaussians, line_grid, line_positions, EsrSettings};
use nvsim::config::{load_targets, SimConfig};
use nvsim::dynamics::{calibrate, exact_count_distribution, CalibrationTargets, Drive, RateModel};
use nvsim::protocols::experiments::two_qubit_experiment;
use nvsim::protocols::export::{csv_string, pixel_rows, XyRow};
use nvsim::protocols::oracle::{Oracle, TwoQubitPlan};
use nvsim::protocols::Setup;
use nvsim::register::{Ms, NuclearConfig, RegisterState};
use nvsim::sequencer::{parse_duration, parse_frequency, parse_power, parse_program, run_program, RunOptions};
use nvsim::Error;

const EXIT_VALIDATION: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "nvsim", version, about = "NV-centre spin-register readout simulator")]
struct Cli {
    /// Master seed of all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of shots (per preparation, per pixel or per point).
    #[arg(long, global = true)]
    shots: Option<usize>,
    /// Model file; a positional model argument takes precedence.
    #[arg(long, global = true, env = "NVSIM_MODEL")]
    model: Option<PathBuf>,
    /// Output file (or directory for `run`); stdout when absent.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Reject MW carriers more than 5 linewidths from every line.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizeMode {
    Window,
    Division,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Ms0,
    #[value(name = "ms-1")]
    MsMinus,
    #[value(name = "ms+1")]
    MsPlus,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the rate model to a targets file and write a model file.
    Calibrate { targets: PathBuf },
    /// Run a sequence program; writes a shot table and a JSON summary.
    Run {
        program: PathBuf,
        #[arg(value_name = "MODEL")]
        model_file: Option<PathBuf>,
    },
    /// Two-qubit RF × MW grid; writes a pixel table.
    Sweep {
        #[arg(value_name = "MODEL")]
        model_file: Option<PathBuf>,
        #[arg(long, default_value = "100us")]
        rf_max: String,
        #[arg(long, default_value_t = 21)]
        rf_steps: usize,
        #[arg(long, default_value = "1us")]
        mw_max: String,
        #[arg(long, default_value_t = 5)]
        mw_steps: usize,
    },
    /// Readout window/threshold or two-segment division search.
    Optimize {
        #[arg(value_name = "MODEL")]
        model_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "window")]
        mode: OptimizeMode,
        /// Total illumination of the two-segment readout.
        #[arg(long, default_value = "100us")]
        total: String,
    },
    /// Pulsed ESR scan; writes `x, y, y_err` rows (`y_err` is one standard error).
    Spectrum {
        #[arg(value_name = "MODEL")]
        model_file: Option<PathBuf>,
        /// Herald this configuration first, e.g. `-1` or `-1,+1,+1`.
        #[arg(long, allow_hyphen_values = true)]
        herald: Option<String>,
        #[arg(long, default_value_t = 2)]
        reps: u32,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long, default_value = "0.05MHz")]
        step: String,
        /// Also fit Gaussians at the known line positions (JSON on stderr).
        #[arg(long)]
        fit: bool,
    },
    /// Exact detected-count distribution of one readout window.
    Oracle {
        #[arg(value_name = "MODEL")]
        model_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ms0")]
        state: StateArg,
        #[arg(long, default_value = "100us")]
        duration: String,
        #[arg(long)]
        power: Option<String>,
        #[arg(long, default_value_t = 40)]
        n_max: usize,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::TomlDe(_)
            | Error::Ambiguous { .. }
            | Error::NoSuchLine(_) => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_model(positional: Option<&Path>, flag: Option<&Path>) -> CliResult<SimConfig> {
    match positional.or(flag) {
        Some(p) => Ok(SimConfig::load(p)?),
        None => {
            eprintln!("note: no model given; using the built-in calibration");
            let cal = calibrate(&CalibrationTargets::default(), &RateModel::default())?;
            Ok(SimConfig { rates: cal.model, ..SimConfig::default() })
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Failure::Runtime(e.to_string()))
}

fn parse_herald(text: &str) -> CliResult<NuclearConfig> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Failure::Validation(format!("herald must be `n14` or `n14,c1,c2` with values in -1, 0, +1; got {text:?}"));
    let v: Vec<i8> = parts.iter().map(|p| p.parse::<i8>().map_err(|_| bad())).collect::<CliResult<_>>()?;
    match v.as_slice() {
        [n] => Ok(NuclearConfig::n14(*n)),
        [n, a, b] => Ok(NuclearConfig::new(*n, *a, *b)),
        _ => Err(bad()),
    }
}

fn grid(max: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![max];
    }
    (0..steps).map(|i| max * i as f64 / (steps - 1) as f64).collect()
}

fn run(cli: Cli) -> CliResult<()> {
    let out = cli.out.as_deref();
    let seed = cli.seed;
    match &cli.command {
        Command::Calibrate { targets } => {
            let t = load_targets(targets)?;
            let cal = calibrate(&t, &RateModel::default())?;
            for r in &cal.residuals {
                eprintln!("{:<14} target {:>10.5} achieved {:>10.5}", r.name, r.target, r.achieved);
            }
            let cfg = SimConfig { rates: cal.model, ..SimConfig::default() };
            emit(out, &cfg.to_toml()?)
        }
        Command::Run { program, model_file } => {
            let src = std::fs::read_to_string(program)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", program.display())))?;
            let prog = parse_program(&src).map_err(|e| match e {
                Error::Parse { line, column, message } => Failure::Validation(format!("{}:{line}:{column}: {message}", program.display())),
                other => other.into(),
            })?;
            let cfg = load_model(model_file.as_deref(), cli.model.as_deref())?;
            let setup = Setup::new(&cfg.rates, &cfg.hyperfine, &cfg.protocol);
            let n = cli.shots.or(prog.n_shots).unwrap_or(1000);
            let seed = seed.or(prog.seed).unwrap_or(0);
            let table = run_program(&prog, &setup, n, seed, RunOptions { threads: cli.threads, strict: cli.strict })?;
            let csv = table.to_csv()?;
            let summary = json(&table.summary())?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
                    emit(Some(&dir.join("shots.csv")), &csv)?;
                    emit(Some(&dir.join("summary.json")), &summary)
                }
                None => {
                    eprint!("{summary}");
                    emit(None, &csv)
                }
            }
        }
        Command::Sweep { model_file, rf_max, rf_steps, mw_max, mw_steps } => {
            let cfg = load_model(model_file.as_deref(), cli.model.as_deref())?;
            let setup = Setup::new(&cfg.rates, &cfg.hyperfine, &cfg.protocol);
            let rf = grid(parse_duration(rf_max)?, *rf_steps);
            let mw = grid(parse_duration(mw_max)?, *mw_steps);
            let table = two_qubit_experiment(&setup, &rf, &mw, cli.shots.unwrap_or(200), seed.unwrap_or(0))?;
            let oracle = Oracle::new(&cfg.rates, &cfg.hyperfine);
            let plan = TwoQubitPlan::new(&oracle, &setup)?;
            emit(out, &csv_string(&pixel_rows(&table, &oracle, &plan)?)?)
        }
        Command::Optimize { model_file, mode, total } => {
            let cfg = load_model(model_file.as_deref(), cli.model.as_deref())?;
            let setup = Setup::new(&cfg.rates, &cfg.hyperfine, &cfg.protocol);
            let n = cli.shots.unwrap_or(10_000);
            let seed = seed.unwrap_or(0);
            match mode {
                OptimizeMode::Window => {
                    let durations: Vec<f64> = (1..=20).map(|k| 5.0 * k as f64).collect();
                    let thresholds = [1, 2, 3, 4];
                    let rec = simulate_timestamps(&setup, 100.0, n, seed);
                    let report = optimize_window(&rec, &durations, &thresholds)?;
                    let (d, t, f) = optimize_window_exact(&setup, &durations, &thresholds)?;
                    let c = report.optimizer.expect("window search sets a choice");
                    eprintln!(
                        "window {} us, threshold {}: F_avg = {:.4} ± {:.4} (exact optimum {d} us, threshold {t}, F_avg {f:.4})",
                        c.duration, c.threshold, report.f_avg.value, report.f_avg.half_width
                    );
                    let v = serde_json::json!({ "monte_carlo": report, "exact": { "duration": d, "threshold": t, "f_avg": f } });
                    emit(out, &json(&v)?)
                }
                OptimizeMode::Division => {
                    let total = parse_duration(total)?;
                    let divisions: Vec<f64> = (1..=40).map(|k| 0.5 * k as f64).filter(|d| *d <= total).collect();
                    let rec = simulate_timestamps(&setup, total, n, seed);
                    let report = optimize_division(&rec, &divisions, cfg.protocol.readout_threshold)?;
                    let (f1, f2, same) = exact_division(&setup, report.division, total, cfg.protocol.readout_threshold)?;
                    eprintln!(
                        "division {} us: F_R1 = {:.4}, F_R2 = {:.4}, P(identical) = {:.4} (exact {f1:.4}, {f2:.4}, {same:.4})",
                        report.division, report.r1.f_avg.value, report.r2.f_avg.value, report.p_identical.value
                    );
                    let v = serde_json::json!({ "monte_carlo": report, "exact": { "f_r1": f1, "f_r2": f2, "p_identical": same } });
                    emit(out, &json(&v)?)
                }
            }
        }
        Command::Spectrum { model_file, herald, reps, from, to, step, fit } => {
            let cfg = load_model(model_file.as_deref(), cli.model.as_deref())?;
            let setup = Setup::new(&cfg.rates, &cfg.hyperfine, &cfg.protocol);
            let target = herald.as_deref().map(parse_herald).transpose()?;
            let settings = EsrSettings::new(&setup, target.map(|t| (t, *reps)));
            let freqs = match (from, to) {
                (Some(a), Some(b)) => {
                    let (a, b, s) = (parse_frequency(a)?, parse_frequency(b)?, parse_frequency(step)?);
                    if !(s > 0.0 && b >= a) {
                        return Err(Failure::Validation("need --from <= --to and a positive --step".into()));
                    }
                    let n = ((b - a) / s).floor() as usize;
                    (0..=n).map(|k| a + s * k as f64).collect()
                }
                (None, None) => line_grid(&cfg.hyperfine, None, &[-1.0, -0.5, 0.0, 0.5, 1.0], 40),
                _ => return Err(Failure::Validation("give both --from and --to, or neither".into())),
            };
            let sp = esr_spectrum(&setup, &settings, &freqs, cli.shots.unwrap_or(500), seed.unwrap_or(0))?;
            let (y, e) = (sp.values(), sp.errors());
            if *fit {
                let lines = line_positions(&cfg.hyperfine, target, None);
                let f = fit_gaussians(&freqs, &y, &e, &lines, cfg.hyperfine.linewidth)?;
                let exact = exact_esr_spectrum(&setup, &settings, &freqs)?;
                let fe = fit_gaussians(&freqs, &exact, &e, &lines, cfg.hyperfine.linewidth)?;
                eprint!("{}", json(&serde_json::json!({ "monte_carlo": f, "exact": fe }))?);
            }
            let rows: Vec<XyRow> = freqs
                .iter()
                .zip(y.iter().zip(&e))
                .map(|(&x, (&y, &s))| XyRow { x, y, y_err: s })
                .collect();
            emit(out, &csv_string(&rows)?)
        }
        Command::Oracle { model_file, state, duration, power, n_max } => {
            let cfg = load_model(model_file.as_deref(), cli.model.as_deref())?;
            let ms = match state {
                StateArg::Ms0 => Ms::Zero,
                StateArg::MsMinus => Ms::Minus,
                StateArg::MsPlus => Ms::Plus,
            };
            let power = power.as_deref().map(parse_power).transpose()?.unwrap_or(cfg.protocol.readout_power);
            let s0 = RegisterState::ground(ms, cfg.hyperfine.configs()[0]);
            let d = exact_count_distribution(&cfg.rates, cfg.hyperfine.active_nuclei, &s0, &Drive::ex(power), parse_duration(duration)?, *n_max)?;
            if let Some(w) = &d.warning {
                eprintln!("warning: {w}");
            }
            let mut text = String::from("count,probability\n");
            for (k, p) in d.probs.iter().enumerate() {
                writeln!(text, "{k},{p}").expect("string write");
            }
            emit(out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(Failure::Runtime(format!("thread pool: {e}"))),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
