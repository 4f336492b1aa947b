//! Command-line front end: simulation traces, staircase sweeps, resolution
//! tables, architecture comparison and a three-way cross-validation command.
//!
//! Exit codes: 0 success, 2 configuration error, 3 no oscillation detected,
//! 4 validation failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use relaylock::ct_equiv;
use relaylock::experiment::{self, ArchConfig};
use relaylock::loop_sim::{self, Architecture, LockRatio, LoopConfig};
use relaylock::resolution::{self, ResolutionRow, ResolutionTable};
use relaylock::resonator::StateVector;
use relaylock::staircase::{self, SweepPolicy, SweepSpec};
use relaylock::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_OSCILLATION: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Error carrying the process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoOscillation => EXIT_NO_OSCILLATION,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("io error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "relaylock",
    about = "Mixed-signal relay-feedback resonant oscillator toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration, write the trace, print the period summary.
    Simulate(CommonArgs),
    /// Sweep omega0 and emit the devil's-staircase dataset.
    Staircase(CommonArgs),
    /// Compute the analytical resolution table (step bounds).
    Resolution(CommonArgs),
    /// Compare differentiator and PDO resolution side by side.
    Compare(CommonArgs),
    /// Cross-check simulation, time-domain and harmonic-series analysis.
    Validate(CommonArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Flat key=value configuration file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture: differentiator | pdo.
    #[arg(long)]
    arch: Option<String>,
    /// Resonance frequency, Hz.
    #[arg(long)]
    f0: Option<f64>,
    /// Quality factor.
    #[arg(long)]
    q: Option<f64>,
    /// Sampling ratio Fs/F0.
    #[arg(long)]
    oversampling: Option<f64>,
    /// Filter order (delay in samples).
    #[arg(long)]
    m: Option<u32>,
    /// DAC pulse divisor M (1 = zero-order hold).
    #[arg(long = "big-m")]
    big_m: Option<u32>,
    /// Loop polarity override: +1 or -1.
    #[arg(long, allow_hyphen_values = true)]
    feedback_sign: Option<i32>,
    /// Initial displacement.
    #[arg(long, allow_hyphen_values = true)]
    initial_w: Option<f64>,
    /// Initial velocity.
    #[arg(long, allow_hyphen_values = true)]
    initial_v: Option<f64>,
    /// Number of sweep points.
    #[arg(long)]
    points: Option<usize>,
    /// Sweep half-range around nominal, percent.
    #[arg(long)]
    range_pct: Option<f64>,
    /// Sweep policy: fixed | continuation.
    #[arg(long)]
    policy: Option<String>,
    /// Measurement window, samples.
    #[arg(long)]
    window: Option<usize>,
    /// Comma-separated m values for resolution/compare tables.
    #[arg(long)]
    m_values: Option<String>,
    /// Comma-separated M values for the resolution table.
    #[arg(long)]
    big_m_values: Option<String>,
    /// Validation tolerance on the normalized harmonic-series residual.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv | json.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Csv,
    Json,
}

/// Fully resolved run configuration: defaults, then config file, then flags.
struct RunConfig {
    arch: Architecture,
    m: u32,
    big_m: u32,
    f0: f64,
    q_factor: f64,
    oversampling: f64,
    feedback_sign: Option<i32>,
    initial_state: StateVector,
    points: usize,
    range_pct: f64,
    policy: SweepPolicy,
    window: usize,
    m_values: Vec<u32>,
    big_m_values: Option<Vec<u32>>,
    tolerance: f64,
    out: Option<PathBuf>,
    format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Pdo,
            m: 2,
            big_m: 1,
            f0: experiment::DEFAULT_F0,
            q_factor: experiment::DEFAULT_Q,
            oversampling: experiment::DEFAULT_OVERSAMPLING,
            feedback_sign: None,
            initial_state: LoopConfig::DEFAULT_KICK,
            points: 200,
            range_pct: 5.0,
            policy: SweepPolicy::Fixed,
            window: staircase::DEFAULT_WINDOW,
            m_values: vec![1, 2, 3],
            big_m_values: None,
            tolerance: 1e-6,
            out: None,
            format: OutputFormat::Csv,
        }
    }
}

fn parse_field<T: FromStr>(field: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::config(format!("invalid value for `{field}`: {e}")))
}

fn parse_u32_list(field: &str, value: &str) -> CliResult<Vec<u32>> {
    value
        .split(',')
        .map(|s| parse_field(field, s.trim()))
        .collect()
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "arch" => self.arch = value.parse()?,
            "m" => self.m = parse_field(key, value)?,
            "big_m" | "M" => self.big_m = parse_field(key, value)?,
            "f0" => self.f0 = parse_field(key, value)?,
            "q" | "q_factor" => self.q_factor = parse_field(key, value)?,
            "oversampling" => self.oversampling = parse_field(key, value)?,
            "feedback_sign" => self.feedback_sign = Some(parse_field(key, value)?),
            "initial_w" => self.initial_state.w = parse_field(key, value)?,
            "initial_v" => self.initial_state.v = parse_field(key, value)?,
            "points" => self.points = parse_field(key, value)?,
            "range_pct" => self.range_pct = parse_field(key, value)?,
            "policy" => self.policy = value.parse()?,
            "window" => self.window = parse_field(key, value)?,
            "m_values" => self.m_values = parse_u32_list(key, value)?,
            "big_m_values" => self.big_m_values = Some(parse_u32_list(key, value)?),
            "tolerance" => self.tolerance = parse_field(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => {
                self.format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => {
                        return Err(CliError::config(format!(
                            "invalid value for `format`: unknown format `{other}`"
                        )))
                    }
                }
            }
            other => return Err(CliError::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &PathBuf) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config `{}`: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                CliError::config(format!("{}:{}: {}", path.display(), lineno + 1, e.message))
            })?;
        }
        Ok(())
    }

    fn from_args(args: &CommonArgs) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &args.config {
            cfg.load_file(path)?;
        }
        if let Some(v) = &args.arch {
            cfg.arch = v.parse()?;
        }
        if let Some(v) = args.f0 {
            cfg.f0 = v;
        }
        if let Some(v) = args.q {
            cfg.q_factor = v;
        }
        if let Some(v) = args.oversampling {
            cfg.oversampling = v;
        }
        if let Some(v) = args.m {
            cfg.m = v;
        }
        if let Some(v) = args.big_m {
            cfg.big_m = v;
        }
        if let Some(v) = args.feedback_sign {
            cfg.feedback_sign = Some(v);
        }
        if let Some(v) = args.initial_w {
            cfg.initial_state.w = v;
        }
        if let Some(v) = args.initial_v {
            cfg.initial_state.v = v;
        }
        if let Some(v) = args.points {
            cfg.points = v;
        }
        if let Some(v) = args.range_pct {
            cfg.range_pct = v;
        }
        if let Some(v) = &args.policy {
            cfg.policy = v.parse()?;
        }
        if let Some(v) = args.window {
            cfg.window = v;
        }
        if let Some(v) = &args.m_values {
            cfg.m_values = parse_u32_list("m_values", v)?;
        }
        if let Some(v) = &args.big_m_values {
            cfg.big_m_values = Some(parse_u32_list("big_m_values", v)?);
        }
        if let Some(v) = args.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = &args.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = &args.format {
            cfg.set("format", v)?;
        }
        cfg.validated()
    }

    fn validated(self) -> CliResult<Self> {
        self.arch_config().validate()?;
        Ok(self)
    }

    fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            arch: self.arch,
            m: self.m,
            big_m: self.big_m,
            f0: self.f0,
            q_factor: self.q_factor,
            oversampling: self.oversampling,
            feedback_sign: self
                .feedback_sign
                .unwrap_or_else(|| self.arch.default_feedback_sign()),
            plant_gain: 1.0,
        }
    }

    fn write_output(&self, content: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => std::fs::write(path, content)?,
            None => print!("{content}"),
        }
        Ok(())
    }
}

/// 17-significant-digit float, round-trip exact for f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn ratio_fields(ratio: Option<LockRatio>) -> (String, String) {
    match ratio {
        Some(r) => (r.num.to_string(), r.den.to_string()),
        None => (String::new(), String::new()),
    }
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let arch_cfg = cfg.arch_config();
    let lc = arch_cfg.loop_config(arch_cfg.nominal_omega0(), cfg.initial_state, cfg.window)?;
    let trace = loop_sim::simulate(&lc)?;
    let measurement = loop_sim::measure_period(&trace, lc.transient_skip, cfg.window)?;

    match cfg.format {
        OutputFormat::Csv => {
            let mut out = String::from("n,t_s,w,sign,u\n");
            for n in 0..trace.signs.len() {
                let _ = writeln!(
                    out,
                    "{n},{},{},{},{}",
                    fmt_f64(n as f64 * trace.ts),
                    fmt_f64(trace.sampled_w[n]),
                    trace.signs[n],
                    fmt_f64(trace.u[n]),
                );
            }
            cfg.write_output(&out)?;
        }
        OutputFormat::Json => {
            let rows: Vec<_> = (0..trace.signs.len())
                .map(|n| {
                    json!({
                        "n": n,
                        "t_s": n as f64 * trace.ts,
                        "w": trace.sampled_w[n],
                        "sign": trace.signs[n],
                        "u": trace.u[n],
                    })
                })
                .collect();
            cfg.write_output(&format!("{}\n", json!({ "trace": rows })))?;
        }
    }

    let (num, den) = ratio_fields(measurement.lock_ratio);
    eprintln!("mean_period_s = {}", fmt_f64(measurement.mean_period));
    eprintln!(
        "lock_ratio = {}",
        if measurement.locked {
            format!("{num}/{den}")
        } else {
            "none".to_string()
        }
    );
    eprintln!("jitter_s = {}", fmt_f64(measurement.jitter));
    Ok(())
}

fn staircase_csv(ds: &staircase::StaircaseDataset) -> String {
    let mut out = String::from("omega0,omega0_sq,period_s,ratio_num,ratio_den,locked\n");
    for row in &ds.rows {
        let (num, den) = ratio_fields(row.ratio);
        let period = row.mean_period.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{period},{num},{den},{}",
            fmt_f64(row.omega0),
            fmt_f64(row.omega0 * row.omega0),
            row.locked,
        );
    }
    out
}

fn staircase_json(ds: &staircase::StaircaseDataset) -> String {
    let rows: Vec<_> = ds
        .rows
        .iter()
        .map(|row| {
            json!({
                "omega0": row.omega0,
                "omega0_sq": row.omega0 * row.omega0,
                "period_s": row.mean_period,
                "ratio_num": row.ratio.map(|r| r.num),
                "ratio_den": row.ratio.map(|r| r.den),
                "locked": row.locked,
            })
        })
        .collect();
    format!("{}\n", json!({ "rows": rows, "anomalies": ds.anomalies }))
}

fn cmd_staircase(cfg: &RunConfig) -> CliResult<()> {
    let mut spec = SweepSpec::around_nominal(cfg.arch_config(), cfg.range_pct, cfg.points);
    spec.policy = cfg.policy;
    spec.window = cfg.window;
    spec.initial_state = cfg.initial_state;
    let ds = staircase::staircase_sweep(&spec)?;
    let content = match cfg.format {
        OutputFormat::Csv => staircase_csv(&ds),
        OutputFormat::Json => staircase_json(&ds),
    };
    cfg.write_output(&content)
}

fn resolution_csv_row(row: &ResolutionRow) -> String {
    let cfg = &row.cfg;
    let (lo, hi, width, rel) = match &row.bounds {
        Ok(sb) => (
            fmt_f64(sb.omega_low),
            fmt_f64(sb.omega_high),
            fmt_f64(sb.width()),
            fmt_f64(sb.relative_width()),
        ),
        Err(_) => Default::default(),
    };
    format!(
        "{},{},{},{},{},{},{lo},{hi},{width},{rel},{}\n",
        cfg.arch,
        cfg.m,
        cfg.big_m,
        fmt_f64(cfg.q_factor),
        fmt_f64(cfg.oversampling),
        row.n_lock,
        row.status(),
    )
}

fn resolution_csv(table: &ResolutionTable) -> String {
    let mut out =
        String::from("arch,m,M,Q,oversampling,N,omega_low,omega_high,width,relative_width,status\n");
    for row in &table.rows {
        out.push_str(&resolution_csv_row(row));
    }
    out
}

fn resolution_json(table: &ResolutionTable) -> String {
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|row| {
            let bounds = row.bounds.as_ref().ok();
            json!({
                "arch": row.cfg.arch.to_string(),
                "m": row.cfg.m,
                "M": row.cfg.big_m,
                "Q": row.cfg.q_factor,
                "oversampling": row.cfg.oversampling,
                "N": row.n_lock,
                "omega_low": bounds.map(|b| b.omega_low),
                "omega_high": bounds.map(|b| b.omega_high),
                "width": bounds.map(|b| b.width()),
                "relative_width": bounds.map(|b| b.relative_width()),
                "status": row.status(),
            })
        })
        .collect();
    format!("{}\n", json!({ "rows": rows }))
}

fn cmd_resolution(cfg: &RunConfig) -> CliResult<()> {
    let base = cfg.arch_config();
    let table = match &cfg.big_m_values {
        Some(big_ms) => resolution::curve_over_big_m(&base, big_ms),
        None => resolution::curve_over_m(&base, &cfg.m_values),
    };
    let content = match cfg.format {
        OutputFormat::Csv => resolution_csv(&table),
        OutputFormat::Json => resolution_json(&table),
    };
    cfg.write_output(&content)
}

fn cmd_compare(cfg: &RunConfig) -> CliResult<()> {
    let base = cfg.arch_config();
    let report = resolution::compare_architectures(&base, &cfg.m_values);
    let content = match cfg.format {
        OutputFormat::Csv => {
            let mut out =
                String::from("m,differentiator_relative_width,pdo_relative_width,better\n");
            for row in &report.rows {
                let diff = row
                    .differentiator
                    .bounds
                    .as_ref()
                    .map(|b| fmt_f64(b.relative_width()))
                    .unwrap_or_default();
                let pdo = row
                    .pdo
                    .bounds
                    .as_ref()
                    .map(|b| fmt_f64(b.relative_width()))
                    .unwrap_or_default();
                let _ = writeln!(out, "{},{diff},{pdo},{}", row.m, row.verdict());
            }
            out
        }
        OutputFormat::Json => {
            let rows: Vec<_> = report
                .rows
                .iter()
                .map(|row| {
                    json!({
                        "m": row.m,
                        "differentiator_relative_width":
                            row.differentiator.bounds.as_ref().ok().map(|b| b.relative_width()),
                        "pdo_relative_width":
                            row.pdo.bounds.as_ref().ok().map(|b| b.relative_width()),
                        "better": row.verdict().to_string(),
                    })
                })
                .collect();
            format!("{}\n", json!({ "rows": rows }))
        }
    };
    cfg.write_output(&content)
}

/// Three-way cross-check at the midpoint of the dominant step: the simulated
/// lock, the time-domain period interval, and the harmonic-series residual
/// must all agree.
fn cmd_validate(cfg: &RunConfig) -> CliResult<()> {
    let arch_cfg = cfg.arch_config();
    let n_lock = arch_cfg.dominant_lock();
    let sb = resolution::step_bounds(&arch_cfg, n_lock)?;
    let mid = 0.5 * (sb.omega_low + sb.omega_high);
    let ts = arch_cfg.ts();
    let mut all_ok = true;
    let mut report = String::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        let _ = writeln!(report, "{}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // 1. The mixed-signal simulation locks at exactly 2N*Ts at the midpoint.
    let lc = arch_cfg.loop_config(mid, cfg.initial_state, cfg.window)?;
    let trace = loop_sim::simulate(&lc)?;
    let m = loop_sim::measure_period(&trace, lc.transient_skip, cfg.window)?;
    let want = LockRatio {
        num: 2 * n_lock as u64,
        den: 1,
    };
    check(
        "simulation locks at the dominant even ratio",
        m.locked && m.lock_ratio == Some(want),
        format!("ratio = {:?}, want {}/1", m.lock_ratio, want.num),
    );

    // 2. The lock period lies in the interval spanned by the continuous
    //    equivalent at the two extreme delays.
    let lp = arch_cfg.equivalent_loop(mid, 0.0)?;
    let interval = ct_equiv::period_interval(&lp)?;
    check(
        "2N*Ts lies in [T0, T1]",
        interval.contains(sb.t_target, 1e-9 * ts),
        format!(
            "T0 = {}, T1 = {}, 2N*Ts = {}",
            fmt_f64(interval.t0()),
            fmt_f64(interval.t1()),
            fmt_f64(sb.t_target)
        ),
    );

    // 3. The harmonic-series residual at the time-domain period is small
    //    relative to the first-harmonic amplitude.
    let hamel = ct_equiv::hamel_period(&lp, ct_equiv::lock_bracket(n_lock, ts))?;
    let residual = ct_equiv::tsypkin_residual(&lp, hamel.period, 10_000)?.abs();
    let scale = ct_equiv::tsypkin_first_harmonic(&lp, hamel.period)?;
    check(
        "harmonic-series residual below tolerance",
        residual <= cfg.tolerance * scale,
        format!(
            "|residual| = {}, tolerance*amplitude = {}",
            fmt_f64(residual),
            fmt_f64(cfg.tolerance * scale)
        ),
    );

    print!("{report}");
    if all_ok {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VALIDATION,
            message: "validation failed".to_string(),
        })
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("RELAYLOCK_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| CliError::config(format!("invalid RELAYLOCK_THREADS value `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))
}

fn run() -> CliResult<()> {
    configure_threads()?;
    let cli = Cli::parse();
    let (Command::Simulate(args)
    | Command::Staircase(args)
    | Command::Resolution(args)
    | Command::Compare(args)
    | Command::Validate(args)) = &cli.command;
    let cfg = RunConfig::from_args(args)?;
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Staircase(_) => cmd_staircase(&cfg),
        Command::Resolution(_) => cmd_resolution(&cfg),
        Command::Compare(_) => cmd_compare(&cfg),
        Command::Validate(_) => cmd_validate(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
