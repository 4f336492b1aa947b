//! Analytical step-width (resolution) bounds.
//!
//! A lock at `T = 2N*Ts` persists over an interval of natural pulsations
//! `[omega_low, omega_high]`; the sensor cannot distinguish stiffness values
//! inside that interval, so its width is the resolution. The edges are where
//! the continuous-time equivalent loop at the two extreme delays (`phi0 = 0`
//! and `phi0 = Ts`) oscillates at exactly the lock period: the switching
//! residual at fixed `T = 2N*Ts` is root-found over `omega0` by bisection.
//! Which delay endpoint yields which edge depends on the filter, so the
//! ordering is computed, never assumed.

use rayon::prelude::*;

use crate::ct_equiv::{self, PeriodSolution};
use crate::error::{Error, Result};
use crate::experiment::ArchConfig;
use crate::loop_sim::Architecture;

/// Relative `omega0` tolerance of the edge bisection.
const EDGE_REFINE_REL: f64 = 1e-13;
/// Scan density for locating residual sign changes over an `omega0` window.
const SCAN_POINTS: usize = 512;
/// Search half-widths around the nominal pulsation, tried in order.
const SEARCH_HALF_WIDTHS: [f64; 3] = [0.20, 0.35, 0.50];

/// Stiffness interval locked at `T = 2*n_lock*Ts`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBounds {
    pub n_lock: u32,
    /// Lock period `2*n_lock*Ts`, s.
    pub t_target: f64,
    pub omega_low: f64,
    pub omega_high: f64,
    /// Delay endpoint (`0` or `ts`) that produced `omega_low`.
    pub phi0_at_low: f64,
}

impl StepBounds {
    pub fn width(&self) -> f64 {
        self.omega_high - self.omega_low
    }

    /// Width relative to the geometric mean of the edges (dimensionless).
    pub fn relative_width(&self) -> f64 {
        self.width() / (self.omega_low * self.omega_high).sqrt()
    }
}

/// Switching residual of the equivalent loop at fixed period, as a function of
/// `omega0`. `None` when the configuration has no well-posed residual there.
fn residual_at(cfg: &ArchConfig, phi0: f64, t_target: f64, omega0: f64) -> Option<f64> {
    let lp = cfg.equivalent_loop(omega0, phi0).ok()?;
    ct_equiv::switching_residual(&lp, t_target).ok()
}

fn bisect_edge(
    cfg: &ArchConfig,
    phi0: f64,
    t_target: f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
) -> Option<f64> {
    for _ in 0..200 {
        if (b - a).abs() <= EDGE_REFINE_REL * b.abs() {
            break;
        }
        let mid = 0.5 * (a + b);
        let fm = residual_at(cfg, phi0, t_target, mid)?;
        if fm == 0.0 {
            return Some(mid);
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Some(0.5 * (a + b))
}

/// All `omega0` roots of the fixed-period switching residual within `[lo, hi]`
/// that carry a valid symmetric solution.
fn valid_roots(cfg: &ArchConfig, phi0: f64, t_target: f64, lo: f64, hi: f64) -> Vec<f64> {
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / SCAN_POINTS as f64)
        .collect();
    let vals: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&w| residual_at(cfg, phi0, t_target, w))
        .collect();
    let mut roots = Vec::new();
    for i in 0..SCAN_POINTS {
        let (Some(fa), Some(fb)) = (vals[i], vals[i + 1]) else {
            continue;
        };
        let root = if fa == 0.0 {
            Some(grid[i])
        } else if fa * fb < 0.0 {
            bisect_edge(cfg, phi0, t_target, grid[i], fa, grid[i + 1])
        } else {
            None
        };
        if let Some(w) = root {
            let valid = cfg
                .equivalent_loop(w, phi0)
                .and_then(|lp| ct_equiv::solve_symmetric(&lp, t_target))
                .map(|sol| sol.valid)
                .unwrap_or(false);
            if valid {
                roots.push(w);
            }
        }
    }
    roots
}

/// The `omega0` at which the equivalent loop with delay `phi0` oscillates at
/// exactly `2*n_lock*Ts`. Searches an expanding window around the nominal
/// pulsation and keeps the valid root nearest nominal.
fn solve_edge(cfg: &ArchConfig, n_lock: u32, phi0: f64) -> Result<f64> {
    let t_target = 2.0 * n_lock as f64 * cfg.ts();
    let nominal = cfg.nominal_omega0();
    for half in SEARCH_HALF_WIDTHS {
        let roots = valid_roots(cfg, phi0, t_target, nominal * (1.0 - half), nominal * (1.0 + half));
        if let Some(best) = roots
            .into_iter()
            .min_by(|a, b| (a - nominal).abs().total_cmp(&(b - nominal).abs()))
        {
            return Ok(best);
        }
    }
    Err(Error::LockNotReachable { n_lock })
}

/// Edges of the `omega0` interval locked at `T = 2*n_lock*Ts`.
pub fn step_bounds(cfg: &ArchConfig, n_lock: u32) -> Result<StepBounds> {
    cfg.validate()?;
    if n_lock < 1 {
        return Err(Error::invalid("n_lock", "must be >= 1"));
    }
    let ts = cfg.ts();
    let at_zero = solve_edge(cfg, n_lock, 0.0)?;
    let at_ts = solve_edge(cfg, n_lock, ts)?;
    let (omega_low, omega_high, phi0_at_low) = if at_zero <= at_ts {
        (at_zero, at_ts, 0.0)
    } else {
        (at_ts, at_zero, ts)
    };
    Ok(StepBounds {
        n_lock,
        t_target: 2.0 * n_lock as f64 * ts,
        omega_low,
        omega_high,
        phi0_at_low,
    })
}

/// One sample of the analytic period curve `T(omega0)` at fixed `phi0`.
#[derive(Debug)]
pub struct CurvePoint {
    pub omega0: f64,
    pub solution: Result<PeriodSolution>,
}

/// `hamel_period` sampled across an `omega0` range at fixed delay. Each point
/// is bracketed at its nearest even lock; solver failures are recorded per
/// point, never fabricated.
pub fn period_curve(
    cfg: &ArchConfig,
    phi0: f64,
    omega_range: (f64, f64),
    n_points: usize,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let (lo, hi) = omega_range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
        return Err(Error::invalid("omega_range", "must be positive and increasing"));
    }
    if n_points < 2 {
        return Err(Error::invalid("n_points", "must be >= 2"));
    }
    let ts = cfg.ts();
    Ok((0..n_points)
        .into_par_iter()
        .map(|i| {
            let omega0 = lo + (hi - lo) * i as f64 / (n_points - 1) as f64;
            let solution = cfg.equivalent_loop(omega0, phi0).and_then(|lp| {
                let n = ct_equiv::nearest_even_lock(omega0, ts);
                ct_equiv::hamel_period(&lp, ct_equiv::lock_bracket(n, ts))
            });
            CurvePoint { omega0, solution }
        })
        .collect())
}

/// One row of a resolution table: a configuration and its step bounds (or the
/// error that prevented computing them).
#[derive(Debug)]
pub struct ResolutionRow {
    pub cfg: ArchConfig,
    pub n_lock: u32,
    pub bounds: Result<StepBounds>,
}

impl ResolutionRow {
    /// `ok` or the error message, for the CSV status column.
    pub fn status(&self) -> String {
        match &self.bounds {
            Ok(_) => "ok".to_string(),
            Err(e) => e.to_string().replace(',', ";"),
        }
    }
}

/// Step bounds for each configuration, at each one's dominant even lock.
/// Per-row failures are recorded; the table is always returned.
#[derive(Debug)]
pub struct ResolutionTable {
    pub rows: Vec<ResolutionRow>,
}

pub fn resolution_table(configs: &[ArchConfig]) -> ResolutionTable {
    let rows = configs
        .par_iter()
        .map(|cfg| {
            let n_lock = cfg.dominant_lock();
            ResolutionRow {
                cfg: cfg.clone(),
                n_lock,
                bounds: step_bounds(cfg, n_lock),
            }
        })
        .collect();
    ResolutionTable { rows }
}

/// Table over filter orders `m`, all other parameters from `base`.
pub fn curve_over_m(base: &ArchConfig, m_values: &[u32]) -> ResolutionTable {
    let configs: Vec<ArchConfig> = m_values
        .iter()
        .map(|&m| ArchConfig { m, ..base.clone() })
        .collect();
    resolution_table(&configs)
}

/// Table over DAC pulse divisors `M`, all other parameters from `base`.
pub fn curve_over_big_m(base: &ArchConfig, big_m_values: &[u32]) -> ResolutionTable {
    let configs: Vec<ArchConfig> = big_m_values
        .iter()
        .map(|&big_m| ArchConfig { big_m, ..base.clone() })
        .collect();
    resolution_table(&configs)
}

/// Per-configuration verdict of the architecture comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    PdoBetter,
    DifferentiatorBetter,
    Undecided,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::PdoBetter => write!(f, "pdo"),
            Verdict::DifferentiatorBetter => write!(f, "differentiator"),
            Verdict::Undecided => write!(f, "undecided"),
        }
    }
}

/// Side-by-side step bounds of the two architectures for one `m`.
#[derive(Debug)]
pub struct ComparisonRow {
    pub m: u32,
    pub differentiator: ResolutionRow,
    pub pdo: ResolutionRow,
}

impl ComparisonRow {
    /// Architecture with the smaller relative width (smaller = better). When
    /// only one architecture reaches the dominant lock at all, it wins: the
    /// other has no resolution to speak of at that operating point.
    pub fn verdict(&self) -> Verdict {
        match (&self.differentiator.bounds, &self.pdo.bounds) {
            (Ok(d), Ok(p)) => {
                if p.relative_width() <= d.relative_width() {
                    Verdict::PdoBetter
                } else {
                    Verdict::DifferentiatorBetter
                }
            }
            (Err(_), Ok(_)) => Verdict::PdoBetter,
            (Ok(_), Err(_)) => Verdict::DifferentiatorBetter,
            (Err(_), Err(_)) => Verdict::Undecided,
        }
    }
}

#[derive(Debug)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

/// Differentiator vs. PDO over a list of filter orders, at the operating point
/// of `base` (its `arch`/`m` fields are ignored; each architecture uses its
/// own default polarity).
pub fn compare_architectures(base: &ArchConfig, m_values: &[u32]) -> ComparisonReport {
    let make = |arch: Architecture| -> Vec<ArchConfig> {
        m_values
            .iter()
            .map(|&m| ArchConfig {
                arch,
                m,
                feedback_sign: arch.default_feedback_sign(),
                ..base.clone()
            })
            .collect()
    };
    let diff = resolution_table(&make(Architecture::Differentiator));
    let pdo = resolution_table(&make(Architecture::Pdo));
    let rows = m_values
        .iter()
        .zip(diff.rows.into_iter().zip(pdo.rows))
        .map(|(&m, (differentiator, pdo))| ComparisonRow {
            m,
            differentiator,
            pdo,
        })
        .collect();
    ComparisonReport { rows }
}
