//! Devil's-staircase sweeps: oscillation period versus natural pulsation.
//!
//! The resonator's natural pulsation `omega0` stands in for stiffness
//! (stiffness is proportional to `omega0^2` at fixed mass). Sweeping it and
//! measuring the locked period produces the piecewise-constant staircase
//! response: the period stays pinned at rational multiples of the sampling
//! period over finite `omega0` intervals and jumps between them.
//!
//! Two seeding policies: `Fixed` restarts every point from the same initial
//! state (reproducible and order-independent, the default), `Continuation`
//! seeds each point with the final state of the previous one and thereby
//! tracks a single oscillation regime across the sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::ArchConfig;
use crate::loop_sim::{self, LockRatio, LoopConfig};
use crate::resonator::StateVector;

/// Default measurement window, in samples after the settling transient.
pub const DEFAULT_WINDOW: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepPolicy {
    /// Every point starts from the same initial state.
    Fixed,
    /// Each point starts from the previous point's final state.
    Continuation,
}

impl std::fmt::Display for SweepPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepPolicy::Fixed => write!(f, "fixed"),
            SweepPolicy::Continuation => write!(f, "continuation"),
        }
    }
}

impl std::str::FromStr for SweepPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SweepPolicy::Fixed),
            "continuation" => Ok(SweepPolicy::Continuation),
            other => Err(Error::invalid("policy", format!("unknown sweep policy `{other}`"))),
        }
    }
}

/// Full description of one staircase sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub cfg: ArchConfig,
    /// Swept `omega0` interval, rad/s.
    pub omega_range: (f64, f64),
    pub n_points: usize,
    pub policy: SweepPolicy,
    /// Measurement window in samples after the settling transient.
    pub window: usize,
    pub initial_state: StateVector,
}

impl SweepSpec {
    /// Sweep `range_pct` percent around the nominal pulsation with the fixed
    /// policy and the default kick.
    pub fn around_nominal(cfg: ArchConfig, range_pct: f64, n_points: usize) -> Self {
        let nominal = cfg.nominal_omega0();
        let half = range_pct / 100.0;
        Self {
            cfg,
            omega_range: (nominal * (1.0 - half), nominal * (1.0 + half)),
            n_points,
            policy: SweepPolicy::Fixed,
            window: DEFAULT_WINDOW,
            initial_state: LoopConfig::DEFAULT_KICK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        let (lo, hi) = self.omega_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::invalid("omega_range", "must be positive and increasing"));
        }
        if self.n_points < 2 {
            return Err(Error::invalid("n_points", "must be >= 2"));
        }
        if self.window < 8 {
            return Err(Error::invalid("window", "must be >= 8 samples"));
        }
        Ok(())
    }

    fn omega_at(&self, i: usize) -> f64 {
        let (lo, hi) = self.omega_range;
        lo + (hi - lo) * i as f64 / (self.n_points - 1) as f64
    }
}

/// One swept point. `mean_period` is absent when no oscillation was detected;
/// `ratio` is present exactly when `locked`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaircaseRow {
    pub omega0: f64,
    pub mean_period: Option<f64>,
    pub ratio: Option<LockRatio>,
    pub locked: bool,
}

/// Sweep result: rows sorted by `omega0`, plus the indices where the period
/// increased with `omega0` (anomalies against the expected staircase shape).
#[derive(Debug, Clone)]
pub struct StaircaseDataset {
    pub spec: SweepSpec,
    pub rows: Vec<StaircaseRow>,
    /// Indices `i` where `rows[i]` has a larger period than `rows[i-1]` by
    /// more than one sample period `ts`.
    pub anomalies: Vec<usize>,
}

impl StaircaseDataset {
    /// The most frequent lock ratio and the widest contiguous `omega0` run
    /// holding it, if any point locked.
    pub fn dominant_lock(&self) -> Option<(LockRatio, (f64, f64))> {
        let mut best: Option<(LockRatio, (f64, f64), usize)> = None;
        let mut i = 0;
        while i < self.rows.len() {
            let Some(ratio) = self.rows[i].ratio else {
                i += 1;
                continue;
            };
            let start = i;
            while i < self.rows.len() && self.rows[i].ratio == Some(ratio) {
                i += 1;
            }
            let run = i - start;
            if best.as_ref().map_or(true, |b| run > b.2) {
                best = Some((ratio, (self.rows[start].omega0, self.rows[i - 1].omega0), run));
            }
        }
        best.map(|(r, span, _)| (r, span))
    }
}

fn measure_point(
    spec: &SweepSpec,
    omega0: f64,
    initial: StateVector,
) -> Result<(StaircaseRow, StateVector)> {
    let config = spec.cfg.loop_config(omega0, initial, spec.window)?;
    let trace = loop_sim::simulate(&config)?;
    let final_state = trace.final_state;
    let row = match loop_sim::measure_period(&trace, config.transient_skip, spec.window) {
        Ok(m) => StaircaseRow {
            omega0,
            mean_period: Some(m.mean_period),
            ratio: m.lock_ratio,
            locked: m.locked,
        },
        Err(Error::NoOscillation) => StaircaseRow {
            omega0,
            mean_period: None,
            ratio: None,
            locked: false,
        },
        Err(e) => return Err(e),
    };
    Ok((row, final_state))
}

/// Runs the sweep. Fixed-policy points are independent and run in parallel;
/// continuation is sequential by definition. Points with no detected
/// oscillation are recorded and the sweep continues.
pub fn staircase_sweep(spec: &SweepSpec) -> Result<StaircaseDataset> {
    spec.validate()?;
    let rows: Vec<StaircaseRow> = match spec.policy {
        SweepPolicy::Fixed => (0..spec.n_points)
            .into_par_iter()
            .map(|i| measure_point(spec, spec.omega_at(i), spec.initial_state).map(|(r, _)| r))
            .collect::<Result<_>>()?,
        SweepPolicy::Continuation => {
            let mut rows = Vec::with_capacity(spec.n_points);
            let mut seed = spec.initial_state;
            for i in 0..spec.n_points {
                let (row, final_state) = measure_point(spec, spec.omega_at(i), seed)?;
                // A dead point cannot seed the next one; fall back to the kick.
                seed = if row.mean_period.is_some() {
                    final_state
                } else {
                    spec.initial_state
                };
                rows.push(row);
            }
            rows
        }
    };
    let ts = spec.cfg.ts();
    let anomalies = rows
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| match (w[0].mean_period, w[1].mean_period) {
            (Some(a), Some(b)) if b > a + ts => Some(i + 1),
            _ => None,
        })
        .collect();
    Ok(StaircaseDataset {
        spec: spec.clone(),
        rows,
        anomalies,
    })
}

/// Re-sweeps a sub-range of an existing dataset at the full point budget,
/// exposing finer steps. The region must lie within the original range.
pub fn zoom(dataset: &StaircaseDataset, region: (f64, f64)) -> Result<StaircaseDataset> {
    let (lo, hi) = region;
    let (olo, ohi) = dataset.spec.omega_range;
    if !(olo <= lo && lo < hi && hi <= ohi) {
        return Err(Error::ZoomOutOfRange { lo, hi });
    }
    let spec = SweepSpec {
        omega_range: region,
        ..dataset.spec.clone()
    };
    staircase_sweep(&spec)
}
