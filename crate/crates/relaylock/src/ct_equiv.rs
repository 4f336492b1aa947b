//! Equivalent continuous-time delayed relay loop and its symmetric periodic
//! regimes.
//!
//! The sample-and-hold stage of the mixed-signal loop is replaced by an
//! equivalent delay `phi0` in `[0, Ts]`: the residual time between a comparator
//! zero crossing and the next sampling instant. The loop then becomes a purely
//! continuous delayed relay system whose odd-symmetric periodic solution
//! (`x(T/2) = -x(0)`, `w(0) = 0`) is solved exactly in the time domain: the
//! piecewise-constant forcing over one half period is propagated with the
//! closed-form plant transition, the half-period boundary condition is imposed
//! algebraically, and the switching condition is root-found on the period.
//!
//! A truncated harmonic-series residual of the same switching condition is
//! provided as an independent cross-check; it carries truncation error while
//! the time-domain solve does not, so the time-domain path is primary.
//!
//! Analytical work is restricted to even locks (`T/2 = N*Ts`): for the pulsed
//! DAC the pattern is anchored to the relay switch with the even-lock sign
//! sequence, which is exact at `T = 2N*Ts` and a continuous extension nearby.
//! Note the pure-delay filter has nonzero DC gain; the method is applied to it
//! regardless, which is safe only because the symmetric regime carries no DC.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::loop_sim::{DacModel, FeedbackFilter};
use crate::resonator::{ResonatorParams, StateVector, Transition};

/// Relative period tolerance of the root refinement.
const PERIOD_REFINE_REL: f64 = 1e-14;
/// Residual tolerances for a solution to be flagged valid, relative to the
/// orbit amplitude.
const RESIDUAL_REL: f64 = 1e-10;
/// Dense validity sampling: points per forcing subinterval.
const VALIDITY_POINTS: usize = 64;
/// Scan density for locating residual sign changes in a bracket.
const SCAN_POINTS: usize = 256;

/// Continuous-time equivalent of one mixed-signal loop configuration.
#[derive(Debug, Clone)]
pub struct EquivalentLoop {
    pub resonator: ResonatorParams,
    pub filter: FeedbackFilter,
    pub dac: DacModel,
    pub ts: f64,
    /// Equivalent delay, `0 <= phi0 <= ts`.
    pub phi0: f64,
    pub feedback_sign: i32,
}

impl EquivalentLoop {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::invalid("ts", format!("must be finite and > 0, got {}", self.ts)));
        }
        if !(self.phi0.is_finite() && (0.0..=self.ts).contains(&self.phi0)) {
            return Err(Error::invalid(
                "phi0",
                format!("must lie in [0, ts = {}], got {}", self.ts, self.phi0),
            ));
        }
        if self.feedback_sign != 1 && self.feedback_sign != -1 {
            return Err(Error::invalid("feedback_sign", "must be +1 or -1"));
        }
        Ok(())
    }

    pub fn with_phi0(&self, phi0: f64) -> Self {
        let mut other = self.clone();
        other.phi0 = phi0;
        other
    }

    pub fn with_omega0(&self, omega0: f64) -> Result<Self> {
        Ok(Self {
            resonator: self.resonator.with_omega0(omega0)?,
            ..self.clone()
        })
    }
}

/// Half-period forcing of the equivalent loop. The pattern on `[T/2, T]` is
/// the odd extension `u(t + T/2) = -u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPattern {
    /// Interior breakpoints, strictly inside `(0, T/2)`, sorted.
    pub breakpoints: Vec<f64>,
    /// Level on each subinterval; `levels.len() == breakpoints.len() + 1`.
    pub levels: Vec<f64>,
    pub period: f64,
}

impl ForcingPattern {
    pub fn half_period(&self) -> f64 {
        0.5 * self.period
    }

    /// Subintervals of `[0, T/2]` as `(start, end, level)`.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let half = self.half_period();
        let mut out = Vec::with_capacity(self.levels.len());
        let mut start = 0.0;
        for (i, &level) in self.levels.iter().enumerate() {
            let end = if i < self.breakpoints.len() {
                self.breakpoints[i]
            } else {
                half
            };
            out.push((start, end, level));
            start = end;
        }
        out
    }

    /// Forcing value at `t` within `[0, T/2)`.
    pub fn level_at(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        self.levels[idx]
    }
}

/// Unit square wave of period `T`: +1 on `[0, T/2)`, -1 on `[T/2, T)`.
/// The half-open convention makes the value at a switching instant the
/// post-switch one, matching the comparator tie rule at a rising edge.
fn square_wave(t: f64, period: f64) -> f64 {
    let mut tau = t % period;
    if tau < 0.0 {
        tau += period;
    }
    if tau < 0.5 * period {
        1.0
    } else {
        -1.0
    }
}

fn push_breakpoint(points: &mut Vec<f64>, half: f64, t: f64) {
    let eps = 1e-12 * half;
    if t > eps && t < half - eps {
        points.push(t);
    }
}

fn finish_breakpoints(mut points: Vec<f64>, half: f64) -> Vec<f64> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let eps = 1e-12 * half;
    points.dedup_by(|a, b| (*a - *b).abs() <= eps);
    points
}

fn hold_pattern(lp: &EquivalentLoop, period: f64) -> ForcingPattern {
    let half = 0.5 * period;
    let fb = lp.feedback_sign as f64;
    let mut points = Vec::new();
    for &(k, _) in lp.filter.taps() {
        // Switches of s(t - k*ts - phi0) fold to one point per half period.
        let d = (k as f64 * lp.ts + lp.phi0) % half;
        push_breakpoint(&mut points, half, d);
    }
    let breakpoints = finish_breakpoints(points, half);

    let level = |t: f64| -> f64 {
        fb * lp
            .filter
            .taps()
            .iter()
            .map(|&(k, c)| c * square_wave(t - k as f64 * lp.ts - lp.phi0, period))
            .sum::<f64>()
    };
    let mut levels = Vec::with_capacity(breakpoints.len() + 1);
    let mut start = 0.0;
    for i in 0..=breakpoints.len() {
        let end = if i < breakpoints.len() { breakpoints[i] } else { half };
        levels.push(level(0.5 * (start + end)));
        start = end;
    }
    ForcingPattern {
        breakpoints,
        levels,
        period,
    }
}

fn pulse_pattern(lp: &EquivalentLoop, period: f64, divisor: u32) -> Result<ForcingPattern> {
    let half = 0.5 * period;
    let n_lock = (half / lp.ts).round() as i64;
    if n_lock < 1 {
        return Err(Error::PulseRequiresEvenLock);
    }
    let fb = lp.feedback_sign as f64;
    let width = lp.ts / divisor as f64;

    // Idealized even-lock sign sequence relative to the switch at t = 0:
    // sample i sits at phi0 + i*ts (anchored to its own half-period switch)
    // and carries sign +1 for i in [0, N), -1 for i in [N, 2N), periodically.
    let sample_sign = |i: i64| -> f64 {
        if i.rem_euclid(2 * n_lock) < n_lock {
            1.0
        } else {
            -1.0
        }
    };
    let level_of = |i: i64| -> f64 {
        fb * lp
            .filter
            .taps()
            .iter()
            .map(|&(k, c)| c * sample_sign(i - k as i64))
            .sum::<f64>()
    };

    // Pulses overlapping [0, half): the current half period's own pulses plus
    // the tail of the previous half period's last pulse.
    let mut events: Vec<(f64, f64, f64)> = Vec::new();
    for i in -n_lock..n_lock {
        let start = if i < 0 {
            -half + lp.phi0 + (i + n_lock) as f64 * lp.ts
        } else {
            lp.phi0 + i as f64 * lp.ts
        };
        let end = start + width;
        if end <= 0.0 || start >= half {
            continue;
        }
        events.push((start.max(0.0), end.min(half), level_of(i)));
    }

    let mut points = Vec::new();
    for &(a, b, _) in &events {
        push_breakpoint(&mut points, half, a);
        push_breakpoint(&mut points, half, b);
    }
    let breakpoints = finish_breakpoints(points, half);

    let mut levels = Vec::with_capacity(breakpoints.len() + 1);
    let mut start = 0.0;
    for i in 0..=breakpoints.len() {
        let end = if i < breakpoints.len() { breakpoints[i] } else { half };
        let mid = 0.5 * (start + end);
        let level = events
            .iter()
            .filter(|&&(a, b, _)| a <= mid && mid < b)
            .map(|&(_, _, l)| l)
            .sum();
        levels.push(level);
        start = end;
    }
    Ok(ForcingPattern {
        breakpoints,
        levels,
        period,
    })
}

/// Half-period forcing pattern of the equivalent loop at candidate period `T`.
pub fn forcing_pattern(lp: &EquivalentLoop, period: f64) -> Result<ForcingPattern> {
    lp.validate()?;
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::invalid("T", format!("must be finite and > 0, got {period}")));
    }
    match lp.dac {
        DacModel::Hold | DacModel::Pulse { divisor: 1 } => Ok(hold_pattern(lp, period)),
        DacModel::Pulse { divisor } => pulse_pattern(lp, period, divisor),
    }
}

/// Affine half-period map `x(T/2) = m * x(0) + b`.
#[derive(Debug, Clone, Copy)]
struct HalfMap {
    m: [[f64; 2]; 2],
    b: [f64; 2],
}

fn half_map(params: &ResonatorParams, pattern: &ForcingPattern) -> HalfMap {
    let mut m = [[1.0, 0.0], [0.0, 1.0]];
    let mut b = [0.0, 0.0];
    for (start, end, level) in pattern.segments() {
        let dur = end - start;
        if dur <= 0.0 {
            continue;
        }
        let tr = Transition::new(params, dur);
        let a = tr.matrix();
        let o = tr.offset(level);
        let m_new = [
            [
                a[0][0] * m[0][0] + a[0][1] * m[1][0],
                a[0][0] * m[0][1] + a[0][1] * m[1][1],
            ],
            [
                a[1][0] * m[0][0] + a[1][1] * m[1][0],
                a[1][0] * m[0][1] + a[1][1] * m[1][1],
            ],
        ];
        let b_new = [
            a[0][0] * b[0] + a[0][1] * b[1] + o[0],
            a[1][0] * b[0] + a[1][1] * b[1] + o[1],
        ];
        m = m_new;
        b = b_new;
    }
    HalfMap { m, b }
}

/// Boundary state forced by the symmetry condition `x(T/2) = -x(0)`, i.e.
/// `(m + I) x0 = -b`. The `w` component of `x0` is the switching residual.
fn symmetric_boundary_state(map: &HalfMap, period: f64) -> Result<StateVector> {
    let a11 = map.m[0][0] + 1.0;
    let a12 = map.m[0][1];
    let a21 = map.m[1][0];
    let a22 = map.m[1][1] + 1.0;
    let det = a11 * a22 - a12 * a21;
    let scale = a11.abs().max(a12.abs()).max(a21.abs()).max(a22.abs());
    if det.abs() <= 1e-14 * scale * scale {
        return Err(Error::DegeneratePeriod { period });
    }
    Ok(StateVector::new(
        (-map.b[0] * a22 + map.b[1] * a12) / det,
        (map.b[0] * a21 - map.b[1] * a11) / det,
    ))
}

/// Switching residual (the `w` component of the symmetric boundary state) at
/// candidate period `T`. Sign changes of this function bracket periodic
/// solutions.
pub fn switching_residual(lp: &EquivalentLoop, period: f64) -> Result<f64> {
    let pattern = forcing_pattern(lp, period)?;
    let map = half_map(&lp.resonator, &pattern);
    Ok(symmetric_boundary_state(&map, period)?.w)
}

/// Solved symmetric periodic regime.
#[derive(Debug, Clone)]
pub struct PeriodSolution {
    pub period: f64,
    /// State at the rising relay switch (`w = 0` up to the residual).
    pub boundary_state: StateVector,
    /// `|w(0)|` after solving, relative residual against `amplitude`.
    pub switch_residual: f64,
    /// `||x(T/2) + x(0)||` in amplitude-normalized units.
    pub symmetry_residual: f64,
    /// Orbit amplitude scale `max sqrt(w^2 + (v/omega0)^2)` over the half period.
    pub amplitude: f64,
    pub valid: bool,
}

/// Builds the full solution (with validity checks) at a fixed period.
pub fn solve_symmetric(lp: &EquivalentLoop, period: f64) -> Result<PeriodSolution> {
    let pattern = forcing_pattern(lp, period)?;
    let map = half_map(&lp.resonator, &pattern);
    let x0 = symmetric_boundary_state(&map, period)?;
    let om0 = lp.resonator.omega0();

    // Dense sampling of the orbit for amplitude and interior-crossing checks.
    let mut amplitude = (x0.w * x0.w + (x0.v / om0).powi(2)).sqrt();
    let mut samples: Vec<f64> = Vec::new();
    let mut state = x0;
    for (start, end, level) in pattern.segments() {
        let dur = end - start;
        if dur <= 0.0 {
            continue;
        }
        let sub = Transition::new(&lp.resonator, dur / VALIDITY_POINTS as f64);
        for _ in 0..VALIDITY_POINTS {
            state = sub.apply(state, level);
            amplitude = amplitude.max((state.w * state.w + (state.v / om0).powi(2)).sqrt());
            samples.push(state.w);
        }
    }
    let end_state = StateVector::new(
        map.m[0][0] * x0.w + map.m[0][1] * x0.v + map.b[0],
        map.m[1][0] * x0.w + map.m[1][1] * x0.v + map.b[1],
    );

    let amp = amplitude.max(f64::MIN_POSITIVE);
    let switch_residual = x0.w.abs();
    let symmetry_residual = {
        let dw = end_state.w + x0.w;
        let dv = (end_state.v + x0.v) / om0;
        (dw * dw + dv * dv).sqrt()
    };

    // Interior consistency: the relay holds +1 over (0, T/2), so w must stay
    // positive there. Drop the last sample (w(T/2) ~ 0) and flag any definite
    // excursion below zero or sign change between consecutive samples.
    let tol = RESIDUAL_REL * amp;
    let interior = &samples[..samples.len().saturating_sub(1)];
    let mut crossing = interior.iter().any(|&w| w < -tol);
    for pair in interior.windows(2) {
        if pair[0] > tol && pair[1] < -tol {
            crossing = true;
        }
    }

    let valid = switch_residual <= tol && symmetry_residual <= tol && x0.v > 0.0 && !crossing;
    Ok(PeriodSolution {
        period,
        boundary_state: x0,
        switch_residual,
        symmetry_residual,
        amplitude: amp,
        valid,
    })
}

/// Solves for the symmetric periodic regime with the period inside `bracket`.
///
/// The switching residual is scanned over the bracket, every sign change is
/// refined by bisection to `|dT| <= 1e-14 * T`, refined roots are validated
/// (small residuals, rising slope, no interior crossing of `w`), and among the
/// valid ones the root nearest the even lock closest to the bracket midpoint
/// is returned.
pub fn hamel_period(lp: &EquivalentLoop, bracket: (f64, f64)) -> Result<PeriodSolution> {
    lp.validate()?;
    let (t_min, t_max) = bracket;
    if !(t_min.is_finite() && t_max.is_finite() && 0.0 < t_min && t_min < t_max) {
        return Err(Error::invalid(
            "bracket",
            format!("need 0 < T_min < T_max, got ({t_min}, {t_max})"),
        ));
    }

    let target = {
        let mid = 0.5 * (t_min + t_max);
        let n = (mid / (2.0 * lp.ts)).round().max(1.0);
        2.0 * n * lp.ts
    };

    let mut grid: Vec<(f64, Option<f64>)> = Vec::with_capacity(SCAN_POINTS + 1);
    for i in 0..=SCAN_POINTS {
        let t = t_min + (t_max - t_min) * i as f64 / SCAN_POINTS as f64;
        grid.push((t, switching_residual(lp, t).ok()));
    }

    let mut best: Option<PeriodSolution> = None;
    let mut consider = |sol: PeriodSolution| {
        if sol.valid {
            let better = match &best {
                None => true,
                Some(b) => (sol.period - target).abs() < (b.period - target).abs(),
            };
            if better {
                best = Some(sol);
            }
        }
    };

    for pair in grid.windows(2) {
        let ((ta, ra), (tb, rb)) = (pair[0], pair[1]);
        let (Some(ra), Some(rb)) = (ra, rb) else { continue };
        if ra == 0.0 {
            if let Ok(sol) = solve_symmetric(lp, ta) {
                consider(sol);
            }
            continue;
        }
        if ra * rb >= 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut r_lo) = (ta, tb, ra);
        while hi - lo > PERIOD_REFINE_REL * hi {
            let mid = 0.5 * (lo + hi);
            let Ok(r_mid) = switching_residual(lp, mid) else { break };
            if r_mid == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if r_lo * r_mid < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                r_lo = r_mid;
            }
        }
        let root = 0.5 * (lo + hi);
        if let Ok(sol) = solve_symmetric(lp, root) {
            consider(sol);
        }
    }

    best.ok_or(Error::NoPeriodicSolution { t_min, t_max })
}

/// Periods of the continuous equivalent at the two extreme delays. The
/// mixed-signal period at an even lock lies in the closed interval spanned by
/// the two.
#[derive(Debug, Clone)]
pub struct PeriodInterval {
    /// Solution at `phi0 = 0`.
    pub at_phi0_zero: PeriodSolution,
    /// Solution at `phi0 = ts`.
    pub at_phi0_ts: PeriodSolution,
}

impl PeriodInterval {
    pub fn t0(&self) -> f64 {
        self.at_phi0_zero.period
    }

    pub fn t1(&self) -> f64 {
        self.at_phi0_ts.period
    }

    /// True iff `t` lies in the closed interval spanned by `t0` and `t1`,
    /// widened by `slack` on both sides.
    pub fn contains(&self, t: f64, slack: f64) -> bool {
        let lo = self.t0().min(self.t1()) - slack;
        let hi = self.t0().max(self.t1()) + slack;
        (lo..=hi).contains(&t)
    }
}

/// Even lock index nearest the resonance period: `N = round(pi / (omega0*ts))`.
pub fn nearest_even_lock(omega0: f64, ts: f64) -> u32 {
    (std::f64::consts::PI / (omega0 * ts)).round().max(1.0) as u32
}

/// Default bracket around the even lock `2N*ts`: one sampling period on each
/// side.
pub fn lock_bracket(n_lock: u32, ts: f64) -> (f64, f64) {
    let t = 2.0 * n_lock as f64 * ts;
    (t - ts, t + ts)
}

/// Solves the equivalent loop at `phi0 = 0` and `phi0 = ts`, bracketing around
/// the even lock nearest resonance (ignores `lp.phi0`).
pub fn period_interval(lp: &EquivalentLoop) -> Result<PeriodInterval> {
    let n = nearest_even_lock(lp.resonator.omega0(), lp.ts);
    let bracket = lock_bracket(n, lp.ts);
    Ok(PeriodInterval {
        at_phi0_zero: hamel_period(&lp.with_phi0(0.0), bracket)?,
        at_phi0_ts: hamel_period(&lp.with_phi0(lp.ts), bracket)?,
    })
}

/// Complex Fourier coefficient `U_k` (odd `k`) of the odd-symmetric forcing.
fn forcing_coefficient(pattern: &ForcingPattern, k: u32) -> Complex64 {
    debug_assert!(k % 2 == 1);
    let omega = 2.0 * std::f64::consts::PI / pattern.period;
    let jk = Complex64::new(0.0, k as f64 * omega);
    let mut acc = Complex64::new(0.0, 0.0);
    for (start, end, level) in pattern.segments() {
        if level == 0.0 || end <= start {
            continue;
        }
        acc += level * ((-jk * start).exp() - (-jk * end).exp()) / jk;
    }
    // Odd symmetry doubles the half-period integral for odd harmonics.
    acc * (2.0 / pattern.period)
}

/// Truncated harmonic-series value of the plant output at the switching
/// instant: `sum over odd k of 2*Re[U_k * F(j*k*omega)]`, with `n_harmonics`
/// odd harmonics. Goes to zero as the candidate period approaches a true
/// periodic solution and the truncation grows.
pub fn tsypkin_residual(lp: &EquivalentLoop, period: f64, n_harmonics: u32) -> Result<f64> {
    if n_harmonics < 1 {
        return Err(Error::invalid("n_harmonics", "must be >= 1"));
    }
    let pattern = forcing_pattern(lp, period)?;
    let omega = 2.0 * std::f64::consts::PI / period;
    let mut acc = 0.0;
    for i in 0..n_harmonics {
        let k = 2 * i + 1;
        let u_k = forcing_coefficient(&pattern, k);
        let f_k = lp.resonator.freq_response(k as f64 * omega);
        acc += 2.0 * (u_k * f_k).re;
    }
    Ok(acc)
}

/// Amplitude of the first-harmonic component of the plant output, used to
/// normalize the residual.
pub fn tsypkin_first_harmonic(lp: &EquivalentLoop, period: f64) -> Result<f64> {
    let pattern = forcing_pattern(lp, period)?;
    let omega = 2.0 * std::f64::consts::PI / period;
    let u1 = forcing_coefficient(&pattern, 1);
    Ok(2.0 * (u1 * lp.resonator.freq_response(omega)).norm())
}
