//! Acceptance suite: the nine release criteria, one test each, at the
//! reference operating point (F0 = 35.8 kHz, Fs = 12 F0, Q = 250) unless a
//! criterion says otherwise. Each test prints a single PASS line on success;
//! a failed assertion is the FAIL line.

use once_cell::sync::Lazy;

use relaylock::ct_equiv;
use relaylock::experiment::ArchConfig;
use relaylock::loop_sim::{self, Architecture, LockRatio, LoopConfig};
use relaylock::resolution::{self, StepBounds, Verdict};
use relaylock::resonator::{ResonatorParams, StateVector, Transition};
use relaylock::staircase::{self, StaircaseDataset, SweepSpec};

const WINDOW: usize = 1024;

fn pdo() -> ArchConfig {
    ArchConfig::nominal(Architecture::Pdo, 2, 1)
}

fn diff() -> ArchConfig {
    ArchConfig::nominal(Architecture::Differentiator, 1, 1)
}

fn sweep(cfg: ArchConfig, range_pct: f64, points: usize) -> StaircaseDataset {
    let mut spec = SweepSpec::around_nominal(cfg, range_pct, points);
    spec.window = WINDOW;
    staircase::staircase_sweep(&spec).unwrap()
}

/// The wide reference sweeps used by several criteria.
static SWEEP_PDO: Lazy<StaircaseDataset> = Lazy::new(|| sweep(pdo(), 5.0, 2000));
static SWEEP_DIFF: Lazy<StaircaseDataset> = Lazy::new(|| sweep(diff(), 5.0, 2000));

fn bounds(cfg: &ArchConfig) -> StepBounds {
    resolution::step_bounds(cfg, cfg.dominant_lock()).unwrap()
}

#[test]
fn criterion_1_oscillation_and_rationality() {
    for (name, ds) in [("pdo m=2 M=1", &*SWEEP_PDO), ("differentiator m=1 M=1", &*SWEEP_DIFF)] {
        let n_locked = ds.rows.iter().filter(|r| r.locked).count();
        assert!(
            n_locked > ds.rows.len() / 4,
            "{name}: only {n_locked}/{} points locked",
            ds.rows.len()
        );
        assert!(
            ds.rows.iter().filter(|r| r.mean_period.is_some()).count() > ds.rows.len() * 9 / 10,
            "{name}: oscillation not sustained across the sweep"
        );
        for row in ds.rows.iter().filter(|r| r.locked) {
            let ratio = row.ratio.expect("locked row without ratio");
            assert!(ratio.den >= 1 && ratio.num >= 1, "{name}: degenerate ratio");
            assert!(
                ratio.num <= WINDOW as u64,
                "{name}: ratio numerator exceeds detection window"
            );
        }
        let (ratio, span) = ds.dominant_lock().expect("no locked plateau");
        assert!(
            ratio.is_even_integer(),
            "{name}: dominant lock {}/{} is not an even integer",
            ratio.num,
            ratio.den
        );
        assert!(span.0 < span.1, "{name}: dominant plateau has zero width");
    }
    println!("PASS criterion 1: both architectures oscillate, lock rationally, dominant lock even");
}

#[test]
fn criterion_2_three_method_agreement() {
    for cfg in [pdo(), diff()] {
        let sb = bounds(&cfg);
        let mid = 0.5 * (sb.omega_low + sb.omega_high);
        let ts = cfg.ts();

        // Simulated period at the step midpoint is exactly 2N*Ts.
        let lc = cfg.loop_config(mid, LoopConfig::DEFAULT_KICK, WINDOW).unwrap();
        let trace = loop_sim::simulate(&lc).unwrap();
        let m = loop_sim::measure_period(&trace, lc.transient_skip, WINDOW).unwrap();
        assert_eq!(
            m.lock_ratio,
            Some(LockRatio { num: 2 * sb.n_lock as u64, den: 1 }),
            "{}: midpoint not locked at the dominant ratio",
            cfg.arch
        );
        assert_eq!(m.mean_period, 2.0 * sb.n_lock as f64 * ts);

        // 2N*Ts lies in the continuous-equivalent interval [T0, T1].
        let lp = cfg.equivalent_loop(mid, 0.0).unwrap();
        let interval = ct_equiv::period_interval(&lp).unwrap();
        assert!(
            interval.contains(sb.t_target, 1e-9 * ts),
            "{}: 2N*Ts = {} outside [{}, {}]",
            cfg.arch,
            sb.t_target,
            interval.t0().min(interval.t1()),
            interval.t0().max(interval.t1())
        );

        // Harmonic-series residual at the time-domain period is negligible.
        let hamel = ct_equiv::hamel_period(&lp, ct_equiv::lock_bracket(sb.n_lock, ts)).unwrap();
        let residual = ct_equiv::tsypkin_residual(&lp, hamel.period, 10_000).unwrap().abs();
        let scale = ct_equiv::tsypkin_first_harmonic(&lp, hamel.period).unwrap();
        assert!(
            residual <= 1e-6 * scale,
            "{}: harmonic residual {residual:e} above 1e-6 of amplitude {scale:e}",
            cfg.arch
        );
    }
    println!("PASS criterion 2: simulation, time-domain and harmonic-series methods agree");
}

/// Lock ratio with generous settling: near step edges the transient decays
/// far slower than in the step interior, and a short run misclassifies the
/// point.
fn settled_ratio(cfg: &ArchConfig, omega0: f64) -> Option<LockRatio> {
    let window = 4096;
    let mut lc = cfg
        .loop_config(omega0, LoopConfig::DEFAULT_KICK, window)
        .unwrap();
    lc.transient_skip *= 8;
    lc.n_samples = lc.transient_skip + 2 * window;
    let trace = loop_sim::simulate(&lc).unwrap();
    loop_sim::measure_period(&trace, lc.transient_skip, window)
        .ok()
        .and_then(|m| m.lock_ratio)
}

/// Bisects the boundary of "the simulation locks at 2N/1" between an inside
/// and an outside omega0, to within `granularity`.
fn simulated_edge(cfg: &ArchConfig, want: LockRatio, inside: f64, outside: f64, granularity: f64) -> f64 {
    let mut a = inside;
    let mut b = outside;
    assert_eq!(settled_ratio(cfg, a), Some(want), "midpoint does not lock");
    assert_ne!(settled_ratio(cfg, b), Some(want), "outside point still locks");
    while (a - b).abs() > granularity {
        let mid = 0.5 * (a + b);
        if settled_ratio(cfg, mid) == Some(want) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[test]
fn criterion_3_step_bound_bracketing() {
    for arch in [Architecture::Differentiator, Architecture::Pdo] {
        for m in [1, 2, 3] {
            let cfg = ArchConfig::nominal(arch, m, 1);
            let sb = bounds(&cfg);
            let delta = sb.width() / 100.0;
            let mid = 0.5 * (sb.omega_low + sb.omega_high);
            let want = LockRatio { num: 2 * sb.n_lock as u64, den: 1 };
            let low = simulated_edge(&cfg, want, mid, sb.omega_low - 10.0 * delta, delta);
            let high = simulated_edge(&cfg, want, mid, sb.omega_high + 10.0 * delta, delta);
            for (name, edge) in [("low", low), ("high", high)] {
                assert!(
                    (sb.omega_low - delta..=sb.omega_high + delta).contains(&edge),
                    "{arch} m={m}: simulated {name} edge {edge} outside [{}, {}] +/- {delta}",
                    sb.omega_low,
                    sb.omega_high
                );
            }
        }
    }
    println!("PASS criterion 3: simulated step edges lie within the analytical bounds");
}

#[test]
fn criterion_4_low_q_degrades_resolution() {
    for base in [pdo(), diff()] {
        let low_q = ArchConfig { q_factor: 2.5, ..base.clone() };
        assert!(
            bounds(&low_q).relative_width() > bounds(&base).relative_width(),
            "{}: Q=2.5 width not larger than Q=250 width",
            base.arch
        );
    }
    println!("PASS criterion 4: relative width at Q=2.5 strictly exceeds Q=250");
}

#[test]
fn criterion_5_filter_order_trends() {
    let widths = |arch: Architecture| -> Vec<f64> {
        resolution::curve_over_m(&ArchConfig::nominal(arch, 1, 1), &[1, 2, 3])
            .rows
            .iter()
            .map(|r| r.bounds.as_ref().unwrap().relative_width())
            .collect()
    };
    let d = widths(Architecture::Differentiator);
    assert!(d[0] < d[1] && d[1] < d[2], "differentiator widths not increasing: {d:?}");
    let p = widths(Architecture::Pdo);
    assert!(p[2] < p[0], "pdo width did not decrease from m=1 to m=3: {p:?}");
    println!("PASS criterion 5: width grows with m for the differentiator, shrinks for the PDO");
}

#[test]
fn criterion_6_pulse_width_trends() {
    let widths = |arch: Architecture, m: u32| -> Vec<f64> {
        resolution::curve_over_big_m(&ArchConfig::nominal(arch, m, 1), &[1, 2, 4, 8])
            .rows
            .iter()
            .map(|r| r.bounds.as_ref().unwrap().relative_width())
            .collect()
    };
    let d = widths(Architecture::Differentiator, 1);
    assert!(
        d.windows(2).all(|w| w[1] < w[0]),
        "differentiator widths not decreasing with M: {d:?}"
    );
    let p = widths(Architecture::Pdo, 2);
    assert!(
        p.windows(2).all(|w| w[1] > w[0]),
        "pdo widths not increasing with M: {p:?}"
    );
    assert!(
        d[3] < p[3],
        "at M=8 the differentiator ({}) should beat the pdo ({})",
        d[3],
        p[3]
    );
    println!("PASS criterion 6: shorter pulses help the differentiator, hurt the PDO");
}

#[test]
fn criterion_7_pdo_usually_better_at_hold() {
    for q in [250.0, 2.5] {
        let base = ArchConfig { q_factor: q, ..pdo() };
        let report = resolution::compare_architectures(&base, &[1, 2, 3]);
        let pdo_wins = report
            .rows
            .iter()
            .filter(|r| r.verdict() == Verdict::PdoBetter)
            .count();
        assert!(
            2 * pdo_wins > report.rows.len(),
            "Q={q}: pdo better in only {pdo_wins}/{} configurations",
            report.rows.len()
        );
    }
    println!("PASS criterion 7: PDO resolution better for a majority of m at Q=250 and Q=2.5");
}

#[test]
fn criterion_8_numerical_invariants() {
    let params = ResonatorParams::new(35.8e3, 250.0, 1.0).unwrap();
    let ts = 1.0 / (12.0 * 35.8e3);
    let x0 = StateVector::new(1e-9, 2e-5);

    // Semigroup: one long step equals two half steps.
    let full = Transition::new(&params, ts);
    let half = Transition::new(&params, 0.5 * ts);
    let a = full.apply(x0, 0.7);
    let b = half.apply(half.apply(x0, 0.7), 0.7);
    let scale = a.w.abs().max(a.v.abs() * ts).max(1e-300);
    assert!((a.w - b.w).abs() <= 1e-12 * scale && (a.v - b.v).abs() * ts <= 1e-12 * scale);

    // Energy decays under free response, is conserved in the undamped limit.
    let energy = |p: &ResonatorParams, s: &StateVector| {
        0.5 * s.v * s.v + 0.5 * p.omega0() * p.omega0() * s.w * s.w
    };
    let later = full.apply(x0, 0.0);
    assert!(energy(&params, &later) < energy(&params, &x0));
    let undamped = ResonatorParams::new(35.8e3, 1e12, 1.0).unwrap();
    let u_step = Transition::new(&undamped, ts);
    let u_later = u_step.apply(x0, 0.0);
    let (e0, e1) = (energy(&undamped, &x0), energy(&undamped, &u_later));
    assert!((e1 - e0).abs() <= 1e-9 * e0);

    // Exact propagation matches a fine-step RK4 integration.
    let rk4 = {
        let n = 20_000usize;
        let h = ts / n as f64;
        let f = |s: StateVector| StateVector {
            w: s.v,
            v: 0.7 * params.plant_gain()
                - 2.0 * params.xi() * params.omega0() * s.v
                - params.omega0() * params.omega0() * s.w,
        };
        let mut s = x0;
        for _ in 0..n {
            let k1 = f(s);
            let k2 = f(StateVector::new(s.w + 0.5 * h * k1.w, s.v + 0.5 * h * k1.v));
            let k3 = f(StateVector::new(s.w + 0.5 * h * k2.w, s.v + 0.5 * h * k2.v));
            let k4 = f(StateVector::new(s.w + h * k3.w, s.v + h * k3.v));
            s = StateVector::new(
                s.w + h / 6.0 * (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w),
                s.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
            );
        }
        s
    };
    assert!((a.w - rk4.w).abs() <= 1e-9 * scale && (a.v - rk4.v).abs() * ts <= 1e-9 * scale);

    // Loop-level bitwise invariants.
    let cfg = pdo();
    let mut lc = cfg
        .loop_config(cfg.nominal_omega0(), LoopConfig::DEFAULT_KICK, 256)
        .unwrap();
    lc.n_samples = lc.transient_skip + 512;
    assert!(loop_sim::commutation_check(&lc).unwrap());
    for lambda in [1e3, 1e-3] {
        assert!(loop_sim::gain_invariance_check(&lc, lambda).unwrap());
    }
    let hold_trace = loop_sim::simulate(&lc).unwrap();
    let mut pulse1 = lc.clone();
    pulse1.dac = relaylock::DacModel::Pulse { divisor: 1 };
    let pulse_trace = loop_sim::simulate(&pulse1).unwrap();
    assert_eq!(hold_trace.signs, pulse_trace.signs);
    assert_eq!(hold_trace.sampled_w, pulse_trace.sampled_w);

    // Time-scale invariance: scaling f0 and fs together leaves the relative
    // step width unchanged.
    let sb = bounds(&cfg);
    let scaled = ArchConfig { f0: cfg.f0 * 3.0, ..cfg };
    let sb_scaled = bounds(&scaled);
    let (r0, r1) = (sb.relative_width(), sb_scaled.relative_width());
    assert!(
        (r0 - r1).abs() <= 1e-10 * r0,
        "relative width not scale invariant: {r0} vs {r1}"
    );
    println!("PASS criterion 8: numerical invariant suite holds");
}

#[test]
fn criterion_9_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_relaylock");
    let dir = tempfile::tempdir().unwrap();
    let run = |path: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "staircase",
                "--points",
                "64",
                "--window",
                "256",
                "--range-pct",
                "2",
                "--out",
            ])
            .arg(path)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(path).unwrap()
    };
    let a = run(&dir.path().join("a.csv"));
    let b = run(&dir.path().join("b.csv"));
    assert!(!a.is_empty());
    assert_eq!(a, b, "staircase command is not byte-deterministic");
    println!("PASS criterion 9: staircase command output is byte-identical across runs");
}
