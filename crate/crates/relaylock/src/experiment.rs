//! Shared experiment parameter bundle.
//!
//! An [`ArchConfig`] names one loop architecture at one operating point
//! (resonance frequency, quality factor, oversampling ratio, filter order and
//! DAC divisor) and can instantiate both the mixed-signal simulation
//! configuration and the continuous-time equivalent loop for any swept
//! `omega0`. The staircase and resolution drivers and the CLI all build on it.

use crate::ct_equiv::EquivalentLoop;
use crate::error::{Error, Result};
use crate::loop_sim::{Architecture, DacModel, FeedbackFilter, LoopConfig};
use crate::resonator::{ResonatorParams, StateVector};

/// Default resonance frequency of the reference operating point, Hz.
pub const DEFAULT_F0: f64 = 35.8e3;
/// Default quality factor of the reference operating point.
pub const DEFAULT_Q: f64 = 250.0;
/// Default oversampling ratio `Fs/F0`.
pub const DEFAULT_OVERSAMPLING: f64 = 12.0;

/// One architecture at one operating point.
#[derive(Debug, Clone)]
pub struct ArchConfig {
    pub arch: Architecture,
    /// Filter order: delay in samples of the delayed tap.
    pub m: u32,
    /// DAC pulse divisor; 1 means zero-order hold.
    pub big_m: u32,
    /// Nominal resonance frequency, Hz.
    pub f0: f64,
    pub q_factor: f64,
    /// Sampling ratio `Fs/F0`.
    pub oversampling: f64,
    pub feedback_sign: i32,
    pub plant_gain: f64,
}

impl ArchConfig {
    /// Reference operating point (F0 = 35.8 kHz, Q = 250, Fs = 12 F0) with the
    /// architecture's default loop polarity.
    pub fn nominal(arch: Architecture, m: u32, big_m: u32) -> Self {
        Self {
            arch,
            m,
            big_m,
            f0: DEFAULT_F0,
            q_factor: DEFAULT_Q,
            oversampling: DEFAULT_OVERSAMPLING,
            feedback_sign: arch.default_feedback_sign(),
            plant_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resonator()?;
        self.filter()?;
        self.dac()?;
        if !(self.oversampling.is_finite() && self.oversampling > 2.0) {
            return Err(Error::invalid(
                "oversampling",
                format!("must be finite and > 2, got {}", self.oversampling),
            ));
        }
        if self.feedback_sign != 1 && self.feedback_sign != -1 {
            return Err(Error::invalid("feedback_sign", "must be +1 or -1"));
        }
        Ok(())
    }

    pub fn resonator(&self) -> Result<ResonatorParams> {
        ResonatorParams::new(self.f0, self.q_factor, self.plant_gain)
    }

    pub fn filter(&self) -> Result<FeedbackFilter> {
        self.arch.filter(self.m)
    }

    pub fn dac(&self) -> Result<DacModel> {
        if self.big_m == 1 {
            Ok(DacModel::Hold)
        } else {
            DacModel::pulse(self.big_m)
        }
    }

    pub fn fs(&self) -> f64 {
        self.oversampling * self.f0
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.fs()
    }

    pub fn nominal_omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0
    }

    /// Dominant even lock near resonance: `T = 2N*Ts` with
    /// `N = round(oversampling/2)`.
    pub fn dominant_lock(&self) -> u32 {
        (self.oversampling / 2.0).round().max(1.0) as u32
    }

    /// Continuous-time equivalent loop at a swept `omega0` and delay `phi0`.
    pub fn equivalent_loop(&self, omega0: f64, phi0: f64) -> Result<EquivalentLoop> {
        let resonator = self.resonator()?.with_omega0(omega0)?;
        let lp = EquivalentLoop {
            resonator,
            filter: self.filter()?,
            dac: self.dac()?,
            ts: self.ts(),
            phi0,
            feedback_sign: self.feedback_sign,
        };
        lp.validate()?;
        Ok(lp)
    }

    /// Mixed-signal simulation configuration at a swept `omega0`, sized for a
    /// measurement window of `window` samples after the settling transient.
    pub fn loop_config(
        &self,
        omega0: f64,
        initial_state: StateVector,
        window: usize,
    ) -> Result<LoopConfig> {
        let resonator = self.resonator()?.with_omega0(omega0)?;
        let transient = LoopConfig::default_transient_skip(&resonator, self.fs());
        let config = LoopConfig {
            resonator,
            filter: self.filter()?,
            dac: self.dac()?,
            fs: self.fs(),
            feedback_sign: self.feedback_sign,
            n_samples: transient + 2 * window,
            initial_state,
            transient_skip: transient,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_reference_point() {
        let cfg = ArchConfig::nominal(Architecture::Pdo, 2, 1);
        assert_eq!(cfg.dominant_lock(), 6);
        assert_eq!(cfg.dac().unwrap(), DacModel::Hold);
        assert_eq!(cfg.feedback_sign, -1);
        assert!((cfg.ts() - 2.3277467411545624e-6).abs() < 1e-21);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut cfg = ArchConfig::nominal(Architecture::Differentiator, 1, 1);
        cfg.q_factor = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = ArchConfig::nominal(Architecture::Differentiator, 1, 1);
        cfg.oversampling = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loop_config_matches_reference_helper() {
        let cfg = ArchConfig::nominal(Architecture::Pdo, 2, 4);
        let lc = cfg
            .loop_config(cfg.nominal_omega0(), LoopConfig::DEFAULT_KICK, 1024)
            .unwrap();
        assert_eq!(lc.dac, DacModel::Pulse { divisor: 4 });
        assert_eq!(lc.fs, 12.0 * 35.8e3);
        assert!(lc.n_samples > lc.transient_skip);
    }
}
