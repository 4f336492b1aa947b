//! Continuous-time model of the second-order resonator plant.
//!
//! The plant is the underdamped oscillator
//!
//! ```text
//!   w'' + 2*xi*omega0*w' + omega0^2 * w = plant_gain * u
//! ```
//!
//! Propagation under piecewise-constant forcing is done with the exact
//! damped-sinusoid closed form, never with a numerical integrator. Staircase
//! steps can be narrower than 1e-6 relative in omega0, so integrator drift is
//! not acceptable in the lock-detection path.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Parameters of the second-order plant. `xi` and `omega0` are derived from
/// `f0` and `q_factor` with the fixed conventions `omega0 = 2*pi*f0` and
/// `xi = 1/(2*Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorParams {
    f0: f64,
    q_factor: f64,
    plant_gain: f64,
}

impl ResonatorParams {
    pub fn new(f0: f64, q_factor: f64, plant_gain: f64) -> Result<Self> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(Error::invalid("f0", format!("must be finite and > 0, got {f0}")));
        }
        if !(q_factor.is_finite() && q_factor > 0.0) {
            return Err(Error::invalid(
                "q_factor",
                format!("must be finite and > 0, got {q_factor}"),
            ));
        }
        // xi = 1/(2Q) must stay strictly inside (0, 1): underdamped only.
        if q_factor <= 0.5 {
            return Err(Error::invalid(
                "q_factor",
                format!("must exceed 0.5 (underdamped plant), got {q_factor}"),
            ));
        }
        if !(plant_gain.is_finite() && plant_gain != 0.0) {
            return Err(Error::invalid(
                "plant_gain",
                format!("must be finite and nonzero, got {plant_gain}"),
            ));
        }
        Ok(Self {
            f0,
            q_factor,
            plant_gain,
        })
    }

    /// Same plant with the natural pulsation replaced by `omega0` (rad/s).
    pub fn with_omega0(&self, omega0: f64) -> Result<Self> {
        Self::new(omega0 / (2.0 * std::f64::consts::PI), self.q_factor, self.plant_gain)
    }

    /// Same plant with the gain scaled by `lambda`.
    pub fn with_gain_scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.f0, self.q_factor, self.plant_gain * lambda)
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0
    }

    pub fn q_factor(&self) -> f64 {
        self.q_factor
    }

    pub fn xi(&self) -> f64 {
        1.0 / (2.0 * self.q_factor)
    }

    pub fn plant_gain(&self) -> f64 {
        self.plant_gain
    }

    /// Frequency response `plant_gain / (omega0^2 - omega^2 + 2j*xi*omega0*omega)`.
    pub fn freq_response(&self, omega: f64) -> Complex64 {
        let om0 = self.omega0();
        let denom = Complex64::new(om0 * om0 - omega * omega, 2.0 * self.xi() * om0 * omega);
        Complex64::new(self.plant_gain, 0.0) / denom
    }
}

/// Displacement/velocity pair of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub w: f64,
    pub v: f64,
}

impl StateVector {
    pub fn new(w: f64, v: f64) -> Self {
        Self { w, v }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.v.is_finite()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            w: self.w * lambda,
            v: self.v * lambda,
        }
    }
}

/// Precomputed exact state transition over a fixed time step.
///
/// For constant forcing `u`, the state moves as
/// `x(t+dt) = A * (x(t) - x_eq(u)) + x_eq(u)` with `x_eq = (gain*u/omega0^2, 0)`
/// and `A` the damped-rotation matrix below. Reusing one `Transition` across a
/// long simulation keeps every sample bit-identical and avoids per-step
/// transcendental calls.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    eq_scale: f64,
    dt: f64,
}

impl Transition {
    pub fn new(params: &ResonatorParams, dt: f64) -> Self {
        let om0 = params.omega0();
        let xi = params.xi();
        let alpha = xi * om0;
        let wd = om0 * (1.0 - xi * xi).sqrt();
        let decay = (-alpha * dt).exp();
        let (s, c) = (wd * dt).sin_cos();
        Self {
            a11: decay * (c + alpha / wd * s),
            a12: decay * s / wd,
            a21: -decay * om0 * om0 * s / wd,
            a22: decay * (c - alpha / wd * s),
            eq_scale: params.plant_gain() / (om0 * om0),
            dt,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn apply(&self, state: StateVector, u: f64) -> StateVector {
        let weq = self.eq_scale * u;
        let dw = state.w - weq;
        StateVector {
            w: weq + self.a11 * dw + self.a12 * state.v,
            v: self.a21 * dw + self.a22 * state.v,
        }
    }

    /// Homogeneous part as a row-major 2x2 matrix.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a21, self.a22]]
    }

    /// Constant part `(I - A) * x_eq(u)` of the affine step.
    pub fn offset(&self, u: f64) -> [f64; 2] {
        let weq = self.eq_scale * u;
        [(1.0 - self.a11) * weq, -self.a21 * weq]
    }
}

/// Exact state at `t + dt` under constant forcing `u`.
pub fn propagate_const_input(
    params: &ResonatorParams,
    state: StateVector,
    u: f64,
    dt: f64,
) -> Result<StateVector> {
    if !state.is_finite() {
        return Err(Error::invalid("state", "must be finite"));
    }
    if !u.is_finite() {
        return Err(Error::invalid("u", format!("must be finite, got {u}")));
    }
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::invalid("dt", format!("must be finite and >= 0, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(state);
    }
    Ok(Transition::new(params, dt).apply(state, u))
}

/// Chains `propagate_const_input` over `(duration, level)` segments.
/// An empty list is the identity.
pub fn propagate_piecewise(
    params: &ResonatorParams,
    state: StateVector,
    segments: &[(f64, f64)],
) -> Result<StateVector> {
    let mut x = state;
    for &(dt, u) in segments {
        x = propagate_const_input(params, x, u, dt)?;
    }
    Ok(x)
}
