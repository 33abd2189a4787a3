//! Rotating-frame transforms and the discrete current controller.
//!
//! The controller runs once per sampling period: transform the phase
//! currents into the dq frame, apply one backward-Euler PI step per axis,
//! clamp the output to the available bus voltage, and transform back into
//! per-phase voltage references.

use std::f64::consts::TAU;

/// A vector in the rotating reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq0Vector {
    pub d: f64,
    pub q: f64,
    pub zero: f64,
}

/// Amplitude-invariant transform from phase quantities to the rotating
/// frame at angle `theta`. A balanced cosine set
/// `x_a = X cos(theta + phi)` maps to `d = X cos(phi)`, `q = X sin(phi)`.
pub fn park(a: f64, b: f64, c: f64, theta: f64) -> Dq0Vector {
    let (s0, c0) = theta.sin_cos();
    let (s1, c1) = (theta - TAU / 3.0).sin_cos();
    let (s2, c2) = (theta + TAU / 3.0).sin_cos();
    Dq0Vector {
        d: (2.0 / 3.0) * (a * c0 + b * c1 + c * c2),
        q: -(2.0 / 3.0) * (a * s0 + b * s1 + c * s2),
        zero: (a + b + c) / 3.0,
    }
}

/// Inverse of [`park`]: reconstructs one phase at displacement `delta`
/// behind phase A (0, 2pi/3, 4pi/3).
pub fn inv_park_phase(v: Dq0Vector, theta: f64, delta: f64) -> f64 {
    let (s, c) = (theta - delta).sin_cos();
    v.d * c - v.q * s + v.zero
}

/// Inverse transform for all three phases.
pub fn inv_park(v: Dq0Vector, theta: f64) -> [f64; 3] {
    [
        inv_park_phase(v, theta, 0.0),
        inv_park_phase(v, theta, TAU / 3.0),
        inv_park_phase(v, theta, 2.0 * TAU / 3.0),
    ]
}

/// PI gains of the current loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub k_p: f64,
    pub k_i: f64,
}

/// Integrator and output state of the two-axis PI controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    pub integrator_d: f64,
    pub integrator_q: f64,
    /// Voltage reference computed on the previous step, still travelling
    /// through the one-sample computation delay.
    pub last_v_ref: Dq0Vector,
    /// Set once any output clamp engages; cleared never.
    pub saturated: bool,
}

/// One controller step: backward-Euler integration of the current error
/// and clamping of each axis to `+/- v_dc / 2`.
///
/// Returns the new dq voltage reference. Integrator update happens before
/// the clamp, so persistent saturation is flagged through
/// [`ControllerState::saturated`] rather than silently wound down.
pub fn pi_step(
    state: &mut ControllerState,
    gains: PiGains,
    i_ref: Dq0Vector,
    i_meas: Dq0Vector,
    t_sa: f64,
    v_dc: f64,
) -> Dq0Vector {
    let err_d = i_ref.d - i_meas.d;
    let err_q = i_ref.q - i_meas.q;
    state.integrator_d += gains.k_i * t_sa * err_d;
    state.integrator_q += gains.k_i * t_sa * err_q;

    let limit = v_dc / 2.0;
    let clamp = |x: f64, saturated: &mut bool| {
        if x.abs() > limit {
            *saturated = true;
            x.clamp(-limit, limit)
        } else {
            x
        }
    };
    let v = Dq0Vector {
        d: clamp(gains.k_p * err_d + state.integrator_d, &mut state.saturated),
        q: clamp(gains.k_p * err_q + state.integrator_q, &mut state.saturated),
        zero: 0.0,
    };
    state.last_v_ref = v;
    v
}

/// Sinusoidal PWM duty cycles from per-phase voltage references:
/// `d_x = 1/2 + v_x / v_dc`, clamped to [0, 1].
pub fn spwm_duties(v_refs: [f64; 3], v_dc: f64) -> [f64; 3] {
    v_refs.map(|v| (0.5 + v / v_dc).clamp(0.0, 1.0))
}
