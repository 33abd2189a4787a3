//! Analytic model of how one degraded device shows up in the current
//! controller's voltage references.
//!
//! A device with extra on-resistance drops extra voltage while it
//! conducts. The closed current loop cancels that disturbance by raising
//! its voltage reference, so the reference inherits a repeating error
//! waveform: the conduction-weighted image of the extra drop. This module
//! produces that waveform, its harmonic content in the rotating frame,
//! and the loop transfer that describes how faithfully the reference
//! reproduces it at each harmonic.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::params::{DeviceId, OperatingPoint, SystemParams};

/// Harmonic orders are counted in the rotating frame, i.e. multiples of
/// the grid fundamental as seen after the transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqHarmonic {
    pub order: u32,
    /// d-axis phasor: the order-k component is `Re{d * exp(j k theta)}`.
    pub d: Complex64,
    /// q-axis phasor, same convention.
    pub q: Complex64,
}

/// Whether predictions include the finite loop bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    /// Assume the reference reproduces the disturbance exactly (unity
    /// response at every order).
    Ideal,
    /// Weight each order by the closed-loop response at its frequency.
    LoopCorrected,
}

/// Closed-loop transfer from a disturbance voltage at the converter
/// output to the voltage-reference deviation the controller produces in
/// response, evaluated at angular frequency `omega`.
///
/// Forward path: PI controller, output filter admittance, and the ADC
/// acquisition lag; the modulator transport lag closes the loop. The
/// integrator gives exactly unity response at DC, and the response rolls
/// off and lags as the order approaches the loop bandwidth.
pub fn loop_response(p: &SystemParams, omega: f64) -> Complex64 {
    if omega == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let s = Complex64::new(0.0, omega);
    let t_sa = p.t_sa();
    let g_pi = p.k_pc + p.k_ic / s;
    let g_f = 1.0 / (s * p.l_g + p.r_l);
    let g_adc = 1.0 / (0.5 * t_sa * s + 1.0);
    let g_pwm = 1.0 / (0.25 * t_sa * s + 1.0);
    let fwd = g_pi * g_f * g_adc;
    fwd / (1.0 + g_pwm * fwd)
}

/// How much of a disturbance at this response the reference fails to
/// reproduce, as a percentage: `|1 - g| * 100`.
pub fn suppression_percent(g: Complex64) -> f64 {
    (Complex64::new(1.0, 0.0) - g).norm() * 100.0
}

fn error_from_sin(device: DeviceId, m_d: f64, i_amp: f64, delta_r: f64, sin_psi: f64) -> f64 {
    let positive_half = device.is_top() == device.is_switch();
    if (sin_psi > 0.0) != positive_half || sin_psi == 0.0 {
        return 0.0;
    }
    let weight = if device.is_top() {
        0.5 + 0.5 * m_d * sin_psi
    } else {
        0.5 - 0.5 * m_d * sin_psi
    };
    delta_r * i_amp * sin_psi * weight
}

/// Per-phase voltage-reference error caused by `delta_r` of extra
/// on-resistance in `device`, at conduction angle `psi` of that device's
/// phase (the angle at which the phase current is `i_amp * sin(psi)`).
///
/// The device only contributes while it conducts: its own current
/// half-cycle, weighted by the fraction of the switching period it is on
/// (the modulation duty for top devices, its complement for bottom ones).
pub fn conduction_error_voltage(
    device: DeviceId,
    op: &OperatingPoint,
    delta_r: f64,
    psi: f64,
) -> f64 {
    error_from_sin(device, op.m_d, op.i_a_amp, delta_r, psi.sin())
}

/// Grid resolution for the spectral integrals. The error waveform has
/// slope discontinuities at the conduction boundaries, so coefficients
/// alias in from high orders as 1/N^2; this size keeps that below 1e-6
/// of the smallest coefficient retained.
const SPECTRUM_GRID: usize = 1 << 16;

/// Rotating-frame harmonic content of the reference error for a single
/// degraded device, up to `k_max`, with unity loop response.
///
/// The error lives on one phase only, so its rotating-frame projection
/// carries both axes at every order. Coefficients scale linearly with
/// `delta_r` and the phase-current amplitude.
pub fn error_spectrum_dq(
    op: &OperatingPoint,
    device: DeviceId,
    delta_r: f64,
    k_max: u32,
) -> Vec<DqHarmonic> {
    let delta = device.phase().displacement();
    let n = SPECTRUM_GRID;
    let mut d_wave = vec![0.0; n];
    let mut q_wave = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for i in 0..n {
        // Midpoint grid keeps samples off the conduction boundaries.
        let th = (i as f64 + 0.5) * TAU / n as f64;
        let (s, c) = (th - delta).sin_cos();
        // sin(psi) with psi = theta + pi/2 - delta collapses to cos(theta - delta).
        let e = error_from_sin(device, op.m_d, op.i_a_amp, delta_r, c);
        d_wave[i] = (2.0 / 3.0) * e * c;
        q_wave[i] = -(2.0 / 3.0) * e * s;
        theta[i] = th;
    }

    (0..=k_max)
        .map(|k| {
            let mut d = Complex64::new(0.0, 0.0);
            let mut q = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let (s, c) = (k as f64 * theta[i]).sin_cos();
                let e = Complex64::new(c, -s);
                d += d_wave[i] * e;
                q += q_wave[i] * e;
            }
            let scale = if k == 0 { 1.0 } else { 2.0 } / n as f64;
            DqHarmonic {
                order: k,
                d: d * scale,
                q: q * scale,
            }
        })
        .collect()
}

/// Predicted rotating-frame reference harmonics for one degraded device,
/// optionally weighted by the loop response at each order's frequency.
pub fn predicted_ref_harmonics(
    p: &SystemParams,
    op: &OperatingPoint,
    device: DeviceId,
    delta_r: f64,
    k_max: u32,
    mode: ResponseMode,
) -> Vec<DqHarmonic> {
    let mut spectra = error_spectrum_dq(op, device, delta_r, k_max);
    if mode == ResponseMode::LoopCorrected {
        for h in &mut spectra {
            let g = loop_response(p, h.order as f64 * op.omega);
            h.d *= g;
            h.q *= g;
        }
    }
    spectra
}

/// Folds rotating-frame harmonics back into stationary-frame coefficients
/// of one phase reference (`Re{c_m exp(j m theta)}` at displacement
/// `delta` behind phase A). An order-k rotating-frame component lands at
/// stationary orders k-1 and k+1, which is why a single degraded device
/// stamps a recognisable pattern across all three phase references.
pub fn phase_coefficients(harmonics: &[DqHarmonic], delta: f64) -> Vec<(u32, Complex64)> {
    let k_max = harmonics.iter().map(|h| h.order).max().unwrap_or(0);
    let m_max = (k_max + 1) as i64;
    // Two-sided accumulation: index m in [-m_max, m_max].
    let mut two_sided = vec![Complex64::new(0.0, 0.0); (2 * m_max + 1) as usize];
    let idx = |m: i64| (m + m_max) as usize;
    let rot_minus = Complex64::from_polar(0.5, -delta);
    let rot_plus = Complex64::from_polar(0.5, delta);
    let j = Complex64::new(0.0, 1.0);
    for h in harmonics {
        let k = h.order as i64;
        // Two-sided halves of each axis; DC stays whole.
        let (d2, q2) = if h.order == 0 {
            (h.d, h.q)
        } else {
            (0.5 * h.d, 0.5 * h.q)
        };
        for (kk, d_c, q_c) in [(k, d2, q2), (-k, d2.conj(), q2.conj())] {
            // d * cos(theta - delta) and -q * sin(theta - delta).
            two_sided[idx(kk + 1)] += d_c * rot_minus + q_c * (j * rot_minus);
            two_sided[idx(kk - 1)] += d_c * rot_plus - q_c * (j * rot_plus);
            if h.order == 0 {
                break;
            }
        }
    }
    (0..=m_max)
        .map(|m| {
            let c = if m == 0 {
                let dc = two_sided[idx(0)];
                Complex64::new(dc.re, 0.0)
            } else {
                // Fold the mirrored negative order into the one-sided phasor.
                two_sided[idx(m)] + two_sided[idx(-m)].conj()
            };
            (m as u32, c)
        })
        .collect()
}

/// Evaluates a rotating-frame harmonic series at angle `theta`.
pub fn evaluate_series(harmonics: &[DqHarmonic], theta: f64) -> (f64, f64) {
    let mut d = 0.0;
    let mut q = 0.0;
    for h in harmonics {
        let rot = Complex64::from_polar(1.0, h.order as f64 * theta);
        d += (h.d * rot).re;
        q += (h.q * rot).re;
    }
    (d, q)
}

/// Magnitude sensitivity of each rotating-frame harmonic to on-resistance
/// growth, in volts per ohm, at the given operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub order: u32,
    /// |d-axis coefficient| per ohm.
    pub s_d: f64,
    /// |q-axis coefficient| per ohm.
    pub s_q: f64,
}

/// Per-ohm harmonic sensitivities used to invert measured spectra into a
/// resistance estimate. In loop-corrected mode each order is derated by
/// the loop-response magnitude at its frequency.
pub fn sensitivity_table(
    p: &SystemParams,
    op: &OperatingPoint,
    device: DeviceId,
    orders: &[u32],
    mode: ResponseMode,
) -> Vec<SensitivityRow> {
    let k_max = orders.iter().copied().max().unwrap_or(0);
    let spectra = predicted_ref_harmonics(p, op, device, 1.0, k_max, mode);
    orders
        .iter()
        .map(|&k| {
            let h = spectra[k as usize];
            SensitivityRow {
                order: k,
                s_d: h.d.norm(),
                s_q: h.q.norm(),
            }
        })
        .collect()
}
