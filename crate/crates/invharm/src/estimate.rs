//! Turning measured fault signatures back into physical health numbers:
//! on-resistance growth, the leg it lives in, and distance from the
//! end-of-life threshold.

use num_complex::Complex64;

use crate::analytic::SensitivityRow;
use crate::error::{Error, Result};
use crate::params::Phase;
use crate::spectrum::Spectrum;

/// Result of inverting the rotating-frame delta spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct HealthEstimate {
    /// Estimated on-resistance increase in ohms.
    pub delta_r_on: f64,
    /// Weighted relative RMS misfit between the measured magnitudes and
    /// the fitted single-parameter model (0 = perfect fit).
    pub residual: f64,
    /// Orders that entered the fit.
    pub orders: Vec<u32>,
}

/// Least-squares estimate of on-resistance growth from the measured
/// rotating-frame delta spectra of the two reference axes.
///
/// Each order and axis contributes a magnitude measurement `|V| =
/// delta_r * s` with sensitivity `s` from the analytic table. The fit
/// weights each measurement by `s^2`, which both makes the estimator the
/// minimum-variance one for equal additive noise and suppresses orders
/// that carry little signal:
/// `delta_r = sum(s^3 |V|) / sum(s^4)`.
pub fn estimate_delta_ron(
    delta_d: &Spectrum,
    delta_q: &Spectrum,
    sens: &[SensitivityRow],
    orders: &[u32],
) -> Result<HealthEstimate> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut terms: Vec<(f64, f64)> = Vec::new(); // (sensitivity, measured magnitude)
    for &k in orders {
        let row = sens
            .iter()
            .find(|r| r.order == k)
            .ok_or(Error::MissingOrder(k))?;
        let vd = delta_d.require(k)?.norm();
        let vq = delta_q.require(k)?.norm();
        for (s, v) in [(row.s_d, vd), (row.s_q, vq)] {
            num += s.powi(3) * v;
            den += s.powi(4);
            terms.push((s, v));
        }
    }
    if den <= 0.0 {
        return Err(Error::ZeroSensitivity);
    }
    let delta_r_on = num / den;

    let mut misfit = 0.0;
    let mut signal = 0.0;
    for (s, v) in terms {
        let w = s * s;
        misfit += w * (v - delta_r_on * s).powi(2);
        signal += w * v * v;
    }
    let residual = if signal > 0.0 {
        (misfit / signal).sqrt()
    } else {
        0.0
    };
    Ok(HealthEstimate {
        delta_r_on,
        residual,
        orders: orders.to_vec(),
    })
}

/// Outcome of correlating the three phase-reference signatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseLocation {
    pub phase: Phase,
    /// 0 = ambiguous, 1 = unambiguous margin between best and runner-up.
    pub confidence: f64,
}

/// Identifies which leg hosts the degraded device from the stationary
/// per-phase delta spectra.
///
/// A fault in one phase stamps that phase's reference with the full
/// signature and the other two with `-1/2` of it (the rotating-frame
/// controller spreads the correction but cannot emit zero sequence), so
/// the coefficients across `(a, b, c)` follow one of the patterns
/// `(2,-1,-1)`, `(-1,2,-1)`, `(-1,-1,2)`. The best-correlating pattern
/// names the leg; the margin over the runner-up sets the confidence.
///
/// Returns `None` when the total signature is below `noise_floor` volts.
pub fn locate_phase(
    delta_abc: &[Spectrum; 3],
    orders: &[u32],
    noise_floor: f64,
) -> Result<Option<PhaseLocation>> {
    const PATTERNS: [[f64; 3]; 3] = [[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]];
    let pattern_norm = 6.0f64.sqrt();

    let mut scores = [0.0f64; 3];
    let mut total = 0.0f64;
    for &m in orders {
        let v: [Complex64; 3] = [
            delta_abc[0].require(m)?,
            delta_abc[1].require(m)?,
            delta_abc[2].require(m)?,
        ];
        let vnorm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        total += vnorm;
        for (x, p) in PATTERNS.iter().enumerate() {
            let dot = v[0] * p[0] + v[1] * p[1] + v[2] * p[2];
            scores[x] += dot.norm() / pattern_norm;
        }
    }
    if total < noise_floor {
        return Ok(None);
    }
    for s in &mut scores {
        *s /= total;
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let confidence = (2.0 * (scores[idx[0]] - scores[idx[1]])).clamp(0.0, 1.0);
    Ok(Some(PhaseLocation {
        phase: Phase::ALL[idx[0]],
        confidence,
    }))
}

/// Where an estimate sits relative to the end-of-life threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthStatus {
    /// Below half the end-of-life resistance growth.
    Healthy,
    /// Past half way, not yet at the threshold.
    Watch,
    /// At or past the threshold.
    EndOfLife,
}

impl HealthStatus {
    pub fn label(self) -> &'static str {
        match self {
            HealthStatus::Healthy => "Healthy",
            HealthStatus::Watch => "Watch",
            HealthStatus::EndOfLife => "EndOfLife",
        }
    }
}

/// Classifies the consumed fraction of the end-of-life budget.
pub fn classify(fraction: f64) -> HealthStatus {
    if fraction < 0.5 {
        HealthStatus::Healthy
    } else if fraction < 1.0 {
        HealthStatus::Watch
    } else {
        HealthStatus::EndOfLife
    }
}

/// Rollup of one monitoring pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EolReport {
    pub estimate: HealthEstimate,
    /// End-of-life resistance growth for the monitored device, in ohms.
    pub eol_delta_r_on: f64,
    /// Estimated fraction of the end-of-life budget consumed.
    pub fraction: f64,
    pub status: HealthStatus,
    pub location: Option<PhaseLocation>,
}

/// Combines an estimate with the end-of-life budget (5% of the baseline
/// on-resistance) and an optional localisation outcome.
pub fn eol_report(
    estimate: HealthEstimate,
    baseline_r_on: f64,
    location: Option<PhaseLocation>,
) -> EolReport {
    let eol_delta_r_on = 0.05 * baseline_r_on;
    let fraction = if eol_delta_r_on > 0.0 {
        estimate.delta_r_on / eol_delta_r_on
    } else {
        f64::INFINITY
    };
    EolReport {
        estimate,
        eol_delta_r_on,
        fraction,
        status: classify(fraction),
        location,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn spectrum(label: &str, entries: &[(u32, f64, f64)]) -> Spectrum {
        let coeffs: BTreeMap<u32, Complex64> = entries
            .iter()
            .map(|&(k, mag, phase)| (k, Complex64::from_polar(mag, phase)))
            .collect();
        Spectrum {
            label: label.into(),
            coeffs,
        }
    }

    fn sens() -> Vec<SensitivityRow> {
        vec![
            SensitivityRow { order: 0, s_d: 1.5, s_q: 0.0 },
            SensitivityRow { order: 1, s_d: 2.5, s_q: 1.1 },
            SensitivityRow { order: 2, s_d: 1.6, s_q: 1.4 },
        ]
    }

    #[test]
    fn exact_measurements_recover_delta_exactly() {
        let dr = 1.125e-3;
        let s = sens();
        // Arbitrary phases: only magnitudes matter.
        let d = spectrum(
            "delta_v_d_ref",
            &[(0, dr * 1.5, 0.0), (1, dr * 2.5, 1.0), (2, dr * 1.6, -2.0)],
        );
        let q = spectrum(
            "delta_v_q_ref",
            &[(0, 0.0, 0.0), (1, dr * 1.1, 0.3), (2, dr * 1.4, 2.9)],
        );
        let est = estimate_delta_ron(&d, &q, &s, &[0, 1, 2]).unwrap();
        assert_relative_eq!(est.delta_r_on, dr, max_relative = 1e-12);
        assert!(est.residual < 1e-12);
        assert_eq!(est.orders, vec![0, 1, 2]);
    }

    #[test]
    fn weighting_discounts_weak_orders() {
        let dr = 1.0e-3;
        let s = sens();
        // Corrupt the weakest measurement (q at order 1) heavily.
        let d = spectrum(
            "delta_v_d_ref",
            &[(0, dr * 1.5, 0.0), (1, dr * 2.5, 0.0), (2, dr * 1.6, 0.0)],
        );
        let q = spectrum(
            "delta_v_q_ref",
            &[(0, 0.0, 0.0), (1, dr * 1.1 * 3.0, 0.0), (2, dr * 1.4, 0.0)],
        );
        let est = estimate_delta_ron(&d, &q, &s, &[0, 1, 2]).unwrap();
        // The bias stays well under the 3x corruption of that one term.
        assert!((est.delta_r_on - dr).abs() / dr < 0.12);
        assert!(est.residual > 0.05);
    }

    #[test]
    fn missing_order_is_reported() {
        let s = sens();
        let d = spectrum("delta_v_d_ref", &[(0, 1.0, 0.0)]);
        let q = spectrum("delta_v_q_ref", &[(0, 1.0, 0.0)]);
        match estimate_delta_ron(&d, &q, &s, &[0, 1]) {
            Err(Error::MissingOrder(1)) => {}
            other => panic!("expected MissingOrder(1), got {other:?}"),
        }
        match estimate_delta_ron(&d, &q, &s, &[5]) {
            Err(Error::MissingOrder(5)) => {}
            other => panic!("expected MissingOrder(5), got {other:?}"),
        }
    }

    #[test]
    fn all_zero_sensitivity_is_an_error() {
        let s = vec![SensitivityRow { order: 0, s_d: 0.0, s_q: 0.0 }];
        let d = spectrum("delta_v_d_ref", &[(0, 1.0, 0.0)]);
        let q = spectrum("delta_v_q_ref", &[(0, 1.0, 0.0)]);
        assert!(matches!(
            estimate_delta_ron(&d, &q, &s, &[0]),
            Err(Error::ZeroSensitivity)
        ));
    }

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let s = sens();
        let d = spectrum("delta_v_d_ref", &[(0, 0.0, 0.0), (1, 0.0, 0.0), (2, 0.0, 0.0)]);
        let q = d.clone();
        let est = estimate_delta_ron(&d, &q, &s, &[0, 1, 2]).unwrap();
        assert_eq!(est.delta_r_on, 0.0);
        assert_eq!(est.residual, 0.0);
    }

    fn abc_from_pattern(pattern: [f64; 3], scale: f64) -> [Spectrum; 3] {
        let mk = |name: &str, g: f64| {
            spectrum(
                name,
                &[(0, (g * scale).abs(), if g < 0.0 { std::f64::consts::PI } else { 0.0 }),
                  (1, (g * scale).abs() * 2.0, if g < 0.0 { 1.0 + std::f64::consts::PI } else { 1.0 })],
            )
        };
        [
            mk("delta_v_a_ref", pattern[0]),
            mk("delta_v_b_ref", pattern[1]),
            mk("delta_v_c_ref", pattern[2]),
        ]
    }

    #[test]
    fn perfect_patterns_locate_each_phase() {
        for (pattern, phase) in [
            ([2.0, -1.0, -1.0], Phase::A),
            ([-1.0, 2.0, -1.0], Phase::B),
            ([-1.0, -1.0, 2.0], Phase::C),
        ] {
            let abc = abc_from_pattern(pattern, 1e-3);
            let loc = locate_phase(&abc, &[0, 1], 1e-6).unwrap().unwrap();
            assert_eq!(loc.phase, phase);
            assert_relative_eq!(loc.confidence, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn common_mode_signature_is_ambiguous() {
        // Equal signatures on all phases match every pattern equally badly.
        let abc = abc_from_pattern([1.0, 1.0, 1.0], 1e-3);
        let loc = locate_phase(&abc, &[0, 1], 1e-6).unwrap().unwrap();
        assert!(loc.confidence < 1e-9);
    }

    #[test]
    fn silence_stays_below_the_noise_floor() {
        let abc = abc_from_pattern([2.0, -1.0, -1.0], 1e-9);
        assert_eq!(locate_phase(&abc, &[0, 1], 1e-5).unwrap(), None);
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(0.0), HealthStatus::Healthy);
        assert_eq!(classify(0.49), HealthStatus::Healthy);
        assert_eq!(classify(0.5), HealthStatus::Watch);
        assert_eq!(classify(0.99), HealthStatus::Watch);
        assert_eq!(classify(1.0), HealthStatus::EndOfLife);
        assert_eq!(classify(2.0), HealthStatus::EndOfLife);
    }

    #[test]
    fn report_consumes_budget_fractions() {
        let est = HealthEstimate {
            delta_r_on: 1.125e-3,
            residual: 0.01,
            orders: vec![0, 1, 2],
        };
        let report = eol_report(est, 0.0225, None);
        assert_relative_eq!(report.eol_delta_r_on, 1.125e-3, max_relative = 1e-12);
        assert_relative_eq!(report.fraction, 1.0, max_relative = 1e-12);
        assert_eq!(report.status, HealthStatus::EndOfLife);

        let half = HealthEstimate {
            delta_r_on: 0.45e-3,
            residual: 0.0,
            orders: vec![0],
        };
        let report = eol_report(half, 0.0225, None);
        assert_relative_eq!(report.fraction, 0.4, max_relative = 1e-12);
        assert_eq!(report.status, HealthStatus::Healthy);
    }
}
