//! Sampled traces, synchronous harmonic extraction, and the CSV forms
//! both are stored in.
//!
//! Harmonics are extracted against the logged transform angle rather
//! than wall-clock time, so a window covering whole fundamental cycles
//! is coherent by construction and no spectral leakage windowing is
//! needed. Coefficients follow the `Re{X_k e^{j k theta}}` convention
//! used by the analytic model, making simulated and predicted spectra
//! directly comparable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Logged quantities that can be turned into spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    IA,
    IB,
    IC,
    VdRef,
    VqRef,
    VaRef,
    VbRef,
    VcRef,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::IA,
        Channel::IB,
        Channel::IC,
        Channel::VdRef,
        Channel::VqRef,
        Channel::VaRef,
        Channel::VbRef,
        Channel::VcRef,
    ];

    fn name(self) -> &'static str {
        match self {
            Channel::IA => "i_a",
            Channel::IB => "i_b",
            Channel::IC => "i_c",
            Channel::VdRef => "v_d_ref",
            Channel::VqRef => "v_q_ref",
            Channel::VaRef => "v_a_ref",
            Channel::VbRef => "v_b_ref",
            Channel::VcRef => "v_c_ref",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown channel \"{s}\"")))
    }
}

/// One simulation's analysis window, sampled at the control rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// Sampling period in seconds.
    pub t_sa: f64,
    /// Control samples per fundamental cycle.
    pub samples_per_cycle: usize,
    /// Sample instants in seconds.
    pub t: Vec<f64>,
    /// Transform angle at each sample, in radians (unwrapped).
    pub theta: Vec<f64>,
    pub i_a: Vec<f64>,
    pub i_b: Vec<f64>,
    pub i_c: Vec<f64>,
    pub v_d_ref: Vec<f64>,
    pub v_q_ref: Vec<f64>,
    pub v_a_ref: Vec<f64>,
    pub v_b_ref: Vec<f64>,
    pub v_c_ref: Vec<f64>,
    /// True if the controller output clamp engaged at any point.
    pub saturated: bool,
    /// Cycle-to-cycle RMS current change at the end of settling, in
    /// amperes; the steady-state check the driver applies to this value
    /// lives with the simulation routines.
    pub convergence_residual: f64,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        match ch {
            Channel::IA => &self.i_a,
            Channel::IB => &self.i_b,
            Channel::IC => &self.i_c,
            Channel::VdRef => &self.v_d_ref,
            Channel::VqRef => &self.v_q_ref,
            Channel::VaRef => &self.v_a_ref,
            Channel::VbRef => &self.v_b_ref,
            Channel::VcRef => &self.v_c_ref,
        }
    }
}

/// Harmonic coefficients of one labelled quantity, keyed by order.
/// The order-k component of the signal is `Re{coeffs[k] * e^{j k theta}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub label: String,
    pub coeffs: BTreeMap<u32, Complex64>,
}

impl Spectrum {
    pub fn get(&self, order: u32) -> Option<Complex64> {
        self.coeffs.get(&order).copied()
    }

    pub fn require(&self, order: u32) -> Result<Complex64> {
        self.get(order).ok_or(Error::MissingOrder(order))
    }
}

/// Projects a sampled signal onto harmonics of the transform angle:
/// `X_k = (2/N) sum x[n] e^{-j k theta[n]}` for k >= 1, `1/N` at DC.
///
/// Exact (to rounding) for any signal band-limited below the fold-over
/// order when `theta` advances uniformly and the window spans whole
/// cycles.
pub fn sync_dft(values: &[f64], theta: &[f64], k_max: u32) -> BTreeMap<u32, Complex64> {
    assert_eq!(values.len(), theta.len(), "trace channels must align");
    let n = values.len() as f64;
    let mut out = BTreeMap::new();
    for k in 0..=k_max {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&x, &th) in values.iter().zip(theta) {
            let (s, c) = (k as f64 * th).sin_cos();
            acc += x * Complex64::new(c, -s);
        }
        let scale = if k == 0 { 1.0 } else { 2.0 } / n;
        out.insert(k, acc * scale);
    }
    out
}

/// Spectrum of one trace channel up to `k_max`.
pub fn spectrum_of(trace: &SimTrace, ch: Channel, k_max: u32) -> Result<Spectrum> {
    if trace.len() < trace.samples_per_cycle {
        return Err(Error::TraceTooShort {
            need: trace.samples_per_cycle,
            have: trace.len(),
        });
    }
    Ok(Spectrum {
        label: ch.to_string(),
        coeffs: sync_dft(trace.channel(ch), &trace.theta, k_max),
    })
}

/// Coefficient-wise difference `degraded - healthy`, the fault signature
/// with the healthy operating spectrum removed.
pub fn delta_spectrum(healthy: &Spectrum, degraded: &Spectrum) -> Result<Spectrum> {
    if healthy.label != degraded.label {
        return Err(Error::SpectrumMismatch(format!(
            "labels differ: {} vs {}",
            healthy.label, degraded.label
        )));
    }
    if healthy.coeffs.len() != degraded.coeffs.len()
        || healthy.coeffs.keys().ne(degraded.coeffs.keys())
    {
        return Err(Error::SpectrumMismatch(format!(
            "order sets differ for {}",
            healthy.label
        )));
    }
    let coeffs = degraded
        .coeffs
        .iter()
        .map(|(&k, &v)| (k, v - healthy.coeffs[&k]))
        .collect();
    Ok(Spectrum {
        label: format!("delta_{}", healthy.label),
        coeffs,
    })
}

// ---------------------------------------------------------------------------
// CSV forms
// ---------------------------------------------------------------------------

/// Renders a spectrum as CSV: a `# channel=` comment, a header, then one
/// row per order with magnitude and phase in degrees. Numbers use the
/// shortest representation that round-trips, so rendering is
/// deterministic and lossless.
pub fn spectrum_to_csv(s: &Spectrum) -> String {
    let mut out = String::new();
    out.push_str(&format!("# channel={}\n", s.label));
    out.push_str("order,magnitude,phase_deg\n");
    for (&k, &c) in &s.coeffs {
        out.push_str(&format!("{k},{},{}\n", c.norm(), c.arg().to_degrees()));
    }
    out
}

/// Parses the output of [`spectrum_to_csv`].
pub fn spectrum_from_csv(text: &str) -> Result<Spectrum> {
    let mut label = None;
    let mut coeffs = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "order,magnitude,phase_deg" {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# channel=") {
            label = Some(rest.to_string());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |v: Option<&str>| -> Result<f64> {
            v.and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad spectrum row {}: {line}", lineno + 1)))
        };
        let order = parse(parts.next())? as u32;
        let mag = parse(parts.next())?;
        let phase = parse(parts.next())?.to_radians();
        coeffs.insert(order, Complex64::from_polar(mag, phase));
    }
    Ok(Spectrum {
        label: label.ok_or_else(|| Error::Config("spectrum CSV missing channel comment".into()))?,
        coeffs,
    })
}

/// Renders a trace as CSV with one row per control sample. The comment
/// line carries the digest of the resolved parameter/health snapshot the
/// run was produced under, so a trace can always be matched back to its
/// configuration.
pub fn trace_to_csv(trace: &SimTrace, config_digest: u64) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config_digest={config_digest:016x}\n"));
    out.push_str("t,theta,i_a,i_b,i_c,v_d_ref,v_q_ref,v_a_ref,v_b_ref,v_c_ref\n");
    for i in 0..trace.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            trace.t[i],
            trace.theta[i],
            trace.i_a[i],
            trace.i_b[i],
            trace.i_c[i],
            trace.v_d_ref[i],
            trace.v_q_ref[i],
            trace.v_a_ref[i],
            trace.v_b_ref[i],
            trace.v_c_ref[i],
        ));
    }
    out
}

/// 64-bit FNV-1a hash, used to fingerprint output files deterministically.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}
