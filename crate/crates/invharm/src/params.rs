//! System parameters, operating point, and per-device on-state health.
//!
//! All quantities are SI: volts, amperes, ohms, henries, farads, seconds,
//! radians. The default parameter set describes a 5 kW two-level
//! grid-connected voltage-source inverter with a 20 kHz current loop.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optional grid-voltage harmonic, superimposed on the fundamental of
/// every phase with the usual balanced phase displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHarmonic {
    /// Harmonic order relative to the grid fundamental (>= 2).
    pub order: u32,
    /// Peak amplitude in volts.
    pub amplitude: f64,
    /// Phase offset in radians added to `order * (w*t + theta_g0)`.
    #[serde(default)]
    pub phase: f64,
}

/// Electrical and controller parameters of the converter.
///
/// `t_sa` is never stored; it is always recomputed as `1 / f_sa`.
/// The DC-bus values (`c_bus`, `r_c`) and the outer voltage-loop gains
/// (`k_pv`, `k_iv`) are carried for completeness but unused: the bus is
/// treated as stiff and the current reference is held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Rated active output power in watts.
    pub p_out: f64,
    /// DC bus voltage in volts.
    pub v_dc: f64,
    /// Grid phase-voltage amplitude (peak, line-to-neutral) in volts.
    pub v_g_amp: f64,
    /// DC bus capacitance in farads (stored, unused).
    pub c_bus: f64,
    /// DC bus capacitor ESR in ohms (stored, unused).
    pub r_c: f64,
    /// Output filter inductance in henries.
    pub l_g: f64,
    /// Output filter series resistance in ohms.
    pub r_l: f64,
    /// Grid-side source inductance in henries.
    #[serde(default)]
    pub l_s: f64,
    /// Grid-side source resistance in ohms.
    #[serde(default)]
    pub r_s: f64,
    /// Grid fundamental frequency in hertz.
    pub f_g: f64,
    /// Switching frequency in hertz.
    pub f_sw: f64,
    /// Control sampling frequency in hertz.
    pub f_sa: f64,
    /// Current-loop proportional gain (V/A).
    pub k_pc: f64,
    /// Current-loop integral gain (V/(A*s)).
    pub k_ic: f64,
    /// Outer voltage-loop proportional gain (stored, unused).
    pub k_pv: f64,
    /// Outer voltage-loop integral gain (stored, unused).
    pub k_iv: f64,
    /// Gate deadtime in seconds (switched fidelity only).
    pub t_deadtime: f64,
    /// Initial phase of the phase-A grid voltage in radians.
    pub theta_g0: f64,
    /// Optional grid-voltage harmonics for distortion studies.
    #[serde(default)]
    pub grid_harmonics: Vec<GridHarmonic>,
}

impl SystemParams {
    /// Control sampling period in seconds.
    pub fn t_sa(&self) -> f64 {
        1.0 / self.f_sa
    }

    /// Grid angular frequency in rad/s.
    pub fn omega(&self) -> f64 {
        TAU * self.f_g
    }

    /// Rotating-frame transform angle at time `t`.
    ///
    /// The d axis is aligned with the grid-voltage space vector. With the
    /// phase-A voltage defined as `v_ga = V_g * sin(w*t + theta_g0)`, the
    /// voltage vector sits at `w*t + theta_g0 - pi/2`, so at the default
    /// `theta_g0 = pi/2` the angle is exactly `w*t`.
    pub fn control_angle(&self, t: f64) -> f64 {
        self.omega() * t + self.theta_g0 - FRAC_PI_2
    }

    /// Control samples per grid fundamental cycle (validated integer).
    pub fn samples_per_cycle(&self) -> usize {
        (self.f_sa / self.f_g).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_out", self.p_out),
            ("v_dc", self.v_dc),
            ("v_g_amp", self.v_g_amp),
            ("l_g", self.l_g),
            ("r_l", self.r_l),
            ("f_g", self.f_g),
            ("f_sw", self.f_sw),
            ("f_sa", self.f_sa),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("l_s", self.l_s),
            ("r_s", self.r_s),
            ("t_deadtime", self.t_deadtime),
            ("k_pc", self.k_pc),
            ("k_ic", self.k_ic),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {value}")));
            }
        }
        for (name, ratio) in [("f_sw", self.f_sw / self.f_g), ("f_sa", self.f_sa / self.f_g)] {
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.abs() {
                return Err(Error::Config(format!(
                    "{name} must be an integer multiple of f_g (ratio {ratio})"
                )));
            }
        }
        if self.t_deadtime >= 0.5 / self.f_sw {
            return Err(Error::Config(format!(
                "t_deadtime {} is not smaller than half the switching period",
                self.t_deadtime
            )));
        }
        for h in &self.grid_harmonics {
            if h.order < 2 {
                return Err(Error::Config(format!(
                    "grid harmonic order must be >= 2, got {}",
                    h.order
                )));
            }
        }
        Ok(())
    }
}

/// Default parameter set: 5 kW, 800 V bus, 311 V grid peak, 6 mH / 0.1 ohm
/// filter, 20 kHz switching and sampling, PI gains 40 / 500, 1 us deadtime.
pub fn default_params() -> SystemParams {
    SystemParams {
        p_out: 5_000.0,
        v_dc: 800.0,
        v_g_amp: 311.0,
        c_bus: 600e-6,
        r_c: 1e-3,
        l_g: 6e-3,
        r_l: 0.1,
        l_s: 0.0,
        r_s: 0.0,
        f_g: 50.0,
        f_sw: 20_000.0,
        f_sa: 20_000.0,
        k_pc: 40.0,
        k_ic: 500.0,
        k_pv: 0.6,
        k_iv: 13.0,
        t_deadtime: 1e-6,
        theta_g0: FRAC_PI_2,
        grid_harmonics: Vec::new(),
    }
}

/// Steady-state operating point at unity power factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Phase-current amplitude (peak) in amperes.
    pub i_a_amp: f64,
    /// Modulation depth `v_g_amp / (v_dc / 2)`.
    pub m_d: f64,
    /// Grid angular frequency in rad/s.
    pub omega: f64,
}

/// Derives the unity-power-factor operating point from the rated power:
/// `i_a_amp = 2 * p_out / (3 * v_g_amp)`.
pub fn operating_point(p: &SystemParams) -> Result<OperatingPoint> {
    let m_d = p.v_g_amp / (p.v_dc / 2.0);
    if m_d > 1.0 {
        return Err(Error::Overmodulation { md: m_d });
    }
    Ok(OperatingPoint {
        i_a_amp: 2.0 * p.p_out / (3.0 * p.v_g_amp),
        m_d,
        omega: p.omega(),
    })
}

/// Inverter phase legs. Phase A is the leg built from S1/S2 and D1/D2,
/// phase B from S3/S4 and D3/D4, phase C from S5/S6 and D5/D6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    /// Phase displacement subtracted from the phase-A argument: 0, 2pi/3,
    /// 4pi/3 for A, B, C.
    pub fn displacement(self) -> f64 {
        self.index() as f64 * TAU / 3.0
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::A => write!(f, "A"),
            Phase::B => write!(f, "B"),
            Phase::C => write!(f, "C"),
        }
    }
}

/// The twelve semiconductor devices: switches S1..S6 and antiparallel
/// diodes D1..D6. Odd numbers are the top (high-side) devices of each leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl DeviceId {
    pub const ALL: [DeviceId; 12] = [
        DeviceId::S1,
        DeviceId::S2,
        DeviceId::S3,
        DeviceId::S4,
        DeviceId::S5,
        DeviceId::S6,
        DeviceId::D1,
        DeviceId::D2,
        DeviceId::D3,
        DeviceId::D4,
        DeviceId::D5,
        DeviceId::D6,
    ];

    fn number(self) -> usize {
        match self {
            DeviceId::S1 | DeviceId::D1 => 1,
            DeviceId::S2 | DeviceId::D2 => 2,
            DeviceId::S3 | DeviceId::D3 => 3,
            DeviceId::S4 | DeviceId::D4 => 4,
            DeviceId::S5 | DeviceId::D5 => 5,
            DeviceId::S6 | DeviceId::D6 => 6,
        }
    }

    pub fn is_switch(self) -> bool {
        matches!(
            self,
            DeviceId::S1 | DeviceId::S2 | DeviceId::S3 | DeviceId::S4 | DeviceId::S5 | DeviceId::S6
        )
    }

    /// Leg the device belongs to.
    pub fn phase(self) -> Phase {
        match self.number() {
            1 | 2 => Phase::A,
            3 | 4 => Phase::B,
            _ => Phase::C,
        }
    }

    /// True for high-side devices (odd numbers), which conduct toward the
    /// positive DC rail.
    pub fn is_top(self) -> bool {
        self.number() % 2 == 1
    }

    fn index(self) -> usize {
        let base = if self.is_switch() { 0 } else { 6 };
        base + self.number() - 1
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = if self.is_switch() { 'S' } else { 'D' };
        write!(f, "{kind}{}", self.number())
    }
}

impl FromStr for DeviceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        for id in DeviceId::ALL {
            if id.to_string() == s {
                return Ok(id);
            }
        }
        Err(Error::UnknownDevice(s.to_string()))
    }
}

/// On-state model of one device: `v_on(i) = v_on0 + r_on * i` for forward
/// current `i >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnState {
    pub v_on0: f64,
    pub r_on: f64,
}

impl OnState {
    /// Conduction voltage at forward current magnitude `i_abs`.
    pub fn v_on(&self, i_abs: f64) -> f64 {
        self.v_on0 + self.r_on * i_abs
    }
}

/// On-state parameters for all twelve devices.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceHealth {
    states: [OnState; 12],
}

impl DeviceHealth {
    /// Same `v_on0` and `r_on` for every switch and diode.
    pub fn uniform(v_on0: f64, r_on: f64) -> Self {
        DeviceHealth {
            states: [OnState { v_on0, r_on }; 12],
        }
    }

    pub fn get(&self, id: DeviceId) -> OnState {
        self.states[id.index()]
    }

    pub fn set(&mut self, id: DeviceId, state: OnState) {
        self.states[id.index()] = state;
    }

    /// Returns a copy with `delta` added to the on-state resistance of one
    /// device; all other devices are untouched.
    pub fn with_delta_r_on(&self, id: DeviceId, delta: f64) -> Self {
        let mut out = self.clone();
        out.states[id.index()].r_on += delta;
        out
    }

    /// The four devices forming one leg, in conduction roles.
    pub fn leg(&self, phase: Phase) -> LegHealth {
        let n = 2 * phase.index(); // 0, 2, 4
        LegHealth {
            s_top: self.states[n],
            s_bottom: self.states[n + 1],
            d_top: self.states[6 + n],
            d_bottom: self.states[6 + n + 1],
        }
    }

    /// Mean baseline on-resistance across all devices.
    pub fn mean_r_on(&self) -> f64 {
        self.states.iter().map(|s| s.r_on).sum::<f64>() / 12.0
    }
}

/// On-state parameters of the four devices in one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegHealth {
    pub s_top: OnState,
    pub d_top: OnState,
    pub s_bottom: OnState,
    pub d_bottom: OnState,
}

/// End-of-life resistance increase for `id`: 5% of its baseline `r_on`.
pub fn end_of_life_delta_ron(health: &DeviceHealth, id: DeviceId) -> f64 {
    0.05 * health.get(id).r_on
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// `[health]` section: baseline on-state values applied to all devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthConfig {
    pub v_on0: f64,
    pub r_on: f64,
}

impl Default for HealthConfig {
    fn default() -> Self {
        HealthConfig {
            v_on0: 0.75,
            r_on: 0.0225,
        }
    }
}

impl HealthConfig {
    pub fn baseline(&self) -> DeviceHealth {
        DeviceHealth::uniform(self.v_on0, self.r_on)
    }
}

fn default_device() -> String {
    "S1".to_string()
}
fn default_delta_r_on() -> f64 {
    1e-3
}
fn default_fidelity() -> String {
    "averaged".to_string()
}
fn default_n_cycles() -> usize {
    10
}
fn default_n_over() -> u32 {
    200
}
fn default_k_max() -> u32 {
    6
}
fn default_noise_floor() -> f64 {
    1e-5
}

/// `[scenario]` section: which device degrades, by how much, and how the
/// paired runs are carried out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Device whose on-resistance increases, e.g. "S1".
    #[serde(default = "default_device")]
    pub device: String,
    /// Injected on-resistance increase in ohms.
    #[serde(default = "default_delta_r_on")]
    pub delta_r_on: f64,
    /// "averaged" or "switched".
    #[serde(default = "default_fidelity")]
    pub fidelity: String,
    /// Fundamental cycles in the analysis window.
    #[serde(default = "default_n_cycles")]
    pub n_cycles: usize,
    /// Settling cycles before the analysis window. When omitted, 20 for
    /// averaged fidelity and 40 for switched (the switching-frequency
    /// effects leave a larger residual for the slow integrator mode to
    /// work off).
    #[serde(default)]
    pub settle_cycles: Option<usize>,
    /// Micro-steps per switching period (switched fidelity).
    #[serde(default = "default_n_over")]
    pub n_over: u32,
    /// Highest harmonic order extracted from traces.
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    /// Detection floor for phase localisation, in volts.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            device: default_device(),
            delta_r_on: default_delta_r_on(),
            fidelity: default_fidelity(),
            n_cycles: default_n_cycles(),
            settle_cycles: None,
            n_over: default_n_over(),
            k_max: default_k_max(),
            noise_floor: default_noise_floor(),
        }
    }
}

/// Whole config file: `[system]`, `[health]`, `[scenario]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub system: SystemParams,
    #[serde(default)]
    pub health: HealthConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            system: default_params(),
            health: HealthConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl FileConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses a config file. Unknown keys are hard errors, and the system
/// section is validated.
pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    let cfg: FileConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.system.validate()?;
    if !(cfg.health.v_on0 >= 0.0 && cfg.health.r_on >= 0.0) {
        return Err(Error::Config(
            "health.v_on0 and health.r_on must be >= 0".into(),
        ));
    }
    cfg.scenario.device.parse::<DeviceId>()?;
    if cfg.scenario.n_cycles == 0 {
        return Err(Error::Config("scenario.n_cycles must be >= 1".into()));
    }
    if cfg.scenario.n_over == 0 {
        return Err(Error::Config("scenario.n_over must be >= 1".into()));
    }
    match cfg.scenario.fidelity.as_str() {
        "averaged" | "switched" => {}
        other => {
            return Err(Error::Config(format!(
                "scenario.fidelity must be \"averaged\" or \"switched\", got \"{other}\""
            )))
        }
    }
    Ok(cfg)
}
