//! Power-stage model: device conduction, grid source, and the RL output
//! filter integrated exactly under piecewise-constant forcing.
//!
//! Two fidelities share the same conduction truth table. The averaged
//! stepper applies duty-weighted pole voltages once per sampling period;
//! the switched stepper resolves the PWM edges, deadtime windows, and
//! current ripple inside each carrier period.

use crate::params::{DeviceId, LegHealth, Phase, SystemParams};

/// Instantaneous plant state: phase currents (out of each pole) and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub i_abc: [f64; 3],
    pub t: f64,
}

impl PlantState {
    pub fn new() -> Self {
        PlantState {
            i_abc: [0.0; 3],
            t: 0.0,
        }
    }
}

impl Default for PlantState {
    fn default() -> Self {
        Self::new()
    }
}

/// Gate condition of one leg at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegGate {
    /// Top switch commanded on.
    High,
    /// Deadtime: both switches off, diodes pick up the current.
    Dead,
    /// Bottom switch commanded on.
    Low,
}

/// Total series resistance and inductance seen by each phase current.
pub fn series_rl(p: &SystemParams) -> (f64, f64) {
    (p.r_l + p.r_s, p.l_g + p.l_s)
}

/// Pole voltage (midpoint referred to the negative rail) of one leg with a
/// defined gate command. `i` is the current out of the pole; the conducting
/// device and the sign of its drop follow from the current direction:
///
/// * gate high, `i > 0`: top switch, `v_dc - v_on(i)`
/// * gate high, `i < 0`: top diode, `v_dc + v_on(|i|)`
/// * gate low, `i > 0`: bottom diode, `-v_on(i)`
/// * gate low, `i < 0`: bottom switch, `+v_on(|i|)`
///
/// At exactly zero current there is no drop.
pub fn leg_on_voltage(gate_high: bool, i: f64, leg: &LegHealth, v_dc: f64) -> f64 {
    if gate_high {
        if i > 0.0 {
            v_dc - leg.s_top.v_on(i)
        } else if i < 0.0 {
            v_dc + leg.d_top.v_on(-i)
        } else {
            v_dc
        }
    } else if i > 0.0 {
        -leg.d_bottom.v_on(i)
    } else if i < 0.0 {
        leg.s_bottom.v_on(-i)
    } else {
        0.0
    }
}

/// Pole voltage during deadtime: the current commutates to whichever diode
/// can carry it. Zero current leaves the pole floating, taken as `v_dc/2`.
pub fn dead_leg_voltage(i: f64, leg: &LegHealth, v_dc: f64) -> f64 {
    if i > 0.0 {
        -leg.d_bottom.v_on(i)
    } else if i < 0.0 {
        v_dc + leg.d_top.v_on(-i)
    } else {
        v_dc / 2.0
    }
}

/// The device carrying the leg current under a given gate condition, or
/// `None` at zero current.
pub fn conducting_device(gate: LegGate, i: f64, phase: Phase) -> Option<DeviceId> {
    let pick = |top: bool, switch: bool| {
        let number = 2 * phase.index() + if top { 1 } else { 2 };
        let base = if switch { 0 } else { 6 };
        Some(DeviceId::ALL[base + number - 1])
    };
    if i == 0.0 {
        return None;
    }
    match (gate, i > 0.0) {
        (LegGate::High, true) => pick(true, true),
        (LegGate::High, false) => pick(true, false),
        (LegGate::Low, true) => pick(false, false),
        (LegGate::Low, false) => pick(false, true),
        (LegGate::Dead, true) => pick(false, false),
        (LegGate::Dead, false) => pick(true, false),
    }
}

/// Three-phase grid voltages at time `t`: balanced fundamental plus any
/// configured harmonics, each displaced by 0, 2pi/3, 4pi/3.
pub fn grid_voltage(p: &SystemParams, t: f64) -> [f64; 3] {
    let base = p.omega() * t + p.theta_g0;
    Phase::ALL.map(|ph| {
        let arg = base - ph.displacement();
        let mut v = p.v_g_amp * arg.sin();
        for h in &p.grid_harmonics {
            v += h.amplitude * (h.order as f64 * arg + h.phase).sin();
        }
        v
    })
}

/// Per-phase forcing voltage of the three-wire connection: pole voltage
/// minus grid voltage, with the common mode removed. The removal is what
/// the floating neutral does physically, and it keeps the currents summing
/// to zero exactly.
fn three_wire_forcing(pole: [f64; 3], vg: [f64; 3]) -> [f64; 3] {
    let u = [pole[0] - vg[0], pole[1] - vg[1], pole[2] - vg[2]];
    let mean = (u[0] + u[1] + u[2]) / 3.0;
    u.map(|x| x - mean)
}

/// Advances a first-order RL branch by `dt` under constant forcing `u`:
/// the exact zero-order-hold solution of `l di/dt + r i = u`.
pub fn rl_step(i: f64, u: f64, r: f64, l: f64, dt: f64) -> f64 {
    let x = r * dt / l;
    if x < 1e-9 {
        // r ~ 0: the exponential form would divide by r; first order is
        // exact to within the same rounding here.
        i + (u - r * i) * dt / l
    } else {
        i + (-x).exp_m1() * (i - u / r)
    }
}

/// One sampling period of the averaged model: each pole voltage is the
/// duty-weighted mix of its two conduction states, held constant over the
/// period. Deadtime is not represented at this fidelity.
pub fn step_averaged(
    p: &SystemParams,
    health: &crate::params::DeviceHealth,
    state: &mut PlantState,
    duties: [f64; 3],
) {
    let t_sa = p.t_sa();
    let (r, l) = series_rl(p);
    let vg = grid_voltage(p, state.t + 0.5 * t_sa);
    let pole = Phase::ALL.map(|ph| {
        let leg = health.leg(ph);
        let i = state.i_abc[ph.index()];
        let d = duties[ph.index()];
        d * leg_on_voltage(true, i, &leg, p.v_dc)
            + (1.0 - d) * leg_on_voltage(false, i, &leg, p.v_dc)
    });
    let u = three_wire_forcing(pole, vg);
    for x in 0..3 {
        state.i_abc[x] = rl_step(state.i_abc[x], u[x], r, l, t_sa);
    }
    state.t += t_sa;
}

/// Gate-state timeline of one leg over one carrier period.
///
/// The carrier is a symmetric triangle with the ON pulse centred on the
/// period boundary: commanded fall at `d/2 * T`, commanded rise at
/// `(1 - d/2) * T`. After each commanded transition both switches stay off
/// for the deadtime. `prev_end_high` is the commanded state at the end of
/// the previous period, needed to decide whether a zero-duty period opens
/// with a deadtime window.
///
/// Returns `(segments, end_high)` where each segment is `(start, state)`
/// and extends to the next start (or the period end).
pub(crate) fn leg_timeline(
    duty: f64,
    t_per: f64,
    t_dt: f64,
    prev_end_high: bool,
) -> (Vec<(f64, LegGate)>, bool) {
    let d = duty.clamp(0.0, 1.0);
    let t_f = 0.5 * d * t_per;
    let t_r = t_per - t_f;
    let mut segs = Vec::with_capacity(5);
    if t_f > 0.0 {
        segs.push((0.0, LegGate::High));
    } else if prev_end_high && t_dt > 0.0 {
        segs.push((0.0, LegGate::Dead));
    } else {
        segs.push((0.0, LegGate::Low));
    }
    if t_f < t_r {
        if t_f > 0.0 && t_dt > 0.0 {
            segs.push((t_f, LegGate::Dead));
        }
        let low_start = (t_f + t_dt).min(t_r);
        segs.push((low_start, LegGate::Low));
        if t_r < t_per {
            if t_dt > 0.0 {
                segs.push((t_r, LegGate::Dead));
            }
            let high_start = t_r + t_dt;
            if high_start < t_per || t_dt == 0.0 {
                segs.push((high_start.min(t_per), LegGate::High));
            }
        }
    }
    // Drop zero-length segments introduced by the clamps above and merge
    // same-state neighbours into one canonical segment.
    segs.dedup_by(|next, prev| {
        if next.0 <= prev.0 {
            prev.1 = next.1;
            true
        } else {
            next.1 == prev.1
        }
    });
    (segs, d > 0.0)
}

fn gate_at(segs: &[(f64, LegGate)], t: f64) -> LegGate {
    let mut state = segs[0].1;
    for &(start, s) in segs {
        if start <= t {
            state = s;
        } else {
            break;
        }
    }
    state
}

/// One carrier period of the switched model, resolved with `n_over`
/// micro-steps plus exact sub-division at every gate edge, so the timing
/// of the switching instants does not quantise to the micro-step grid.
///
/// Grid voltage and the current magnitude used for the conduction drops
/// are frozen per micro-step (the current moves a few micro-amps within
/// one), while the current itself integrates exactly across every
/// sub-segment. `end_high` carries each leg's commanded end state into the
/// next period.
pub fn step_switched(
    p: &SystemParams,
    health: &crate::params::DeviceHealth,
    state: &mut PlantState,
    duties: [f64; 3],
    end_high: &mut [bool; 3],
    n_over: u32,
) {
    let t_per = 1.0 / p.f_sw;
    let (r, l) = series_rl(p);
    let legs = Phase::ALL.map(|ph| health.leg(ph));

    let mut timelines: [Vec<(f64, LegGate)>; 3] = Default::default();
    for x in 0..3 {
        let (segs, eh) = leg_timeline(duties[x], t_per, p.t_deadtime, end_high[x]);
        timelines[x] = segs;
        end_high[x] = eh;
    }

    let dt = t_per / n_over as f64;
    let mut cuts: Vec<f64> = Vec::with_capacity(16);
    for k in 0..n_over {
        let t0 = k as f64 * dt;
        let t1 = if k + 1 == n_over {
            t_per
        } else {
            (k + 1) as f64 * dt
        };
        let i_frozen = state.i_abc;
        let vg = grid_voltage(p, state.t + 0.5 * (t0 + t1));

        cuts.clear();
        cuts.push(t0);
        for segs in &timelines {
            for &(start, _) in segs {
                if start > t0 && start < t1 {
                    cuts.push(start);
                }
            }
        }
        cuts.push(t1);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();

        for w in 0..cuts.len() - 1 {
            let (a, b) = (cuts[w], cuts[w + 1]);
            let tm = 0.5 * (a + b);
            let pole = [0, 1, 2].map(|x| {
                let i = i_frozen[x];
                match gate_at(&timelines[x], tm) {
                    LegGate::High => leg_on_voltage(true, i, &legs[x], p.v_dc),
                    LegGate::Low => leg_on_voltage(false, i, &legs[x], p.v_dc),
                    LegGate::Dead => dead_leg_voltage(i, &legs[x], p.v_dc),
                }
            });
            let u = three_wire_forcing(pole, vg);
            for x in 0..3 {
                state.i_abc[x] = rl_step(state.i_abc[x], u[x], r, l, b - a);
            }
        }
    }
    state.t += t_per;
}
