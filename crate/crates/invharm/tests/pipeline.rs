//! End-to-end behaviour of the simulator, estimator, and the `invharm`
//! binary: operating-point physics, paired-run null results, fidelity
//! agreement, CLI determinism, and exit-code contracts.

use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use invharm::analytic::{sensitivity_table, ResponseMode};
use invharm::estimate::{estimate_delta_ron, locate_phase};
use invharm::params::{default_params, operating_point, DeviceHealth, FileConfig, HealthConfig};
use invharm::sim::{
    analyze_pair, default_settle_cycles, ensure_converged, mean_grid_power, run_pair, run_sim,
    Fidelity, SimSetup,
};
use invharm::spectrum::{Channel, Spectrum};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invharm"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn baseline() -> DeviceHealth {
    HealthConfig::default().baseline()
}

#[test]
fn operating_point_physics_hold_in_simulation() {
    let p = default_params();
    let op = operating_point(&p).unwrap();
    let trace = run_sim(&SimSetup {
        params: &p,
        health: baseline(),
        fidelity: Fidelity::Averaged,
        n_cycles: 4,
        settle_cycles: default_settle_cycles(Fidelity::Averaged),
        n_over: 1,
        init: None,
    })
    .unwrap();
    ensure_converged(&trace).unwrap();

    // Mean delivered power equals the setpoint: the current reference is
    // constructed from p_out, and the closed loop holds the current.
    let power = mean_grid_power(&p, &trace);
    assert!(
        (power - p.p_out).abs() < 0.01 * p.p_out,
        "grid power {power} W vs setpoint {} W",
        p.p_out
    );

    // Three-wire topology: phase currents sum to zero at every sample.
    for n in 0..trace.len() {
        let sum = trace.i_a[n] + trace.i_b[n] + trace.i_c[n];
        assert!(sum.abs() < 1e-9, "current sum {sum} at sample {n}");
    }

    // Current amplitude matches the operating point.
    let peak = trace.i_a.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    assert!((peak - op.i_a_amp).abs() < 2e-3 * op.i_a_amp);
}

#[test]
fn zero_degradation_pair_has_null_signature() {
    let p = default_params();
    let pair = run_pair(
        &p,
        &baseline(),
        "S1".parse().unwrap(),
        0.0,
        Fidelity::Averaged,
        2,
        6,
        1,
    )
    .unwrap();
    let analysis = analyze_pair(&pair, 6).unwrap();
    for ch in [
        Channel::VdRef,
        Channel::VqRef,
        Channel::VaRef,
        Channel::VbRef,
        Channel::VcRef,
    ] {
        for (&k, &c) in &analysis.delta(ch).coeffs {
            assert!(
                c.norm() < 1e-7,
                "channel {ch} order {k} delta {} with no degradation",
                c.norm()
            );
        }
    }
}

#[test]
fn switched_and_averaged_agree_without_deadtime() {
    let mut p = default_params();
    p.t_deadtime = 0.0;
    let run = |fidelity: Fidelity, n_over: u32| {
        run_sim(&SimSetup {
            params: &p,
            health: baseline(),
            fidelity,
            n_cycles: 2,
            settle_cycles: 20,
            n_over,
            init: None,
        })
        .unwrap()
    };
    let avg = run(Fidelity::Averaged, 1);
    let sw = run(Fidelity::Switched, 200);
    ensure_converged(&avg).unwrap();
    ensure_converged(&sw).unwrap();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // Without deadtime the only modelling difference is the switching
    // ripple, which perturbs the references well below a volt against a
    // ~313 V operating vector.
    let dd = (mean(&sw.v_d_ref) - mean(&avg.v_d_ref)).abs();
    let dq = (mean(&sw.v_q_ref) - mean(&avg.v_q_ref)).abs();
    assert!(dd < 1.0, "mean d references differ by {dd} V");
    assert!(dq < 1.0, "mean q references differ by {dq} V");

    // Refining the micro-step grid must not move the result materially:
    // switching edges are resolved exactly, the grid only paces the
    // freezing of slowly varying quantities.
    let sw_coarse = run(Fidelity::Switched, 50);
    let dd = (mean(&sw.v_d_ref) - mean(&sw_coarse.v_d_ref)).abs();
    assert!(dd < 0.05, "n_over 50 vs 200 moved mean d by {dd} V");
}

#[test]
fn deadtime_compensation_appears_in_references() {
    let p = default_params();
    let run = |fidelity: Fidelity| {
        run_sim(&SimSetup {
            params: &p,
            health: baseline(),
            fidelity,
            n_cycles: 2,
            settle_cycles: 20,
            n_over: 100,
            init: None,
        })
        .unwrap()
    };
    let avg = run(Fidelity::Averaged);
    let sw = run(Fidelity::Switched);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // Each deadtime window withholds v_dc * t_dt * f_sw = 16 V in the
    // current direction; its fundamental projection (4/pi of the square
    // wave) must show up in the d reference once the plant switches.
    let lift = mean(&sw.v_d_ref) - mean(&avg.v_d_ref);
    let expect = 4.0 / std::f64::consts::PI * p.v_dc * p.t_deadtime * p.f_sw;
    assert!(
        (lift - expect).abs() < 0.15 * expect,
        "deadtime lift {lift} V, expected about {expect} V"
    );
}

#[test]
fn degraded_phase_is_located_from_simulation() {
    let p = default_params();
    let pair = run_pair(
        &p,
        &baseline(),
        "S4".parse().unwrap(),
        1e-3,
        Fidelity::Averaged,
        10,
        default_settle_cycles(Fidelity::Averaged),
        1,
    )
    .unwrap();
    let analysis = analyze_pair(&pair, 2).unwrap();
    let abc = [
        analysis.delta(Channel::VaRef).clone(),
        analysis.delta(Channel::VbRef).clone(),
        analysis.delta(Channel::VcRef).clone(),
    ];
    let loc = locate_phase(&abc, &[0, 1], 1e-5).unwrap().unwrap();
    assert_eq!(loc.phase.to_string(), "B");
    assert!(loc.confidence > 0.9, "confidence {}", loc.confidence);
}

#[test]
fn cli_simulate_then_estimate_recovers_injection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let status = bin()
        .args(["simulate", "--out"])
        .arg(&out)
        .args(["--delta-r-on", "0.001"])
        .output()
        .unwrap();
    assert!(status.status.success());

    let est_out = dir.path().join("est");
    let status = bin()
        .arg("estimate")
        .arg(&out)
        .arg("--out")
        .arg(&est_out)
        .output()
        .unwrap();
    assert!(status.status.success());

    let text = read(&est_out.join("estimate.txt"));
    let get = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key} in estimate.txt"))
            .to_string()
    };
    let est: f64 = get("delta_r_on_est").parse().unwrap();
    assert!(
        (est - 1e-3).abs() < 0.05e-3,
        "estimate {est} for 1 mOhm injection"
    );
    assert_eq!(get("phase"), "A");
    let confidence: f64 = get("phase_confidence").parse().unwrap();
    assert!(confidence > 0.9);
    // 1 mOhm against the 1.125 mOhm end-of-life budget: inside the watch
    // band but not yet end of life.
    assert_eq!(get("status"), "Watch");
}

#[test]
fn cli_outputs_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = bin()
            .args(["simulate", "--cycles", "2", "--settle", "6", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success());
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 18, "expected full output set, got {names:?}");
    for name in names {
        let x = read(&a.join(&name));
        let y = read(&b.join(&name));
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn cli_exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    // Usage problems and config problems exit 1.
    let bad_cfg = out.join("bad.toml");
    std::fs::write(&bad_cfg, "[system]\nnot_a_key = 1\n").unwrap();
    let status = bin()
        .args(["predict", "--config"])
        .arg(&bad_cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    let status = bin()
        .args(["predict", "--orders", "nope", "--out"])
        .arg(out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    let status = bin().arg("no-such-command").output().unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Physics that cannot run exits 2: this grid amplitude needs more
    // than half the bus voltage (overmodulation).
    let mut cfg = FileConfig::default();
    cfg.system.v_g_amp = 500.0;
    let over = out.join("over.toml");
    std::fs::write(&over, cfg.to_toml_string()).unwrap();
    let status = bin()
        .args(["predict", "--config"])
        .arg(&over)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let status = bin().arg("--help").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
}

#[test]
fn repo_default_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.toml");
    assert_eq!(read(&path), FileConfig::default().to_toml_string());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Synthetic spectra built exactly from the sensitivity model must be
    /// inverted back to the generating resistance.
    #[test]
    fn estimator_inverts_exact_synthetic_spectra(
        dr in 0.0..10e-3f64,
        phase_seed in 0.0..std::f64::consts::TAU,
    ) {
        let p = default_params();
        let op = operating_point(&p).unwrap();
        let orders = vec![0u32, 1, 2];
        let sens = sensitivity_table(&p, &op, "S1".parse().unwrap(), &orders, ResponseMode::LoopCorrected);
        let mut d = Spectrum { label: "v_d_ref".into(), coeffs: Default::default() };
        let mut q = Spectrum { label: "v_q_ref".into(), coeffs: Default::default() };
        for (i, row) in sens.iter().enumerate() {
            let ang = phase_seed + i as f64;
            d.coeffs.insert(row.order, invharm::num_complex::Complex64::from_polar(row.s_d * dr, ang));
            q.coeffs.insert(row.order, invharm::num_complex::Complex64::from_polar(row.s_q * dr, -ang));
        }
        let est = estimate_delta_ron(&d, &q, &sens, &orders).unwrap();
        prop_assert!((est.delta_r_on - dr).abs() <= 1e-10 * (1.0 + dr));
        prop_assert!(est.residual < 1e-9);
    }
}
