//! Command-line surface: scenario execution, tables, sweeps, and reports.
//!
//! Every command writes CSV files (each declaring its column schema in a
//! header line) plus a `run_manifest.txt` capturing the fully resolved
//! configuration as key=value text, into the `--out` directory. Outputs
//! contain no timestamps or randomness, so identical inputs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::analytic::{
    loop_response, phase_coefficients, predicted_ref_harmonics, sensitivity_table,
    suppression_percent, ResponseMode,
};
use crate::error::{Error, Result};
use crate::estimate::{estimate_delta_ron, eol_report, locate_phase, EolReport};
use crate::params::{load_config, operating_point, DeviceId, FileConfig, OperatingPoint};
use crate::sim::{
    analyze_pair, default_settle_cycles, ensure_converged, run_pair, run_sweep, Fidelity,
    PairAnalysis, SweepSpec, ANALYZED_CHANNELS,
};
use crate::spectrum::{
    fnv1a64, spectrum_from_csv, spectrum_of, spectrum_to_csv, trace_to_csv, Channel, Spectrum,
};

/// Prediction/estimation response model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Unity loop response at every order.
    Ideal,
    /// Orders weighted by the closed-loop response at their frequency.
    LoopCorrected,
}

impl ModeArg {
    fn to_mode(self) -> ResponseMode {
        match self {
            ModeArg::Ideal => ResponseMode::Ideal,
            ModeArg::LoopCorrected => ResponseMode::LoopCorrected,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::Ideal => "ideal",
            ModeArg::LoopCorrected => "loop-corrected",
        }
    }
}

/// Plant fidelity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FidelityArg {
    Averaged,
    Switched,
}

impl FidelityArg {
    fn to_fidelity(self) -> Fidelity {
        match self {
            FidelityArg::Averaged => Fidelity::Averaged,
            FidelityArg::Switched => Fidelity::Switched,
        }
    }
}

/// Harmonic analysis of device on-state degradation in a grid-tied
/// inverter's current-controller references.
#[derive(Debug, Parser)]
#[command(name = "invharm", version, about)]
pub struct Cli {
    /// Scenario/parameter file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSVs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Plant fidelity override for simulating commands.
    #[arg(long, global = true, value_enum)]
    pub fidelity: Option<FidelityArg>,
    /// Harmonic orders as an inclusive range `k0..k1` or a single order.
    #[arg(long, global = true)]
    pub orders: Option<String>,
    /// Response model for predictions and estimation.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop response from an output-voltage disturbance to the
    /// reference, over a log frequency grid plus exact harmonic rows.
    Bode {
        /// Lowest grid frequency in Hz.
        #[arg(long, default_value_t = 1.0)]
        f_min: f64,
        /// Highest grid frequency in Hz.
        #[arg(long, default_value_t = 2000.0)]
        f_max: f64,
        /// Number of log-spaced grid points.
        #[arg(long, default_value_t = 120)]
        points: usize,
    },
    /// Analytic harmonic magnitudes of the configured fault, for the two
    /// rotating-frame references and all three phase references.
    Predict {
        /// Degraded device override, e.g. S1 or D4.
        #[arg(long)]
        device: Option<String>,
        /// Injected on-resistance increase override, in ohms.
        #[arg(long)]
        delta_r_on: Option<f64>,
    },
    /// Paired healthy/degraded simulation: traces, per-channel spectra,
    /// and the difference spectra isolating the fault signature.
    Simulate {
        /// Degraded device override, e.g. S1 or D4.
        #[arg(long)]
        device: Option<String>,
        /// Injected on-resistance increase override, in ohms.
        #[arg(long)]
        delta_r_on: Option<f64>,
        /// Analysis window length in fundamental cycles.
        #[arg(long)]
        cycles: Option<usize>,
        /// Settling cycles before the analysis window.
        #[arg(long)]
        settle: Option<usize>,
        /// Micro-steps per carrier period (switched fidelity).
        #[arg(long)]
        n_over: Option<u32>,
    },
    /// Paired runs over a grid of resistance increments, comparing
    /// simulated difference spectra against the analytic model.
    Sweep {
        /// Degraded device override, e.g. S1 or D4.
        #[arg(long)]
        device: Option<String>,
        /// Largest resistance increment, in ohms.
        #[arg(long, default_value_t = 1e-3)]
        delta_max: f64,
        /// Grid step, in ohms.
        #[arg(long, default_value_t = 1e-4)]
        delta_step: f64,
        /// Analysis window length in fundamental cycles.
        #[arg(long)]
        cycles: Option<usize>,
        /// Settling cycles before the analysis window.
        #[arg(long)]
        settle: Option<usize>,
        /// Micro-steps per carrier period (switched fidelity).
        #[arg(long)]
        n_over: Option<u32>,
    },
    /// Per-ohm harmonic sensitivity table at unit phase current.
    Sensitivity,
    /// Invert previously exported difference spectra into a health
    /// estimate and degraded-phase localisation.
    Estimate {
        /// Directory containing `delta_spectrum_*.csv` from `simulate`.
        spectra_dir: PathBuf,
        /// Device assumed when computing sensitivities, e.g. S1 or D4.
        #[arg(long)]
        device: Option<String>,
    },
    /// End-to-end scenario: paired simulation, estimation, localisation,
    /// and end-of-life classification in one record.
    Report {
        /// Degraded device override, e.g. S1 or D4.
        #[arg(long)]
        device: Option<String>,
        /// Injected on-resistance increase override, in ohms.
        #[arg(long)]
        delta_r_on: Option<f64>,
        /// Analysis window length in fundamental cycles.
        #[arg(long)]
        cycles: Option<usize>,
        /// Settling cycles before the analysis window.
        #[arg(long)]
        settle: Option<usize>,
        /// Micro-steps per carrier period (switched fidelity).
        #[arg(long)]
        n_over: Option<u32>,
    },
}

/// Parses `--orders`: either a single order `k` or an inclusive range
/// `k0..k1`.
pub fn parse_orders(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::Config(format!("orders must be `k` or `k0..k1`, got \"{s}\""));
    if let Some((a, b)) = s.split_once("..") {
        let lo: u32 = a.trim().parse().map_err(|_| bad())?;
        let hi: u32 = b.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        Ok(vec![s.trim().parse().map_err(|_| bad())?])
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Resolved execution context shared by all commands.
struct Ctx {
    cfg: FileConfig,
    out: PathBuf,
    mode: ResponseMode,
    mode_name: &'static str,
    orders: Option<Vec<u32>>,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Ctx> {
        let mut cfg = match &cli.config {
            Some(path) => load_config(path)?,
            None => FileConfig::default(),
        };
        if let Some(f) = cli.fidelity {
            cfg.scenario.fidelity = f.to_fidelity().to_string();
        }
        let mode_arg = cli.mode.unwrap_or(ModeArg::LoopCorrected);
        let orders = cli.orders.as_deref().map(parse_orders).transpose()?;
        Ok(Ctx {
            cfg,
            out: cli.out.clone(),
            mode: mode_arg.to_mode(),
            mode_name: mode_arg.name(),
            orders,
        })
    }

    fn orders_or(&self, lo: u32, hi: u32) -> Vec<u32> {
        self.orders.clone().unwrap_or_else(|| (lo..=hi).collect())
    }

    fn device(&self) -> Result<DeviceId> {
        self.cfg.scenario.device.parse()
    }

    fn fidelity(&self) -> Result<Fidelity> {
        self.cfg.scenario.fidelity.parse()
    }

    fn settle_cycles(&self) -> Result<usize> {
        Ok(self
            .cfg
            .scenario
            .settle_cycles
            .unwrap_or_else(|| default_settle_cycles(self.fidelity().unwrap_or(Fidelity::Averaged))))
    }

    fn op(&self) -> Result<OperatingPoint> {
        self.cfg.system.validate()?;
        operating_point(&self.cfg.system)
    }

    /// Flat key=value rendering of the resolved configuration.
    fn config_lines(&self) -> String {
        let s = &self.cfg.system;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("system.p_out", s.p_out.to_string());
        kv("system.v_dc", s.v_dc.to_string());
        kv("system.v_g_amp", s.v_g_amp.to_string());
        kv("system.c_bus", s.c_bus.to_string());
        kv("system.r_c", s.r_c.to_string());
        kv("system.l_g", s.l_g.to_string());
        kv("system.r_l", s.r_l.to_string());
        kv("system.l_s", s.l_s.to_string());
        kv("system.r_s", s.r_s.to_string());
        kv("system.f_g", s.f_g.to_string());
        kv("system.f_sw", s.f_sw.to_string());
        kv("system.f_sa", s.f_sa.to_string());
        kv("system.k_pc", s.k_pc.to_string());
        kv("system.k_ic", s.k_ic.to_string());
        kv("system.k_pv", s.k_pv.to_string());
        kv("system.k_iv", s.k_iv.to_string());
        kv("system.t_deadtime", s.t_deadtime.to_string());
        kv("system.theta_g0", s.theta_g0.to_string());
        for (i, h) in s.grid_harmonics.iter().enumerate() {
            kv(&format!("system.grid_harmonics.{i}.order"), h.order.to_string());
            kv(
                &format!("system.grid_harmonics.{i}.amplitude"),
                h.amplitude.to_string(),
            );
            kv(&format!("system.grid_harmonics.{i}.phase"), h.phase.to_string());
        }
        kv("health.v_on0", self.cfg.health.v_on0.to_string());
        kv("health.r_on", self.cfg.health.r_on.to_string());
        let sc = &self.cfg.scenario;
        kv("scenario.device", sc.device.clone());
        kv("scenario.delta_r_on", sc.delta_r_on.to_string());
        kv("scenario.fidelity", sc.fidelity.clone());
        kv("scenario.n_cycles", sc.n_cycles.to_string());
        kv(
            "scenario.settle_cycles",
            match sc.settle_cycles {
                Some(v) => v.to_string(),
                None => "auto".to_string(),
            },
        );
        kv("scenario.n_over", sc.n_over.to_string());
        kv("scenario.k_max", sc.k_max.to_string());
        kv("scenario.noise_floor", sc.noise_floor.to_string());
        out
    }

    fn config_digest(&self) -> u64 {
        fnv1a64(self.config_lines().as_bytes())
    }

    /// Writes `run_manifest.txt`: command, resolved options, resolved
    /// configuration, and any command-specific outcomes.
    fn write_manifest(&self, command: &str, extras: &[(&str, String)]) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "command={command}");
        let _ = writeln!(text, "mode={}", self.mode_name);
        let _ = writeln!(
            text,
            "orders={}",
            match &self.orders {
                Some(o) => o
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
                None => "default".to_string(),
            }
        );
        let _ = writeln!(text, "config_digest={:016x}", self.config_digest());
        text.push_str(&self.config_lines());
        for (k, v) in extras {
            let _ = writeln!(text, "{k}={v}");
        }
        write_file(&self.out.join("run_manifest.txt"), &text)
    }
}

/// Executes a parsed command line. Errors map to process exit codes via
/// [`Error::exit_code`].
pub fn run(cli: &Cli) -> Result<()> {
    let mut ctx = Ctx::new(cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match &cli.command {
        Command::Bode { f_min, f_max, points } => cmd_bode(&ctx, *f_min, *f_max, *points),
        Command::Predict { device, delta_r_on } => {
            apply_overrides(&mut ctx, device, delta_r_on, &None, &None, &None);
            cmd_predict(&ctx)
        }
        Command::Simulate {
            device,
            delta_r_on,
            cycles,
            settle,
            n_over,
        } => {
            apply_overrides(&mut ctx, device, delta_r_on, cycles, settle, n_over);
            cmd_simulate(&ctx)
        }
        Command::Sweep {
            device,
            delta_max,
            delta_step,
            cycles,
            settle,
            n_over,
        } => {
            apply_overrides(&mut ctx, device, &None, cycles, settle, n_over);
            cmd_sweep(&ctx, *delta_max, *delta_step)
        }
        Command::Sensitivity => cmd_sensitivity(&ctx),
        Command::Estimate { spectra_dir, device } => {
            apply_overrides(&mut ctx, device, &None, &None, &None, &None);
            cmd_estimate(&ctx, spectra_dir)
        }
        Command::Report {
            device,
            delta_r_on,
            cycles,
            settle,
            n_over,
        } => {
            apply_overrides(&mut ctx, device, delta_r_on, cycles, settle, n_over);
            cmd_report(&ctx)
        }
    }
}

fn apply_overrides(
    ctx: &mut Ctx,
    device: &Option<String>,
    delta_r_on: &Option<f64>,
    cycles: &Option<usize>,
    settle: &Option<usize>,
    n_over: &Option<u32>,
) {
    let sc = &mut ctx.cfg.scenario;
    if let Some(d) = device {
        sc.device = d.clone();
    }
    if let Some(d) = delta_r_on {
        sc.delta_r_on = *d;
    }
    if let Some(c) = cycles {
        sc.n_cycles = *c;
    }
    if let Some(s) = settle {
        sc.settle_cycles = Some(*s);
    }
    if let Some(n) = n_over {
        sc.n_over = *n;
    }
}

fn cmd_bode(ctx: &Ctx, f_min: f64, f_max: f64, points: usize) -> Result<()> {
    if !(f_min >= 0.0 && f_min < f_max) || points < 2 {
        return Err(Error::Config(format!(
            "require 0 <= f_min < f_max and points >= 2, got {f_min}..{f_max} x {points}"
        )));
    }
    let p = &ctx.cfg.system;
    p.validate()?;
    let mut csv = String::from("f_hz,gain,phase_deg,suppression_pct,order\n");
    let mut row = |f_hz: f64, order: Option<u32>| {
        let g = loop_response(p, std::f64::consts::TAU * f_hz);
        let order = order.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{f_hz},{},{},{},{order}",
            g.norm(),
            g.arg().to_degrees(),
            suppression_percent(g)
        );
    };
    let lo = f_min.max(1e-2);
    for i in 0..points {
        let frac = i as f64 / (points - 1) as f64;
        row(lo * (f_max / lo).powf(frac), None);
    }
    // Exact rows at the rotating-frame orders used throughout the
    // analysis, including the DC limit.
    for k in [0u32, 6, 12, 18, 24] {
        row(k as f64 * p.f_g, Some(k));
    }
    write_file(&ctx.out.join("bode.csv"), &csv)?;
    ctx.write_manifest(
        "bode",
        &[
            ("bode.f_min", f_min.to_string()),
            ("bode.f_max", f_max.to_string()),
            ("bode.points", points.to_string()),
        ],
    )?;
    println!("wrote {}", ctx.out.join("bode.csv").display());
    Ok(())
}

fn cmd_predict(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.system;
    let op = ctx.op()?;
    let device = ctx.device()?;
    let delta_r = ctx.cfg.scenario.delta_r_on;
    let orders = ctx.orders_or(0, ctx.cfg.scenario.k_max);
    let k_max = *orders.iter().max().unwrap_or(&0);

    let dq = predicted_ref_harmonics(p, &op, device, delta_r, k_max, ctx.mode);
    let mut csv = String::from("channel,order,magnitude,phase_deg\n");
    for h in &dq {
        if !orders.contains(&h.order) {
            continue;
        }
        let _ = writeln!(
            csv,
            "v_d_ref,{},{},{}",
            h.order,
            h.d.norm(),
            h.d.arg().to_degrees()
        );
        let _ = writeln!(
            csv,
            "v_q_ref,{},{},{}",
            h.order,
            h.q.norm(),
            h.q.arg().to_degrees()
        );
    }
    // Stationary-frame rows: order m draws on rotating-frame orders m-1
    // and m+1, so only orders strictly below k_max are complete.
    let abc_limit = k_max.saturating_sub(1);
    for (ch, phase) in [
        ("v_a_ref", crate::params::Phase::A),
        ("v_b_ref", crate::params::Phase::B),
        ("v_c_ref", crate::params::Phase::C),
    ] {
        let coeffs = phase_coefficients(&dq, phase.displacement());
        for &(m, c) in coeffs.iter().filter(|(m, _)| *m <= abc_limit) {
            let _ = writeln!(csv, "{ch},{m},{},{}", c.norm(), c.arg().to_degrees());
        }
    }
    write_file(&ctx.out.join("predict.csv"), &csv)?;
    ctx.write_manifest("predict", &[])?;
    println!("wrote {}", ctx.out.join("predict.csv").display());
    Ok(())
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.system;
    let sc = &ctx.cfg.scenario;
    let device = ctx.device()?;
    let fidelity = ctx.fidelity()?;
    let settle = ctx.settle_cycles()?;
    let baseline = ctx.cfg.health.baseline();
    let k_max = ctx
        .orders
        .as_ref()
        .and_then(|o| o.iter().max().copied())
        .unwrap_or(sc.k_max);

    let pair = run_pair(
        p,
        &baseline,
        device,
        sc.delta_r_on,
        fidelity,
        sc.n_cycles,
        settle,
        sc.n_over,
    )?;
    ensure_converged(&pair.healthy)?;
    ensure_converged(&pair.degraded)?;
    let analysis = analyze_pair(&pair, k_max)?;

    let digest = ctx.config_digest();
    write_file(
        &ctx.out.join("healthy_trace.csv"),
        &trace_to_csv(&pair.healthy, digest),
    )?;
    write_file(
        &ctx.out.join("degraded_trace.csv"),
        &trace_to_csv(&pair.degraded, digest),
    )?;
    for &ch in &ANALYZED_CHANNELS {
        let h = spectrum_of(&pair.healthy, ch, k_max)?;
        let d = spectrum_of(&pair.degraded, ch, k_max)?;
        write_file(
            &ctx.out.join(format!("healthy_spectrum_{ch}.csv")),
            &spectrum_to_csv(&h),
        )?;
        write_file(
            &ctx.out.join(format!("degraded_spectrum_{ch}.csv")),
            &spectrum_to_csv(&d),
        )?;
        write_file(
            &ctx.out.join(format!("delta_spectrum_{ch}.csv")),
            &spectrum_to_csv(analysis.delta(ch)),
        )?;
    }
    ctx.write_manifest(
        "simulate",
        &[
            ("run.settle_cycles", settle.to_string()),
            (
                "run.healthy_residual",
                pair.healthy.convergence_residual.to_string(),
            ),
            (
                "run.degraded_residual",
                pair.degraded.convergence_residual.to_string(),
            ),
            ("run.healthy_saturated", pair.healthy.saturated.to_string()),
            ("run.degraded_saturated", pair.degraded.saturated.to_string()),
        ],
    )?;
    println!(
        "simulated {} + {} cycles ({fidelity}), device {device}, delta_r_on={} ohm -> {}",
        settle,
        sc.n_cycles,
        sc.delta_r_on,
        ctx.out.display()
    );
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, delta_max: f64, delta_step: f64) -> Result<()> {
    if !(delta_step > 0.0) || delta_max < 0.0 {
        return Err(Error::Config(format!(
            "require delta_step > 0 and delta_max >= 0, got step {delta_step}, max {delta_max}"
        )));
    }
    let p = &ctx.cfg.system;
    let sc = &ctx.cfg.scenario;
    let op = ctx.op()?;
    let device = ctx.device()?;
    let fidelity = ctx.fidelity()?;
    let settle = ctx.settle_cycles()?;
    let baseline = ctx.cfg.health.baseline();

    let n_points = (delta_max / delta_step).round() as usize + 1;
    let deltas: Vec<f64> = (0..n_points).map(|i| i as f64 * delta_step).collect();
    let table_orders = ctx.orders_or(0, 5);
    let k_max = *table_orders.iter().max().unwrap_or(&0);
    // The estimator always runs on the low orders where the model is
    // trustworthy, independent of how many orders the table reports.
    let estimator_orders: Vec<u32> = (0..=2).collect();

    let spec = SweepSpec {
        params: p,
        baseline: &baseline,
        device,
        fidelity,
        n_cycles: sc.n_cycles,
        settle_cycles: settle,
        n_over: sc.n_over,
        orders: estimator_orders.clone(),
        mode: ctx.mode,
        k_max,
    };
    let points = run_sweep(&spec, &deltas)?;
    let sens = sensitivity_table(p, &op, device, &table_orders, ctx.mode);

    // Predictions below this are structural zeros (e.g. the q axis at
    // DC, where the closed form leaves only rounding dust); a relative
    // error against them would be meaningless.
    const PRED_FLOOR: f64 = 1e-12;

    let mut csv = String::from("delta_r_on,order,pred_d,pred_q,sim_d,sim_q,err_d_pct,err_q_pct\n");
    let mut err_d_acc: Vec<(f64, usize)> = vec![(0.0, 0); table_orders.len()];
    let mut err_q_acc: Vec<(f64, usize)> = vec![(0.0, 0); table_orders.len()];
    for point in &points {
        for (oi, &k) in table_orders.iter().enumerate() {
            let row = sens[oi];
            let pred_d = row.s_d * point.delta_r_on;
            let pred_q = row.s_q * point.delta_r_on;
            let sim_d = point.delta_d.require(k)?.norm();
            let sim_q = point.delta_q.require(k)?.norm();
            let err = |pred: f64, sim: f64| {
                if pred > PRED_FLOOR {
                    format!("{}", (sim - pred).abs() / pred * 100.0)
                } else {
                    String::new()
                }
            };
            let _ = writeln!(
                csv,
                "{},{k},{pred_d},{pred_q},{sim_d},{sim_q},{},{}",
                point.delta_r_on,
                err(pred_d, sim_d),
                err(pred_q, sim_q)
            );
            if pred_d > PRED_FLOOR {
                err_d_acc[oi].0 += (sim_d - pred_d).abs() / pred_d * 100.0;
                err_d_acc[oi].1 += 1;
            }
            if pred_q > PRED_FLOOR {
                err_q_acc[oi].0 += (sim_q - pred_q).abs() / pred_q * 100.0;
                err_q_acc[oi].1 += 1;
            }
        }
    }
    write_file(&ctx.out.join("sweep.csv"), &csv)?;

    let mut summary = String::from("order,avg_err_d_pct,avg_err_q_pct\n");
    for (oi, &k) in table_orders.iter().enumerate() {
        let avg = |(sum, n): (f64, usize)| {
            if n > 0 {
                format!("{}", sum / n as f64)
            } else {
                String::new()
            }
        };
        let _ = writeln!(
            summary,
            "{k},{},{}",
            avg(err_d_acc[oi]),
            avg(err_q_acc[oi])
        );
    }
    write_file(&ctx.out.join("sweep_summary.csv"), &summary)?;

    let mut estimates = String::from("delta_r_on,estimate,residual\n");
    for point in &points {
        let _ = writeln!(
            estimates,
            "{},{},{}",
            point.delta_r_on, point.estimate.delta_r_on, point.estimate.residual
        );
    }
    write_file(&ctx.out.join("sweep_estimates.csv"), &estimates)?;

    ctx.write_manifest(
        "sweep",
        &[
            ("sweep.delta_max", delta_max.to_string()),
            ("sweep.delta_step", delta_step.to_string()),
            ("sweep.points", n_points.to_string()),
            (
                "sweep.estimator_orders",
                estimator_orders
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )?;
    println!(
        "swept {} points to {} ohm -> {}",
        n_points,
        delta_max,
        ctx.out.display()
    );
    Ok(())
}

fn cmd_sensitivity(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.system;
    let op = ctx.op()?;
    // The table is normalised to 1 A of phase current; scaling to any
    // operating current is linear.
    let unit_op = OperatingPoint {
        i_a_amp: 1.0,
        ..op
    };
    let device = ctx.device()?;
    let orders = ctx.orders_or(0, 6);
    let mode = if ctx.orders.is_none() && ctx.mode == ResponseMode::LoopCorrected {
        // Pure model table by default; the loop weighting only applies
        // when explicitly requested.
        ResponseMode::Ideal
    } else {
        ctx.mode
    };
    let table = sensitivity_table(p, &unit_op, device, &orders, mode);
    let mut csv = String::from("order,s_d,s_q\n");
    for row in &table {
        let _ = writeln!(csv, "{},{},{}", row.order, row.s_d, row.s_q);
    }
    write_file(&ctx.out.join("sensitivity.csv"), &csv)?;
    ctx.write_manifest("sensitivity", &[])?;
    println!("wrote {}", ctx.out.join("sensitivity.csv").display());
    Ok(())
}

fn read_delta_spectra(dir: &Path) -> Result<Vec<Spectrum>> {
    ANALYZED_CHANNELS
        .iter()
        .map(|ch| {
            let path = dir.join(format!("delta_spectrum_{ch}.csv"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            spectrum_from_csv(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Parse {
                    path: path.clone(),
                    msg,
                },
                other => other,
            })
        })
        .collect()
}

fn render_report(ctx: &Ctx, report: &EolReport, truth: Option<f64>) -> (String, String) {
    let (phase, confidence) = match report.location {
        Some(loc) => (loc.phase.to_string(), loc.confidence.to_string()),
        None => ("none".to_string(), String::new()),
    };
    let orders = report
        .estimate
        .orders
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut text = String::new();
    let mut kv = |k: &str, v: &str| {
        let _ = writeln!(text, "{k}={v}");
    };
    kv("device", &ctx.cfg.scenario.device);
    kv("delta_r_on_est", &report.estimate.delta_r_on.to_string());
    if let Some(t) = truth {
        kv("delta_r_on_true", &t.to_string());
        if t > 0.0 {
            kv(
                "error_pct",
                &((report.estimate.delta_r_on - t).abs() / t * 100.0).to_string(),
            );
        }
    }
    kv("residual", &report.estimate.residual.to_string());
    kv("orders", &orders);
    kv("mode", ctx.mode_name);
    kv("phase", &phase);
    kv("phase_confidence", &confidence);
    kv("eol_delta_r_on", &report.eol_delta_r_on.to_string());
    kv("eol_fraction", &report.fraction.to_string());
    kv("status", report.status.label());

    let mut csv = String::from(
        "device,delta_r_on_est,residual,phase,phase_confidence,eol_fraction,status\n",
    );
    let _ = writeln!(
        csv,
        "{},{},{},{phase},{confidence},{},{}",
        ctx.cfg.scenario.device,
        report.estimate.delta_r_on,
        report.estimate.residual,
        report.fraction,
        report.status.label()
    );
    (text, csv)
}

fn estimate_from_deltas(ctx: &Ctx, deltas: &PairAnalysis) -> Result<EolReport> {
    let p = &ctx.cfg.system;
    let op = ctx.op()?;
    let device = ctx.device()?;
    let orders = ctx.orders_or(0, 2);
    let sens = sensitivity_table(p, &op, device, &orders, ctx.mode);
    let estimate = estimate_delta_ron(
        deltas.delta(Channel::VdRef),
        deltas.delta(Channel::VqRef),
        &sens,
        &orders,
    )?;
    let abc = [
        deltas.delta(Channel::VaRef).clone(),
        deltas.delta(Channel::VbRef).clone(),
        deltas.delta(Channel::VcRef).clone(),
    ];
    let location = locate_phase(&abc, &[0, 1], ctx.cfg.scenario.noise_floor)?;
    Ok(eol_report(estimate, ctx.cfg.health.r_on, location))
}

fn cmd_estimate(ctx: &Ctx, spectra_dir: &Path) -> Result<()> {
    let deltas = read_delta_spectra(spectra_dir)?;
    let analysis = PairAnalysis { deltas };
    let report = estimate_from_deltas(ctx, &analysis)?;
    let (text, csv) = render_report(ctx, &report, None);
    write_file(&ctx.out.join("estimate.txt"), &text)?;
    write_file(&ctx.out.join("estimate.csv"), &csv)?;
    ctx.write_manifest(
        "estimate",
        &[("estimate.spectra_dir", spectra_dir.display().to_string())],
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.system;
    let sc = &ctx.cfg.scenario;
    let device = ctx.device()?;
    let fidelity = ctx.fidelity()?;
    let settle = ctx.settle_cycles()?;
    let baseline = ctx.cfg.health.baseline();

    let pair = run_pair(
        p,
        &baseline,
        device,
        sc.delta_r_on,
        fidelity,
        sc.n_cycles,
        settle,
        sc.n_over,
    )?;
    ensure_converged(&pair.healthy)?;
    ensure_converged(&pair.degraded)?;
    let analysis = analyze_pair(&pair, sc.k_max)?;
    let report = estimate_from_deltas(ctx, &analysis)?;
    let (text, csv) = render_report(ctx, &report, Some(sc.delta_r_on));
    write_file(&ctx.out.join("report.txt"), &text)?;
    write_file(&ctx.out.join("report.csv"), &csv)?;
    ctx.write_manifest(
        "report",
        &[
            ("run.settle_cycles", settle.to_string()),
            (
                "run.healthy_residual",
                pair.healthy.convergence_residual.to_string(),
            ),
            (
                "run.degraded_residual",
                pair.degraded.convergence_residual.to_string(),
            ),
        ],
    )?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_parse_ranges_and_singles() {
        assert_eq!(parse_orders("0..6").unwrap(), vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_orders("3").unwrap(), vec![3]);
        assert_eq!(parse_orders(" 1 .. 2 ").unwrap(), vec![1, 2]);
        assert!(parse_orders("6..0").is_err());
        assert!(parse_orders("a..b").is_err());
        assert!(parse_orders("").is_err());
        assert!(parse_orders("-1..2").is_err());
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        use clap::Parser;
        let cli = Cli::try_parse_from([
            "invharm",
            "simulate",
            "--out",
            "somewhere",
            "--fidelity",
            "switched",
            "--orders",
            "0..4",
            "--mode",
            "loop-corrected",
            "--delta-r-on",
            "0.0005",
        ])
        .unwrap();
        assert_eq!(cli.out, PathBuf::from("somewhere"));
        assert_eq!(cli.fidelity, Some(FidelityArg::Switched));
        assert_eq!(cli.mode, Some(ModeArg::LoopCorrected));
        match cli.command {
            Command::Simulate { delta_r_on, .. } => assert_eq!(delta_r_on, Some(0.0005)),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn context_resolves_defaults() {
        use clap::Parser;
        let cli = Cli::try_parse_from(["invharm", "sensitivity"]).unwrap();
        let ctx = Ctx::new(&cli).unwrap();
        assert_eq!(ctx.orders_or(0, 6), vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(ctx.device().unwrap(), DeviceId::S1);
        assert_eq!(ctx.fidelity().unwrap(), Fidelity::Averaged);
        assert_eq!(ctx.settle_cycles().unwrap(), 20);
        // Digest is stable for a fixed configuration.
        assert_eq!(ctx.config_digest(), ctx.config_digest());
    }
}
