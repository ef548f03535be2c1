//! End-to-end experiment runner.
//!
//! Wires the stages together: Hopf detection, center-space normalization,
//! averaging, periodic-solution prediction, then direct integration of the
//! full equation for every configured (history, epsilon) pair. Each
//! trajectory is measured (amplitude, period, envelope trend) and compared
//! against what the averaged flow forecasts from the projected initial
//! amplitude, giving one pass/fail verdict per run.

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use crate::averaging::{average, AveragedModel, Equilibrium, PeriodicPrediction, Stability};
use crate::center_basis::{normalize, BilinearForm, CenterBasis};
use crate::config::ExperimentConfig;
use crate::dde::{integrate, HistoryFunction, StepControl, Trajectory};
use crate::error::{Error, Result};
use crate::linear_analysis::{
    candidate_frequencies_with, count_unstable_roots, critical_delay, verify_hypotheses,
    HopfPoint, HypothesisReport, TwoDelayLinear,
};

/// Trajectories whose largest |x| over the window stays below this count as
/// decayed to zero.
const DECAY_THRESHOLD: f64 = 1e-6;
/// Relative envelope drift below which an orbit counts as converged.
const DRIFT_TOL: f64 = 0.02;
/// Relative period tolerance against the critical period.
const PERIOD_TOL: f64 = 0.05;
/// Horizon cap for the derived default.
const T_END_CAP: f64 = 1e5;

/// What the trajectory settled into over the measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converged,
    DecayedToZero,
    Diverged,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Converged => write!(f, "converged"),
            Verdict::DecayedToZero => write!(f, "decayed_to_zero"),
            Verdict::Diverged => write!(f, "diverged"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

/// Amplitude and period extracted from the tail of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitMeasurement {
    /// Mean |x| at the extrema inside the window (largest |x| when the tail
    /// has no extrema).
    pub amplitude: f64,
    /// Mean gap between successive upward zero crossings; 0 with fewer than
    /// two crossings.
    pub period: f64,
    /// Upward zero crossings found in the window.
    pub crossings: usize,
    /// Signed relative change of the extremal envelope between the first and
    /// second half of the window; NaN when either half lacks extrema.
    pub trend: f64,
    pub verdict: Verdict,
}

fn value_at(traj: &Trajectory, t: f64) -> f64 {
    traj.query(t).expect("query inside trajectory domain")
}

fn refine_zero(traj: &Trajectory, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..100 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if value_at(traj, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn refine_extremum(traj: &Trajectory, mut lo: f64, mut hi: f64, rising_at_lo: bool) -> f64 {
    for _ in 0..100 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let d = traj.derivative(mid).expect("derivative inside trajectory domain");
        if (d > 0.0) == rising_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Scans the last `window` fraction of the trajectory: locates upward zero
/// crossings and extrema on the dense output, and derives amplitude, period,
/// envelope trend, and a verdict.
pub fn measure_orbit(traj: &Trajectory, window: f64) -> OrbitMeasurement {
    let window = window.clamp(1e-6, 1.0);
    let t_hi = traj.t_end();
    let t_lo = t_hi * (1.0 - window);
    let n = traj.node_count();
    let k_lo = ((t_lo / traj.step()).floor() as usize).min(n.saturating_sub(1));

    let mut max_abs = 0.0f64;
    let mut upward: Vec<f64> = Vec::new();
    let mut extrema: Vec<(f64, f64)> = Vec::new();
    for k in k_lo..n.saturating_sub(1) {
        let (t0, t1) = (traj.node_time(k), traj.node_time(k + 1));
        if t0 < t_lo {
            continue;
        }
        let (x0, x1) = (traj.node_value(k), traj.node_value(k + 1));
        max_abs = max_abs.max(x0.abs());
        if x0 < 0.0 && x1 >= 0.0 {
            upward.push(refine_zero(traj, t0, t1));
        }
        let (d0, d1) = (traj.node_derivative(k), traj.node_derivative(k + 1));
        if d0 != 0.0 && d1 != 0.0 && (d0 > 0.0) != (d1 > 0.0) {
            let te = refine_extremum(traj, t0, t1, d0 > 0.0);
            extrema.push((te, value_at(traj, te).abs()));
        }
    }
    if n > 0 {
        max_abs = max_abs.max(traj.node_value(n - 1).abs());
    }

    let amplitude = if extrema.is_empty() {
        max_abs
    } else {
        extrema.iter().map(|&(_, v)| v).sum::<f64>() / extrema.len() as f64
    };
    let period = if upward.len() >= 2 {
        (upward[upward.len() - 1] - upward[0]) / (upward.len() - 1) as f64
    } else {
        0.0
    };
    let t_mid = 0.5 * (t_lo + t_hi);
    let first: Vec<f64> = extrema.iter().filter(|&&(t, _)| t < t_mid).map(|&(_, v)| v).collect();
    let second: Vec<f64> = extrema.iter().filter(|&&(t, _)| t >= t_mid).map(|&(_, v)| v).collect();
    let trend = if first.len() >= 2 && second.len() >= 2 {
        let m1 = first.iter().sum::<f64>() / first.len() as f64;
        let m2 = second.iter().sum::<f64>() / second.len() as f64;
        if m1 > 0.0 {
            (m2 - m1) / m1
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };

    let verdict = if traj.diverged_at().is_some() {
        Verdict::Diverged
    } else if max_abs < DECAY_THRESHOLD {
        Verdict::DecayedToZero
    } else if upward.len() < 3 {
        Verdict::Inconclusive
    } else if trend.is_finite() && trend.abs() < DRIFT_TOL {
        Verdict::Converged
    } else {
        Verdict::Inconclusive
    };

    OrbitMeasurement { amplitude, period, crossings: upward.len(), trend, verdict }
}

/// The averaged flow's expectation for a run started at amplitude rho0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forecast {
    /// Slides monotonically to this equilibrium amplitude.
    ConvergeTo(f64),
    DecayToZero,
    /// Leaves the equilibrium bracket upward.
    Grow,
    /// Starts at (numerically) an equilibrium and stays.
    Hold(f64),
    /// No claim (for example eps = 0 exactly at the critical delay).
    Neutral,
}

impl std::fmt::Display for Forecast {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forecast::ConvergeTo(r) => write!(f, "converge_to {r}"),
            Forecast::DecayToZero => write!(f, "decay_to_zero"),
            Forecast::Grow => write!(f, "grow"),
            Forecast::Hold(r) => write!(f, "hold {r}"),
            Forecast::Neutral => write!(f, "neutral"),
        }
    }
}

/// Basin reasoning for the one-dimensional averaged flow: from rho0, follow
/// the sign of F0 to the adjacent equilibrium, to zero, or out of the
/// bracket. `equilibria` must be sorted ascending (as `find_equilibria`
/// returns them).
pub fn forecast_amplitude(
    am: &AveragedModel,
    equilibria: &[Equilibrium],
    rho0: f64,
) -> Forecast {
    if rho0 < 1e-9 {
        return Forecast::DecayToZero;
    }
    if let Some(e) = equilibria
        .iter()
        .find(|e| (e.rho_star - rho0).abs() <= 1e-9 * rho0.max(1.0))
    {
        return Forecast::Hold(e.rho_star);
    }
    let f = am.f0(rho0);
    if f > 0.0 {
        match equilibria.iter().find(|e| e.rho_star > rho0) {
            Some(e) => Forecast::ConvergeTo(e.rho_star),
            None => Forecast::Grow,
        }
    } else if f < 0.0 {
        match equilibria.iter().rev().find(|e| e.rho_star < rho0) {
            Some(e) => Forecast::ConvergeTo(e.rho_star),
            None => Forecast::DecayToZero,
        }
    } else {
        Forecast::Hold(rho0)
    }
}

/// Relative amplitude tolerance for comparing a measured orbit against the
/// predicted rho*: 5% at eps = 0.01 rising linearly to 15% at eps = 0.1,
/// clamped to that range outside, absorbing the O(eps) part of the solution
/// off the center space.
pub fn amplitude_tolerance(epsilon: f64) -> f64 {
    (0.05 + 0.10 * (epsilon - 0.01) / 0.09).clamp(0.05, 0.15)
}

/// Integration horizon: an explicit config value wins; otherwise the
/// averaged flow needs O(1/(eps rate)) time, so 40/(eps rate) capped at 1e5;
/// without a usable rate (or at eps = 0), 60 critical periods.
pub fn default_t_end(explicit: Option<f64>, epsilon: f64, rate: Option<f64>, period: f64) -> f64 {
    if let Some(t) = explicit {
        return t;
    }
    let floor_t = 60.0 * period;
    match rate {
        Some(r) if epsilon > 0.0 && r > 1e-12 => (40.0 / (epsilon * r)).min(T_END_CAP).max(floor_t),
        _ => floor_t,
    }
}

/// Identity of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub history_index: usize,
    pub epsilon_index: usize,
    pub epsilon: f64,
    pub tau2: f64,
    pub t_end: f64,
    pub max_step: f64,
}

/// One simulated run with its forecast, measurement, and comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    pub spec: RunSpec,
    pub history: HistoryFunction,
    /// Amplitude of the history's projection onto the center space.
    pub rho0: f64,
    pub forecast: Forecast,
    pub measurement: OrbitMeasurement,
    /// Set only when the forecast names a target amplitude.
    pub amplitude_ok: Option<bool>,
    /// Set only when the forecast names a target amplitude.
    pub period_ok: Option<bool>,
    pub pass: bool,
}

/// Everything the pipeline produced.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub model: TwoDelayLinear,
    pub hopf: HopfPoint,
    pub hypotheses: HypothesisReport,
    pub basis: CenterBasis,
    pub pairing_residual: f64,
    pub averaged: AveragedModel,
    pub rho_max: f64,
    pub equilibria: Vec<Equilibrium>,
    pub predictions: Vec<PeriodicPrediction>,
    pub tau2_used: f64,
    pub window: f64,
    pub runs: Vec<RunComparison>,
    pub all_passed: bool,
}

fn relative_error(measured: f64, target: f64) -> f64 {
    (measured - target).abs() / target.abs().max(f64::MIN_POSITIVE)
}

fn compare_run(
    forecast: Forecast,
    m: &OrbitMeasurement,
    critical_period: f64,
    epsilon: f64,
) -> (Option<bool>, Option<bool>, bool) {
    match forecast {
        Forecast::ConvergeTo(target) | Forecast::Hold(target) => {
            let amp_ok = relative_error(m.amplitude, target) <= amplitude_tolerance(epsilon);
            let per_ok = relative_error(m.period, critical_period) <= PERIOD_TOL;
            (Some(amp_ok), Some(per_ok), m.verdict == Verdict::Converged && amp_ok && per_ok)
        }
        Forecast::DecayToZero => {
            let pass = m.verdict == Verdict::DecayedToZero || m.trend <= -DRIFT_TOL;
            (None, None, pass)
        }
        Forecast::Grow => {
            let pass = m.verdict == Verdict::Diverged || m.trend >= DRIFT_TOL;
            (None, None, pass)
        }
        Forecast::Neutral => (None, None, true),
    }
}

/// Runs the full pipeline, discarding trajectories after measurement.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    run_pipeline_with(cfg, |_, _, _| Ok(()))
}

/// Runs the full pipeline, handing every finished trajectory to `sink`
/// (before measurement) so callers can stream CSV output without the memory
/// cost of keeping all runs alive.
pub fn run_pipeline_with<S>(cfg: &ExperimentConfig, mut sink: S) -> Result<PipelineReport>
where
    S: FnMut(&RunSpec, &HistoryFunction, &Trajectory) -> Result<()>,
{
    let m = cfg.two_delay()?;
    if m.a2() <= m.a1().abs() {
        return Err(Error::InvalidModel(
            "the Hopf analysis requires a2 > |a1| (0 < a1 < a2, or a1 < 0 < |a1| < a2)".into(),
        ));
    }
    let omegas = candidate_frequencies_with(&m.scaled(), cfg.hopf.scan_step, cfg.hopf.scan_margin);
    if omegas.is_empty() {
        return Err(Error::NoHopf("the frequency condition has no positive root".into()));
    }
    let hopf = critical_delay(&m, &omegas)?;
    if cfg.linear.tau1 >= hopf.tau2_0 {
        return Err(Error::InvalidModel(format!(
            "tau1 = {} must be smaller than the critical delay tau2_0 = {}",
            cfg.linear.tau1, hopf.tau2_0
        )));
    }
    let hypotheses = verify_hypotheses(&m, &hopf)?;
    let bf = BilinearForm::for_model(&m, hopf.tau2_0)?;
    let basis = normalize(&hopf, &bf)?;
    let pairing_residual = basis.pairing_residual(&bf);

    let rn = crate::averaging::ReducedNonlinearity::new(
        basis,
        cfg.delays_with(hopf.tau2_0),
        cfg.terms.clone(),
    )?;
    let averaged = average(rn);
    let rho_max = averaged.default_rho_max();
    let equilibria = averaged.find_equilibria(rho_max)?;
    let predictions = averaged.predict(&equilibria);

    let tau2_used = cfg.linear.tau2.unwrap_or(hopf.tau2_0);
    let critical_period = basis.period();
    let rate = equilibria
        .first()
        .map(|e| e.derivative.abs())
        .or_else(|| {
            if cfg.terms.is_empty() {
                None
            } else {
                Some(averaged.derivative(0.0).abs())
            }
        })
        .filter(|r| r.is_finite() && *r > 1e-12);

    let mut runs = Vec::new();
    for (ei, &epsilon) in cfg.simulation.epsilons.iter().enumerate() {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let model = cfg.model_at(tau2_used, epsilon)?;
        let t_end = default_t_end(cfg.simulation.t_end, epsilon, rate, critical_period);
        let mut ctrl = StepControl::default();
        if let Some(s) = cfg.simulation.max_step {
            ctrl.max_step = s;
        }
        if let Some(min_pos) =
            model.delays().iter().cloned().filter(|d| *d > 0.0).reduce(f64::min)
        {
            ctrl.max_step = ctrl.max_step.min(min_pos);
        }
        for (hi, history) in cfg.simulation.histories.iter().enumerate() {
            let spec = RunSpec {
                history_index: hi,
                epsilon_index: ei,
                epsilon,
                tau2: tau2_used,
                t_end,
                max_step: ctrl.max_step,
            };
            let (y1, y2) = basis.project(&bf, history);
            let rho0 = basis.polar_initial(y1, y2).0;
            let use_linear_forecast = epsilon == 0.0 || cfg.terms.is_empty();
            let forecast = if use_linear_forecast {
                match count_unstable_roots(&m, tau2_used) {
                    Ok(0) => Forecast::DecayToZero,
                    Ok(_) => Forecast::Grow,
                    Err(_) => Forecast::Neutral,
                }
            } else {
                forecast_amplitude(&averaged, &equilibria, rho0)
            };
            let traj = match integrate(&model, history.clone(), t_end, ctrl) {
                Ok(t) => t,
                Err(Error::Divergence { partial, .. }) => *partial,
                Err(e) => return Err(e),
            };
            sink(&spec, history, &traj)?;
            let measurement = measure_orbit(&traj, cfg.simulation.window);
            let (amplitude_ok, period_ok, pass) =
                compare_run(forecast, &measurement, critical_period, epsilon);
            runs.push(RunComparison {
                spec,
                history: history.clone(),
                rho0,
                forecast,
                measurement,
                amplitude_ok,
                period_ok,
                pass,
            });
        }
    }
    let all_passed = runs.iter().all(|r| r.pass);
    Ok(PipelineReport {
        model: m,
        hopf,
        hypotheses,
        basis,
        pairing_residual,
        averaged,
        rho_max,
        equilibria,
        predictions,
        tau2_used,
        window: cfg.simulation.window,
        runs,
        all_passed,
    })
}

fn fmt_opt_bool(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "true",
        Some(false) => "false",
        None => "n/a",
    }
}

/// Renders the whole report as diffable `key = value` lines. Lines starting
/// with `# ` are commentary.
pub fn render_report(r: &PipelineReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "# Hopf point");
    let _ = writeln!(s, "a1 = {}", r.model.a1());
    let _ = writeln!(s, "a2 = {}", r.model.a2());
    let _ = writeln!(s, "tau1 = {}", r.model.tau1());
    let _ = writeln!(s, "omega_scaled = {}", r.hopf.omega_scaled);
    let _ = writeln!(s, "r2_0 = {}", r.hopf.r2_0);
    let _ = writeln!(s, "omega_star = {}", r.hopf.omega_star);
    let _ = writeln!(s, "tau2_0 = {}", r.hopf.tau2_0);
    let _ = writeln!(s, "branch = {}", r.hopf.branch);
    let _ = writeln!(s, "transversality_re = {}", r.hopf.transversality.re);
    let _ = writeln!(s, "transversality_im = {}", r.hopf.transversality.im);
    let _ = writeln!(s, "transversal = {}", r.hypotheses.transversal);
    let _ = writeln!(s, "simple = {}", r.hypotheses.simple);
    let _ = writeln!(s, "isolated_pair = {}", r.hypotheses.isolated_pair);
    let _ = writeln!(s, "extra_center_roots = {}", r.hypotheses.extra_center_roots);
    let _ = writeln!(s, "omega_condition_value = {}", r.hypotheses.omega_condition_value);
    let _ = writeln!(s, "in_omega = {}", r.hypotheses.in_omega);
    let _ = writeln!(s, "# Center basis");
    let _ = writeln!(s, "alpha1 = {}", r.basis.alpha1);
    let _ = writeln!(s, "beta1 = {}", r.basis.beta1);
    let _ = writeln!(s, "alpha2 = {}", r.basis.alpha2);
    let _ = writeln!(s, "beta2 = {}", r.basis.beta2);
    let cf = r.basis.closed_form();
    let _ = writeln!(s, "closed_alpha1 = {}", cf.alpha1);
    let _ = writeln!(s, "closed_beta1 = {}", cf.beta1);
    let _ = writeln!(s, "closed_alpha2 = {}", cf.alpha2);
    let _ = writeln!(s, "closed_beta2 = {}", cf.beta2);
    let _ = writeln!(s, "coefficient_discrepancy = {}", r.basis.coefficient_discrepancy());
    let _ = writeln!(s, "pairing_residual = {:e}", r.pairing_residual);
    if r.basis.coefficient_discrepancy() > 1e-6 {
        let _ = writeln!(
            s,
            "# note: closed-form coefficients differ from the Gram normalization; \
             the Gram values satisfy (Psi, Phi) = I and drive all predictions"
        );
    }
    let _ = writeln!(s, "# Averaged amplitude equation");
    let _ = writeln!(s, "rho_max = {}", r.rho_max);
    let _ = writeln!(s, "equilibrium_count = {}", r.equilibria.len());
    for (i, e) in r.equilibria.iter().enumerate() {
        let _ = writeln!(s, "eq{i}_rho = {}", e.rho_star);
        let _ = writeln!(s, "eq{i}_derivative = {}", e.derivative);
        let _ = writeln!(s, "eq{i}_stability = {}", e.stability);
    }
    let _ = writeln!(s, "prediction_count = {}", r.predictions.len());
    for (i, p) in r.predictions.iter().enumerate() {
        let _ = writeln!(s, "pred{i}_amplitude = {}", p.rho_star);
        let _ = writeln!(s, "pred{i}_period = {}", p.period);
        let _ = writeln!(
            s,
            "pred{i}_stability = {}",
            match p.stability {
                Stability::Stable => "asymptotically stable on the center manifold",
                Stability::Unstable => "unstable on the center manifold",
                Stability::Degenerate => "degenerate",
            }
        );
        let _ = writeln!(s, "# pred{i}: {}", p.epsilon_validity_note);
    }
    let _ = writeln!(s, "# Simulation runs");
    let _ = writeln!(s, "tau2_used = {}", r.tau2_used);
    let _ = writeln!(s, "window = {}", r.window);
    let _ = writeln!(s, "run_count = {}", r.runs.len());
    for (i, run) in r.runs.iter().enumerate() {
        let _ = writeln!(s, "run{i}_history = {}", run.history);
        let _ = writeln!(s, "run{i}_epsilon = {}", run.spec.epsilon);
        let _ = writeln!(s, "run{i}_t_end = {}", run.spec.t_end);
        let _ = writeln!(s, "run{i}_step = {}", run.spec.max_step);
        let _ = writeln!(s, "run{i}_rho0 = {}", run.rho0);
        let _ = writeln!(s, "run{i}_forecast = {}", run.forecast);
        let _ = writeln!(s, "run{i}_verdict = {}", run.measurement.verdict);
        let _ = writeln!(s, "run{i}_amplitude = {}", run.measurement.amplitude);
        let _ = writeln!(s, "run{i}_period = {}", run.measurement.period);
        let _ = writeln!(s, "run{i}_crossings = {}", run.measurement.crossings);
        let _ = writeln!(s, "run{i}_trend = {}", run.measurement.trend);
        let _ = writeln!(s, "run{i}_amplitude_ok = {}", fmt_opt_bool(run.amplitude_ok));
        let _ = writeln!(s, "run{i}_period_ok = {}", fmt_opt_bool(run.period_ok));
        let _ = writeln!(s, "run{i}_pass = {}", run.pass);
    }
    let _ = writeln!(s, "all_passed = {}", r.all_passed);
    s
}

/// Runs the pipeline and writes, per run, a delay-embedding CSV
/// `t,x,x_delayed` (x_delayed = x(t - tau3), falling back to the largest
/// delay when the model has no extra delay), plus a manifest carrying the
/// full report. Returns the report and the paths written.
pub fn emit_figure_data(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(PipelineReport, Vec<PathBuf>)> {
    fs::create_dir_all(out_dir)?;
    let embed_delay = cfg.extra_delays.first().copied();
    let mut files: Vec<PathBuf> = Vec::new();
    let report = run_pipeline_with(cfg, |spec, _history, traj| {
        let path = out_dir.join(format!(
            "figure_h{}_e{}.csv",
            spec.history_index, spec.epsilon_index
        ));
        let delay = embed_delay.unwrap_or_else(|| traj.max_delay());
        let file = fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "t,x,x_delayed")?;
        for i in 0..traj.node_count() {
            let t = traj.node_time(i);
            let xd = traj.query(t - delay)?;
            writeln!(w, "{:.16e},{:.16e},{:.16e}", t, traj.node_value(i), xd)?;
        }
        w.flush()?;
        files.push(path);
        Ok(())
    })?;
    let manifest = out_dir.join("manifest.txt");
    fs::write(&manifest, render_report(&report))?;
    files.push(manifest);
    Ok((report, files))
}
