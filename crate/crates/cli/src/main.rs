//! Command-line front end for the two-delay Hopf toolkit.
//!
//! Every number printed comes straight out of the library; this binary only
//! parses flags, routes to the right module, and formats `key = value`
//! reports. Exit codes: 0 when every comparison passes, 1 when any fails,
//! 2 for usage or configuration errors.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddehopf::averaging::{average, AveragedModel, ReducedNonlinearity};
use ddehopf::center_basis::{normalize, BilinearForm};
use ddehopf::config::{self, ExperimentConfig};
use ddehopf::harness::{emit_figure_data, render_report, run_pipeline_with, PipelineReport};
use ddehopf::linear_analysis::{
    characteristic_value, find_hopf, verify_hypotheses, TwoDelayLinear,
};
use ddehopf::{Complex64, Result};

#[derive(Parser)]
#[command(
    name = "ddehopf",
    version,
    about = "Hopf bifurcation, averaging, and simulation for two-delay scalar DDEs"
)]
struct Cli {
    /// Directory for CSV and report files.
    #[arg(long, default_value = "./out", global = true)]
    out: PathBuf,
    /// Accepted for interface stability; every algorithm is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress commentary lines (those starting with `# `).
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct LinearArgs {
    /// Coefficient of x(t - tau1); nonzero.
    #[arg(long, allow_hyphen_values = true)]
    a1: f64,
    /// Coefficient of x(t - tau2); positive.
    #[arg(long)]
    a2: f64,
    /// First delay; positive.
    #[arg(long)]
    tau1: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the Hopf point of the two-delay linear equation.
    Hopf {
        #[command(flatten)]
        linear: LinearArgs,
    },
    /// Print the Gram-normalized center-space coefficients.
    Basis {
        #[command(flatten)]
        linear: LinearArgs,
        /// Build the pairing at this delay instead of the computed critical
        /// delay (accepted only close to it, e.g. a rounded value).
        #[arg(long)]
        tau2: Option<f64>,
    },
    /// Average the reduced amplitude equation of a configured model.
    Average {
        /// Config file describing the model.
        #[arg(long)]
        model: PathBuf,
        /// Upper end of the equilibrium search bracket.
        #[arg(long)]
        rho_max: Option<f64>,
    },
    /// Run every configured simulation, writing one trajectory CSV per run.
    Simulate {
        /// Config file describing the experiment.
        config: PathBuf,
    },
    /// Full pipeline: predictions against simulation, pass/fail exit code.
    Verify {
        /// Config file describing the experiment.
        config: PathBuf,
    },
    /// Write delay-embedding CSVs (t, x, x delayed) plus a manifest.
    Figure {
        /// Config file describing the experiment.
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn emit(text: &str, quiet: bool) {
    for line in text.lines() {
        if quiet && line.starts_with("# ") {
            continue;
        }
        println!("{line}");
    }
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Hopf { linear } => {
            emit(&hopf_report(linear)?, cli.quiet);
            Ok(true)
        }
        Command::Basis { linear, tau2 } => {
            emit(&basis_report(linear, *tau2)?, cli.quiet);
            Ok(true)
        }
        Command::Average { model, rho_max } => {
            emit(&average_report(model, *rho_max, &cli.out)?, cli.quiet);
            Ok(true)
        }
        Command::Simulate { config } => {
            let cfg = config::load(config)?;
            let report = run_writing_trajectories(&cfg, &cli.out)?;
            emit(&render_report(&report), cli.quiet);
            Ok(report.all_passed)
        }
        Command::Verify { config } => {
            let cfg = config::load(config)?;
            let report = run_writing_trajectories(&cfg, &cli.out)?;
            let text = render_report(&report);
            fs::write(cli.out.join("report.txt"), &text)?;
            emit(&text, cli.quiet);
            Ok(report.all_passed)
        }
        Command::Figure { config } => {
            let cfg = config::load(config)?;
            let (report, files) = emit_figure_data(&cfg, &cli.out)?;
            let mut s = String::new();
            for (i, f) in files.iter().enumerate() {
                let _ = writeln!(s, "file{i} = {}", f.display());
            }
            let _ = writeln!(s, "all_passed = {}", report.all_passed);
            emit(&s, cli.quiet);
            Ok(report.all_passed)
        }
    }
}

fn hopf_report(linear: &LinearArgs) -> Result<String> {
    let m = TwoDelayLinear::new(linear.a1, linear.a2, linear.tau1)?;
    let hp = find_hopf(&m)?;
    let hyp = verify_hypotheses(&m, &hp)?;
    let h_residual =
        characteristic_value(&m, Complex64::new(0.0, hp.omega_star), hp.tau2_0).norm();
    let mut s = String::new();
    let _ = writeln!(s, "# Hopf point of x'(t) = -a1 x(t - tau1) - a2 x(t - tau2)");
    let _ = writeln!(s, "omega_scaled = {}", hp.omega_scaled);
    let _ = writeln!(s, "r2_0 = {}", hp.r2_0);
    let _ = writeln!(s, "omega_star = {}", hp.omega_star);
    let _ = writeln!(s, "tau2_0 = {}", hp.tau2_0);
    let _ = writeln!(s, "branch = {}", hp.branch);
    let _ = writeln!(s, "h_residual = {h_residual:e}");
    let _ = writeln!(s, "transversality_re = {}", hp.transversality.re);
    let _ = writeln!(s, "transversality_im = {}", hp.transversality.im);
    let _ = writeln!(s, "transversal = {}", hyp.transversal);
    let _ = writeln!(s, "simple = {}", hyp.simple);
    let _ = writeln!(s, "isolated_pair = {}", hyp.isolated_pair);
    let _ = writeln!(s, "extra_center_roots = {}", hyp.extra_center_roots);
    let _ = writeln!(s, "omega_condition_value = {}", hyp.omega_condition_value);
    let _ = writeln!(s, "in_omega = {}", hyp.in_omega);
    Ok(s)
}

fn basis_report(linear: &LinearArgs, tau2: Option<f64>) -> Result<String> {
    let m = TwoDelayLinear::new(linear.a1, linear.a2, linear.tau1)?;
    let hp = find_hopf(&m)?;
    let pairing_delay = tau2.unwrap_or(hp.tau2_0);
    let bf = BilinearForm::for_model(&m, pairing_delay)?;
    let cb = normalize(&hp, &bf)?;
    let cf = cb.closed_form();
    let mut s = String::new();
    let _ = writeln!(s, "# Center-space basis at the Hopf point");
    let _ = writeln!(s, "omega_star = {}", cb.omega_star());
    let _ = writeln!(s, "tau2_0 = {}", cb.tau2_0());
    let _ = writeln!(s, "pairing_delay = {pairing_delay}");
    let _ = writeln!(s, "alpha1 = {}", cb.alpha1);
    let _ = writeln!(s, "beta1 = {}", cb.beta1);
    let _ = writeln!(s, "alpha2 = {}", cb.alpha2);
    let _ = writeln!(s, "beta2 = {}", cb.beta2);
    let _ = writeln!(s, "closed_alpha1 = {}", cf.alpha1);
    let _ = writeln!(s, "closed_beta1 = {}", cf.beta1);
    let _ = writeln!(s, "closed_alpha2 = {}", cf.alpha2);
    let _ = writeln!(s, "closed_beta2 = {}", cf.beta2);
    let _ = writeln!(s, "pairing_residual = {:e}", cb.pairing_residual(&bf));
    let _ = writeln!(s, "coefficient_discrepancy = {}", cb.coefficient_discrepancy());
    if cb.coefficient_discrepancy() > 1e-6 {
        let _ = writeln!(
            s,
            "# note: closed-form coefficients differ from the Gram normalization; \
             the Gram values satisfy (Psi, Phi) = I and drive all predictions"
        );
    }
    Ok(s)
}

fn averaged_from_config(cfg: &ExperimentConfig) -> Result<AveragedModel> {
    let m = cfg.two_delay()?;
    let hp = find_hopf(&m)?;
    let bf = BilinearForm::for_model(&m, hp.tau2_0)?;
    let cb = normalize(&hp, &bf)?;
    let rn = ReducedNonlinearity::new(cb, cfg.delays_with(hp.tau2_0), cfg.terms.clone())?;
    Ok(average(rn))
}

fn average_report(model: &Path, rho_max: Option<f64>, out: &Path) -> Result<String> {
    let cfg = config::load(model)?;
    let am = averaged_from_config(&cfg)?;
    let rho_max = rho_max.unwrap_or_else(|| am.default_rho_max());
    let equilibria = am.find_equilibria(rho_max)?;
    let predictions = am.predict(&equilibria);

    fs::create_dir_all(out)?;
    let csv_path = out.join("f0.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    writeln!(w, "rho,F0")?;
    for k in 0..=200 {
        let rho = rho_max * k as f64 / 200.0;
        writeln!(w, "{:.16e},{:.16e}", rho, am.f0(rho))?;
    }
    w.flush()?;

    let mut s = String::new();
    let _ = writeln!(s, "# Averaged amplitude equation rho' = eps F0(rho)");
    let _ = writeln!(s, "omega_star = {}", am.basis().omega_star());
    let _ = writeln!(s, "tau2_0 = {}", am.basis().tau2_0());
    let _ = writeln!(s, "rho_max = {rho_max}");
    let _ = writeln!(s, "f0_samples = {}", csv_path.display());
    match am.closed_form() {
        Some(cf) => {
            let _ = writeln!(s, "closed_form = cubic");
            let _ = writeln!(s, "closed_a3 = {}", cf.a3);
            let _ = writeln!(s, "closed_a4 = {}", cf.a4);
            let _ = writeln!(s, "closed_tau3 = {}", cf.tau3);
            let _ = writeln!(s, "closed_factor = {}", cf.factor);
        }
        None => {
            let _ = writeln!(s, "closed_form = none");
        }
    }
    let _ = writeln!(s, "equilibrium_count = {}", equilibria.len());
    for (i, e) in equilibria.iter().enumerate() {
        let _ = writeln!(s, "eq{i}_rho = {}", e.rho_star);
        let _ = writeln!(s, "eq{i}_derivative = {}", e.derivative);
        let _ = writeln!(s, "eq{i}_stability = {}", e.stability);
    }
    let _ = writeln!(s, "prediction_count = {}", predictions.len());
    for (i, p) in predictions.iter().enumerate() {
        let _ = writeln!(s, "pred{i}_amplitude = {}", p.rho_star);
        let _ = writeln!(s, "pred{i}_period = {}", p.period);
        let _ = writeln!(s, "pred{i}_stability = {}", p.stability);
        let _ = writeln!(s, "# pred{i}: {}", p.epsilon_validity_note);
    }
    Ok(s)
}

fn run_writing_trajectories(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineReport> {
    fs::create_dir_all(out)?;
    run_pipeline_with(cfg, |spec, _history, traj| {
        let path = out.join(format!(
            "trajectory_h{}_e{}.csv",
            spec.history_index, spec.epsilon_index
        ));
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        traj.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    })
}
