//! Line-oriented experiment configuration.
//!
//! The format is plain UTF-8 text with `[section]` headers, `key = value`
//! lines, `#` comments, and comma-separated lists. Example:
//!
//! ```text
//! [linear]
//! a1 = 2
//! a2 = 3
//! tau1 = 0.113279
//! # tau2 = 0.75          optional override; computed from the Hopf point if absent
//!
//! [nonlinear]
//! epsilon = 0.1
//! delays = 1.2           # extra delays tau_3, tau_4, ... beyond tau1, tau2
//! term = 1 * x3^3        # x<j> refers to delay j in [tau1, tau2, extras...]
//! term = -1 * x3
//!
//! [hopf]
//! scan_step = 0.001
//! scan_margin = 2.0
//!
//! [simulation]
//! epsilons = 0.1, 0.001
//! t_end = 1500
//! step = 0.005
//! window = 0.25
//! history = exp 0.2
//! history = cos_plus_one 0.05
//! history = table -0.75:0.1 -0.4:0.0 0:0.2
//! ```
//!
//! Histories: `constant c`, `exp c` (c e^theta), `cos_plus_one c`
//! (c (cos theta + 1)), `sin_plus_one c`, `table theta:x ...`.

use std::path::Path;

use crate::dde::{DelayedMonomial, HistoryFunction, PolynomialDde};
use crate::error::{Error, Result};
use crate::linear_analysis::TwoDelayLinear;

/// The `[linear]` section: coefficients of -a1 x(t-tau1) - a2 x(t-tau2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSpec {
    pub a1: f64,
    pub a2: f64,
    pub tau1: f64,
    /// Explicit second delay; when absent the critical delay tau2_0 of the
    /// Hopf point is used.
    pub tau2: Option<f64>,
}

/// Knobs for the frequency scan behind Hopf detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfOptions {
    pub scan_step: f64,
    /// The scan covers (0, a + scan_margin] in scaled frequency.
    pub scan_margin: f64,
}

impl Default for HopfOptions {
    fn default() -> Self {
        HopfOptions { scan_step: 1e-3, scan_margin: 2.0 }
    }
}

/// The `[simulation]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    /// Epsilon values to simulate at; defaults to the model epsilon.
    pub epsilons: Vec<f64>,
    /// Integration horizon; derived from the averaged flow when absent.
    pub t_end: Option<f64>,
    /// Integrator step bound; the integrator default applies when absent.
    pub max_step: Option<f64>,
    /// Tail fraction of the trajectory used for measurements.
    pub window: f64,
    pub histories: Vec<HistoryFunction>,
}

/// A fully parsed experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub linear: LinearSpec,
    /// The model's own perturbation size.
    pub epsilon: f64,
    /// Delays beyond tau1 and tau2, in the order given.
    pub extra_delays: Vec<f64>,
    pub terms: Vec<DelayedMonomial>,
    pub hopf: HopfOptions,
    pub simulation: SimulationSpec,
}

impl ExperimentConfig {
    pub fn two_delay(&self) -> Result<TwoDelayLinear> {
        TwoDelayLinear::new(self.linear.a1, self.linear.a2, self.linear.tau1)
    }

    /// Full delay list with the given second delay spliced in:
    /// [tau1, tau2, extras...].
    pub fn delays_with(&self, tau2: f64) -> Vec<f64> {
        let mut delays = Vec::with_capacity(2 + self.extra_delays.len());
        delays.push(self.linear.tau1);
        delays.push(tau2);
        delays.extend_from_slice(&self.extra_delays);
        delays
    }

    /// Assembles the integrable model at a concrete (tau2, epsilon).
    pub fn model_at(&self, tau2: f64, epsilon: f64) -> Result<PolynomialDde> {
        PolynomialDde::new(
            self.delays_with(tau2),
            vec![(self.linear.a1, 0), (self.linear.a2, 1)],
            epsilon,
            self.terms.clone(),
        )
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    parse(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Linear,
    Nonlinear,
    Hopf,
    Simulation,
}

#[derive(Default)]
struct Builder {
    a1: Option<f64>,
    a2: Option<f64>,
    tau1: Option<f64>,
    tau2: Option<f64>,
    epsilon: Option<f64>,
    extra_delays: Option<Vec<f64>>,
    terms: Vec<(usize, DelayedMonomial)>,
    scan_step: Option<f64>,
    scan_margin: Option<f64>,
    epsilons: Option<Vec<f64>>,
    t_end: Option<f64>,
    max_step: Option<f64>,
    window: Option<f64>,
    histories: Vec<HistoryFunction>,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| err(line, format!("{key}: `{}` is not a number", value.trim())))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("{key} must be finite")))
            }
        })
}

fn parse_list(value: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    value.split(',').map(|piece| parse_f64(piece, line, key)).collect()
}

fn set_scalar(slot: &mut Option<f64>, value: f64, line: usize, key: &str) -> Result<()> {
    if slot.is_some() {
        return Err(err(line, format!("duplicate key `{key}`")));
    }
    *slot = Some(value);
    Ok(())
}

/// Parses `<coeff> * x<j>[^<p>] [* x<k>[^<q>] ...]` with 1-based delay
/// indices.
fn parse_term(value: &str, line: usize) -> Result<DelayedMonomial> {
    let mut pieces = value.split('*').map(str::trim);
    let coeff_text = pieces
        .next()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| err(line, "term: expected `<coeff> * x<j>^<p>`"))?;
    let coefficient = parse_f64(coeff_text, line, "term coefficient")?;
    let mut factors = Vec::new();
    for piece in pieces {
        let rest = piece
            .strip_prefix('x')
            .ok_or_else(|| err(line, format!("term: factor `{piece}` must look like x<j>^<p>")))?;
        let (idx_text, pow_text) = match rest.split_once('^') {
            Some((i, p)) => (i.trim(), Some(p.trim())),
            None => (rest.trim(), None),
        };
        let index: usize = idx_text
            .parse()
            .map_err(|_| err(line, format!("term: `{idx_text}` is not a delay index")))?;
        if index == 0 {
            return Err(err(line, "term: delay indices are 1-based"));
        }
        let power: u32 = match pow_text {
            Some(p) => p
                .parse()
                .map_err(|_| err(line, format!("term: `{p}` is not a power")))?,
            None => 1,
        };
        factors.push((index - 1, power));
    }
    if factors.is_empty() {
        return Err(err(line, "term: needs at least one x<j> factor"));
    }
    DelayedMonomial::new(coefficient, factors)
        .map_err(|e| err(line, format!("term: {e}")))
}

fn parse_history(value: &str, line: usize) -> Result<HistoryFunction> {
    let mut tokens = value.split_whitespace();
    let kind = tokens.next().ok_or_else(|| err(line, "history: missing kind"))?;
    let parsed = match kind {
        "constant" | "exp" | "cos_plus_one" | "sin_plus_one" => {
            let c_text = tokens
                .next()
                .ok_or_else(|| err(line, format!("history {kind}: missing amplitude")))?;
            let c = parse_f64(c_text, line, "history amplitude")?;
            if tokens.next().is_some() {
                return Err(err(line, format!("history {kind}: expected a single amplitude")));
            }
            match kind {
                "constant" => HistoryFunction::Constant(c),
                "exp" => HistoryFunction::ScaledExp(c),
                "cos_plus_one" => HistoryFunction::CosinePlusOne(c),
                _ => HistoryFunction::SinePlusOne(c),
            }
        }
        "table" => {
            let mut thetas = Vec::new();
            let mut values = Vec::new();
            for pair in tokens {
                let (t, v) = pair
                    .split_once(':')
                    .ok_or_else(|| err(line, format!("history table: `{pair}` is not theta:x")))?;
                thetas.push(parse_f64(t, line, "table theta")?);
                values.push(parse_f64(v, line, "table value")?);
            }
            HistoryFunction::tabulated(thetas, values)
                .map_err(|e| err(line, format!("history table: {e}")))?
        }
        other => {
            return Err(err(
                line,
                format!("history: unknown kind `{other}` (constant, exp, cos_plus_one, sin_plus_one, table)"),
            ))
        }
    };
    Ok(parsed)
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let mut section = Section::None;
    let mut b = Builder::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "section header missing `]`"))?
                .trim();
            section = match name {
                "linear" => Section::Linear,
                "nonlinear" => Section::Nonlinear,
                "hopf" => Section::Hopf,
                "simulation" => Section::Simulation,
                other => return Err(err(line, format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        match (section, key) {
            (Section::Linear, "a1") => set_scalar(&mut b.a1, parse_f64(value, line, key)?, line, key)?,
            (Section::Linear, "a2") => set_scalar(&mut b.a2, parse_f64(value, line, key)?, line, key)?,
            (Section::Linear, "tau1") => {
                set_scalar(&mut b.tau1, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Linear, "tau2") => {
                set_scalar(&mut b.tau2, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Nonlinear, "epsilon") => {
                set_scalar(&mut b.epsilon, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Nonlinear, "delays") => {
                if b.extra_delays.is_some() {
                    return Err(err(line, "duplicate key `delays`"));
                }
                b.extra_delays = Some(parse_list(value, line, key)?);
            }
            (Section::Nonlinear, "term") => b.terms.push((line, parse_term(value, line)?)),
            (Section::Hopf, "scan_step") => {
                set_scalar(&mut b.scan_step, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Hopf, "scan_margin") => {
                set_scalar(&mut b.scan_margin, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Simulation, "epsilons") => {
                if b.epsilons.is_some() {
                    return Err(err(line, "duplicate key `epsilons`"));
                }
                b.epsilons = Some(parse_list(value, line, key)?);
            }
            (Section::Simulation, "t_end") => {
                set_scalar(&mut b.t_end, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Simulation, "step") => {
                set_scalar(&mut b.max_step, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Simulation, "window") => {
                set_scalar(&mut b.window, parse_f64(value, line, key)?, line, key)?
            }
            (Section::Simulation, "history") => b.histories.push(parse_history(value, line)?),
            (Section::None, _) => {
                return Err(err(line, format!("key `{key}` appears before any [section]")))
            }
            (_, other) => return Err(err(line, format!("unknown key `{other}` in this section"))),
        }
    }

    finish(b)
}

fn finish(b: Builder) -> Result<ExperimentConfig> {
    let missing = |what: &str| Error::InvalidInput(format!("config is missing [linear] {what}"));
    let linear = LinearSpec {
        a1: b.a1.ok_or_else(|| missing("a1"))?,
        a2: b.a2.ok_or_else(|| missing("a2"))?,
        tau1: b.tau1.ok_or_else(|| missing("tau1"))?,
        tau2: b.tau2,
    };
    if let Some(t2) = linear.tau2 {
        if t2 <= 0.0 {
            return Err(Error::InvalidInput("tau2 must be positive".into()));
        }
    }
    let epsilon = b.epsilon.unwrap_or(0.0);
    let extra_delays = b.extra_delays.unwrap_or_default();
    if extra_delays.iter().any(|d| *d < 0.0) {
        return Err(Error::InvalidInput("extra delays must be nonnegative".into()));
    }
    let delay_count = 2 + extra_delays.len();
    let mut terms = Vec::with_capacity(b.terms.len());
    for (line, term) in b.terms {
        if let Some(&(idx, _)) = term.factors.iter().find(|&&(idx, _)| idx >= delay_count) {
            return Err(err(
                line,
                format!(
                    "term references x{}, but the model has only {delay_count} delays",
                    idx + 1
                ),
            ));
        }
        terms.push(term);
    }
    let hopf = HopfOptions {
        scan_step: b.scan_step.unwrap_or(HopfOptions::default().scan_step),
        scan_margin: b.scan_margin.unwrap_or(HopfOptions::default().scan_margin),
    };
    if !(hopf.scan_step > 0.0) || !(hopf.scan_margin > 0.0) {
        return Err(Error::InvalidInput("hopf scan knobs must be positive".into()));
    }
    let window = b.window.unwrap_or(0.25);
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidInput("window must lie in (0, 1]".into()));
    }
    if let Some(t) = b.t_end {
        if t <= 0.0 {
            return Err(Error::InvalidInput("t_end must be positive".into()));
        }
    }
    if let Some(s) = b.max_step {
        if s <= 0.0 {
            return Err(Error::InvalidInput("step must be positive".into()));
        }
    }
    let epsilons = match b.epsilons {
        Some(list) if !list.is_empty() => list,
        _ => vec![epsilon],
    };
    Ok(ExperimentConfig {
        linear,
        epsilon,
        extra_delays,
        terms,
        hopf,
        simulation: SimulationSpec {
            epsilons,
            t_end: b.t_end,
            max_step: b.max_step,
            window,
            histories: b.histories,
        },
    })
}
