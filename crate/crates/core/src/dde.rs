//! Scalar delay differential equations with polynomial right-hand sides.
//!
//! Models have the shape
//!
//! ```text
//! x'(t) = -sum_i a_i x(t - tau_{d_i}) + eps * sum_k c_k prod_j x(t - tau_j)^{p_kj}
//! ```
//!
//! and are integrated by the method of steps: classic fixed-step RK4 whose
//! delayed arguments are served from the already-computed part of the solution
//! through a cubic Hermite interpolant of matching (fourth) order.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Anything that can serve as an initial segment on `[-max_delay, 0]`.
///
/// Config files are restricted to [`HistoryFunction`]; the integrator accepts
/// the trait so tests and callers can use arbitrary analytic histories.
pub trait History: Send + Sync {
    fn eval(&self, theta: f64) -> f64;
}

impl<F> History for F
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    fn eval(&self, theta: f64) -> f64 {
        self(theta)
    }
}

/// The closed set of history shapes accepted in config files.
#[derive(Debug, Clone, PartialEq)]
pub enum HistoryFunction {
    /// `c`
    Constant(f64),
    /// `c * exp(theta)`
    ScaledExp(f64),
    /// `c * (cos(theta) + 1)`
    CosinePlusOne(f64),
    /// `c * (sin(theta) + 1)`
    SinePlusOne(f64),
    /// Piecewise-linear interpolation of `(theta_i, x_i)` samples with
    /// strictly increasing `theta_i`. Queries outside the table clamp to the
    /// nearest endpoint.
    Tabulated { thetas: Vec<f64>, values: Vec<f64> },
}

impl HistoryFunction {
    pub fn tabulated(thetas: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if thetas.len() != values.len() || thetas.len() < 2 {
            return Err(Error::InvalidInput(
                "tabulated history needs at least two (theta, x) samples".into(),
            ));
        }
        if thetas.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "tabulated history contains a non-finite sample".into(),
            ));
        }
        if thetas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "tabulated history thetas must be strictly increasing".into(),
            ));
        }
        Ok(HistoryFunction::Tabulated { thetas, values })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            HistoryFunction::Constant(c) => *c,
            HistoryFunction::ScaledExp(c) => c * theta.exp(),
            HistoryFunction::CosinePlusOne(c) => c * (theta.cos() + 1.0),
            HistoryFunction::SinePlusOne(c) => c * (theta.sin() + 1.0),
            HistoryFunction::Tabulated { thetas, values } => {
                if theta <= thetas[0] {
                    return values[0];
                }
                if theta >= *thetas.last().unwrap() {
                    return *values.last().unwrap();
                }
                let k = match thetas.binary_search_by(|t| t.partial_cmp(&theta).unwrap()) {
                    Ok(k) => return values[k],
                    Err(k) => k - 1,
                };
                let w = (theta - thetas[k]) / (thetas[k + 1] - thetas[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }
}

impl History for HistoryFunction {
    fn eval(&self, theta: f64) -> f64 {
        HistoryFunction::eval(self, theta)
    }
}

impl fmt::Display for HistoryFunction {
    /// Renders in the config-file grammar, e.g. `exp 0.2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryFunction::Constant(c) => write!(f, "constant {c}"),
            HistoryFunction::ScaledExp(c) => write!(f, "exp {c}"),
            HistoryFunction::CosinePlusOne(c) => write!(f, "cos_plus_one {c}"),
            HistoryFunction::SinePlusOne(c) => write!(f, "sin_plus_one {c}"),
            HistoryFunction::Tabulated { thetas, values } => {
                write!(f, "table")?;
                for (t, v) in thetas.iter().zip(values) {
                    write!(f, " {t}:{v}")?;
                }
                Ok(())
            }
        }
    }
}

/// One product term `coefficient * prod_j x(t - tau_{idx_j})^{power_j}`.
///
/// Factors with the same delay index are merged on construction and kept
/// sorted by index, so two monomials built from equivalent factor lists
/// compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedMonomial {
    pub coefficient: f64,
    pub factors: Vec<(usize, u32)>,
}

impl DelayedMonomial {
    pub fn new(coefficient: f64, factors: Vec<(usize, u32)>) -> Result<Self> {
        if !coefficient.is_finite() {
            return Err(Error::InvalidModel("monomial coefficient must be finite".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidModel(
                "monomial needs at least one delayed factor".into(),
            ));
        }
        if factors.iter().any(|&(_, p)| p == 0) {
            return Err(Error::InvalidModel("monomial powers must be at least 1".into()));
        }
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(factors.len());
        let mut sorted = factors;
        sorted.sort_by_key(|&(idx, _)| idx);
        for (idx, p) in sorted {
            match merged.last_mut() {
                Some((last, acc)) if *last == idx => *acc += p,
                _ => merged.push((idx, p)),
            }
        }
        Ok(DelayedMonomial { coefficient, factors: merged })
    }

    /// Total degree, always at least 1.
    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|&(_, p)| p).sum()
    }
}

/// A scalar DDE with a linear two-or-more-delay part and an `eps`-scaled
/// polynomial perturbation. `linear_terms` stores `(a_i, delay_index)` pairs
/// contributing `-a_i x(t - tau)`, matching the sign convention of the
/// two-delay linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDde {
    delays: Vec<f64>,
    linear_terms: Vec<(f64, usize)>,
    epsilon: f64,
    nonlinear_terms: Vec<DelayedMonomial>,
}

impl PolynomialDde {
    pub fn new(
        delays: Vec<f64>,
        linear_terms: Vec<(f64, usize)>,
        epsilon: f64,
        nonlinear_terms: Vec<DelayedMonomial>,
    ) -> Result<Self> {
        if delays.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidModel("delays must be finite and >= 0".into()));
        }
        if !epsilon.is_finite() {
            return Err(Error::InvalidModel("epsilon must be finite".into()));
        }
        let n = delays.len();
        if let Some(&(a, idx)) = linear_terms.iter().find(|&&(a, idx)| !a.is_finite() || idx >= n) {
            return Err(Error::InvalidModel(format!(
                "linear term ({a}, {idx}) is invalid for {n} delay(s)"
            )));
        }
        for m in &nonlinear_terms {
            if let Some(&(idx, _)) = m.factors.iter().find(|&&(idx, _)| idx >= n) {
                return Err(Error::InvalidModel(format!(
                    "monomial references delay index {idx}, but only {n} delay(s) are declared"
                )));
            }
        }
        Ok(PolynomialDde { delays, linear_terms, epsilon, nonlinear_terms })
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn linear_terms(&self) -> &[(f64, usize)] {
        &self.linear_terms
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nonlinear_terms(&self) -> &[DelayedMonomial] {
        &self.nonlinear_terms
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().cloned().fold(0.0, f64::max)
    }

    fn min_positive_delay(&self) -> Option<f64> {
        self.delays
            .iter()
            .cloned()
            .filter(|d| *d > 0.0)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }
}

/// Evaluates the right-hand side at time `t`. `lookup` must return
/// `x(s)` for `s = t - tau_j`; during integration the integrator wires it to
/// the dense output, the history, or the current RK stage value (for zero
/// delays). Each distinct delay is looked up once per call.
pub fn rhs_eval(
    model: &PolynomialDde,
    t: f64,
    lookup: &mut dyn FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let mut cache: Vec<Option<f64>> = vec![None; model.delays.len()];
    let mut delayed = |j: usize, lookup: &mut dyn FnMut(f64) -> Result<f64>| -> Result<f64> {
        if let Some(v) = cache[j] {
            return Ok(v);
        }
        let v = lookup(t - model.delays[j])?;
        cache[j] = Some(v);
        Ok(v)
    };

    let mut rhs = 0.0;
    for &(a, j) in &model.linear_terms {
        rhs -= a * delayed(j, lookup)?;
    }
    if model.epsilon != 0.0 && !model.nonlinear_terms.is_empty() {
        let mut f = 0.0;
        for m in &model.nonlinear_terms {
            let mut prod = m.coefficient;
            for &(j, p) in &m.factors {
                prod *= delayed(j, lookup)?.powi(p as i32);
            }
            f += prod;
        }
        rhs += model.epsilon * f;
    }
    Ok(rhs)
}

/// Step-size and safety knobs for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    /// Upper bound for the fixed step. Must not exceed the smallest positive
    /// delay, or every RK stage would need values from the step being built.
    pub max_step: f64,
    /// Integration aborts with [`Error::Divergence`] once `|x|` passes this.
    pub overflow_guard: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { max_step: 5e-3, overflow_guard: 1e6 }
    }
}

/// Picks the actual step: a divisor of the smallest positive delay that makes
/// every delay an integer multiple of the step when such a divisor exists
/// near `max_step`, otherwise an even division of `t_end` (delayed lookups
/// then land mid-segment and are interpolated).
fn choose_step(delays: &[f64], max_step: f64, t_end: f64) -> f64 {
    let positive: Vec<f64> = delays.iter().cloned().filter(|d| *d > 0.0).collect();
    if let Some(min_pos) = positive.iter().cloned().reduce(f64::min) {
        let m0 = (min_pos / max_step).ceil().max(1.0) as u64;
        for m in m0..=m0.saturating_mul(8) {
            let h = min_pos / m as f64;
            let aligned = positive.iter().all(|&tau| {
                let k = (tau / h).round();
                (tau / h - k).abs() <= 1e-9 * k.max(1.0)
            });
            if aligned {
                return h;
            }
        }
    }
    let n = (t_end / max_step).ceil().max(1.0);
    t_end / n
}

/// Dense solution of one integration run: node values and derivatives on a
/// uniform grid, with cubic Hermite interpolation in between and the history
/// answering queries at `t <= 0`.
#[derive(Clone)]
pub struct Trajectory {
    step: f64,
    values: Vec<f64>,
    derivs: Vec<f64>,
    history: Arc<dyn History>,
    max_delay: f64,
    diverged_at: Option<f64>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("step", &self.step)
            .field("nodes", &self.values.len())
            .field("t_end", &self.t_end())
            .field("diverged_at", &self.diverged_at)
            .finish()
    }
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t_end(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    /// Set when integration hit the overflow guard; the grid then stops at
    /// the offending node instead of the requested horizon.
    pub fn diverged_at(&self) -> Option<f64> {
        self.diverged_at
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn node_time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn node_value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn node_derivative(&self, i: usize) -> f64 {
        self.derivs[i]
    }

    /// Solution value at any `t` in `[-max_delay, t_end]`.
    pub fn query(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::InvalidInput(format!("query time {t} is not finite")));
        }
        let tol = 1e-9 * self.t_end().max(1.0);
        if t < -self.max_delay - tol || t > self.t_end() + tol {
            return Err(Error::Domain { t, lo: -self.max_delay, hi: self.t_end() });
        }
        if t <= 0.0 {
            return Ok(self.history.eval(t.max(-self.max_delay)));
        }
        let t = t.min(self.t_end());
        Ok(self.segment_value(t, self.values.len() - 1))
    }

    /// Interpolated derivative for `t` in `(0, t_end]`.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t <= 0.0 || t > self.t_end() + 1e-9 * self.t_end().max(1.0) {
            return Err(Error::Domain { t, lo: 0.0, hi: self.t_end() });
        }
        let t = t.min(self.t_end());
        let idx = ((t / self.step) as usize).min(self.values.len() - 2);
        let th = (t - idx as f64 * self.step) / self.step;
        let (x0, x1) = (self.values[idx], self.values[idx + 1]);
        let (f0, f1) = (self.derivs[idx], self.derivs[idx + 1]);
        let dh00 = 6.0 * th * th - 6.0 * th;
        Ok((dh00 * x0 - dh00 * x1) / self.step
            + (3.0 * th * th - 4.0 * th + 1.0) * f0
            + (3.0 * th * th - 2.0 * th) * f1)
    }

    /// Hermite value using nodes up to `hi_node` only (integration reads the
    /// completed prefix through this).
    fn segment_value(&self, t: f64, hi_node: usize) -> f64 {
        hermite(&self.values, &self.derivs, self.step, t, hi_node)
    }

    /// Writes the node grid as CSV (`t,x`), 17 significant digits per field.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x")?;
        for i in 0..self.values.len() {
            writeln!(w, "{:.16e},{:.16e}", self.node_time(i), self.values[i])?;
        }
        Ok(())
    }
}

fn hermite(values: &[f64], derivs: &[f64], step: f64, t: f64, hi_node: usize) -> f64 {
    let idx = ((t / step) as usize).min(hi_node - 1);
    let th = (t - idx as f64 * step) / step;
    let (x0, x1) = (values[idx], values[idx + 1]);
    let (f0, f1) = (derivs[idx], derivs[idx + 1]);
    let omth = 1.0 - th;
    let h00 = (1.0 + 2.0 * th) * omth * omth;
    let h10 = th * omth * omth;
    let h01 = th * th * (3.0 - 2.0 * th);
    let h11 = th * th * (th - 1.0);
    h00 * x0 + h01 * x1 + step * (h10 * f0 + h11 * f1)
}

/// Integrates the model over `[0, t_end]` by the method of steps.
///
/// The precondition `max_step <= min positive delay` keeps every RK stage
/// lookup inside the already-computed prefix, so no implicit iteration is
/// needed. Delays of exactly zero are served with the current stage value,
/// which makes the plain-ODE degenerate case work too.
pub fn integrate<H>(model: &PolynomialDde, history: H, t_end: f64, ctrl: StepControl) -> Result<Trajectory>
where
    H: History + 'static,
{
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::InvalidInput(format!("t_end must be positive and finite, got {t_end}")));
    }
    if !ctrl.max_step.is_finite() || ctrl.max_step <= 0.0 {
        return Err(Error::InvalidInput("max_step must be positive and finite".into()));
    }
    if !ctrl.overflow_guard.is_finite() || ctrl.overflow_guard <= 0.0 {
        return Err(Error::InvalidInput("overflow_guard must be positive and finite".into()));
    }
    if let Some(min_pos) = model.min_positive_delay() {
        if ctrl.max_step > min_pos * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "max_step {} exceeds the smallest positive delay {}",
                ctrl.max_step, min_pos
            )));
        }
    }

    let max_delay = model.max_delay();
    let history: Arc<dyn History> = Arc::new(history);
    // A coarse sanity sweep catches broken histories before they poison the run.
    for k in 0..=16 {
        let theta = -max_delay * k as f64 / 16.0;
        if !history.eval(theta).is_finite() {
            return Err(Error::InvalidModel(format!("history is not finite at theta = {theta}")));
        }
    }

    let h = choose_step(model.delays(), ctrl.max_step, t_end);
    let n = ((t_end - 1e-12 * t_end.max(1.0)) / h).ceil().max(1.0) as usize;

    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    let mut derivs: Vec<f64> = Vec::with_capacity(n + 1);
    values.push(history.eval(0.0));

    // Serves x(s) for RK stages at (stage_t, stage_x), with `hi` completed nodes.
    let lookup = |s: f64,
                  stage_t: f64,
                  stage_x: f64,
                  hi: usize,
                  values: &[f64],
                  derivs: &[f64]|
     -> Result<f64> {
        if s == stage_t {
            return Ok(stage_x);
        }
        if s <= 0.0 {
            let v = history.eval(s.max(-max_delay));
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("history is not finite at theta = {s}")));
            }
            return Ok(v);
        }
        debug_assert!(s <= hi as f64 * h + 1e-9, "stage lookup ahead of the computed prefix");
        Ok(hermite(values, derivs, h, s.min(hi as f64 * h), hi))
    };

    let f0 = rhs_eval(model, 0.0, &mut |s| lookup(s, 0.0, values[0], 0, &values, &derivs))?;
    derivs.push(f0);

    for i in 0..n {
        let t = i as f64 * h;
        let x = values[i];
        let k1 = derivs[i];
        let k2 = {
            let (st, sx) = (t + 0.5 * h, x + 0.5 * h * k1);
            rhs_eval(model, st, &mut |s| lookup(s, st, sx, i, &values, &derivs))?
        };
        let k3 = {
            let (st, sx) = (t + 0.5 * h, x + 0.5 * h * k2);
            rhs_eval(model, st, &mut |s| lookup(s, st, sx, i, &values, &derivs))?
        };
        let k4 = {
            let (st, sx) = (t + h, x + h * k3);
            rhs_eval(model, st, &mut |s| lookup(s, st, sx, i, &values, &derivs))?
        };
        let x_next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t_next = (i + 1) as f64 * h;

        if !x_next.is_finite() || x_next.abs() > ctrl.overflow_guard {
            if x_next.is_finite() {
                values.push(x_next);
                let fd = rhs_eval(model, t_next, &mut |s| {
                    lookup(s, t_next, x_next, i, &values, &derivs)
                })?;
                derivs.push(fd);
            }
            let partial = Trajectory {
                step: h,
                values,
                derivs,
                history: history.clone(),
                max_delay,
                diverged_at: Some(t_next),
            };
            return Err(Error::Divergence { t: t_next, partial: Box::new(partial) });
        }

        values.push(x_next);
        let fd = rhs_eval(model, t_next, &mut |s| lookup(s, t_next, x_next, i, &values, &derivs))?;
        derivs.push(fd);
    }

    Ok(Trajectory { step: h, values, derivs, history, max_delay, diverged_at: None })
}
