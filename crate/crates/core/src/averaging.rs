//! First-order averaging of the reduced amplitude equation.
//!
//! On the center space the perturbed equation becomes, in polar coordinates
//! (y1, y2) = (rho sin(omega xi), -rho cos(omega xi)),
//!
//! ```text
//! rho'(xi) = eps F(xi, rho) + O(eps^2),
//! ```
//!
//! where F carries the nonlinearity evaluated along the rotating solution:
//! every delayed factor x(t - tau_j) is replaced by -rho cos(omega (xi -
//! tau_j)). Averaging F over one period of xi gives the autonomous mean
//! field F0; its positive equilibria with nonzero derivative correspond to
//! periodic solutions of the full equation for small eps, stable on the
//! center manifold exactly when the equilibrium is stable for the mean flow.

use crate::center_basis::CenterBasis;
use crate::dde::{DelayedMonomial, PolynomialDde};
use crate::error::{Error, Result};

const AVERAGE_NODES: usize = 4096;
const EQUILIBRIUM_GRID: usize = 10_000;
const EQUILIBRIUM_XTOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-9;

/// A polynomial nonlinearity carried onto the center space.
#[derive(Debug, Clone)]
pub struct ReducedNonlinearity {
    basis: CenterBasis,
    delays: Vec<f64>,
    terms: Vec<DelayedMonomial>,
}

impl ReducedNonlinearity {
    pub fn new(
        basis: CenterBasis,
        delays: Vec<f64>,
        terms: Vec<DelayedMonomial>,
    ) -> Result<Self> {
        if delays.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput(
                "reduction delays must be finite and nonnegative".into(),
            ));
        }
        for t in &terms {
            for &(j, _) in &t.factors {
                if j >= delays.len() {
                    return Err(Error::InvalidInput(format!(
                        "monomial references delay index {j}, but only {} delays are given",
                        delays.len()
                    )));
                }
            }
        }
        Ok(ReducedNonlinearity { basis, delays, terms })
    }

    /// Builds the reduction directly from a model's nonlinear part.
    pub fn from_model(model: &PolynomialDde, basis: CenterBasis) -> Result<Self> {
        ReducedNonlinearity::new(
            basis,
            model.delays().to_vec(),
            model.nonlinear_terms().to_vec(),
        )
    }

    pub fn basis(&self) -> &CenterBasis {
        &self.basis
    }

    pub fn terms(&self) -> &[DelayedMonomial] {
        &self.terms
    }

    /// F(xi, rho): the angular weight beta1 sin - beta2 cos times the
    /// nonlinearity evaluated on the rotating center solution.
    pub fn amplitude_field(&self, xi: f64, rho: f64) -> f64 {
        let w = self.basis.omega_star();
        let weight = self.basis.beta1 * (w * xi).sin() - self.basis.beta2 * (w * xi).cos();
        let mut f = 0.0;
        for term in &self.terms {
            let mut prod = term.coefficient;
            for &(j, p) in &term.factors {
                let factor = -rho * (w * (xi - self.delays[j])).cos();
                prod *= factor.powi(p as i32);
            }
            f += prod;
        }
        weight * f
    }

    /// The mean of F over one period in xi, by the periodic trapezoid rule
    /// (exact for trigonometric polynomials below the node count).
    fn f0_quadrature(&self, rho: f64) -> f64 {
        let period = self.basis.period();
        let mut acc = 0.0;
        for k in 0..AVERAGE_NODES {
            let xi = period * k as f64 / AVERAGE_NODES as f64;
            acc += self.amplitude_field(xi, rho);
        }
        acc / AVERAGE_NODES as f64
    }

    /// Detects the cubic family: every term a pure power (1 or 3) of one
    /// shared delay. Returns the attached closed form when it applies.
    fn detect_cubic(&self) -> Option<CubicClosedForm> {
        let mut shared: Option<usize> = None;
        let mut lin = 0.0;
        let mut cub = 0.0;
        for term in &self.terms {
            if term.factors.len() != 1 {
                return None;
            }
            let (j, p) = term.factors[0];
            match shared {
                None => shared = Some(j),
                Some(s) if s != j => return None,
                _ => {}
            }
            match p {
                1 => lin += term.coefficient,
                3 => cub += term.coefficient,
                _ => return None,
            }
        }
        let j = shared?;
        let b = &self.basis;
        let wt = b.omega_star() * self.delays[j];
        Some(CubicClosedForm {
            a3: -lin,
            a4: cub,
            tau3: self.delays[j],
            factor: b.beta2 * wt.cos() - b.beta1 * wt.sin(),
        })
    }
}

/// Closed form of the averaged field for the cubic family
/// eps (a4 x^3(t - tau3) - a3 x(t - tau3)):
///
/// ```text
/// F0(rho) = (1/8) rho (3 a4 rho^2 - 4 a3) (beta2 cos(w tau3) - beta1 sin(w tau3)).
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicClosedForm {
    pub a3: f64,
    pub a4: f64,
    pub tau3: f64,
    /// beta2 cos(omega tau3) - beta1 sin(omega tau3), with the basis'
    /// normalization coefficients.
    pub factor: f64,
}

impl CubicClosedForm {
    pub fn f0(&self, rho: f64) -> f64 {
        0.125 * rho * (3.0 * self.a4 * rho * rho - 4.0 * self.a3) * self.factor
    }

    pub fn derivative(&self, rho: f64) -> f64 {
        0.125 * (9.0 * self.a4 * rho * rho - 4.0 * self.a3) * self.factor
    }
}

/// How the averaged flow behaves near an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    Degenerate,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stability::Stable => write!(f, "stable"),
            Stability::Unstable => write!(f, "unstable"),
            Stability::Degenerate => write!(f, "degenerate"),
        }
    }
}

/// A positive zero of F0 with its linearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub rho_star: f64,
    pub derivative: f64,
    pub stability: Stability,
}

/// The averaged amplitude equation rho' = eps F0(rho).
#[derive(Debug, Clone)]
pub struct AveragedModel {
    rn: ReducedNonlinearity,
    closed: Option<CubicClosedForm>,
}

/// Averages the reduced nonlinearity, attaching the cubic closed form when
/// the term structure admits one.
pub fn average(rn: ReducedNonlinearity) -> AveragedModel {
    let closed = rn.detect_cubic();
    AveragedModel { rn, closed }
}

impl AveragedModel {
    pub fn basis(&self) -> &CenterBasis {
        self.rn.basis()
    }

    pub fn reduction(&self) -> &ReducedNonlinearity {
        &self.rn
    }

    pub fn closed_form(&self) -> Option<&CubicClosedForm> {
        self.closed.as_ref()
    }

    /// F0 by quadrature; this is the authoritative value everywhere.
    pub fn f0(&self, rho: f64) -> f64 {
        self.rn.f0_quadrature(rho)
    }

    /// D_rho F0: the closed form when attached, otherwise a central
    /// difference of the quadrature value.
    pub fn derivative(&self, rho: f64) -> f64 {
        match &self.closed {
            Some(cf) => cf.derivative(rho),
            None => (self.f0(rho + FD_STEP) - self.f0((rho - FD_STEP).max(0.0)))
                / (rho + FD_STEP - (rho - FD_STEP).max(0.0)),
        }
    }

    /// Search bracket when the caller gives none: 10 sqrt(max|c| / min|c|)
    /// over the nonzero term coefficients.
    pub fn default_rho_max(&self) -> f64 {
        let mags: Vec<f64> = self
            .rn
            .terms()
            .iter()
            .map(|t| t.coefficient.abs())
            .filter(|c| *c > 0.0)
            .collect();
        if mags.is_empty() {
            return 10.0;
        }
        let hi = mags.iter().cloned().fold(f64::MIN, f64::max);
        let lo = mags.iter().cloned().fold(f64::MAX, f64::min);
        10.0 * (hi / lo).sqrt()
    }

    /// All zeros of F0 on (0, rho_max]: sign changes on a dense grid,
    /// refined by bisection, classified by the sign of the derivative.
    pub fn find_equilibria(&self, rho_max: f64) -> Result<Vec<Equilibrium>> {
        if !(rho_max > 0.0 && rho_max.is_finite()) {
            return Err(Error::InvalidInput("rho_max must be positive and finite".into()));
        }
        let n = EQUILIBRIUM_GRID;
        let h = rho_max / n as f64;
        let mut out: Vec<Equilibrium> = Vec::new();
        let mut prev_rho = h;
        let mut prev_f = self.f0(prev_rho);
        let mut before_last = f64::NAN;
        for k in 2..=n {
            let rho = k as f64 * h;
            let f = self.f0(rho);
            // A node zero counts only when isolated (a nonzero neighbor),
            // so an identically-zero field yields no equilibria.
            let root = if prev_f == 0.0 {
                (f != 0.0).then_some(prev_rho)
            } else if f != 0.0 && (f > 0.0) != (prev_f > 0.0) {
                Some(self.bisect_zero(prev_rho, rho, prev_f))
            } else {
                None
            };
            if let Some(r) = root {
                if out.last().map_or(true, |e| (r - e.rho_star).abs() > 10.0 * EQUILIBRIUM_XTOL) {
                    out.push(self.classify(r));
                }
            }
            prev_rho = rho;
            before_last = prev_f;
            prev_f = f;
        }
        if prev_f == 0.0
            && before_last != 0.0
            && out
                .last()
                .map_or(true, |e| (prev_rho - e.rho_star).abs() > 10.0 * EQUILIBRIUM_XTOL)
        {
            out.push(self.classify(prev_rho));
        }
        Ok(out)
    }

    fn bisect_zero(&self, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
        for _ in 0..200 {
            if hi - lo <= EQUILIBRIUM_XTOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let fm = self.f0(mid);
            if fm == 0.0 {
                return mid;
            }
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn classify(&self, rho_star: f64) -> Equilibrium {
        let derivative = self.derivative(rho_star);
        let stability = if derivative.abs() < DEGENERATE_TOL {
            Stability::Degenerate
        } else if derivative < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        };
        Equilibrium { rho_star, derivative, stability }
    }

    /// One periodic-solution prediction per non-degenerate equilibrium.
    pub fn predict(&self, equilibria: &[Equilibrium]) -> Vec<PeriodicPrediction> {
        equilibria
            .iter()
            .filter(|e| e.stability != Stability::Degenerate)
            .map(|e| PeriodicPrediction {
                rho_star: e.rho_star,
                period: self.basis().period(),
                stability: e.stability,
                epsilon_validity_note: format!(
                    "first-order averaging: holds for sufficiently small epsilon; \
                     the mean flow attracts or repels at rate |D_rho F0| = {:.6e}",
                    e.derivative.abs()
                ),
            })
            .collect()
    }
}

/// A periodic solution of the full equation asserted for small eps: the
/// orbit through amplitude rho_star, with the critical period, inheriting
/// the equilibrium's stability on the center manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPrediction {
    pub rho_star: f64,
    pub period: f64,
    pub stability: Stability,
    pub epsilon_validity_note: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::center_basis::{normalize, BilinearForm};
    use crate::linear_analysis::{find_hopf, TwoDelayLinear};

    // Frozen for the worked point with the Gram-normalized basis:
    // beta2 cos(3 * 1.2) - beta1 sin(3 * 1.2).
    const GRAM_RATE_FACTOR: f64 = -0.285084756940725;
    const RHO_STAR: f64 = 1.154700538379251;

    fn worked_basis() -> CenterBasis {
        let m = TwoDelayLinear::new(2.0, 3.0, 0.113279).unwrap();
        let hp = find_hopf(&m).unwrap();
        let bf = BilinearForm::for_model(&m, hp.tau2_0).unwrap();
        normalize(&hp, &bf).unwrap()
    }

    fn cubic_reduction(a3: f64, a4: f64, tau3: f64) -> ReducedNonlinearity {
        let basis = worked_basis();
        let terms = vec![
            DelayedMonomial::new(a4, vec![(2, 3)]).unwrap(),
            DelayedMonomial::new(-a3, vec![(2, 1)]).unwrap(),
        ];
        ReducedNonlinearity::new(basis, vec![0.113279, basis.tau2_0(), tau3], terms).unwrap()
    }

    #[test]
    fn amplitude_field_vanishes_at_zero_and_is_periodic() {
        let rn = cubic_reduction(1.0, 1.0, 1.2);
        for k in 0..10 {
            let xi = 0.37 * k as f64;
            assert_eq!(rn.amplitude_field(xi, 0.0), 0.0);
            let diff = rn.amplitude_field(xi + rn.basis().period(), 0.8)
                - rn.amplitude_field(xi, 0.8);
            assert!(diff.abs() < 1e-12, "xi = {xi}: {diff:e}");
        }
    }

    #[test]
    fn amplitude_field_matches_hand_expansion() {
        let (a3, a4, tau3) = (0.7, -1.3, 1.2);
        let rn = cubic_reduction(a3, a4, tau3);
        let b = rn.basis();
        let w = b.omega_star();
        for k in 0..100 {
            let xi = -2.0 + 0.09 * k as f64;
            let rho = 0.03 * k as f64;
            // Hand expansion through the angle-difference identity.
            let c = (w * xi).cos() * (w * tau3).cos() + (w * xi).sin() * (w * tau3).sin();
            let x = -rho * c;
            let want = (b.beta1 * (w * xi).sin() - b.beta2 * (w * xi).cos())
                * (a4 * x.powf(3.0) - a3 * x);
            let got = rn.amplitude_field(xi, rho);
            assert!((got - want).abs() < 1e-12, "k = {k}: {got} vs {want}");
        }
    }

    #[test]
    fn quadrature_agrees_with_closed_form() {
        for &(a3, a4, tau3) in &[(1.0, 1.0, 1.2), (-1.0, -1.0, 1.2), (0.4, 2.3, 0.6)] {
            let am = average(cubic_reduction(a3, a4, tau3));
            let cf = *am.closed_form().expect("cubic family should be detected");
            for k in 0..=50 {
                let rho = 3.0 * k as f64 / 50.0;
                let diff = (am.f0(rho) - cf.f0(rho)).abs();
                assert!(diff <= 1e-10, "rho = {rho}: diff = {diff:e}");
            }
        }
    }

    #[test]
    fn detection_reads_off_the_cubic_coefficients() {
        let am = average(cubic_reduction(0.7, -1.3, 1.2));
        let cf = am.closed_form().unwrap();
        assert!((cf.a3 - 0.7).abs() < 1e-15);
        assert!((cf.a4 + 1.3).abs() < 1e-15);
        assert!((cf.tau3 - 1.2).abs() < 1e-15);
    }

    #[test]
    fn quadratic_term_averages_to_zero() {
        let basis = worked_basis();
        let terms = vec![DelayedMonomial::new(1.0, vec![(2, 2)]).unwrap()];
        let rn =
            ReducedNonlinearity::new(basis, vec![0.113279, basis.tau2_0(), 0.9], terms).unwrap();
        let am = average(rn);
        assert!(am.closed_form().is_none());
        for k in 0..=10 {
            let rho = 0.3 * k as f64;
            assert!(am.f0(rho).abs() < 1e-12, "rho = {rho}: {:e}", am.f0(rho));
        }
    }

    #[test]
    fn finite_difference_derivative_tracks_the_analytic_one() {
        // A quadratic term defeats cubic detection without changing F0,
        // forcing the finite-difference path.
        let basis = worked_basis();
        let a4 = -0.8;
        let terms = vec![
            DelayedMonomial::new(a4, vec![(2, 3)]).unwrap(),
            DelayedMonomial::new(0.5, vec![(2, 2)]).unwrap(),
        ];
        let rn =
            ReducedNonlinearity::new(basis, vec![0.113279, basis.tau2_0(), 1.2], terms).unwrap();
        let am = average(rn);
        assert!(am.closed_form().is_none());
        let w = basis.omega_star();
        let factor = basis.beta2 * (w * 1.2).cos() - basis.beta1 * (w * 1.2).sin();
        for &rho in &[0.5, 1.0, 2.0] {
            let want = 1.125 * a4 * rho * rho * factor;
            let got = am.derivative(rho);
            assert!((got - want).abs() < 1e-6, "rho = {rho}: {got} vs {want}");
        }
    }

    #[test]
    fn cubic_equilibrium_matches_the_square_root_formula() {
        let am = average(cubic_reduction(1.0, 1.0, 1.2));
        let eq = am.find_equilibria(3.0).unwrap();
        assert_eq!(eq.len(), 1);
        assert!((eq[0].rho_star - RHO_STAR).abs() < 1e-10, "rho* = {}", eq[0].rho_star);
        assert!((eq[0].derivative - GRAM_RATE_FACTOR).abs() < 1e-9);
        assert_eq!(eq[0].stability, Stability::Stable);
        assert!(am.f0(eq[0].rho_star).abs() <= 1e-10);

        let flipped = average(cubic_reduction(-1.0, -1.0, 1.2));
        let eq = flipped.find_equilibria(3.0).unwrap();
        assert_eq!(eq.len(), 1);
        assert!((eq[0].rho_star - RHO_STAR).abs() < 1e-10);
        assert!((eq[0].derivative + GRAM_RATE_FACTOR).abs() < 1e-9);
        assert_eq!(eq[0].stability, Stability::Unstable);
    }

    #[test]
    fn opposite_signs_leave_no_positive_equilibrium() {
        let am = average(cubic_reduction(1.0, -1.0, 1.2));
        assert!(am.find_equilibria(5.0).unwrap().is_empty());
    }

    #[test]
    fn predictions_carry_period_and_stability() {
        let am = average(cubic_reduction(1.0, 1.0, 1.2));
        let eq = am.find_equilibria(3.0).unwrap();
        let preds = am.predict(&eq);
        assert_eq!(preds.len(), 1);
        let p = &preds[0];
        assert!((p.rho_star - RHO_STAR).abs() < 1e-10);
        assert!((p.period - 2.0 * std::f64::consts::PI / am.basis().omega_star()).abs() < 1e-15);
        assert_eq!(p.stability, Stability::Stable);
        assert!(!p.epsilon_validity_note.is_empty());

        let none = average(cubic_reduction(1.0, -1.0, 1.2));
        let eq = none.find_equilibria(3.0).unwrap();
        assert!(none.predict(&eq).is_empty());
    }

    #[test]
    fn default_bracket_scales_with_coefficient_spread() {
        let am = average(cubic_reduction(0.01, 1.0, 1.2));
        assert!((am.default_rho_max() - 100.0).abs() < 1e-9);
        let even = average(cubic_reduction(1.0, 1.0, 1.2));
        assert!((even.default_rho_max() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_delay_indices() {
        let basis = worked_basis();
        let terms = vec![DelayedMonomial::new(1.0, vec![(5, 1)]).unwrap()];
        assert!(ReducedNonlinearity::new(basis, vec![0.1, 0.2], terms).is_err());
    }
}
