//! Real center-space decomposition at a Hopf point.
//!
//! At tau2 = tau2_0 the linear equation carries the conjugate pair
//! +- i omega_star. The center space P is spanned by
//! Phi(theta) = (sin(omega theta), cos(omega theta)) on [-tau2_0, 0]; its
//! dual basis Psi_i(s) = alpha_i sin(omega s) + beta_i cos(omega s) on
//! [0, tau2_0] is fixed by requiring (Psi, Phi) = I under the Hale pairing.
//! The coefficients are obtained from the inverse of the 2x2 Gram matrix of
//! the raw trigonometric bases; closed-form values depending only on
//! (omega_star, tau2_0) are computed alongside for comparison.

use crate::dde::History;
use crate::error::{Error, Result};
use crate::linear_analysis::{HopfPoint, TwoDelayLinear};

const QUAD_TOL: f64 = 1e-10;
const BASE_PANELS: usize = 2048;
const MAX_PANELS: usize = 1 << 16;
const DET_GUARD: f64 = 1e-12;

/// The pairing between functions psi on [0, tau2] and phi on [-tau2, 0]:
///
/// ```text
/// (psi, phi) = psi(0) phi(0)
///              - a1 * integral_{-tau1}^{0} psi(xi + tau1) phi(xi) dxi
///              - a2 * integral_{-tau2}^{0} psi(xi + tau2) phi(xi) dxi.
/// ```
///
/// The a1 term runs over [-tau1, 0] only: the step kernel behind the pairing
/// is constant below -tau1, and psi has no values at negative arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearForm {
    a1: f64,
    a2: f64,
    tau1: f64,
    tau2: f64,
}

impl BilinearForm {
    pub fn new(a1: f64, a2: f64, tau1: f64, tau2: f64) -> Result<Self> {
        if ![a1, a2, tau1, tau2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("bilinear form parameters must be finite".into()));
        }
        if !(tau1 > 0.0 && tau2 > tau1) {
            return Err(Error::InvalidInput(
                "bilinear form requires 0 < tau1 < tau2".into(),
            ));
        }
        Ok(BilinearForm { a1, a2, tau1, tau2 })
    }

    pub fn for_model(m: &TwoDelayLinear, tau2: f64) -> Result<Self> {
        BilinearForm::new(m.a1(), m.a2(), m.tau1(), tau2)
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn pair(&self, psi: &dyn Fn(f64) -> f64, phi: &dyn Fn(f64) -> f64) -> f64 {
        let head = psi(0.0) * phi(0.0);
        let i1 = converged_simpson(&|xi: f64| psi(xi + self.tau1) * phi(xi), -self.tau1, 0.0);
        let i2 = converged_simpson(&|xi: f64| psi(xi + self.tau2) * phi(xi), -self.tau2, 0.0);
        head - self.a1 * i1 - self.a2 * i2
    }
}

fn composite_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    debug_assert!(panels >= 2 && panels % 2 == 0);
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Composite Simpson, starting at 2048 panels and doubling until two
/// successive refinements agree to 1e-10.
fn converged_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mut panels = BASE_PANELS;
    let mut prev = composite_simpson(f, a, b, panels);
    while panels < MAX_PANELS {
        panels *= 2;
        let cur = composite_simpson(f, a, b, panels);
        if (cur - prev).abs() < QUAD_TOL {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Closed-form normalization coefficients in terms of (omega_star, tau2_0)
/// alone. They carry no dependence on a1, a2, tau1, so for a genuine
/// two-delay pairing they need not normalize the basis; they are reported
/// next to the Gram-derived values and the gap between the two is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCoefficients {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
}

pub fn closed_form_coefficients(omega_star: f64, tau2_0: f64) -> ClosedFormCoefficients {
    let wt = omega_star * tau2_0;
    let s = wt.sin();
    let denom = wt * wt + s * s;
    ClosedFormCoefficients {
        alpha1: (4.0 - 2.0 * s * s) / denom,
        beta1: (2.0 * wt + (2.0 * wt).sin()) / denom,
        alpha2: ((2.0 * wt).sin() - 2.0 * wt) / denom,
        beta2: 2.0 * s * s / denom,
    }
}

/// The normalized real bases of the center space and its dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBasis {
    omega_star: f64,
    tau2_0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    closed: ClosedFormCoefficients,
}

impl CenterBasis {
    pub fn omega_star(&self) -> f64 {
        self.omega_star
    }

    pub fn tau2_0(&self) -> f64 {
        self.tau2_0
    }

    /// Period of the critical rotation, 2 pi / omega_star.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_star
    }

    /// B = [[0, -omega_star], [omega_star, 0]], the generator of the flow on
    /// the center coordinates: y' = B y, and Phi(theta) = Phi(0) e^{B theta}.
    pub fn rotation_generator(&self) -> [[f64; 2]; 2] {
        [[0.0, -self.omega_star], [self.omega_star, 0.0]]
    }

    /// Phi(theta) = (sin(omega theta), cos(omega theta)).
    pub fn phi(&self, theta: f64) -> (f64, f64) {
        ((self.omega_star * theta).sin(), (self.omega_star * theta).cos())
    }

    /// Psi(s) = (alpha_i sin(omega s) + beta_i cos(omega s)) for i = 1, 2.
    pub fn psi(&self, s: f64) -> (f64, f64) {
        let (sn, cs) = ((self.omega_star * s).sin(), (self.omega_star * s).cos());
        (self.alpha1 * sn + self.beta1 * cs, self.alpha2 * sn + self.beta2 * cs)
    }

    pub fn closed_form(&self) -> &ClosedFormCoefficients {
        &self.closed
    }

    /// Largest absolute difference between the Gram-derived coefficients and
    /// their closed-form counterparts.
    pub fn coefficient_discrepancy(&self) -> f64 {
        [
            self.alpha1 - self.closed.alpha1,
            self.beta1 - self.closed.beta1,
            self.alpha2 - self.closed.alpha2,
            self.beta2 - self.closed.beta2,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Max-norm of (Psi, Phi) - I, recomputed by quadrature.
    pub fn pairing_residual(&self, bf: &BilinearForm) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let psi = |s: f64| if i == 0 { self.psi(s).0 } else { self.psi(s).1 };
                let phi = |t: f64| if j == 0 { self.phi(t).0 } else { self.phi(t).1 };
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((bf.pair(&psi, &phi) - target).abs());
            }
        }
        worst
    }

    /// Center coordinates of an initial function: ((Psi_1, phi), (Psi_2, phi)).
    pub fn project(&self, bf: &BilinearForm, phi: &dyn History) -> (f64, f64) {
        let phi_fn = |theta: f64| phi.eval(theta);
        let y1 = bf.pair(&|s: f64| self.psi(s).0, &phi_fn);
        let y2 = bf.pair(&|s: f64| self.psi(s).1, &phi_fn);
        (y1, y2)
    }

    /// Inverse of y1 = rho sin(omega xi), y2 = -rho cos(omega xi); xi is
    /// wrapped into [0, 2 pi / omega). The origin maps to (0, 0) by
    /// convention since the phase is undefined there.
    pub fn polar_initial(&self, y1: f64, y2: f64) -> (f64, f64) {
        if y1 == 0.0 && y2 == 0.0 {
            return (0.0, 0.0);
        }
        let rho = y1.hypot(y2);
        let xi = (y1.atan2(-y2) / self.omega_star).rem_euclid(self.period());
        (rho, xi)
    }

    /// Forward polar map: (rho, xi) -> (rho sin(omega xi), -rho cos(omega xi)).
    pub fn from_polar(&self, rho: f64, xi: f64) -> (f64, f64) {
        let w = self.omega_star * xi;
        (rho * w.sin(), -rho * w.cos())
    }
}

/// Normalizes the dual basis against Phi: builds the Gram matrix
/// M_ij = (b_i, Phi_j) of the raw trigonometric basis b = (sin, cos) and
/// takes the coefficient rows from its inverse, so that (Psi, Phi) = I.
pub fn normalize(hp: &HopfPoint, bf: &BilinearForm) -> Result<CenterBasis> {
    // Small offsets are allowed so a rounded critical delay (for example a
    // published 6-digit value) can be probed; the pairing residual then
    // reports the damage. Gross mismatches are a usage error.
    if (bf.tau2 - hp.tau2_0).abs() > 1e-3 * hp.tau2_0.max(1.0) {
        return Err(Error::InvalidInput(
            "bilinear form delay does not match the Hopf point".into(),
        ));
    }
    let w = hp.omega_star;
    let b: [Box<dyn Fn(f64) -> f64>; 2] =
        [Box::new(move |s: f64| (w * s).sin()), Box::new(move |s: f64| (w * s).cos())];
    let phi: [Box<dyn Fn(f64) -> f64>; 2] =
        [Box::new(move |t: f64| (w * t).sin()), Box::new(move |t: f64| (w * t).cos())];
    let mut m = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = bf.pair(&b[i], &phi[j]);
        }
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < DET_GUARD {
        return Err(Error::Degenerate(format!(
            "Gram matrix of the center pairing is singular (det = {det:e})"
        )));
    }
    let k = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    Ok(CenterBasis {
        omega_star: w,
        tau2_0: hp.tau2_0,
        alpha1: k[0][0],
        beta1: k[0][1],
        alpha2: k[1][0],
        beta2: k[1][1],
        closed: closed_form_coefficients(w, hp.tau2_0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_analysis::find_hopf;

    // Frozen normalization for the worked point (2, 3, 0.113279),
    // cross-checked against an analytic evaluation of the Gram matrix.
    const ALPHA1: f64 = 0.538260688101778;
    const BETA1: f64 = 0.446543919878741;
    const CLOSED_ALPHA1: f64 = 0.492123961761696;
    const CLOSED_BETA1: f64 = 0.621426716457235;
    const CLOSED_ALPHA2: f64 = -0.966331404232433;
    const CLOSED_BETA2: f64 = 0.213398903708704;

    fn worked_setup() -> (TwoDelayLinear, HopfPoint, BilinearForm, CenterBasis) {
        let m = TwoDelayLinear::new(2.0, 3.0, 0.113279).unwrap();
        let hp = find_hopf(&m).unwrap();
        let bf = BilinearForm::for_model(&m, hp.tau2_0).unwrap();
        let cb = normalize(&hp, &bf).unwrap();
        (m, hp, bf, cb)
    }

    #[test]
    fn constant_pairing_matches_hand_value() {
        let bf = BilinearForm::new(2.0, 3.0, 0.2, 0.5).unwrap();
        let one = |_: f64| 1.0;
        let got = bf.pair(&one, &one);
        let want = 1.0 - 2.0 * 0.2 - 3.0 * 0.5;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        let zero = |_: f64| 0.0;
        assert_eq!(bf.pair(&zero, &one), 0.0);
    }

    #[test]
    fn pairing_is_bilinear() {
        let bf = BilinearForm::new(2.0, 3.0, 0.113279, 0.750156627673619).unwrap();
        let psi = |s: f64| (1.7 * s).sin() + 0.3 * (4.1 * s).cos();
        let phi1 = |t: f64| (2.9 * t).cos() - 0.8 * (1.3 * t).sin();
        let phi2 = |t: f64| 0.5 * (3.7 * t).sin() + (0.9 * t).cos();
        let c = -1.37;
        let combined = |t: f64| c * phi1(t) + phi2(t);
        let lhs = bf.pair(&psi, &combined);
        let rhs = c * bf.pair(&psi, &phi1) + bf.pair(&psi, &phi2);
        assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs}, rhs {rhs}");
    }

    #[test]
    fn gram_coefficients_match_frozen_values() {
        let (_, _, _, cb) = worked_setup();
        assert!((cb.alpha1 - ALPHA1).abs() < 1e-9, "alpha1 = {}", cb.alpha1);
        assert!((cb.beta1 - BETA1).abs() < 1e-9, "beta1 = {}", cb.beta1);
        assert!((cb.alpha2 + BETA1).abs() < 1e-9, "alpha2 = {}", cb.alpha2);
        assert!((cb.beta2 - ALPHA1).abs() < 1e-9, "beta2 = {}", cb.beta2);
    }

    #[test]
    fn closed_forms_match_frozen_values() {
        let (_, _, _, cb) = worked_setup();
        let cf = cb.closed_form();
        assert!((cf.alpha1 - CLOSED_ALPHA1).abs() < 1e-9);
        assert!((cf.beta1 - CLOSED_BETA1).abs() < 1e-9);
        assert!((cf.alpha2 - CLOSED_ALPHA2).abs() < 1e-9);
        assert!((cf.beta2 - CLOSED_BETA2).abs() < 1e-9);
        assert!(cb.coefficient_discrepancy() > 0.1);
    }

    #[test]
    fn closed_forms_reproduce_published_rate_factor() {
        let (_, hp, _, cb) = worked_setup();
        let cf = cb.closed_form();
        let tau3 = 1.2;
        let rate = cf.beta2 * (hp.omega_star * tau3).cos() - cf.beta1 * (hp.omega_star * tau3).sin();
        assert!((rate - 0.08362).abs() < 1e-4, "rate = {rate}");
    }

    #[test]
    fn normalized_basis_has_tiny_pairing_residual() {
        let (_, _, bf, cb) = worked_setup();
        let res = cb.pairing_residual(&bf);
        assert!(res <= 1e-8, "residual = {res:e}");
    }

    #[test]
    fn basis_satisfies_rotation_ode() {
        let (_, _, _, cb) = worked_setup();
        let b = cb.rotation_generator();
        let w = cb.omega_star();
        for &theta in &[-0.7, -0.3, 0.0] {
            let (p1, p2) = cb.phi(theta);
            let dphi = (w * (w * theta).cos(), -w * (w * theta).sin());
            let prod = (p1 * b[0][0] + p2 * b[1][0], p1 * b[0][1] + p2 * b[1][1]);
            assert!((dphi.0 - prod.0).abs() < 1e-12);
            assert!((dphi.1 - prod.1).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_recovers_center_elements() {
        let (_, _, bf, cb) = worked_setup();
        let (c1, c2) = (0.8, -1.3);
        let phi = move |theta: f64| {
            let (p1, p2) = cb.phi(theta);
            c1 * p1 + c2 * p2
        };
        let (y1, y2) = cb.project(&bf, &phi);
        assert!((y1 - c1).abs() < 1e-8, "y1 = {y1}");
        assert!((y2 - c2).abs() < 1e-8, "y2 = {y2}");
        let zero = |_: f64| 0.0;
        assert_eq!(cb.project(&bf, &zero), (0.0, 0.0));
    }

    #[test]
    fn projection_annihilates_the_complement() {
        let (_, _, bf, cb) = worked_setup();
        let raw = |theta: f64| (0.4 * theta).exp() * (2.0 * theta).cos();
        let (y1, y2) = cb.project(&bf, &raw);
        let residual = move |theta: f64| {
            let (p1, p2) = cb.phi(theta);
            raw(theta) - y1 * p1 - y2 * p2
        };
        let (q1, q2) = cb.project(&bf, &residual);
        assert!(q1.abs() < 1e-8 && q2.abs() < 1e-8, "({q1}, {q2})");
    }

    #[test]
    fn projection_matches_independent_quadrature() {
        let (_, _, bf, cb) = worked_setup();
        let phi = |theta: f64| 0.2 * theta.exp();
        let (y1, y2) = cb.project(&bf, &phi);
        // Independent oracle: trapezoid at fixed high resolution, written
        // directly from the definition of the pairing.
        let trapezoid = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let n = 400_000usize;
            let h = (b - a) / n as f64;
            let mut acc = 0.5 * (f(a) + f(b));
            for k in 1..n {
                acc += f(a + k as f64 * h);
            }
            acc * h
        };
        let (a1, a2, t1, t2) = (2.0, 3.0, 0.113279, cb.tau2_0());
        for (i, want) in [(0usize, y1), (1usize, y2)] {
            let psi = |s: f64| if i == 0 { cb.psi(s).0 } else { cb.psi(s).1 };
            let direct = psi(0.0) * phi(0.0)
                - a1 * trapezoid(&|xi: f64| psi(xi + t1) * phi(xi), -t1, 0.0)
                - a2 * trapezoid(&|xi: f64| psi(xi + t2) * phi(xi), -t2, 0.0);
            assert!((want - direct).abs() < 1e-8, "component {i}: {want} vs {direct}");
        }
    }

    #[test]
    fn polar_map_round_trips() {
        let (_, _, _, cb) = worked_setup();
        let (rho, xi) = cb.polar_initial(0.0, -1.0);
        assert!((rho - 1.0).abs() < 1e-14 && xi.abs() < 1e-14);
        let (rho, xi) = cb.polar_initial(1.0, 0.0);
        assert!((rho - 1.0).abs() < 1e-14);
        assert!((cb.omega_star() * xi - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
        assert_eq!(cb.polar_initial(0.0, 0.0), (0.0, 0.0));
        for k in 0..100 {
            let y1 = (k as f64 * 0.37).sin() * 2.0;
            let y2 = (k as f64 * 0.61).cos() * 1.5 - 0.2;
            let (rho, xi) = cb.polar_initial(y1, y2);
            assert!(xi >= 0.0 && xi < cb.period());
            let (z1, z2) = cb.from_polar(rho, xi);
            assert!((z1 - y1).abs() < 1e-13 && (z2 - y2).abs() < 1e-13, "k = {k}");
        }
    }

    #[test]
    fn normalize_rejects_mismatched_delay() {
        let (m, hp, _, _) = worked_setup();
        let wrong = BilinearForm::for_model(&m, hp.tau2_0 * 1.5).unwrap();
        assert!(normalize(&hp, &wrong).is_err());
    }
}
