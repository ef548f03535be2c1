//! Hopf bifurcation analysis of the two-delay linear equation
//!
//! ```text
//! x'(t) = -a1 x(t - tau1) - a2 x(t - tau2),
//! ```
//!
//! treating tau2 as the bifurcation parameter. Everything reduces to the
//! characteristic function h(z) = z + a1 e^{-z tau1} + a2 e^{-z tau2}; purely
//! imaginary roots are found in dimensionless variables (divide time by
//! 1/|a1|), then mapped back.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ROOT_TOL: f64 = 1e-13;
const SCAN_STEP: f64 = 1e-3;
const CONSISTENCY_TOL: f64 = 1e-10;
const SPURIOUS_TOL: f64 = 1e-8;
const TIE_TOL: f64 = 1e-10;
const SIMPLE_TOL: f64 = 1e-9;

/// The linear model. Constructor enforces a1 != 0, a2 > 0, tau1 > 0 and
/// a1 + a2 > 0 (so z = 0 is never a characteristic root).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoDelayLinear {
    a1: f64,
    a2: f64,
    tau1: f64,
}

impl TwoDelayLinear {
    pub fn new(a1: f64, a2: f64, tau1: f64) -> Result<Self> {
        if ![a1, a2, tau1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("a1, a2, tau1 must be finite".into()));
        }
        if a1 == 0.0 {
            return Err(Error::InvalidModel("a1 must be nonzero".into()));
        }
        if a2 <= 0.0 {
            return Err(Error::InvalidModel("a2 must be positive".into()));
        }
        if tau1 <= 0.0 {
            return Err(Error::InvalidModel("tau1 must be positive".into()));
        }
        if a1 + a2 <= 0.0 {
            return Err(Error::InvalidModel("a1 + a2 must be positive".into()));
        }
        Ok(TwoDelayLinear { a1, a2, tau1 })
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn scaled(&self) -> ScaledProblem {
        let scale = self.a1.abs();
        ScaledProblem {
            a: self.a2 / scale,
            r1: self.tau1 * scale,
            sign: if self.a1 > 0.0 { SignCase::Positive } else { SignCase::Negative },
            scale,
        }
    }
}

/// Which sign of a1 the dimensionless equations carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignCase {
    Positive,
    Negative,
}

/// Dimensionless form: lambda = z / |a1|, a = a2/|a1|, r_i = tau_i |a1|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledProblem {
    pub a: f64,
    pub r1: f64,
    pub sign: SignCase,
    /// |a1|, kept so results can be mapped back to original units.
    pub scale: f64,
}

/// Which of the two delay branches produced the critical delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Plus => write!(f, "plus"),
            Branch::Minus => write!(f, "minus"),
        }
    }
}

/// A simple Hopf point: the smallest tau2 > 0 at which a conjugate pair
/// +- i omega_star sits on the imaginary axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfPoint {
    pub omega_star: f64,
    pub tau2_0: f64,
    pub branch: Branch,
    pub omega_scaled: f64,
    pub r2_0: f64,
    /// d lambda / d tau2 at (i omega_star, tau2_0), original units.
    pub transversality: Complex64,
    /// Whether dh/dlambda is bounded away from zero at the critical root.
    pub simple: bool,
    /// omega_scaled * r2_0, the quantity whose membership in
    /// U_l [2 l pi, 2 l pi + pi/2] is reported (not enforced).
    pub omega_condition_value: f64,
}

/// Right-hand side of the frequency condition sin(omega r1) = g(omega).
fn freq_rhs(p: &ScaledProblem, omega: f64) -> f64 {
    match p.sign {
        SignCase::Positive => (omega * omega + 1.0 - p.a * p.a) / (2.0 * omega),
        SignCase::Negative => (p.a * p.a - omega * omega - 1.0) / (2.0 * omega),
    }
}

fn bisect(mut lo: f64, mut hi: f64, mut flo: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= ROOT_TOL * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
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

/// All omega > 0 solving the scaled frequency condition, found by a dense
/// sign-change scan over (0, a + 2] followed by bisection. Deduplicated and
/// sorted ascending.
pub fn candidate_frequencies(p: &ScaledProblem) -> Vec<f64> {
    candidate_frequencies_with(p, SCAN_STEP, 2.0)
}

/// [`candidate_frequencies`] with an explicit scan step and upper margin:
/// the scan covers (0, a + margin].
pub fn candidate_frequencies_with(p: &ScaledProblem, step: f64, margin: f64) -> Vec<f64> {
    let f = |w: f64| (w * p.r1).sin() - freq_rhs(p, w);
    let hi = p.a + margin;
    let mut roots: Vec<f64> = Vec::new();
    let mut w_prev = 1e-6;
    let mut f_prev = f(w_prev);
    let steps = (hi / step).ceil() as usize;
    for k in 1..=steps {
        let w = (1e-6 + k as f64 * step).min(hi);
        let fw = f(w);
        if f_prev == 0.0 {
            roots.push(w_prev);
        } else if fw != 0.0 && (fw > 0.0) != (f_prev > 0.0) {
            roots.push(bisect(w_prev, w, f_prev, &f));
        }
        w_prev = w;
        f_prev = fw;
    }
    if f_prev == 0.0 {
        roots.push(w_prev);
    }
    roots.dedup_by(|b, a| (*b - *a).abs() <= 1e-9);
    roots
}

/// Candidate (r2, theta = omega r2) pairs for one frequency, or None when the
/// frequency is a spurious artifact of squaring the crossing system.
fn minimal_r2_for(p: &ScaledProblem, omega: f64) -> Option<f64> {
    // Required cosine and sine of omega*r2 from the crossing system.
    let (cosv, sinv) = match p.sign {
        SignCase::Positive => {
            (-(omega * p.r1).cos() / p.a, (omega - (omega * p.r1).sin()) / p.a)
        }
        SignCase::Negative => {
            ((omega * p.r1).cos() / p.a, (omega + (omega * p.r1).sin()) / p.a)
        }
    };
    if (cosv * cosv + sinv * sinv - 1.0).abs() > SPURIOUS_TOL {
        return None;
    }
    let base = cosv.clamp(-1.0, 1.0).acos();
    let tau = 2.0 * std::f64::consts::PI;
    let mut thetas = vec![base, tau - base];
    thetas.dedup_by(|b, a| (*b - *a).abs() <= 1e-12);
    let mut best: Option<f64> = None;
    for &theta0 in &thetas {
        for l in 0..2u32 {
            let theta = theta0 + tau * l as f64;
            if theta <= 1e-12 {
                continue;
            }
            if (theta.sin() - sinv).abs() <= CONSISTENCY_TOL {
                let r2 = theta / omega;
                best = Some(best.map_or(r2, |b: f64| b.min(r2)));
                break;
            }
        }
    }
    best
}

/// Evaluates h(z) = z + a1 e^{-z tau1} + a2 e^{-z tau2} in original units.
pub fn characteristic_value(m: &TwoDelayLinear, z: Complex64, tau2: f64) -> Complex64 {
    z + m.a1 * (-z * m.tau1).exp() + m.a2 * (-z * tau2).exp()
}

/// dh/dz at (z, tau2).
pub fn characteristic_derivative(m: &TwoDelayLinear, z: Complex64, tau2: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) - m.a1 * m.tau1 * (-z * m.tau1).exp()
        - m.a2 * tau2 * (-z * tau2).exp()
}

/// d lambda / d tau2 along the root branch through (z, tau2), by implicit
/// differentiation of h.
pub fn transversality(m: &TwoDelayLinear, z: Complex64, tau2: f64) -> Complex64 {
    m.a2 * z * (-z * tau2).exp() / characteristic_derivative(m, z, tau2)
}

/// Finds the smallest critical delay over the supplied candidate frequencies
/// (as returned by [`candidate_frequencies`], in scaled units) and assembles
/// the Hopf point. Frequencies whose crossing system is inconsistent are
/// dropped; an exact tie between two distinct frequencies is refused as
/// degenerate.
pub fn critical_delay(m: &TwoDelayLinear, omegas: &[f64]) -> Result<HopfPoint> {
    let p = m.scaled();
    let mut dedup: Vec<f64> = omegas.to_vec();
    dedup.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dedup.dedup_by(|b, a| (*b - *a).abs() <= 1e-9);

    let mut hits: Vec<(f64, f64)> = Vec::new();
    for &omega in &dedup {
        if omega <= 0.0 || !omega.is_finite() {
            continue;
        }
        if let Some(r2) = minimal_r2_for(&p, omega) {
            hits.push((omega, r2));
        }
    }
    if hits.is_empty() {
        return Err(Error::NoHopf(
            "no candidate frequency is consistent with the crossing system".into(),
        ));
    }

    hits.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    if hits.len() > 1 && (hits[1].1 - hits[0].1).abs() <= TIE_TOL {
        return Err(Error::Degenerate(format!(
            "two frequencies ({} and {}) reach the same minimal tau2",
            hits[0].0, hits[1].0
        )));
    }
    let (omega_scaled, r2_0) = hits[0];

    let omega_star = omega_scaled * p.scale;
    let tau2_0 = r2_0 / p.scale;
    let z = Complex64::new(0.0, omega_star);
    let dh = characteristic_derivative(m, z, tau2_0);
    Ok(HopfPoint {
        omega_star,
        tau2_0,
        branch: match p.sign {
            SignCase::Positive => Branch::Plus,
            SignCase::Negative => Branch::Minus,
        },
        omega_scaled,
        r2_0,
        transversality: transversality(m, z, tau2_0),
        simple: dh.norm() > SIMPLE_TOL,
        omega_condition_value: omega_scaled * r2_0,
    })
}

/// Convenience wrapper: scan frequencies, then solve for the critical delay.
pub fn find_hopf(m: &TwoDelayLinear) -> Result<HopfPoint> {
    let omegas = candidate_frequencies(&m.scaled());
    if omegas.is_empty() {
        return Err(Error::NoHopf("the frequency condition has no positive root".into()));
    }
    critical_delay(m, &omegas)
}

/// Membership of v in U_{l >= 0} [2 l pi, 2 l pi + pi/2].
pub fn in_omega_set(v: f64) -> bool {
    if v < -1e-12 {
        return false;
    }
    let r = v.rem_euclid(2.0 * std::f64::consts::PI);
    r <= std::f64::consts::FRAC_PI_2 + 1e-12
}

/// Numerical verdicts on the Hopf hypotheses at one point.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisReport {
    pub transversality: Complex64,
    /// Re d lambda / d tau2 bounded away from zero.
    pub transversal: bool,
    pub char_derivative: Complex64,
    pub simple: bool,
    /// Characteristic roots found in the strip |Re z| <= 1e-3,
    /// |Im z| <= 2 omega_star, beyond the critical pair.
    pub extra_center_roots: i64,
    pub isolated_pair: bool,
    pub omega_condition_value: f64,
    pub in_omega: bool,
}

/// Checks transversality, simplicity, and isolation of the critical pair on
/// the axis window by an argument-principle count.
pub fn verify_hypotheses(m: &TwoDelayLinear, hp: &HopfPoint) -> Result<HypothesisReport> {
    let z = Complex64::new(0.0, hp.omega_star);
    let tr = transversality(m, z, hp.tau2_0);
    let dh = characteristic_derivative(m, z, hp.tau2_0);
    let count = count_roots_in_rectangle(
        m,
        hp.tau2_0,
        (-1e-3, 1e-3),
        (-2.0 * hp.omega_star, 2.0 * hp.omega_star),
    )?;
    Ok(HypothesisReport {
        transversality: tr,
        transversal: tr.re.abs() > SIMPLE_TOL,
        char_derivative: dh,
        simple: dh.norm() > SIMPLE_TOL,
        extra_center_roots: count as i64 - 2,
        isolated_pair: count == 2,
        omega_condition_value: hp.omega_condition_value,
        in_omega: in_omega_set(hp.omega_condition_value),
    })
}

/// Zeros of h(., tau2) strictly inside the axis-aligned rectangle, counted by
/// the winding number of h along the boundary. Fails if the contour passes
/// too close to a root for the count to be trustworthy.
pub fn count_roots_in_rectangle(
    m: &TwoDelayLinear,
    tau2: f64,
    re: (f64, f64),
    im: (f64, f64),
) -> Result<usize> {
    if !(re.0 < re.1 && im.0 < im.1) {
        return Err(Error::InvalidInput("rectangle bounds must be ordered".into()));
    }
    let f = |z: Complex64| characteristic_value(m, z, tau2);
    let corners = [
        Complex64::new(re.0, im.0),
        Complex64::new(re.1, im.0),
        Complex64::new(re.1, im.1),
        Complex64::new(re.0, im.1),
    ];
    let mut total = 0.0;
    for k in 0..4 {
        total += edge_arg_change(&f, corners[k], corners[(k + 1) % 4])?;
    }
    let winding = total / (2.0 * std::f64::consts::PI);
    let rounded = winding.round();
    if (winding - rounded).abs() > 1e-3 || rounded < 0.0 {
        return Err(Error::Degenerate(format!(
            "argument-principle count did not converge to an integer (got {winding})"
        )));
    }
    Ok(rounded as usize)
}

/// Total change of arg f along the segment [z0, z1], refined until each
/// sub-step turns by less than half a radian.
fn edge_arg_change(
    f: &dyn Fn(Complex64) -> Complex64,
    z0: Complex64,
    z1: Complex64,
) -> Result<f64> {
    let scale = 1.0 + z0.norm().max(z1.norm());
    let mut total = 0.0;
    let mut stack: Vec<(Complex64, Complex64, Complex64, Complex64, u32)> = Vec::new();
    let (f0, f1) = (f(z0), f(z1));
    stack.push((z0, f0, z1, f1, 0));
    while let Some((a, fa, b, fb, depth)) = stack.pop() {
        if fa.norm() < 1e-13 * scale || fb.norm() < 1e-13 * scale {
            return Err(Error::Degenerate(
                "a characteristic root lies on the counting contour".into(),
            ));
        }
        let dphi = (fb / fa).arg();
        if depth >= 4 && dphi.abs() <= 0.5 {
            total += dphi;
            continue;
        }
        if depth > 48 {
            return Err(Error::Degenerate(
                "argument tracking near the contour did not settle".into(),
            ));
        }
        let mid = 0.5 * (a + b);
        let fmid = f(mid);
        stack.push((a, fa, mid, fmid, depth + 1));
        stack.push((mid, fmid, b, fb, depth + 1));
    }
    Ok(total)
}

/// Number of characteristic roots with Re z >= 0. Any such root satisfies
/// |z| <= |a1| + a2, so one rectangle suffices.
pub fn count_unstable_roots(m: &TwoDelayLinear, tau2: f64) -> Result<usize> {
    let r = m.a1.abs() + m.a2 + 1.0;
    count_roots_in_rectangle(m, tau2, (0.0, r), (-r, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen outputs for the worked point (a1, a2, tau1) = (2, 3, 0.113279),
    // cross-checked against an independent Newton solve.
    const OMEGA_SCALED: f64 = 1.500000151313324;
    const R2_0: f64 = 1.500313255347238;
    const OMEGA_STAR: f64 = 3.000000302626648;
    const TAU2_0: f64 = 0.750156627673619;

    fn worked_model() -> TwoDelayLinear {
        TwoDelayLinear::new(2.0, 3.0, 0.113279).unwrap()
    }

    #[test]
    fn constructor_guards_hold() {
        assert!(TwoDelayLinear::new(0.0, 1.0, 0.1).is_err());
        assert!(TwoDelayLinear::new(1.0, 0.0, 0.1).is_err());
        assert!(TwoDelayLinear::new(1.0, -1.0, 0.1).is_err());
        assert!(TwoDelayLinear::new(1.0, 1.0, 0.0).is_err());
        assert!(TwoDelayLinear::new(-2.0, 1.5, 0.1).is_err());
        assert!(TwoDelayLinear::new(f64::INFINITY, 1.0, 0.1).is_err());
        assert!(TwoDelayLinear::new(-1.0, 1.5, 0.1).is_ok());
    }

    #[test]
    fn scaling_matches_hand_values() {
        let p = worked_model().scaled();
        assert!((p.a - 1.5).abs() < 1e-15);
        assert!((p.r1 - 0.226558).abs() < 1e-15);
        assert_eq!(p.sign, SignCase::Positive);
        assert_eq!(p.scale, 2.0);
    }

    #[test]
    fn worked_point_candidate_frequency() {
        let p = worked_model().scaled();
        let omegas = candidate_frequencies(&p);
        assert_eq!(omegas.len(), 1, "expected a single branch, got {omegas:?}");
        let w = omegas[0];
        assert!((w - OMEGA_SCALED).abs() < 1e-9, "omega = {w}");
        assert!(((w * p.r1).sin() - freq_rhs(&p, w)).abs() <= 1e-9);
    }

    #[test]
    fn worked_point_critical_delay() {
        let m = worked_model();
        let hp = find_hopf(&m).unwrap();
        assert!((hp.omega_scaled - OMEGA_SCALED).abs() < 1e-9);
        assert!((hp.r2_0 - R2_0).abs() < 1e-9);
        assert!((hp.omega_star - OMEGA_STAR).abs() < 1e-9);
        assert!((hp.tau2_0 - TAU2_0).abs() < 1e-9);
        assert_eq!(hp.branch, Branch::Plus);
        assert!(hp.simple);
        let res = characteristic_value(&m, Complex64::new(0.0, hp.omega_star), hp.tau2_0).norm();
        assert!(res < 1e-10, "characteristic residual {res}");
    }

    #[test]
    fn worked_point_transversality() {
        let hp = find_hopf(&worked_model()).unwrap();
        assert!((hp.transversality.re - 0.620895645652037).abs() < 1e-9);
        assert!((hp.transversality.im - (-3.085335139077879)).abs() < 1e-9);
    }

    #[test]
    fn worked_point_hypotheses() {
        let m = worked_model();
        let hp = find_hopf(&m).unwrap();
        let rep = verify_hypotheses(&m, &hp).unwrap();
        assert!(rep.transversal);
        assert!(rep.simple);
        assert!(rep.isolated_pair, "extra roots: {}", rep.extra_center_roots);
        assert!((rep.omega_condition_value - OMEGA_SCALED * R2_0).abs() < 1e-12);
        assert!(!rep.in_omega);
    }

    #[test]
    fn root_counts_flip_across_the_critical_delay() {
        let m = worked_model();
        let hp = find_hopf(&m).unwrap();
        assert_eq!(count_unstable_roots(&m, 0.9 * hp.tau2_0).unwrap(), 0);
        assert_eq!(count_unstable_roots(&m, 1.05 * hp.tau2_0).unwrap(), 2);
    }

    #[test]
    fn negative_sign_case_finds_a_consistent_point() {
        let m = TwoDelayLinear::new(-1.0, 2.0, 0.3).unwrap();
        let p = m.scaled();
        assert_eq!(p.sign, SignCase::Negative);
        let omegas = candidate_frequencies(&p);
        assert_eq!(omegas.len(), 1, "{omegas:?}");
        let hp = critical_delay(&m, &omegas).unwrap();
        assert_eq!(hp.branch, Branch::Minus);
        assert!(hp.tau2_0 > 0.0);
        let res = characteristic_value(&m, Complex64::new(0.0, hp.omega_star), hp.tau2_0).norm();
        assert!(res < 1e-9, "characteristic residual {res}");
    }

    #[test]
    fn duplicate_frequencies_do_not_trip_the_tie_check() {
        let m = worked_model();
        let w = find_hopf(&m).unwrap().omega_scaled;
        assert!(critical_delay(&m, &[w, w + 1e-12]).is_ok());
    }

    #[test]
    fn omega_set_membership() {
        use std::f64::consts::PI;
        assert!(in_omega_set(0.0));
        assert!(in_omega_set(PI / 2.0));
        assert!(!in_omega_set(2.0));
        assert!(in_omega_set(2.0 * PI + 0.3));
        assert!(!in_omega_set(-1.0));
        assert!(!in_omega_set(OMEGA_SCALED * R2_0));
    }

    #[test]
    fn counting_contour_through_a_root_is_refused() {
        let m = worked_model();
        let hp = find_hopf(&m).unwrap();
        // At the critical delay the pair sits on Re z = 0; the closed
        // right-half-plane count must refuse rather than guess.
        assert!(count_unstable_roots(&m, hp.tau2_0).is_err());
    }
}
