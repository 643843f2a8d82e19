//! Fiber maps `Phi(t) = E(t * u)`: critical points, zeros, manifold membership,
//! the subcritical envelope and the structure predicted for each regime.

use serde::{Deserialize, Serialize};

use crate::error::{CknError, Result};
use crate::functionals::{dilate, EnergyKernel, FiberCoefficients};
use crate::grid::RadialFunction;
use crate::params::{Exponents, ProblemParams, Regime, Thresholds};

pub const SCAN_MIN: f64 = -40.0;
pub const SCAN_MAX: f64 = 20.0;
pub const SCAN_STEP: f64 = 1e-2;
pub const BISECT_TOL: f64 = 1e-12;
/// Relative Pohozaev tolerance after projection.
pub const PROJECTION_TOL: f64 = 1e-8;
/// Relative margin around the threshold inside which structure is not judged.
pub const THRESHOLD_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
    /// `Phi''` within roundoff of zero.
    Degenerate,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Branch::Plus => "Plus",
            Branch::Minus => "Minus",
            Branch::Degenerate => "Degenerate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub t: f64,
    pub phi: f64,
    pub phi2: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureVerdict {
    Holds,
    Violated,
    /// Coupling within the safety margin of the estimated threshold.
    Inconclusive,
    /// No structural claim applies at this coupling.
    NotPredicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberReport {
    #[serde(flatten)]
    pub coefficients: FiberCoefficients,
    pub regime: Regime,
    pub criticals: Vec<CriticalPoint>,
    pub zeros: Vec<f64>,
    pub structure_ok: bool,
    pub verdict: StructureVerdict,
}

impl FiberReport {
    pub fn first(&self, branch: Branch) -> Option<&CriticalPoint> {
        self.criticals.iter().find(|c| c.branch == branch)
    }
    pub fn last(&self, branch: Branch) -> Option<&CriticalPoint> {
        self.criticals.iter().rev().find(|c| c.branch == branch)
    }
}

/// `Phi`, `Phi'` and `Phi''` from the coefficients.
#[derive(Debug, Clone, Copy)]
pub struct FiberMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
    pub q: f64,
    pub delta: f64,
    pub two_sharp: f64,
}

impl FiberMap {
    pub fn new(c: &FiberCoefficients, p: &ProblemParams, e: &Exponents) -> Self {
        FiberMap {
            a: c.a_grad,
            b: c.b_q,
            c: c.c_crit,
            beta: p.beta,
            q: p.q,
            delta: e.delta_q,
            two_sharp: e.two_sharp,
        }
    }

    fn qd(&self) -> f64 {
        self.q * self.delta
    }

    pub fn phi(&self, t: f64) -> f64 {
        (2.0 * t).exp() * self.a / 2.0
            - self.beta * (self.qd() * t).exp() * self.b / self.q
            - (self.two_sharp * t).exp() * self.c / self.two_sharp
    }

    /// The three terms of `Phi'`, signs included.
    fn dphi_terms(&self, t: f64) -> [(f64, f64); 3] {
        [
            (2.0, (2.0 * t).exp() * self.a),
            (self.qd(), -self.beta * self.delta * (self.qd() * t).exp() * self.b),
            (self.two_sharp, -(self.two_sharp * t).exp() * self.c),
        ]
    }

    pub fn dphi(&self, t: f64) -> f64 {
        self.dphi_terms(t).iter().map(|x| x.1).sum()
    }

    pub fn d2phi(&self, t: f64) -> f64 {
        2.0 * (2.0 * t).exp() * self.a
            - self.beta * self.delta * self.qd() * (self.qd() * t).exp() * self.b
            - self.two_sharp * (self.two_sharp * t).exp() * self.c
    }

    /// Scale used to decide whether `Phi''` vanishes.
    pub fn d2_scale(&self, t: f64) -> f64 {
        (2.0 * t).exp() * self.a
            + self.beta * self.delta * self.delta * self.q * (self.qd() * t).exp() * self.b
            + self.two_sharp * (self.two_sharp * t).exp() * self.c
    }

    /// Largest term magnitude of `Phi'`.
    pub fn dphi_scale(&self, t: f64) -> f64 {
        self.dphi_terms(t).iter().fold(0.0, |m, x| m.max(x.1.abs()))
    }
}

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    while hi - lo > BISECT_TOL {
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

/// All sign changes of `f` on the scan lattice, refined by bisection.
fn scan_roots(f: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let steps = ((SCAN_MAX - SCAN_MIN) / SCAN_STEP).round() as usize;
    let mut roots = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    let mut pending_zero: Option<f64> = None;
    for k in 0..=steps {
        let t = SCAN_MIN + k as f64 * SCAN_STEP;
        let v = f(t);
        if v == 0.0 {
            if pending_zero.is_none() {
                pending_zero = Some(t);
            }
            continue;
        }
        if let Some((tl, vl)) = last {
            if (vl > 0.0) != (v > 0.0) {
                roots.push(match pending_zero {
                    Some(z) => z,
                    None => bisect(f, tl, t),
                });
            }
        }
        pending_zero = None;
        last = Some((t, v));
    }
    roots
}

/// Sum of terms grouped by equal exponent; returns the dominant group's value
/// and the sum of magnitudes of the rest.
fn dominance(terms: &[(f64, f64); 3], smallest: bool) -> (f64, f64) {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for &(k, v) in terms {
        if v == 0.0 {
            continue;
        }
        match groups.iter_mut().find(|g| (g.0 - k).abs() <= 1e-12 * k.abs().max(1.0)) {
            Some(g) => g.1 += v,
            None => groups.push((k, v)),
        }
    }
    groups.retain(|g| g.1 != 0.0);
    groups.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite exponents"));
    let dom = if smallest { groups.first() } else { groups.last() };
    match dom {
        None => (0.0, 0.0),
        Some(&(k, v)) => {
            let rest = groups
                .iter()
                .filter(|g| g.0 != k)
                .map(|g| g.1.abs())
                .sum();
            (v, rest)
        }
    }
}

/// Fiber analysis from coefficients alone.
pub fn analyze_coefficients(
    coeffs: &FiberCoefficients,
    p: &ProblemParams,
    thresholds: Option<&Thresholds>,
) -> Result<FiberReport> {
    let e = p.exponents();
    let (a, b, c) = (coeffs.a_grad, coeffs.b_q, coeffs.c_crit);
    if !(c > 0.0 && c.is_finite()) {
        return Err(CknError::DegenerateCoefficients(format!(
            "C = {c}: no critical structure at +infinity"
        )));
    }
    if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
        return Err(CknError::DegenerateCoefficients(format!("A = {a}, B = {b}")));
    }
    let map = FiberMap::new(coeffs, p, &e);

    let (dom_lo, rest_lo) = dominance(&map.dphi_terms(SCAN_MIN), true);
    let d_lo = map.dphi(SCAN_MIN);
    if dom_lo != 0.0 && (d_lo > 0.0) != (dom_lo > 0.0) || dom_lo.abs() < 10.0 * rest_lo {
        return Err(CknError::ScanWindowExhausted(format!(
            "Phi' at t = {SCAN_MIN} not yet in its asymptotic regime"
        )));
    }
    let (dom_hi, rest_hi) = dominance(&map.dphi_terms(SCAN_MAX), false);
    if map.dphi(SCAN_MAX) >= 0.0 || dom_hi.abs() < 10.0 * rest_hi {
        return Err(CknError::ScanWindowExhausted(format!(
            "Phi' at t = {SCAN_MAX} not yet dominated by the critical term"
        )));
    }

    let criticals: Vec<CriticalPoint> = scan_roots(&|t| map.dphi(t))
        .into_iter()
        .map(|t| {
            let phi2 = map.d2phi(t);
            let branch = if phi2.abs() < 1e-8 * map.d2_scale(t) {
                Branch::Degenerate
            } else if phi2 > 0.0 {
                Branch::Plus
            } else {
                Branch::Minus
            };
            CriticalPoint {
                t,
                phi: map.phi(t),
                phi2,
                branch,
            }
        })
        .collect();
    let zeros = scan_roots(&|t| map.phi(t));

    let verdict = judge(&criticals, &zeros, p, &e, &map, thresholds);
    Ok(FiberReport {
        coefficients: *coeffs,
        regime: e.regime,
        criticals,
        zeros,
        structure_ok: verdict == StructureVerdict::Holds,
        verdict,
    })
}

fn single_maximum(criticals: &[CriticalPoint]) -> bool {
    criticals.len() == 1 && criticals[0].branch == Branch::Minus && criticals[0].phi > 0.0
}

fn judge(
    criticals: &[CriticalPoint],
    zeros: &[f64],
    p: &ProblemParams,
    e: &Exponents,
    map: &FiberMap,
    thresholds: Option<&Thresholds>,
) -> StructureVerdict {
    let verdict = |ok: bool| {
        if ok {
            StructureVerdict::Holds
        } else {
            StructureVerdict::Violated
        }
    };
    if p.beta == 0.0 {
        return verdict(single_maximum(criticals));
    }
    match e.regime {
        Regime::Supercritical => verdict(single_maximum(criticals)),
        Regime::MassCritical => {
            if 0.5 * map.a - p.beta / p.q * map.b > 0.0 {
                verdict(single_maximum(criticals))
            } else {
                verdict(criticals.is_empty())
            }
        }
        Regime::Subcritical => {
            let Some(b1) = thresholds.and_then(|t| t.beta1) else {
                return StructureVerdict::NotPredicted;
            };
            if p.beta > b1 * (1.0 + THRESHOLD_MARGIN) {
                return StructureVerdict::NotPredicted;
            }
            if p.beta >= b1 * (1.0 - THRESHOLD_MARGIN) {
                return StructureVerdict::Inconclusive;
            }
            let ok = criticals.len() == 2
                && criticals[0].branch == Branch::Plus
                && criticals[1].branch == Branch::Minus
                && criticals[0].phi < 0.0
                && criticals[1].phi > 0.0
                && zeros.len() == 2
                && criticals[0].t < zeros[0]
                && zeros[0] < criticals[1].t
                && criticals[1].t < zeros[1];
            verdict(ok)
        }
    }
}

pub fn analyze_fiber(
    u: &RadialFunction,
    p: &ProblemParams,
    thresholds: Option<&Thresholds>,
) -> Result<FiberReport> {
    if u.is_zero() {
        return Err(CknError::ZeroProfile);
    }
    let k = EnergyKernel::new(u.grid().clone(), p);
    analyze_coefficients(&k.coefficients(u.values()), p, thresholds)
}

fn branch_time(report: &FiberReport, branch: Branch) -> Result<f64> {
    let cp = match branch {
        Branch::Plus => report.first(Branch::Plus),
        Branch::Minus => report.last(Branch::Minus),
        Branch::Degenerate => None,
    };
    cp.map(|c| c.t)
        .ok_or_else(|| CknError::BranchAbsent(branch.to_string()))
}

/// Dilate `u` onto the requested part of the Pohozaev manifold.
pub fn project_to_manifold(
    u: &RadialFunction,
    p: &ProblemParams,
    branch: Branch,
) -> Result<RadialFunction> {
    let k = EnergyKernel::new(u.grid().clone(), p);
    project_with(&k, u, branch)
}

pub(crate) fn project_with(
    k: &EnergyKernel,
    u: &RadialFunction,
    branch: Branch,
) -> Result<RadialFunction> {
    let p = k.params();
    let e = k.exponents();
    let mut v = u.clone();
    for round in 0..6 {
        let c = k.coefficients(v.values());
        if round > 0 && c.pohozaev(p, e).abs() <= 0.5 * PROJECTION_TOL * c.a_grad {
            return Ok(v);
        }
        let report = analyze_coefficients(&c, p, None)?;
        let t = branch_time(&report, branch)?;
        if t.abs() < 1e-15 {
            return Ok(v);
        }
        v = dilate(&v, t, p)?;
    }
    let c = k.coefficients(v.values());
    if c.pohozaev(p, e).abs() <= PROJECTION_TOL * c.a_grad {
        Ok(v)
    } else {
        Err(CknError::DegenerateCoefficients(format!(
            "projection stalled at P/A = {:e}",
            c.pohozaev(p, e) / c.a_grad
        )))
    }
}

/// Envelope `f(t) = t^2/2 - K t^{q delta} - t^{2#}/(2# S^{2#/2})` with
/// `K = (beta/q) C^q rho^{(1-delta) q}`, and its positivity interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub t_tilde: f64,
    pub h_max: f64,
    pub coupling: f64,
    pub kappa_tilde: f64,
    pub kappa_hat: f64,
    pub positive_interval_nonempty: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub k: f64,
    pub qd: f64,
    pub two_sharp: f64,
    pub s_ab: f64,
}

impl Envelope {
    pub fn new(p: &ProblemParams, s_ab: f64, c_ab: f64) -> Self {
        let e = p.exponents();
        Envelope {
            k: p.beta / p.q * c_ab.powf(p.q) * p.rho.powf((1.0 - e.delta_q) * p.q),
            qd: p.q * e.delta_q,
            two_sharp: e.two_sharp,
            s_ab,
        }
    }

    pub fn f(&self, t: f64) -> f64 {
        0.5 * t * t
            - self.k * t.powf(self.qd)
            - t.powf(self.two_sharp) / (self.two_sharp * self.s_ab.powf(self.two_sharp / 2.0))
    }

    pub fn h(&self, t: f64) -> f64 {
        0.5 * t.powf(2.0 - self.qd)
            - t.powf(self.two_sharp - self.qd)
                / (self.two_sharp * self.s_ab.powf(self.two_sharp / 2.0))
    }

    pub fn t_tilde(&self) -> f64 {
        let ts = self.two_sharp;
        (ts * self.s_ab.powf(ts / 2.0) * (2.0 - self.qd) / (2.0 * (ts - self.qd)))
            .powf(1.0 / (ts - 2.0))
    }
}

pub fn envelope(p: &ProblemParams, s_ab: f64, c_ab: f64) -> Result<EnvelopeReport> {
    let e = p.exponents();
    if e.regime != Regime::Subcritical {
        return Err(CknError::RegimeMismatch(
            "the envelope is defined for subcritical q only".into(),
        ));
    }
    let env = Envelope::new(p, s_ab, c_ab);
    let tt = env.t_tilde();
    let h_max = env.h(tt);
    if h_max <= env.k {
        return Err(CknError::NoPositiveInterval {
            h_max,
            threshold: env.k,
        });
    }
    let g = |t: f64| env.h(t) - env.k;
    let kappa_tilde = if env.k == 0.0 {
        0.0
    } else {
        bisect_to_precision(&g, 0.0, tt)
    };
    let mut hi = 2.0 * tt;
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    let kappa_hat = bisect_to_precision(&g, tt, hi);
    Ok(EnvelopeReport {
        t_tilde: tt,
        h_max,
        coupling: env.k,
        kappa_tilde,
        kappa_hat,
        positive_interval_nonempty: true,
    })
}

/// Bisection until the bracket stops shrinking in floating point.
fn bisect_to_precision(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo_pos = f(lo) > 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if (f(mid) > 0.0) == flo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    pub energy: f64,
    pub envelope_value: f64,
    pub grad_norm: f64,
    pub holds: bool,
}

/// Check `E(u) >= f(||grad u||)` for a profile on the mass sphere.
pub fn check_lower_bound(
    u: &RadialFunction,
    p: &ProblemParams,
    s_ab: f64,
    c_ab: f64,
) -> Result<LowerBoundCheck> {
    let k = EnergyKernel::new(u.grid().clone(), p);
    let c = k.coefficients(u.values());
    let energy = c.energy(p, k.exponents());
    let grad_norm = c.a_grad.sqrt();
    let fv = Envelope::new(p, s_ab, c_ab).f(grad_norm);
    let slack = 1e-9 * (0.5 * c.a_grad + c.c_crit + p.beta * c.b_q);
    Ok(LowerBoundCheck {
        energy,
        envelope_value: fv,
        grad_norm,
        holds: energy >= fv - slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::validate;
    use approx::assert_relative_eq;

    fn coeffs(a: f64, b: f64, c: f64) -> FiberCoefficients {
        FiberCoefficients {
            a_grad: a,
            b_q: b,
            c_crit: c,
        }
    }

    fn p0(beta: f64) -> ProblemParams {
        validate(3, 0.25, 0.5, 2.5, beta, 1.0).unwrap()
    }

    #[test]
    fn pure_critical_fiber_has_single_max_at_zero() {
        let r = analyze_coefficients(&coeffs(1.0, 1.0, 1.0), &p0(0.0), None).unwrap();
        assert_eq!(r.criticals.len(), 1);
        let c = r.criticals[0];
        assert!(c.t.abs() < 1e-12);
        assert_relative_eq!(c.phi, 0.25, epsilon = 1e-12);
        assert_eq!(c.branch, Branch::Minus);
        assert!(r.structure_ok);
    }

    #[test]
    fn small_coupling_gives_two_criticals() {
        let r = analyze_coefficients(&coeffs(1.0, 1.0, 1.0), &p0(0.1), None).unwrap();
        assert_eq!(r.criticals.len(), 2);
        assert!(r.criticals[0].t > -5.0 && r.criticals[0].t < -3.0);
        assert!(r.criticals[1].t > -1.0 && r.criticals[1].t < 0.0);
        assert_eq!(r.criticals[0].branch, Branch::Plus);
        assert_eq!(r.criticals[1].branch, Branch::Minus);
        let map = FiberMap::new(&coeffs(1.0, 1.0, 1.0), &p0(0.1), &p0(0.1).exponents());
        for cp in &r.criticals {
            assert!(map.dphi(cp.t).abs() <= 1e-10 * map.dphi_scale(cp.t));
        }
        assert_eq!(r.verdict, StructureVerdict::NotPredicted);
    }

    #[test]
    fn mass_critical_single_max_iff_coefficient_condition() {
        let p = p0(1.0).at_mass_critical().unwrap();
        let qc = p.q;
        // A/2 - B/q_c > 0 with B = 1 requires A > 2/q_c = 0.7
        let ok = analyze_coefficients(&coeffs(1.0, 1.0, 1.0), &p, None).unwrap();
        assert!(ok.structure_ok && ok.criticals.len() == 1);
        let none = analyze_coefficients(&coeffs(0.5 * 2.0 / qc, 1.0, 1.0), &p, None).unwrap();
        assert!(none.criticals.is_empty());
    }

    #[test]
    fn supercritical_single_max_and_decreasing_after() {
        let p = p0(1.0).with_q(3.0).unwrap();
        let c = coeffs(2.0, 0.5, 1.0);
        let r = analyze_coefficients(&c, &p, None).unwrap();
        assert!(r.structure_ok);
        let map = FiberMap::new(&c, &p, &p.exponents());
        let t0 = r.criticals[0].t;
        for k in 1..200 {
            let t = t0 + k as f64 * 0.05;
            assert!(map.phi(t) < map.phi(t - 0.05));
        }
    }

    #[test]
    fn degenerate_coefficients_rejected() {
        assert!(matches!(
            analyze_coefficients(&coeffs(1.0, 1.0, 0.0), &p0(0.1), None),
            Err(CknError::DegenerateCoefficients(_))
        ));
    }

    #[test]
    fn extreme_coefficients_exhaust_window() {
        assert!(matches!(
            analyze_coefficients(&coeffs(1.0, 1.0, 1e-60), &p0(0.1), None),
            Err(CknError::ScanWindowExhausted(_))
        ));
    }

    #[test]
    fn envelope_closed_forms_and_roots() {
        let p = p0(0.3);
        let r = envelope(&p, 1.0233, 0.8165).unwrap();
        let env = Envelope::new(&p, 1.0233, 0.8165);
        assert!(env.f(r.kappa_tilde).abs() < 1e-10);
        assert!(env.f(r.kappa_hat).abs() < 1e-10);
        assert!(r.kappa_tilde < r.t_tilde && r.t_tilde < r.kappa_hat);
        for k in 1..100 {
            let t = r.kappa_tilde + (r.kappa_hat - r.kappa_tilde) * k as f64 / 100.0;
            assert!(env.f(t) > 0.0);
        }
        // closed form of h at its maximizer
        let ts = env.two_sharp;
        let x = ts * env.s_ab.powf(ts / 2.0) * (2.0 - env.qd) / (2.0 * (ts - env.qd));
        let hmax = (ts - 2.0) / (2.0 * (ts - env.qd)) * x.powf((2.0 - env.qd) / (ts - 2.0));
        assert_relative_eq!(r.h_max, hmax, max_relative = 1e-13);
    }

    #[test]
    fn envelope_boundary_tracks_beta1() {
        let (s, c) = (1.0233, 0.8165);
        let b1 = crate::params::thresholds(&p0(0.1), s, c).unwrap().beta1.unwrap();
        assert!(envelope(&p0(0.999 * b1), s, c).is_ok());
        assert!(matches!(
            envelope(&p0(1.001 * b1), s, c),
            Err(CknError::NoPositiveInterval { .. })
        ));
    }

    #[test]
    fn kappa_tilde_shrinks_as_beta_vanishes() {
        let (s, c) = (1.0233, 0.8165);
        let k3 = envelope(&p0(1e-3), s, c).unwrap().kappa_tilde;
        let k6 = envelope(&p0(1e-6), s, c).unwrap().kappa_tilde;
        assert!(k6 < k3 && k6 > 0.0);
    }

    #[test]
    fn envelope_rejects_other_regimes() {
        let p = p0(0.1).with_q(3.0).unwrap();
        assert!(matches!(envelope(&p, 1.0, 1.0), Err(CknError::RegimeMismatch(_))));
    }
}
