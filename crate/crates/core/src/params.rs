//! Problem parameters, derived exponents and the existence thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{CknError, Result};

/// Relative tolerance used to decide `q == q_c`.
pub const REGIME_TOL: f64 = 1e-12;

/// One instance `(N, a, b, q, beta, rho)` of the constrained problem.
///
/// Construct through [`validate`]; the fields are public for reading only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    #[serde(rename = "N")]
    pub n: u32,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub beta: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Subcritical,
    MassCritical,
    Supercritical,
}

/// Closed-form quantities derived from `(N, a, b, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub d: f64,
    pub two_sharp: f64,
    pub delta_q: f64,
    pub q_c: f64,
    pub alpha_bubble: f64,
    #[serde(rename = "A_bubble")]
    pub a_bubble: f64,
    pub regime: Regime,
}

/// The critical coupling of the mass-critical and supercritical existence theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaStar {
    Finite(f64),
    /// No restriction on `beta`.
    Unbounded,
}

impl BetaStar {
    pub fn admits(&self, beta: f64) -> bool {
        match *self {
            BetaStar::Finite(v) => beta < v,
            BetaStar::Unbounded => true,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            BetaStar::Finite(v) => Some(v),
            BetaStar::Unbounded => None,
        }
    }
}

/// Coupling thresholds evaluated from numerical estimates of `S(a,b)` and `C_{a,b}`.
///
/// `beta1` and `beta2` are the values at which the inequalities they guard become
/// equalities. The closed forms as usually printed are kept in `beta1_displayed`
/// and `beta2_displayed`; they differ by the constant factors 2 and `1/d`.
/// Because `C_ab` is a lower estimate every entry is an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub beta_star_sub: Option<f64>,
    pub beta1_displayed: Option<f64>,
    pub beta2_displayed: Option<f64>,
    pub beta_star_crit: Option<BetaStar>,
    pub n3_extra_condition_met: bool,
    #[serde(rename = "S_ab")]
    pub s_ab: f64,
    #[serde(rename = "C_ab")]
    pub c_ab: f64,
    pub estimated: bool,
}

/// Check the strict hypotheses and build a parameter set.
pub fn validate(n: u32, a: f64, b: f64, q: f64, beta: f64, rho: f64) -> Result<ProblemParams> {
    if n < 3 {
        return Err(CknError::DimensionTooSmall(n));
    }
    let nf = n as f64;
    let a_upper = (nf - 2.0) / 2.0;
    if !(a > 0.0 && a < a_upper) {
        return Err(CknError::WeightOutOfRange { a, upper: a_upper });
    }
    if !(b > a && b < a + 1.0) {
        return Err(CknError::OffsetOutOfRange {
            b,
            lower: a,
            upper: a + 1.0,
        });
    }
    let two_sharp = two_sharp(n, a, b);
    if !(q > 2.0 && q < two_sharp) {
        return Err(CknError::PowerOutOfRange {
            q,
            upper: two_sharp,
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(CknError::NegativeCoupling(beta));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(CknError::NonPositiveMass(rho));
    }
    Ok(ProblemParams {
        n,
        a,
        b,
        q,
        beta,
        rho,
    })
}

impl ProblemParams {
    /// Re-run validation, e.g. after deserializing.
    pub fn validated(self) -> Result<Self> {
        validate(self.n, self.a, self.b, self.q, self.beta, self.rho)
    }

    pub fn with_q(self, q: f64) -> Result<Self> {
        validate(self.n, self.a, self.b, q, self.beta, self.rho)
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        validate(self.n, self.a, self.b, self.q, beta, self.rho)
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        validate(self.n, self.a, self.b, self.q, self.beta, rho)
    }

    /// Same parameters with `q` set to the mass-critical exponent.
    pub fn at_mass_critical(self) -> Result<Self> {
        self.with_q(mass_critical_exponent(self.n, self.a, self.b))
    }

    pub fn exponents(&self) -> Exponents {
        derive_exponents(self)
    }
}

pub fn two_sharp(n: u32, a: f64, b: f64) -> f64 {
    let nf = n as f64;
    let d = 1.0 + a - b;
    2.0 * nf / (nf - 2.0 * d)
}

/// `delta_q = ((N - 2a + 2b) q - 2N) / (2q)`.
pub fn delta(n: u32, a: f64, b: f64, q: f64) -> f64 {
    let nf = n as f64;
    ((nf - 2.0 * a + 2.0 * b) * q - 2.0 * nf) / (2.0 * q)
}

pub fn mass_critical_exponent(n: u32, a: f64, b: f64) -> f64 {
    let nf = n as f64;
    (4.0 + 2.0 * nf) / (nf - 2.0 * a + 2.0 * b)
}

pub fn classify_regime(q: f64, q_c: f64) -> Regime {
    if ((q - q_c) / q_c).abs() <= REGIME_TOL {
        Regime::MassCritical
    } else if q < q_c {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

pub fn derive_exponents(p: &ProblemParams) -> Exponents {
    let nf = p.n as f64;
    let d = 1.0 + p.a - p.b;
    let q_c = mass_critical_exponent(p.n, p.a, p.b);
    Exponents {
        d,
        two_sharp: two_sharp(p.n, p.a, p.b),
        delta_q: delta(p.n, p.a, p.b, p.q),
        q_c,
        alpha_bubble: 2.0 * d * (nf - 2.0 - 2.0 * p.a) / (nf - 2.0 * d),
        a_bubble: ((nf - 2.0) / 2.0 - p.a).powi(2),
        regime: classify_regime(p.q, q_c),
    }
}

/// Whether the extra condition `b - a > 1/6` required for `N = 3` and
/// `10/(3-2a+2b) <= q < 3/(1-2a+b)` holds; true when it does not apply.
pub fn n3_extra_condition_met(p: &ProblemParams) -> bool {
    if p.n != 3 {
        return true;
    }
    let lo = 10.0 / (3.0 - 2.0 * p.a + 2.0 * p.b);
    let hi = 3.0 / (1.0 - 2.0 * p.a + p.b);
    let in_range = p.q >= lo * (1.0 - REGIME_TOL) && p.q < hi;
    !in_range || p.b - p.a > 1.0 / 6.0
}

/// The factor `C^q rho^{(1 - delta_q) q}` shared by every subcritical threshold.
fn coupling_scale(p: &ProblemParams, e: &Exponents, c_ab: f64) -> f64 {
    c_ab.powf(p.q) * p.rho.powf((1.0 - e.delta_q) * p.q)
}

/// `beta` at which `max h = (beta/q) C^q rho^{(1-delta)q}`, i.e. where the envelope
/// stops being positive anywhere.
fn beta1_envelope(p: &ProblemParams, e: &Exponents, s_ab: f64, c_ab: f64) -> f64 {
    let qd = p.q * e.delta_q;
    let ts = e.two_sharp;
    let x = ts * s_ab.powf(ts / 2.0) * (2.0 - qd) / (2.0 * (ts - qd));
    let h_max = (ts - 2.0) / (2.0 * (ts - qd)) * x.powf((2.0 - qd) / (ts - 2.0));
    p.q * h_max / coupling_scale(p, e, c_ab)
}

/// `beta` at which `min_t [(d/N) t^2 - (beta/q) C^q rho^{..} (1 - q delta/2#) t^{q delta}]`
/// equals `-(d/N) S^{N/2d}`.
fn beta2_gap(p: &ProblemParams, e: &Exponents, s_ab: f64, c_ab: f64) -> f64 {
    let nf = p.n as f64;
    let qd = p.q * e.delta_q;
    let ts = e.two_sharp;
    let z = 2.0 * e.d / nf
        * s_ab.powf(nf * (2.0 - qd) / (4.0 * e.d))
        * (2.0 - qd).powf(-(2.0 - qd) / 2.0)
        * qd.powf(-qd / 2.0);
    z * p.q * ts / (coupling_scale(p, e, c_ab) * (ts - qd))
}

fn beta1_display(p: &ProblemParams, e: &Exponents, s_ab: f64, c_ab: f64) -> f64 {
    let qd = p.q * e.delta_q;
    let ts = e.two_sharp;
    let x = ts * s_ab.powf(ts / 2.0) * (2.0 - qd) / (2.0 * (ts - qd));
    p.q * (ts - 2.0) / (coupling_scale(p, e, c_ab) * (ts - qd)) * x.powf((2.0 - qd) / (ts - 2.0))
}

fn beta2_display(p: &ProblemParams, e: &Exponents, s_ab: f64, c_ab: f64) -> f64 {
    let nf = p.n as f64;
    let qd = p.q * e.delta_q;
    let ts = e.two_sharp;
    let pre = 2.0 * ts / (nf * e.delta_q * coupling_scale(p, e, c_ab) * (ts - qd));
    pre * (qd * s_ab.powf(nf / (2.0 * e.d)) / (2.0 - qd)).powf((2.0 - qd) / 2.0)
}

/// `beta*` on the mass-critical branch: `q_c / (2 rho^{4d/(N-2a+2b)} C^{q_c})`.
pub fn beta_star_mass_critical(p: &ProblemParams, c_ab: f64) -> Result<f64> {
    let e = derive_exponents(p);
    if e.regime != Regime::MassCritical {
        return Err(CknError::RegimeMismatch(format!(
            "mass-critical branch requested with q = {} != q_c = {}",
            p.q, e.q_c
        )));
    }
    let nf = p.n as f64;
    let rho_pow = 4.0 * e.d / (nf - 2.0 * p.a + 2.0 * p.b);
    Ok(e.q_c / (p.rho.powf(rho_pow) * 2.0 * c_ab.powf(e.q_c)))
}

fn beta_star_crit(p: &ProblemParams, e: &Exponents, s_ab: f64, c_ab: f64) -> BetaStar {
    let nf = p.n as f64;
    match e.regime {
        Regime::MassCritical => BetaStar::Finite(
            beta_star_mass_critical(p, c_ab).expect("regime checked"),
        ),
        _ => {
            let q_star = nf / (nf - 2.0 * (1.0 + p.a) + p.b);
            let a_cap = ((nf - 4.0) / 2.0).max(0.0);
            if q_star < e.q_c && e.q_c < p.q && p.a < a_cap {
                let qd = p.q * e.delta_q;
                BetaStar::Finite(
                    s_ab.powf(nf * (2.0 - qd) / (2.0 * e.d))
                        / (coupling_scale(p, e, c_ab) * e.delta_q),
                )
            } else {
                BetaStar::Unbounded
            }
        }
    }
}

/// Evaluate all thresholds for `p` given estimates of the two constants.
pub fn thresholds(p: &ProblemParams, s_ab: f64, c_ab: f64) -> Result<Thresholds> {
    if !(s_ab > 0.0 && s_ab.is_finite()) || !(c_ab > 0.0 && c_ab.is_finite()) {
        return Err(CknError::DegenerateCoefficients(format!(
            "S_ab = {s_ab}, C_ab = {c_ab} must be positive"
        )));
    }
    let e = derive_exponents(p);
    let sub = e.regime == Regime::Subcritical;
    let (beta1, beta2, b1d, b2d) = if sub {
        (
            Some(beta1_envelope(p, &e, s_ab, c_ab)),
            Some(beta2_gap(p, &e, s_ab, c_ab)),
            Some(beta1_display(p, &e, s_ab, c_ab)),
            Some(beta2_display(p, &e, s_ab, c_ab)),
        )
    } else {
        (None, None, None, None)
    };
    Ok(Thresholds {
        beta1,
        beta2,
        beta_star_sub: beta1.zip(beta2).map(|(x, y)| x.min(y)),
        beta1_displayed: b1d,
        beta2_displayed: b2d,
        beta_star_crit: if sub {
            None
        } else {
            Some(beta_star_crit(p, &e, s_ab, c_ab))
        },
        n3_extra_condition_met: n3_extra_condition_met(p),
        s_ab,
        c_ab,
        estimated: true,
    })
}
