//! Bubbles, cutoff bubbles, the two best constants, concentration
//! asymptotics and the `(a, b)`-plane region classification.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{self, DescentOptions, Tridiag};
use crate::error::{CknError, Result};
use crate::functionals::EnergyKernel;
use crate::grid::{fmt_g17, make_grid, RadialFunction, RadialGrid};
use crate::params::{validate, Exponents, ProblemParams};

pub const DEFAULT_CUTOFF_R: f64 = 1.0;
/// Largest tolerated share of an integral carried by the analytic tail.
pub const TAIL_LIMIT: f64 = 0.05;
pub const BOUNDARY_TOL: f64 = 1e-12;
pub const S_INVARIANCE_EPS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub eps: f64,
    pub cutoff_r: f64,
    pub exponents: Exponents,
}

impl BubbleSpec {
    pub fn new(eps: f64, cutoff_r: f64, exponents: Exponents) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) || !(cutoff_r > 0.0 && cutoff_r.is_finite()) {
            return Err(CknError::DegenerateProfile(format!(
                "bubble needs eps > 0 and R > 0, got eps = {eps}, R = {cutoff_r}"
            )));
        }
        Ok(BubbleSpec {
            eps,
            cutoff_r,
            exponents,
        })
    }
}

/// `(N - 2d)/(2d)`, the bubble's power.
fn bubble_power(n: u32, e: &Exponents) -> f64 {
    (n as f64 - 2.0 * e.d) / (2.0 * e.d)
}

pub fn bubble_value(n: u32, e: &Exponents, eps: f64, r: f64) -> f64 {
    let m = bubble_power(n, e);
    (2.0 * e.two_sharp * e.a_bubble * eps).powf(m / 2.0) / (eps + r.powf(e.alpha_bubble)).powf(m)
}

/// The extremal family of the weighted Sobolev inequality.
pub fn bubble(spec: &BubbleSpec, grid: &Arc<RadialGrid>) -> RadialFunction {
    let n = grid.dim();
    RadialFunction::from_fn(grid.clone(), |r| bubble_value(n, &spec.exponents, spec.eps, r))
        .expect("bubble values are finite")
}

/// C^1 cubic smoothstep: 1 on `[0, R]`, 0 on `[2R, inf)`.
pub fn cutoff(r: f64, big_r: f64) -> f64 {
    if r <= big_r {
        1.0
    } else if r >= 2.0 * big_r {
        0.0
    } else {
        let x = r / big_r - 1.0;
        1.0 - x * x * (3.0 - 2.0 * x)
    }
}

pub fn cutoff_bubble(spec: &BubbleSpec, grid: &Arc<RadialGrid>) -> Result<RadialFunction> {
    let support = 2.0 * spec.cutoff_r;
    if support >= grid.r_max() {
        return Err(CknError::CutoffOutsideWindow {
            support,
            r_max: grid.r_max(),
        });
    }
    let n = grid.dim();
    RadialFunction::from_fn(grid.clone(), |r| {
        cutoff(r, spec.cutoff_r) * bubble_value(n, &spec.exponents, spec.eps, r)
    })
}

/// Decay rates in `s = ln r` of the gradient and critical integrands of the bubble.
fn tail_rates(p: &ProblemParams, e: &Exponents) -> (f64, f64) {
    let nf = p.n as f64;
    let k = nf - 2.0 - 2.0 * p.a;
    (k, k * e.two_sharp - (nf - p.b * e.two_sharp))
}

/// `(A, C)` of a profile with bubble-like power tail, including the analytic
/// tail beyond `r_max`, and the largest relative tail share.
fn tail_corrected(k: &EnergyKernel, u: &[f64]) -> (f64, f64, f64) {
    let g = k.grid();
    let p = k.params();
    let e = k.exponents();
    let n = g.len();
    let nf = p.n as f64;
    let (rate_a, rate_c) = tail_rates(p, e);
    let c = k.coefficients(u);
    let du = g.diff_mid(u);
    let wg = g.mid_weights(nf - 2.0 - 2.0 * p.a);
    let tail_a = wg[n - 2] / g.ds() * du[n - 2] * du[n - 2] / rate_a;
    let tail_c = g.omega()
        * ((nf - p.b * e.two_sharp) * g.s_max()).exp()
        * u[n - 1].abs().powf(e.two_sharp)
        / rate_c;
    let a = c.a_grad + tail_a;
    let cc = c.c_crit + tail_c;
    (a, cc, (tail_a / a).max(tail_c / cc))
}

/// Wide window suited to the slowly decaying bubble tails.
pub fn s_grid(dim: u32) -> Result<Arc<RadialGrid>> {
    make_grid(-40.0, 60.0, 8192, dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SEstimate {
    #[serde(rename = "S_ab")]
    pub value: f64,
    pub eps: Vec<f64>,
    pub quotients: Vec<f64>,
    /// Largest relative deviation of the quotient across `eps`.
    pub eps_invariance: f64,
    pub tail_fraction: f64,
}

fn s_quotient(k: &EnergyKernel, eps: f64) -> Result<(f64, f64)> {
    let g = k.grid();
    let spec = BubbleSpec::new(eps, DEFAULT_CUTOFF_R, *k.exponents())?;
    let u = bubble(&spec, g);
    let (a, c, tail) = tail_corrected(k, u.values());
    if !(tail <= TAIL_LIMIT) {
        return Err(CknError::QuadratureDivergence { tail });
    }
    Ok((a / c.powf(2.0 / k.exponents().two_sharp), tail))
}

/// Sobolev quotient `A / C^{2/2#}` of the bubble at `eps = 1`.
pub fn best_constant_s(p: &ProblemParams, grid: &Arc<RadialGrid>) -> Result<f64> {
    let k = EnergyKernel::new(grid.clone(), p);
    Ok(s_quotient(&k, 1.0)?.0)
}

/// The bubble quotient with its `eps`-invariance diagnostic over `{0.5, 1, 2}`.
pub fn estimate_s(p: &ProblemParams, grid: &Arc<RadialGrid>) -> Result<SEstimate> {
    estimate_s_with(p, grid, &S_INVARIANCE_EPS)
}

/// The bubble quotient at `eps = 1` with its spread over `eps_list`.
pub fn estimate_s_with(p: &ProblemParams, grid: &Arc<RadialGrid>, eps_list: &[f64]) -> Result<SEstimate> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(CknError::BadGridSpec(
            "eps list must be nonempty with positive finite entries".into(),
        ));
    }
    let k = EnergyKernel::new(grid.clone(), p);
    let (value, mut tail) = s_quotient(&k, 1.0)?;
    let mut quotients = Vec::new();
    for &eps in eps_list {
        let (v, t) = s_quotient(&k, eps)?;
        quotients.push(v);
        tail = tail.max(t);
    }
    let spread = quotients
        .iter()
        .map(|v| (v - value).abs() / value)
        .fold(0.0, f64::max);
    Ok(SEstimate {
        value,
        eps: eps_list.to_vec(),
        quotients,
        eps_invariance: spread,
        tail_fraction: tail,
    })
}

/// Direct minimization of the Sobolev quotient over radial profiles on
/// `[e^-15, e^45]` with a Dirichlet condition at the right end.
pub fn s_by_descent(p: &ProblemParams, n: usize) -> Result<f64> {
    let grid = make_grid(-15.0, 45.0, n, p.n)?;
    let k = EnergyKernel::new(grid.clone(), p);
    let nf = p.n as f64;
    let ts = k.exponents().two_sharp;
    let wg = grid.mid_weights(nf - 2.0 - 2.0 * p.a);
    let mut stiff = Tridiag::stiffness(&grid, &wg, 1.0, &vec![0.0; n]);
    stiff.pin(n - 1);
    let r_end = grid.r_max();
    let x0: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|r| (1.0 + r).powf(-0.5) - (1.0 + r_end).powf(-0.5))
        .collect();
    let objective = |u: &[f64]| {
        let c = k.coefficients(u);
        let [ga, _, gc] = k.coefficient_gradients(u);
        let f = c.a_grad.ln() - 2.0 / ts * c.c_crit.ln();
        let mut g: Vec<f64> = ga
            .iter()
            .zip(&gc)
            .map(|(x, y)| x / c.a_grad - 2.0 / ts * y / c.c_crit)
            .collect();
        g[n - 1] = 0.0;
        (f, g)
    };
    let precond = |u: &[f64], g: &[f64]| {
        let a = k.a_grad(u);
        let mut d = stiff.solve(g);
        for v in d.iter_mut() {
            *v *= 0.5 * a;
        }
        d[n - 1] = 0.0;
        d
    };
    let out = descent::minimize(
        x0,
        objective,
        precond,
        |u| {
            u[n - 1] = 0.0;
            for v in u.iter_mut() {
                *v = v.abs();
            }
        },
        &DescentOptions {
            max_iters: 5000,
            step0: 1.0,
            grad_tol: 1e-9,
            stall_tol: 1e-13,
        },
    );
    Ok(out.value.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEstimate {
    #[serde(rename = "C_ab")]
    pub value: f64,
    /// Largest ratio over the explicit test family.
    pub family_lower_bound: f64,
    pub family_best: String,
    pub ascent_values: Vec<f64>,
    pub lower_estimate: bool,
}

/// `||r^{-b} u||_q / (A^{delta/2} mass^{(1-delta)/2})`.
pub fn interpolation_ratio(k: &EnergyKernel, u: &[f64]) -> f64 {
    let c = k.coefficients(u);
    let m = k.mass_sq(u);
    let d = k.exponents().delta_q;
    c.b_q.powf(1.0 / k.params().q) / (c.a_grad.powf(d / 2.0) * m.powf((1.0 - d) / 2.0))
}

type FamilyMember = (String, Box<dyn Fn(f64) -> f64 + Sync>);

fn test_family() -> Vec<FamilyMember> {
    let mut fam: Vec<FamilyMember> = Vec::new();
    for sigma in [0.75, 1.0, 1.5, 2.0, 3.0] {
        fam.push((format!("exp(-r^{sigma})"), Box::new(move |r: f64| (-r.powf(sigma)).exp())));
    }
    for c in [0.5, 1.0, 2.0] {
        fam.push((format!("(1+{c}r)exp(-r)"), Box::new(move |r: f64| (1.0 + c * r) * (-r).exp())));
    }
    for kappa in [0.5, 1.0, 2.0] {
        for m in [0.5, 1.0] {
            fam.push((
                format!("(1+r^{kappa})^-{m} exp(-r)"),
                Box::new(move |r: f64| (1.0 + r.powf(kappa)).powf(-m) * (-r).exp()),
            ));
        }
    }
    for gamma in [1.0, 2.0] {
        fam.push((format!("sech(r)^{gamma}"), Box::new(move |r: f64| r.cosh().recip().powf(gamma))));
    }
    for (w, l) in [(0.5, 3.0), (0.8, 0.3)] {
        fam.push((
            format!("{w}exp(-r^2)+{}exp(-(r/{l})^2)", 1.0 - w),
            Box::new(move |r: f64| w * (-r * r).exp() + (1.0 - w) * (-(r / l).powi(2)).exp()),
        ));
    }
    fam
}

fn ascend_ratio(k: &EnergyKernel, x0: Vec<f64>) -> (Vec<f64>, f64) {
    let g = k.grid();
    let n = g.len();
    let p = k.params();
    let d = k.exponents().delta_q;
    let nf = p.n as f64;
    let wg = g.mid_weights(nf - 2.0 - 2.0 * p.a);
    let wm = k.mass_weights().to_vec();
    let objective = |u: &[f64]| {
        let c = k.coefficients(u);
        let m = k.mass_sq(u);
        let [ga, gb, _] = k.coefficient_gradients(u);
        let f = -(c.b_q.ln() / p.q - d / 2.0 * c.a_grad.ln() - (1.0 - d) / 2.0 * m.ln());
        let mut grad: Vec<f64> = (0..n)
            .map(|i| {
                -(gb[i] / (p.q * c.b_q)
                    - d / 2.0 * ga[i] / c.a_grad
                    - (1.0 - d) * wm[i] * u[i] / m)
            })
            .collect();
        grad[n - 1] = 0.0;
        (f, grad)
    };
    let precond = |u: &[f64], gr: &[f64]| {
        let a = k.a_grad(u);
        let m = k.mass_sq(u);
        let shift: Vec<f64> = wm.iter().map(|w| (1.0 - d) * w / m).collect();
        let mut t = Tridiag::stiffness(g, &wg, d / a, &shift);
        t.pin(n - 1);
        let mut out = t.solve(gr);
        out[n - 1] = 0.0;
        out
    };
    let out = descent::minimize(
        x0,
        objective,
        precond,
        |u| {
            u[n - 1] = 0.0;
            for v in u.iter_mut() {
                *v = v.abs();
            }
        },
        &DescentOptions {
            max_iters: 3000,
            step0: 1.0,
            grad_tol: 1e-10,
            stall_tol: 1e-13,
        },
    );
    let ratio = interpolation_ratio(k, &out.x);
    (out.x, ratio)
}

/// Estimate of the best constant in the interpolation inequality over radial
/// profiles: family maximum refined by preconditioned ascent from the best
/// family members and seeded perturbations of the leader.
pub fn interp_constant_c(p: &ProblemParams, grid: &Arc<RadialGrid>, seed: u64) -> Result<CEstimate> {
    let k = EnergyKernel::new(grid.clone(), p);
    let n = grid.len();
    let mut scored: Vec<(String, Vec<f64>, f64)> = test_family()
        .into_iter()
        .map(|(name, f)| {
            let mut v: Vec<f64> = grid.nodes().iter().map(|&r| f(r)).collect();
            v[n - 1] = 0.0;
            let ratio = interpolation_ratio(&k, &v);
            (name, v, ratio)
        })
        .collect();
    scored.sort_by(|x, y| y.2.partial_cmp(&x.2).expect("finite ratios"));
    let family_lower_bound = scored[0].2;
    let family_best = scored[0].0.clone();

    let mut starts: Vec<Vec<f64>> = scored.iter().take(3).map(|s| s.1.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3 {
        let centers: Vec<(f64, f64)> = (0..4)
            .map(|_| (rng.random_range(-3.0..2.0), rng.random_range(-0.3..0.3)))
            .collect();
        let v: Vec<f64> = scored[0]
            .1
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let s = grid.s(i);
                let bump: f64 = centers.iter().map(|(c, h)| h * (-(s - c).powi(2)).exp()).sum();
                x * (1.0 + bump)
            })
            .collect();
        starts.push(v);
    }
    let ascent_values: Vec<f64> = starts.into_iter().map(|x0| ascend_ratio(&k, x0).1).collect();
    let best_ascent = ascent_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(CEstimate {
        value: best_ascent.max(family_lower_bound),
        family_lower_bound,
        family_best,
        ascent_values,
        lower_estimate: true,
    })
}

/// Quantities whose concentration rates are predicted for cutoff bubbles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    /// `|A(u_eps) - A(U)|`: size of the gradient-term correction. The cutoff
    /// raises `A`, so the signed difference is negative.
    GradSq,
    /// `C(U) - C(u_eps)`: correction of the critical term.
    CritNorm,
    QNorm,
    MassSq,
    /// `int r^{-2# b} u^{2#-1}` against the constant test function.
    CrossCrit,
    /// `int r^{-2a} u` against the constant test function.
    CrossMass,
    /// `B_{q_c} / mass^{2d/(N-2a+2b)}` at the mass-critical power.
    RatioQc,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::GradSq,
        Quantity::CritNorm,
        Quantity::QNorm,
        Quantity::MassSq,
        Quantity::CrossCrit,
        Quantity::CrossMass,
        Quantity::RatioQc,
    ];
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Quantity {
    type Err = CknError;
    fn from_str(s: &str) -> Result<Self> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| CknError::BadGridSpec(format!("unknown quantity {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsPrediction {
    pub quantity: Quantity,
    pub exponent: f64,
    /// Power of `|log eps|` multiplying the leading term.
    pub log_power: f64,
    pub case_label: String,
}

fn prediction(quantity: Quantity, exponent: f64, log_power: f64, label: &str) -> AsymptoticsPrediction {
    AsymptoticsPrediction {
        quantity,
        exponent,
        log_power,
        case_label: label.to_string(),
    }
}

fn side(disc: f64, allow_boundary: bool) -> Result<std::cmp::Ordering> {
    if disc.abs() <= BOUNDARY_TOL {
        if allow_boundary {
            Ok(std::cmp::Ordering::Equal)
        } else {
            Err(CknError::BranchBoundary { discriminant: disc })
        }
    } else if disc < 0.0 {
        Ok(std::cmp::Ordering::Less)
    } else {
        Ok(std::cmp::Ordering::Greater)
    }
}

/// `N / (N - 2(1+a) + b)`, the power where the `q`-norm of a bubble turns logarithmic.
pub fn q_star(n: u32, a: f64, b: f64) -> f64 {
    let nf = n as f64;
    nf / (nf - 2.0 * (1.0 + a) + b)
}

/// Predicted `eps`-power of each quantity, branch chosen from `(N, a, b, q)`.
///
/// Parameters within `1e-12` of a branch boundary raise `BranchBoundary`
/// unless `allow_boundary` selects the boundary branch.
pub fn predict_asymptotics(
    quantity: Quantity,
    p: &ProblemParams,
    allow_boundary: bool,
) -> Result<AsymptoticsPrediction> {
    use std::cmp::Ordering::*;
    let e = p.exponents();
    let nf = p.n as f64;
    let (a, b, d) = (p.a, p.b, e.d);
    let m2d = nf - 2.0 * d;
    let q_star = q_star(p.n, a, b);
    let a_cap = ((nf - 4.0) / 2.0).max(0.0);
    let q = quantity;
    Ok(match quantity {
        Quantity::GradSq => prediction(q, m2d / (2.0 * d), 0.0, "gradient_correction"),
        Quantity::CritNorm => prediction(q, nf / (2.0 * d), 0.0, "critical_correction"),
        Quantity::CrossCrit => prediction(q, m2d / (4.0 * d), 0.0, "cross_critical"),
        Quantity::CrossMass => prediction(q, m2d / (4.0 * d), 0.0, "cross_mass"),
        Quantity::QNorm => {
            let third = (2.0 * nf - nf * p.q + 2.0 * p.q * d) * m2d / (4.0 * d * (nf - 2.0 - 2.0 * a));
            match side(p.q - q_star, allow_boundary)? {
                Less => prediction(q, m2d / (4.0 * d), 0.0, "q_below_q_star"),
                Equal => prediction(q, third, 1.0, "q_at_q_star"),
                Greater => prediction(q, third, 0.0, "q_above_q_star"),
            }
        }
        Quantity::MassSq => {
            let small = m2d / (d * (nf - 2.0 - 2.0 * a));
            match side(a - a_cap, allow_boundary || a_cap == 0.0)? {
                Less => prediction(q, small, 0.0, "a_below_cap"),
                Equal if a_cap > 0.0 => prediction(q, small, 1.0, "a_at_cap"),
                _ => prediction(q, m2d / (2.0 * d), 0.0, "a_above_cap"),
            }
        }
        Quantity::RatioQc => {
            let den = nf - 2.0 * a + 2.0 * b;
            match side(e.q_c - q_star, allow_boundary)? {
                Greater => match side(a - a_cap, allow_boundary || a_cap == 0.0)? {
                    Less => prediction(q, 0.0, 0.0, "case1_a_below_cap"),
                    Equal if a_cap > 0.0 => prediction(q, 0.0, -2.0 * d / den, "case1_a_at_cap"),
                    _ => prediction(
                        q,
                        m2d * (4.0 + 2.0 * a - nf) / ((nf - 2.0 - 2.0 * a) * den),
                        0.0,
                        "case1_a_above_cap",
                    ),
                },
                ord => {
                    let ex = m2d * (nf - 4.0 + 6.0 * (b - a)) / (4.0 * d * den);
                    if ord == Equal {
                        prediction(q, ex, 1.0, "case2_boundary")
                    } else {
                        prediction(q, ex, 0.0, "case2_interior")
                    }
                }
            }
        }
    })
}

/// Sampling of concentrating bubbles: uniform in `s` from `left_pad` below the
/// core scale `eps^{1/alpha}` up to `r_far`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationGrid {
    pub ds: f64,
    pub left_pad: f64,
    pub r_far: f64,
    pub cutoff_r: f64,
}

impl Default for ConcentrationGrid {
    fn default() -> Self {
        ConcentrationGrid {
            ds: 0.01,
            left_pad: 12.0,
            r_far: 1e4,
            cutoff_r: DEFAULT_CUTOFF_R,
        }
    }
}

impl ConcentrationGrid {
    pub fn build(&self, dim: u32, e: &Exponents, eps: f64) -> Result<Arc<RadialGrid>> {
        let s_min = eps.ln() / e.alpha_bubble - self.left_pad;
        let s_max = self.r_far.ln();
        let n = ((s_max - s_min) / self.ds).ceil() as usize + 1;
        make_grid(s_min, s_max, n, dim)
    }
}

/// Value of `quantity` for the cutoff bubble at `eps`.
pub fn asymptotic_quantity(
    quantity: Quantity,
    p: &ProblemParams,
    eps: f64,
    cg: &ConcentrationGrid,
) -> Result<f64> {
    let p = if quantity == Quantity::RatioQc {
        p.at_mass_critical()?
    } else {
        *p
    };
    let e = p.exponents();
    let grid = cg.build(p.n, &e, eps)?;
    let spec = BubbleSpec::new(eps, cg.cutoff_r, e)?;
    let big_u = bubble(&spec, &grid);
    let small_u = cutoff_bubble(&spec, &grid)?;
    let k = EnergyKernel::new(grid.clone(), &p);
    let nf = p.n as f64;
    let (uu, cu) = (big_u.values(), small_u.values());
    let n = grid.len();
    let ts = e.two_sharp;
    let (rate_a, rate_c) = tail_rates(&p, &e);
    let value = match quantity {
        Quantity::GradSq => {
            let minus: Vec<f64> = uu.iter().zip(cu).map(|(x, y)| x - y).collect();
            let plus: Vec<f64> = uu.iter().zip(cu).map(|(x, y)| x + y).collect();
            let dm = grid.diff_mid(&minus);
            let dp = grid.diff_mid(&plus);
            let wg = grid.mid_weights(nf - 2.0 - 2.0 * p.a);
            let body: f64 = (0..n - 1).map(|j| wg[j] * dm[j] * dp[j]).sum();
            (body + wg[n - 2] / grid.ds() * dm[n - 2] * dp[n - 2] / rate_a).abs()
        }
        Quantity::CritNorm => {
            let w = grid.node_weights(nf - p.b * ts);
            let body: f64 = (0..n)
                .map(|i| {
                    let z = cutoff(grid.nodes()[i], cg.cutoff_r);
                    w[i] * (1.0 - z.powf(ts)) * uu[i].powf(ts)
                })
                .sum();
            body + grid.omega() * ((nf - p.b * ts) * grid.s_max()).exp() * uu[n - 1].powf(ts)
                / rate_c
        }
        Quantity::QNorm => k.coefficients(cu).b_q,
        Quantity::MassSq => k.mass_sq(cu),
        Quantity::CrossCrit => grid
            .node_weights(nf - p.b * ts)
            .iter()
            .zip(cu)
            .map(|(w, v)| w * v.powf(ts - 1.0))
            .sum(),
        Quantity::CrossMass => k.mass_weights().iter().zip(cu).map(|(w, v)| w * v).sum(),
        Quantity::RatioQc => {
            let den = nf - 2.0 * p.a + 2.0 * p.b;
            k.coefficients(cu).b_q / k.mass_sq(cu).powf(2.0 * e.d / den)
        }
    };
    Ok(value)
}

/// Ordinary least squares `y = c + slope x`: `(slope, intercept, r2, rss)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    (slope, icpt, r2, rss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub quantity: Quantity,
    pub case_label: String,
    pub predicted_exponent: f64,
    pub predicted_log: f64,
    pub fitted_slope: f64,
    pub r2: f64,
    pub eps_list: Vec<f64>,
    pub values: Vec<f64>,
    /// Plain log-log fit, ignoring any predicted log factor.
    pub plain_slope: f64,
    pub plain_rss: f64,
    /// Residual of the fit with the predicted log factor removed.
    pub log_rss: Option<f64>,
}

impl AsymptoticsReport {
    /// Whether removing the predicted log factor lowered the residual.
    pub fn log_regressor_improves(&self) -> Option<bool> {
        self.log_rss.map(|r| r < self.plain_rss)
    }
}

/// `n` geometric points from `lo` to `hi`.
pub fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Default `eps` sweep: 8 geometric points on `[1e-4, 1e-1]`.
pub fn default_eps_list() -> Vec<f64> {
    geometric(1e-4, 1e-1, 8)
}

pub fn measure_asymptotics(
    quantity: Quantity,
    p: &ProblemParams,
    eps_list: &[f64],
    cg: &ConcentrationGrid,
) -> Result<AsymptoticsReport> {
    if eps_list.len() < 6 || eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(CknError::BadGridSpec(
            "eps list needs at least 6 values in (0, 1)".into(),
        ));
    }
    let ratio = eps_list[1] / eps_list[0];
    if eps_list
        .windows(2)
        .any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-6)
    {
        return Err(CknError::BadGridSpec("eps list must be geometric".into()));
    }
    if 2.0 * cg.cutoff_r >= 0.5 * cg.r_far {
        return Err(CknError::CutoffOutsideWindow {
            support: 2.0 * cg.cutoff_r,
            r_max: cg.r_far,
        });
    }
    let pred_p = if quantity == Quantity::RatioQc {
        p.at_mass_critical()?
    } else {
        *p
    };
    let pred = predict_asymptotics(quantity, &pred_p, true)?;
    let values = eps_list
        .par_iter()
        .map(|&eps| asymptotic_quantity(quantity, p, eps, cg))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(CknError::DegenerateProfile(format!(
            "{quantity} value {v} is not positive"
        )));
    }
    let x: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (plain_slope, _, plain_r2, plain_rss) = linear_fit(&x, &y);
    let (slope, r2, log_rss) = if pred.log_power != 0.0 {
        let yl: Vec<f64> = y
            .iter()
            .zip(&x)
            .map(|(yv, xv)| yv - pred.log_power * xv.abs().ln())
            .collect();
        let (s, _, r2, rss) = linear_fit(&x, &yl);
        (s, r2, Some(rss))
    } else {
        (plain_slope, plain_r2, None)
    };
    if r2 < 0.99 {
        return Err(CknError::PoorFit { r2 });
    }
    Ok(AsymptoticsReport {
        quantity,
        case_label: pred.case_label,
        predicted_exponent: pred.exponent,
        predicted_log: pred.log_power,
        fitted_slope: slope,
        r2,
        eps_list: eps_list.to_vec(),
        values,
        plain_slope,
        plain_rss,
        log_rss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Case1,
    Case2Boundary,
    Case2Interior,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionClass {
    pub region: Region,
    /// `b - a`
    pub l1: f64,
    /// `b - a - 1`
    pub l2: f64,
    /// `q_c - N/(N - 2(1+a) + b)`
    pub l3: f64,
    pub q_c: f64,
}

pub fn classify_region(n: u32, a: f64, b: f64) -> Result<RegionClass> {
    let nf = n as f64;
    if n < 3 || !(a > 0.0 && a < (nf - 2.0) / 2.0) || !(b > a && b < a + 1.0) {
        return Err(CknError::OutsideStrip { a, b });
    }
    let q_c = (4.0 + 2.0 * nf) / (nf - 2.0 * a + 2.0 * b);
    let l3 = q_c - q_star(n, a, b);
    let region = if l3.abs() <= BOUNDARY_TOL {
        Region::Case2Boundary
    } else if l3 > 0.0 {
        Region::Case1
    } else {
        Region::Case2Interior
    };
    Ok(RegionClass {
        region,
        l1: b - a,
        l2: b - a - 1.0,
        l3,
        q_c,
    })
}

/// Left end of the `a`-projection of the second case: `(N^2 - 8)/(2(N + 2))`.
pub fn case2_projection_bound(n: u32) -> f64 {
    let nf = n as f64;
    (nf * nf - 8.0) / (2.0 * (nf + 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub a: f64,
    pub b: f64,
    pub class: RegionClass,
}

/// Cell-midpoint raster of the strip: `resolution` values of `a` in
/// `(0, (N-2)/2)` times `resolution` values of `b - a` in `(0, 1)`.
pub fn region_map(n: u32, resolution: usize) -> Result<Vec<RegionCell>> {
    if n < 3 || resolution == 0 {
        return Err(CknError::BadGridSpec(format!(
            "region map needs N >= 3 and a positive resolution, got N = {n}, resolution = {resolution}"
        )));
    }
    let a_hi = (n as f64 - 2.0) / 2.0;
    let res = resolution as f64;
    (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / resolution, k % resolution);
            let a = a_hi * (i as f64 + 0.5) / res;
            let b = a + (j as f64 + 0.5) / res;
            classify_region(n, a, b).map(|class| RegionCell { a, b, class })
        })
        .collect()
}

pub fn write_region_csv<W: Write>(cells: &[RegionCell], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["a", "b", "case", "q_c", "L3_discriminant"])?;
    for c in cells {
        wr.write_record([
            fmt_g17(c.a),
            fmt_g17(c.b),
            c.class.region.to_string(),
            fmt_g17(c.class.q_c),
            fmt_g17(c.class.l3),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Smallest `a` whose raster column contains a second-case cell.
pub fn case2_min_a(cells: &[RegionCell]) -> Option<f64> {
    cells
        .iter()
        .filter(|c| c.class.region != Region::Case1)
        .map(|c| c.a)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |x| x.min(a))))
}

/// The canonical parameter set `N = 3, a = 1/4, b = 1/2, q = 5/2, rho = 1`.
pub fn canonical(beta: f64) -> Result<ProblemParams> {
    validate(3, 0.25, 0.5, 2.5, beta, 1.0)
}
