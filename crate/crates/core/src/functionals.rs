//! Mass, energy, Pohozaev functional, dilation, fiber coefficients and the
//! Euler-Lagrange residual on discretized profiles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::descent::Banded;
use crate::error::{CknError, Result};
use crate::grid::{resample, weighted_norm, RadialFunction, RadialGrid};
use crate::params::{Exponents, ProblemParams};

/// Nodes excluded from the residual at each window end.
pub const EL_EDGE: usize = 4;

/// The three norms entering the fiber map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberCoefficients {
    #[serde(rename = "A")]
    pub a_grad: f64,
    #[serde(rename = "B")]
    pub b_q: f64,
    #[serde(rename = "C")]
    pub c_crit: f64,
}

impl FiberCoefficients {
    pub fn energy(&self, p: &ProblemParams, e: &Exponents) -> f64 {
        0.5 * self.a_grad - p.beta / p.q * self.b_q - self.c_crit / e.two_sharp
    }

    pub fn pohozaev(&self, p: &ProblemParams, e: &Exponents) -> f64 {
        self.a_grad - p.beta * e.delta_q * self.b_q - self.c_crit
    }

    /// Coefficients of `t * u` from the exact scaling laws.
    pub fn dilated(&self, t: f64, p: &ProblemParams, e: &Exponents) -> Self {
        FiberCoefficients {
            a_grad: (2.0 * t).exp() * self.a_grad,
            b_q: (p.q * e.delta_q * t).exp() * self.b_q,
            c_crit: (e.two_sharp * t).exp() * self.c_crit,
        }
    }
}

/// Outcome of a constrained solve.
///
/// The profile itself is not serialized; the CLI writes it as CSV and records
/// the path in `profile_path`.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    #[serde(skip)]
    pub profile: RadialFunction,
    pub profile_path: Option<String>,
    pub branch: String,
    pub lambda: f64,
    pub lambda_pohozaev: f64,
    pub energy: f64,
    pub mass_sq: f64,
    pub pohozaev: f64,
    pub a_grad: f64,
    pub grad_norm: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy never increased across accepted iterations.
    pub monotone: bool,
    /// `|u(r_max)| r_max^{(N-2d)/2}` exceeded `1e-10`.
    pub window_warning: bool,
    #[serde(skip)]
    pub energy_trace: Vec<f64>,
}

/// Precomputed quadrature weights for one `(grid, params)` pair.
#[derive(Debug, Clone)]
pub struct EnergyKernel {
    grid: Arc<RadialGrid>,
    params: ProblemParams,
    exps: Exponents,
    w_mass: Vec<f64>,
    w_q: Vec<f64>,
    w_crit: Vec<f64>,
    w_grad: Vec<f64>,
}

#[inline]
fn signed_pow(u: f64, e: f64) -> f64 {
    u.signum() * u.abs().powf(e)
}

impl EnergyKernel {
    pub fn new(grid: Arc<RadialGrid>, p: &ProblemParams) -> Self {
        let e = p.exponents();
        let nf = grid.dim() as f64;
        EnergyKernel {
            w_mass: grid.node_weights(nf - 2.0 * p.a),
            w_q: grid.node_weights(nf - p.b * p.q),
            w_crit: grid.node_weights(nf - p.b * e.two_sharp),
            w_grad: grid.mid_weights(nf - 2.0 - 2.0 * p.a),
            grid,
            params: *p,
            exps: e,
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn params(&self) -> &ProblemParams {
        &self.params
    }
    pub fn exponents(&self) -> &Exponents {
        &self.exps
    }
    pub fn mass_weights(&self) -> &[f64] {
        &self.w_mass
    }

    pub fn mass_sq(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.w_mass).map(|(v, w)| w * v * v).sum()
    }

    pub fn a_grad(&self, u: &[f64]) -> f64 {
        let du = self.grid.diff_mid(u);
        du.iter().zip(&self.w_grad).map(|(d, w)| w * d * d).sum()
    }

    pub fn coefficients(&self, u: &[f64]) -> FiberCoefficients {
        let (q, ts) = (self.params.q, self.exps.two_sharp);
        let mut b = 0.0;
        let mut c = 0.0;
        for (i, v) in u.iter().enumerate() {
            let a = v.abs();
            if a > 0.0 {
                b += self.w_q[i] * a.powf(q);
                c += self.w_crit[i] * a.powf(ts);
            }
        }
        FiberCoefficients {
            a_grad: self.a_grad(u),
            b_q: b,
            c_crit: c,
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.coefficients(u).energy(&self.params, &self.exps)
    }

    /// Gradient of the discrete energy with respect to the nodal values.
    pub fn energy_gradient(&self, u: &[f64]) -> Vec<f64> {
        let du = self.grid.diff_mid(u);
        let flux: Vec<f64> = du.iter().zip(&self.w_grad).map(|(d, w)| w * d).collect();
        let mut g = self.grid.diff_mid_transpose(&flux);
        let (q, ts, beta) = (self.params.q, self.exps.two_sharp, self.params.beta);
        for (i, gi) in g.iter_mut().enumerate() {
            let v = u[i];
            *gi -= beta * self.w_q[i] * signed_pow(v, q - 1.0)
                + self.w_crit[i] * signed_pow(v, ts - 1.0);
        }
        g
    }

    /// Gradient of the three coefficients `(A, B, C)` with respect to nodal values.
    pub fn coefficient_gradients(&self, u: &[f64]) -> [Vec<f64>; 3] {
        let du = self.grid.diff_mid(u);
        let flux: Vec<f64> = du.iter().zip(&self.w_grad).map(|(d, w)| 2.0 * w * d).collect();
        let ga = self.grid.diff_mid_transpose(&flux);
        let (q, ts) = (self.params.q, self.exps.two_sharp);
        let gb = u
            .iter()
            .zip(&self.w_q)
            .map(|(v, w)| q * w * signed_pow(*v, q - 1.0))
            .collect();
        let gc = u
            .iter()
            .zip(&self.w_crit)
            .map(|(v, w)| ts * w * signed_pow(*v, ts - 1.0))
            .collect();
        [ga, gb, gc]
    }

    /// Jacobian of `energy_gradient(u) - lambda * W_mass u`: the exact
    /// discrete Hessian shifted by the multiplier, bandwidth 3.
    pub(crate) fn el_jacobian(&self, u: &[f64], lambda: f64) -> Banded {
        let g = &self.grid;
        let n = g.len();
        let mut m = Banded::zeros(n, 3, 3);
        for (j, w) in self.w_grad.iter().enumerate() {
            let (start, c) = g.diff_mid_row(j);
            for (x, cx) in c.iter().enumerate() {
                for (y, cy) in c.iter().enumerate() {
                    m.add(start + x, start + y, w * cx * cy);
                }
            }
        }
        let (q, ts, beta) = (self.params.q, self.exps.two_sharp, self.params.beta);
        for (i, v) in u.iter().enumerate() {
            let v = v.abs();
            let pot = beta * (q - 1.0) * self.w_q[i] * v.powf(q - 2.0)
                + (ts - 1.0) * self.w_crit[i] * v.powf(ts - 2.0)
                + lambda * self.w_mass[i];
            m.add(i, i, -pot);
        }
        m
    }

    /// Terms of the radial strong form, each multiplied by `r^N` (i.e. written in `s`).
    pub fn strong_form(&self, u: &[f64]) -> StrongForm {
        let g = &self.grid;
        let n = g.len();
        let nf = g.dim() as f64;
        let (p, e) = (&self.params, &self.exps);
        let du = g.diff_mid(u);
        let flux: Vec<f64> = du
            .iter()
            .zip(g.midpoints())
            .map(|(d, r)| r.powf(nf - 2.0 - 2.0 * p.a) * d)
            .collect();
        let div = g.div_nodes(&flux);
        let mut sf = StrongForm {
            lhs: vec![0.0; n],
            mass_term: vec![0.0; n],
            q_term: vec![0.0; n],
            crit_term: vec![0.0; n],
            weight: vec![0.0; n],
        };
        for i in EL_EDGE..n - EL_EDGE {
            let r = g.nodes()[i];
            let s = g.s(i);
            let v = u[i];
            sf.lhs[i] = -div[i];
            sf.mass_term[i] = ((nf - 2.0 * p.a) * s).exp() * v;
            sf.q_term[i] = ((nf - p.b * p.q) * s).exp() * signed_pow(v, p.q - 1.0);
            sf.crit_term[i] = ((nf - p.b * e.two_sharp) * s).exp() * signed_pow(v, e.two_sharp - 1.0);
            sf.weight[i] = g.ds() / r;
        }
        sf
    }
}

/// Discrete strong form `lhs = lambda * mass_term + beta * q_term + crit_term`.
///
/// Dividing each entry by `r` gives the divergence form
/// `-(r^{N-1-2a} u')' = r^{N-1}[...]`; `weight` is `ds / r` so that
/// `sum weight * x^2` is its squared `L^2(dr)` norm. Edge nodes carry zero weight.
#[derive(Debug, Clone)]
pub struct StrongForm {
    pub lhs: Vec<f64>,
    pub mass_term: Vec<f64>,
    pub q_term: Vec<f64>,
    pub crit_term: Vec<f64>,
    pub weight: Vec<f64>,
}

impl StrongForm {
    pub fn rhs(&self, lambda: f64, beta: f64) -> Vec<f64> {
        (0..self.lhs.len())
            .map(|i| lambda * self.mass_term[i] + beta * self.q_term[i] + self.crit_term[i])
            .collect()
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.weight)
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn mass_sq(u: &RadialFunction, a: f64) -> f64 {
    weighted_norm(u, 2.0, a)
        .expect("N - 2a > 0 for admissible a")
        .powi(2)
}

pub fn fiber_coefficients(u: &RadialFunction, p: &ProblemParams) -> FiberCoefficients {
    EnergyKernel::new(u.grid().clone(), p).coefficients(u.values())
}

/// `E = A/2 - (beta/q) B - C/2#`.
pub fn energy(u: &RadialFunction, p: &ProblemParams) -> f64 {
    fiber_coefficients(u, p).energy(p, &p.exponents())
}

/// `P = A - beta delta_q B - C`.
pub fn pohozaev(u: &RadialFunction, p: &ProblemParams) -> f64 {
    fiber_coefficients(u, p).pohozaev(p, &p.exponents())
}

/// Mass-preserving dilation `r -> e^{(N-2a)t/2} u(e^t r)`.
pub fn dilate(u: &RadialFunction, t: f64, p: &ProblemParams) -> Result<RadialFunction> {
    let amp = ((p.n as f64 - 2.0 * p.a) / 2.0 * t).exp();
    Ok(resample(u, t)?.scaled(amp))
}

/// Normalized residual of the Euler-Lagrange equation with multiplier `lambda`.
pub fn el_residual(u: &RadialFunction, lambda: f64, p: &ProblemParams) -> Result<f64> {
    if u.is_zero() {
        return Ok(0.0);
    }
    let k = EnergyKernel::new(u.grid().clone(), p);
    el_residual_with(&k, u.values(), lambda)
}

pub(crate) fn el_residual_with(k: &EnergyKernel, u: &[f64], lambda: f64) -> Result<f64> {
    let sf = k.strong_form(u);
    let rhs = sf.rhs(lambda, k.params().beta);
    let den = sf.norm(&rhs);
    if !(den > 1e-250) || !den.is_finite() {
        return Err(CknError::DegenerateProfile(format!(
            "residual normalization {den:e} underflows"
        )));
    }
    let res: Vec<f64> = sf.lhs.iter().zip(&rhs).map(|(l, r)| l - r).collect();
    Ok(sf.norm(&res) / den)
}

/// The two multiplier formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair {
    pub lambda_rayleigh: f64,
    pub lambda_pohozaev: f64,
}

/// `(A - beta B - C)/mass` and `beta (delta_q - 1) B / rho^2`.
pub fn lambda_identity(u: &RadialFunction, p: &ProblemParams) -> Result<LambdaPair> {
    if u.is_zero() {
        return Err(CknError::ZeroProfile);
    }
    let k = EnergyKernel::new(u.grid().clone(), p);
    Ok(lambda_pair(&k, u.values()))
}

pub(crate) fn lambda_pair(k: &EnergyKernel, u: &[f64]) -> LambdaPair {
    let p = k.params();
    let c = k.coefficients(u);
    let m = k.mass_sq(u);
    LambdaPair {
        lambda_rayleigh: (c.a_grad - p.beta * c.b_q - c.c_crit) / m,
        lambda_pohozaev: p.beta * (k.exponents().delta_q - 1.0) * c.b_q / (p.rho * p.rho),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, DEFAULT_S_MAX, DEFAULT_S_MIN};
    use crate::params::validate;
    use approx::assert_relative_eq;

    fn p0() -> ProblemParams {
        validate(3, 0.25, 0.5, 2.5, 0.1, 1.0).unwrap()
    }

    fn gauss() -> RadialFunction {
        let g = make_grid(DEFAULT_S_MIN, DEFAULT_S_MAX, 2048, 3).unwrap();
        RadialFunction::from_fn(g, |r| (-r * r).exp()).unwrap()
    }

    fn gauss_fine() -> RadialFunction {
        let g = make_grid(DEFAULT_S_MIN, DEFAULT_S_MAX, 8192, 3).unwrap();
        RadialFunction::from_fn(g, |r| (-r * r).exp()).unwrap()
    }

    #[test]
    fn zero_profile_conventions() {
        let g = make_grid(-5.0, 2.0, 128, 3).unwrap();
        let z = RadialFunction::zeros(g);
        let c = fiber_coefficients(&z, &p0());
        assert_eq!((c.a_grad, c.b_q, c.c_crit), (0.0, 0.0, 0.0));
        assert_eq!(energy(&z, &p0()), 0.0);
        assert_eq!(el_residual(&z, -1.0, &p0()).unwrap(), 0.0);
        assert!(matches!(lambda_identity(&z, &p0()), Err(CknError::ZeroProfile)));
    }

    #[test]
    fn mass_matches_gamma_oracle() {
        assert_relative_eq!(mass_sq(&gauss(), 0.25), 2.3946, max_relative = 1e-4);
    }

    #[test]
    fn energy_is_linear_in_beta() {
        let u = gauss();
        let p = p0();
        let p2 = p.with_beta(0.7).unwrap();
        let b = fiber_coefficients(&u, &p).b_q;
        assert_relative_eq!(
            energy(&u, &p) - (0.7 - 0.1) / p.q * b,
            energy(&u, &p2),
            max_relative = 1e-13
        );
        assert!(energy(&u, &p2) < energy(&u, &p));
    }

    #[test]
    fn pohozaev_matches_fiber_derivative() {
        let u = gauss_fine();
        let p = p0();
        let e = p.exponents();
        let c = fiber_coefficients(&u, &p);
        for t in [-1.5, -0.5, 0.7, 1.8] {
            let direct = pohozaev(&dilate(&u, t, &p).unwrap(), &p);
            let formula = (2.0 * t).exp() * c.a_grad
                - p.beta * e.delta_q * (p.q * e.delta_q * t).exp() * c.b_q
                - (e.two_sharp * t).exp() * c.c_crit;
            assert_relative_eq!(direct, formula, max_relative = 1e-8);
        }
    }

    #[test]
    fn dilation_preserves_mass_and_scales_terms() {
        let u = gauss_fine();
        let p = p0();
        let e = p.exponents();
        let c0 = fiber_coefficients(&u, &p);
        let m0 = mass_sq(&u, p.a);
        assert_eq!(dilate(&u, 0.0, &p).unwrap(), u);
        for t in [-2.0, -1.0, 1.0, 2.0] {
            let v = dilate(&u, t, &p).unwrap();
            assert_relative_eq!(mass_sq(&v, p.a), m0, max_relative = 1e-8);
            let c = fiber_coefficients(&v, &p);
            let ex = c0.dilated(t, &p, &e);
            assert_relative_eq!(c.a_grad, ex.a_grad, max_relative = 1e-6);
            assert_relative_eq!(c.b_q, ex.b_q, max_relative = 1e-6);
            assert_relative_eq!(c.c_crit, ex.c_crit, max_relative = 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let u = gauss();
        let p = p0();
        let k = EnergyKernel::new(u.grid().clone(), &p);
        let g = k.energy_gradient(u.values());
        let n = u.values().len();
        let dir: Vec<f64> = (0..n)
            .map(|i| (-(u.grid().nodes()[i] - 0.7).powi(2)).exp() * (1.0 + 0.3 * (i as f64).sin()))
            .collect();
        let h = 1e-5;
        let plus: Vec<f64> = u.values().iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.values().iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fd = (k.energy(&plus) - k.energy(&minus)) / (2.0 * h);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert_relative_eq!(fd, an, max_relative = 1e-4);
    }

    #[test]
    fn jacobian_matches_gradient_differences() {
        let u = gauss();
        let p = p0();
        let k = EnergyKernel::new(u.grid().clone(), &p);
        let lambda = -0.3;
        let n = u.values().len();
        let dir: Vec<f64> = (0..n)
            .map(|i| (-(u.grid().nodes()[i] - 0.7).powi(2)).exp() * (1.0 + 0.3 * (i as f64).sin()))
            .collect();
        let field = |v: &[f64]| -> Vec<f64> {
            let g = k.energy_gradient(v);
            g.iter()
                .zip(k.mass_weights())
                .zip(v)
                .map(|((gi, w), x)| gi - lambda * w * x)
                .collect()
        };
        let h = 1e-6;
        let plus: Vec<f64> = u.values().iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.values().iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let (fp, fm) = (field(&plus), field(&minus));
        let jd = k.el_jacobian(u.values(), lambda).apply(&dir);
        let scale = jd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((fd - jd[i]).abs() <= 1e-6 * scale, "node {i}: {fd} vs {}", jd[i]);
        }
    }

    #[test]
    fn lambda_pohozaev_sign() {
        let u = gauss();
        let l = lambda_identity(&u, &p0()).unwrap();
        assert!(l.lambda_pohozaev < 0.0);
        let l0 = lambda_identity(&u, &p0().with_beta(0.0).unwrap()).unwrap();
        assert_eq!(l0.lambda_pohozaev, 0.0);
    }

    #[test]
    fn gaussian_is_not_a_solution() {
        let u = gauss();
        let r = el_residual(&u, -1.0, &p0()).unwrap();
        assert!(r > 1e-2);
    }
}
