//! Log-radial grid, radial profiles, weighted quadrature and differentiation.
//!
//! Nodes are `r_i = exp(s_min + i ds)`. Integrals over `(0, inf)` are taken in `s`
//! with the Jacobian `dr = r ds`. Point integrals use the trapezoid rule. The
//! gradient term is evaluated on the staggered midpoints `s_{i+1/2}` with a
//! fourth-order centered difference, which (unlike a collocated centered
//! difference) also sees odd-even oscillations.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{CknError, Result};

pub const MIN_NODES: usize = 64;
pub const DEFAULT_S_MIN: f64 = -13.815510557964274; // ln 1e-6
pub const DEFAULT_S_MAX: f64 = 6.907755278982137; // ln 1e3
pub const DEFAULT_NODES: usize = 2048;

/// Serializable grid description `{"s_min","s_max","n"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            s_min: DEFAULT_S_MIN,
            s_max: DEFAULT_S_MAX,
            n: DEFAULT_NODES,
        }
    }
}

impl GridSpec {
    pub fn build(&self, dim: u32) -> Result<Arc<RadialGrid>> {
        make_grid(self.s_min, self.s_max, self.n, dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    s_min: f64,
    s_max: f64,
    n: usize,
    dim: u32,
    ds: f64,
    r: Vec<f64>,
    r_mid: Vec<f64>,
    omega: f64,
}

/// Surface area of the unit sphere in `R^N`.
pub fn sphere_area(dim: u32) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

pub fn make_grid(s_min: f64, s_max: f64, n: usize, dim: u32) -> Result<Arc<RadialGrid>> {
    if !(s_min.is_finite() && s_max.is_finite() && s_min < s_max) {
        return Err(CknError::BadGridSpec(format!(
            "need finite s_min < s_max, got [{s_min}, {s_max}]"
        )));
    }
    if n < MIN_NODES {
        return Err(CknError::BadGridSpec(format!(
            "need at least {MIN_NODES} nodes, got {n}"
        )));
    }
    if dim < 1 {
        return Err(CknError::BadGridSpec("dimension must be positive".into()));
    }
    let ds = (s_max - s_min) / (n - 1) as f64;
    let r = (0..n).map(|i| (s_min + i as f64 * ds).exp()).collect();
    let r_mid = (0..n - 1)
        .map(|i| (s_min + (i as f64 + 0.5) * ds).exp())
        .collect();
    Ok(Arc::new(RadialGrid {
        s_min,
        s_max,
        n,
        dim,
        ds,
        r,
        r_mid,
        omega: sphere_area(dim),
    }))
}

impl RadialGrid {
    pub fn s_min(&self) -> f64 {
        self.s_min
    }
    pub fn s_max(&self) -> f64 {
        self.s_max
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn dim(&self) -> u32 {
        self.dim
    }
    pub fn ds(&self) -> f64 {
        self.ds
    }
    pub fn nodes(&self) -> &[f64] {
        &self.r
    }
    pub fn midpoints(&self) -> &[f64] {
        &self.r_mid
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn r_min(&self) -> f64 {
        self.r[0]
    }
    pub fn r_max(&self) -> f64 {
        self.r[self.n - 1]
    }
    pub fn s(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.ds
    }
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            s_min: self.s_min,
            s_max: self.s_max,
            n: self.n,
        }
    }

    /// Trapezoid weight of node `i` in `s`.
    pub fn trap_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.ds
        } else {
            self.ds
        }
    }

    /// `omega * w_i * r_i^k`: node weights for `omega * int r^{k-1} f dr`.
    ///
    /// For `k > 0` the first weight also carries `r_min^k / k`, the integral
    /// over `(0, r_min)` of a profile held at its first value.
    pub fn node_weights(&self, k: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.omega * self.quad_weight(i, k))
            .collect()
    }

    /// Trapezoid weight times `r_i^k`, with the origin tail folded into node 0.
    pub fn quad_weight(&self, i: usize, k: f64) -> f64 {
        let w = self.trap_weight(i) * (k * self.s(i)).exp();
        if i == 0 && k > 0.0 {
            w + (k * self.s_min).exp() / k
        } else {
            w
        }
    }

    /// `omega * ds * r_{j+1/2}^k`: midpoint weights for the gradient term.
    pub fn mid_weights(&self, k: f64) -> Vec<f64> {
        (0..self.n - 1)
            .map(|j| self.omega * self.ds * (k * (self.s_min + (j as f64 + 0.5) * self.ds)).exp())
            .collect()
    }

    /// Staggered derivative `du/ds` at the `n - 1` midpoints.
    pub fn diff_mid(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h = 24.0 * self.ds;
        let mut out = vec![0.0; n - 1];
        out[0] = (-23.0 * u[0] + 21.0 * u[1] + 3.0 * u[2] - u[3]) / h;
        for j in 1..n - 2 {
            out[j] = (27.0 * (u[j + 1] - u[j]) - (u[j + 2] - u[j - 1])) / h;
        }
        out[n - 2] = (23.0 * u[n - 1] - 21.0 * u[n - 2] - 3.0 * u[n - 3] + u[n - 4]) / h;
        out
    }

    /// Row `j` of [`diff_mid`](Self::diff_mid) as its first node and four coefficients.
    pub(crate) fn diff_mid_row(&self, j: usize) -> (usize, [f64; 4]) {
        let n = self.n;
        let h = 24.0 * self.ds;
        let (start, c) = if j == 0 {
            (0, [-23.0, 21.0, 3.0, -1.0])
        } else if j == n - 2 {
            (n - 4, [1.0, -3.0, -21.0, 23.0])
        } else {
            (j - 1, [1.0, -27.0, 27.0, -1.0])
        };
        (start, c.map(|x| x / h))
    }

    /// Transpose of [`diff_mid`](Self::diff_mid): maps midpoint values to nodes.
    pub fn diff_mid_transpose(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h = 24.0 * self.ds;
        let mut out = vec![0.0; n];
        out[0] += -23.0 * g[0] / h;
        out[1] += 21.0 * g[0] / h;
        out[2] += 3.0 * g[0] / h;
        out[3] += -g[0] / h;
        for j in 1..n - 2 {
            let c = g[j] / h;
            out[j + 1] += 27.0 * c;
            out[j] -= 27.0 * c;
            out[j + 2] -= c;
            out[j - 1] += c;
        }
        let c = g[n - 2] / h;
        out[n - 1] += 23.0 * c;
        out[n - 2] -= 21.0 * c;
        out[n - 3] -= 3.0 * c;
        out[n - 4] += c;
        out
    }

    /// Divergence `dF/ds` at nodes `2..n-3` from midpoint fluxes; zero elsewhere.
    pub fn div_nodes(&self, flux: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h = 24.0 * self.ds;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate().take(n - 2).skip(2) {
            *o = (27.0 * (flux[i] - flux[i - 1]) - (flux[i + 1] - flux[i - 2])) / h;
        }
        out
    }
}

/// Values of a radial profile on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CknError::BadGridSpec(format!(
                "profile has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CknError::DegenerateProfile(format!(
                "non-finite value at node {i}"
            )));
        }
        Ok(RadialFunction { grid, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        RadialFunction {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        RadialFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Write as CSV with header `r,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "u"])?;
        for (r, u) in self.grid.nodes().iter().zip(&self.values) {
            wr.write_record([fmt_g17(*r), fmt_g17(*u)])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Read an `r,u` CSV; the grid is reconstructed from the radii, which must be
    /// uniform in `log r`.
    pub fn read_csv<R: Read>(rd: R, dim: u32) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(rd);
        let mut rs = Vec::new();
        let mut us = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| CknError::BadGridSpec(format!("bad CSV field in {rec:?}")))
            };
            rs.push(parse(0)?);
            us.push(parse(1)?);
        }
        if rs.len() < MIN_NODES || rs.iter().any(|&r| r <= 0.0) {
            return Err(CknError::BadGridSpec(
                "profile CSV needs at least 64 positive radii".into(),
            ));
        }
        let n = rs.len();
        let grid = make_grid(rs[0].ln(), rs[n - 1].ln(), n, dim)?;
        for (i, &r) in rs.iter().enumerate() {
            if ((grid.nodes()[i] - r) / r).abs() > 1e-9 {
                return Err(CknError::BadGridSpec(format!(
                    "radius {r} at row {i} is not on a log-uniform grid"
                )));
            }
        }
        RadialFunction::new(grid, us)
    }

    pub fn load_csv(path: impl AsRef<Path>, dim: u32) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), dim)
    }
}

/// 17 significant digits, shortest exact decimal when possible.
pub fn fmt_g17(x: f64) -> String {
    crate::json::format_f64(x)
}

/// `omega * int r^{N-1-wq} |u|^q dr` without the outer root.
pub fn weighted_power(u: &RadialFunction, q: f64, w: f64) -> Result<f64> {
    let g = u.grid();
    let k = g.dim() as f64 - w * q;
    if k <= 0.0 {
        return Err(CknError::NonIntegrable { exponent: k - 1.0 });
    }
    let sum: f64 = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| g.quad_weight(i, k) * v.abs().powf(q))
        .sum();
    Ok(g.omega() * sum)
}

/// `(omega * int r^{N-1-wq} |u|^q dr)^{1/q}`.
pub fn weighted_norm(u: &RadialFunction, exponent_q: f64, weight_w: f64) -> Result<f64> {
    if !(exponent_q >= 1.0) {
        return Err(CknError::BadGridSpec(format!(
            "norm exponent {exponent_q} must be at least 1"
        )));
    }
    Ok(weighted_power(u, exponent_q, weight_w)?.powf(1.0 / exponent_q))
}

/// `omega * int r^{N-1-2a} u'(r)^2 dr`.
pub fn dirichlet_energy(u: &RadialFunction, a: f64) -> f64 {
    let g = u.grid();
    let du = g.diff_mid(u.values());
    let w = g.mid_weights(g.dim() as f64 - 2.0 - 2.0 * a);
    du.iter().zip(&w).map(|(d, w)| w * d * d).sum()
}

/// Values of `r -> u(e^{shift} r)` on the same grid.
///
/// Lattice shifts are exact; other shifts use four-point Lagrange interpolation
/// in `s`. Beyond the right end the profile is zero, beyond the left end it is
/// continued by its boundary value.
pub fn resample(u: &RadialFunction, shift_s: f64) -> Result<RadialFunction> {
    let g = u.grid();
    let limit = (g.s_max() - g.s_min()) / 2.0;
    if !(shift_s.abs() < limit) {
        return Err(CknError::ShiftTooLarge {
            shift: shift_s,
            limit,
        });
    }
    let n = g.len();
    let v = u.values();
    let at = |k: i64| -> f64 {
        if k < 0 {
            v[0]
        } else if k as usize >= n {
            0.0
        } else {
            v[k as usize]
        }
    };
    let x = shift_s / g.ds();
    let k0 = x.round();
    let out: Vec<f64> = if (x - k0).abs() < 1e-9 {
        let k0 = k0 as i64;
        (0..n as i64).map(|i| at(i + k0)).collect()
    } else {
        let base = x.floor();
        let t = x - base;
        let base = base as i64;
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        (0..n as i64)
            .map(|i| {
                let j = i + base;
                w0 * at(j - 1) + w1 * at(j) + w2 * at(j + 1) + w3 * at(j + 2)
            })
            .collect()
    };
    RadialFunction::new(g.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_grid(n: usize) -> Arc<RadialGrid> {
        make_grid(DEFAULT_S_MIN, DEFAULT_S_MAX, n, 3).unwrap()
    }

    fn gamma_moment(k: f64, c: f64) -> f64 {
        // int_0^inf r^k e^{-c r^2} dr
        gamma((k + 1.0) / 2.0) / (2.0 * c.powf((k + 1.0) / 2.0))
    }

    #[test]
    fn grid_spans_requested_window() {
        let g = make_grid(-13.8, 6.9, 2048, 3).unwrap();
        assert_relative_eq!(g.r_min(), (-13.8f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g.r_max(), 6.9f64.exp(), max_relative = 1e-14);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(make_grid(-1.0, 1.0, 1, 3), Err(CknError::BadGridSpec(_))));
        assert!(matches!(make_grid(1.0, -1.0, 128, 3), Err(CknError::BadGridSpec(_))));
    }

    #[test]
    fn doubling_nodes_halves_spacing() {
        let a = make_grid(-10.0, 5.0, 1025, 3).unwrap();
        let b = make_grid(-10.0, 5.0, 2049, 3).unwrap();
        assert_relative_eq!(a.ds(), 2.0 * b.ds(), max_relative = 1e-15);
    }

    #[test]
    fn sphere_area_low_dimensions() {
        assert_relative_eq!(sphere_area(2), 2.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert_relative_eq!(
            sphere_area(4),
            2.0 * std::f64::consts::PI.powi(2),
            max_relative = 1e-13
        );
    }

    #[test]
    fn gaussian_mass_matches_gamma_oracle() {
        let g = default_grid(2048);
        let u = RadialFunction::from_fn(g, |r| (-r * r).exp()).unwrap();
        let exact = 4.0 * std::f64::consts::PI * gamma_moment(1.5, 2.0);
        assert_relative_eq!(exact, 2.3946, max_relative = 1e-4);
        let sq = weighted_norm(&u, 2.0, 0.25).unwrap().powi(2);
        assert_relative_eq!(sq, exact, max_relative = 1e-10);
    }

    #[test]
    fn gaussian_dirichlet_energy_matches_gamma_oracle() {
        let g = default_grid(2048);
        let u = RadialFunction::from_fn(g, |r| (-r * r).exp()).unwrap();
        let exact = 16.0 * std::f64::consts::PI * gamma_moment(3.5, 2.0);
        assert_relative_eq!(dirichlet_energy(&u, 0.25), exact, max_relative = 1e-7);
    }

    #[test]
    fn dirichlet_energy_self_convergence() {
        let vals: Vec<f64> = [2048, 4096]
            .iter()
            .map(|&n| {
                let u = RadialFunction::from_fn(default_grid(n), |r| (-r * r).exp()).unwrap();
                dirichlet_energy(&u, 0.25)
            })
            .collect();
        assert!(((vals[0] - vals[1]) / vals[1]).abs() < 1e-6);
    }

    #[test]
    fn constants_have_no_gradient_energy() {
        let u = RadialFunction::from_fn(default_grid(256), |_| 3.0).unwrap();
        assert!(dirichlet_energy(&u, 0.25).abs() < 1e-20);
    }

    #[test]
    fn zero_and_homogeneity() {
        let g = default_grid(512);
        assert_eq!(weighted_norm(&RadialFunction::zeros(g.clone()), 3.0, 0.5).unwrap(), 0.0);
        let u = RadialFunction::from_fn(g, |r| (-r).exp()).unwrap();
        let n1 = weighted_norm(&u, 3.0, 0.5).unwrap();
        let n2 = weighted_norm(&u.scaled(-2.5), 3.0, 0.5).unwrap();
        assert_relative_eq!(n2, 2.5 * n1, max_relative = 1e-14);
    }

    #[test]
    fn nonintegrable_weight_rejected() {
        let u = RadialFunction::from_fn(default_grid(128), |r| (-r).exp()).unwrap();
        assert!(matches!(weighted_norm(&u, 2.0, 1.5), Err(CknError::NonIntegrable { .. })));
    }

    #[test]
    fn trapezoid_error_shrinks_with_refinement() {
        let exact = 4.0 * std::f64::consts::PI * gamma_moment(1.5, 2.0);
        let errs: Vec<f64> = [64, 128]
            .iter()
            .map(|&n| {
                let g = make_grid(-30.0, 3.0, n, 3).unwrap();
                let u = RadialFunction::from_fn(g, |r| (-r * r).exp()).unwrap();
                (weighted_power(&u, 2.0, 0.25).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs[0] / errs[1] >= 4.0, "{errs:?}");
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = default_grid(128);
        let u: Vec<f64> = (0..128).map(|i| ((i * 7919) % 113) as f64 / 113.0).collect();
        let v: Vec<f64> = (0..127).map(|i| ((i * 104729) % 97) as f64 / 97.0).collect();
        let du = g.diff_mid(&u);
        let dtv = g.diff_mid_transpose(&v);
        let lhs: f64 = du.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&dtv).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn resample_identity_and_lattice_shift() {
        let g = default_grid(2048);
        let u = RadialFunction::from_fn(g.clone(), |r| (-r * r).exp()).unwrap();
        assert_eq!(resample(&u, 0.0).unwrap(), u);
        let v = resample(&u, g.ds()).unwrap();
        for i in 0..2047 {
            assert_eq!(v.values()[i], u.values()[i + 1]);
        }
        assert_eq!(v.values()[2047], 0.0);
    }

    #[test]
    fn resample_gaussian_accuracy() {
        let g = default_grid(2048);
        let u = RadialFunction::from_fn(g.clone(), |r| (-r * r).exp()).unwrap();
        let v = resample(&u, 0.3).unwrap();
        let k = 0.3f64.exp();
        let err = g
            .nodes()
            .iter()
            .zip(v.values())
            .map(|(r, x)| (x - (-(k * r).powi(2)).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn diff_mid_rows_reproduce_diff_mid() {
        let g = make_grid(-4.0, 3.0, 70, 3).unwrap();
        let u: Vec<f64> = (0..70).map(|i| (0.3 * i as f64).sin() + 0.01 * (i * i) as f64).collect();
        let du = g.diff_mid(&u);
        for (j, d) in du.iter().enumerate() {
            let (start, c) = g.diff_mid_row(j);
            let row: f64 = c.iter().enumerate().map(|(x, cx)| cx * u[start + x]).sum();
            assert_relative_eq!(row, *d, epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_rejects_large_shift() {
        let u = RadialFunction::from_fn(default_grid(128), |r| (-r).exp()).unwrap();
        assert!(matches!(resample(&u, 11.0), Err(CknError::ShiftTooLarge { .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let g = default_grid(128);
        let u = RadialFunction::from_fn(g, |r| (-r).exp()).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"r,u\n"));
        let back = RadialFunction::read_csv(&buf[..], 3).unwrap();
        assert_eq!(back.values(), u.values());
        assert_relative_eq!(back.grid().ds(), u.grid().ds(), max_relative = 1e-12);
    }
}
