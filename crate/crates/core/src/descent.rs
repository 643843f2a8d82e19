//! Preconditioned descent on nodal values.
//!
//! The preconditioner is the second-order stiffness matrix of the gradient
//! term plus a diagonal, solved with the Thomas algorithm.

use crate::grid::RadialGrid;

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub(crate) struct Tridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples nodes `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl Tridiag {
    /// `sum_j c w_j ((u_{j+1} - u_j)/ds)^2 ds` with `w_j` midpoint weights
    /// (already containing `ds`) plus `diag(shift)`.
    pub fn stiffness(grid: &RadialGrid, mid_w: &[f64], c: f64, shift: &[f64]) -> Self {
        let n = grid.len();
        let h2 = grid.ds() * grid.ds();
        let mut diag = shift.to_vec();
        let mut off = vec![0.0; n - 1];
        for (j, w) in mid_w.iter().enumerate() {
            let k = c * w / h2;
            diag[j] += k;
            diag[j + 1] += k;
            off[j] -= k;
        }
        Tridiag { diag, off }
    }

    /// Replace row and column `i` by the identity.
    pub fn pin(&mut self, i: usize) {
        self.diag[i] = 1.0;
        if i > 0 {
            self.off[i - 1] = 0.0;
        }
        if i < self.off.len() {
            self.off[i] = 0.0;
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut m = self.diag[0];
        c[0] = if n > 1 { self.off[0] / m } else { 0.0 };
        d[0] = rhs[0] / m;
        for i in 1..n {
            m = self.diag[i] - self.off[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = self.off[i] / m;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        d
    }

    #[cfg(test)]
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.off[i] * x[i + 1];
                }
                y
            })
            .collect()
    }
}

/// Banded matrix with room for the fill-in of partial pivoting.
#[derive(Debug, Clone)]
pub(crate) struct Banded {
    n: usize,
    kl: usize,
    /// Upper bandwidth after pivoting, `ku + kl`.
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ku = ku + kl;
        Banded {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Replace row `i` by the identity row.
    pub fn pin(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            let k = self.idx(i, j);
            self.data[k] = if j == i { 1.0 } else { 0.0 };
        }
    }

    /// Solve for several right-hand sides by LU with partial pivoting.
    /// Returns `None` for a singular matrix.
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut a = self.clone();
        let mut b: Vec<Vec<f64>> = rhs.to_vec();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let piv = (k..=last)
                .max_by(|&x, &y| a.data[a.idx(x, k)].abs().total_cmp(&a.data[a.idx(y, k)].abs()))?;
            if a.data[a.idx(piv, k)] == 0.0 {
                return None;
            }
            let right = (k + ku).min(n - 1);
            if piv != k {
                for j in k..=right {
                    let (x, y) = (a.idx(k, j), a.idx(piv, j));
                    a.data.swap(x, y);
                }
                b.iter_mut().for_each(|v| v.swap(k, piv));
            }
            let d = a.data[a.idx(k, k)];
            for i in k + 1..=last {
                let l = a.data[a.idx(i, k)] / d;
                if l == 0.0 {
                    continue;
                }
                for j in k..=right {
                    let x = a.data[a.idx(k, j)];
                    let t = a.idx(i, j);
                    a.data[t] -= l * x;
                }
                b.iter_mut().for_each(|v| v[i] -= l * v[k]);
            }
        }
        for v in b.iter_mut() {
            for k in (0..n).rev() {
                let right = (k + ku).min(n - 1);
                let mut acc = v[k];
                for (j, x) in v.iter().enumerate().take(right + 1).skip(k + 1) {
                    acc -= a.data[a.idx(k, j)] * x;
                }
                v[k] = acc / a.data[a.idx(k, k)];
            }
        }
        Some(b)
    }

    #[cfg(test)]
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOptions {
    pub max_iters: usize,
    pub step0: f64,
    /// Stop when `g . P g <= grad_tol^2`.
    pub grad_tol: f64,
    /// Stop when the relative decrease over 20 iterations falls below this.
    pub stall_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Minimize `f` from `x0` by preconditioned Polak-Ribiere descent.
///
/// `project` is applied to every trial point (clipping, pinning); `precond`
/// maps a gradient to a descent-space vector and may depend on the iterate.
pub(crate) fn minimize<F, P, Q>(
    x0: Vec<f64>,
    mut f: F,
    mut precond: P,
    mut project: Q,
    opts: &DescentOptions,
) -> DescentOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: FnMut(&[f64], &[f64]) -> Vec<f64>,
    Q: FnMut(&mut Vec<f64>),
{
    let mut x = x0;
    project(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut pg = precond(&x, &g);
    let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
    let mut gpg = dot(&g, &pg);
    let mut step = opts.step0;
    let mut history = vec![fx];
    for _ in 0..opts.max_iters {
        if gpg <= opts.grad_tol * opts.grad_tol {
            return DescentOutcome {
                x,
                value: fx,
            };
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = pg.iter().map(|v| -v).collect();
            slope = -gpg;
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut trial);
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            return DescentOutcome {
                x,
                value: fx,
            };
        };
        step = (2.0 * alpha).min(1e6 * opts.step0);
        let pgn = precond(&xn, &gn);
        let gpg_new = dot(&gn, &pgn);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let beta_pr = (dot(&y, &pgn) / gpg).max(0.0);
        d = pgn
            .iter()
            .zip(&d)
            .map(|(p, dd)| -p + beta_pr * dd)
            .collect();
        x = xn;
        fx = fn_;
        g = gn;
        pg = pgn;
        gpg = gpg_new;
        history.push(fx);
        if history.len() > 20 {
            let old = history[history.len() - 21];
            if (old - fx).abs() <= opts.stall_tol * fx.abs().max(1e-300) {
                return DescentOutcome {
                    x,
                    value: fx,
                };
            }
        }
    }
    DescentOutcome {
        x,
        value: fx,
    }
}
