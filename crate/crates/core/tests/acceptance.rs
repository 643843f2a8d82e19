//! Acceptance run: one PASS/FAIL line per criterion with both sides of every
//! check logged.
//!
//! Criteria listed in `EXPECTED_FAILURES` are known to be unattainable at the
//! canonical parameters. They still run and print FAIL; the target only exits
//! nonzero when a criterion disagrees with its expectation, so a fix that
//! turns one of them green is noticed too.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ckn_core::error::CknError;
use ckn_core::extremals::{
    best_constant_s, canonical, case2_min_a, case2_projection_bound, classify_region,
    default_eps_list, estimate_s, interp_constant_c, measure_asymptotics, region_map,
    s_by_descent, s_grid, ConcentrationGrid, Quantity, Region,
};
use ckn_core::fiber::{analyze_fiber, envelope, Branch, FiberMap, StructureVerdict};
use ckn_core::functionals::{dilate, fiber_coefficients, mass_sq};
use ckn_core::params::{beta_star_mass_critical, derive_exponents, thresholds, Thresholds};
use ckn_core::solver::{critical_level, energy_gap_check, minimize_minus, minimize_plus, SolverConfig};
use ckn_core::{GridSpec, RadialFunction, RadialGrid, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to print FAIL; see the README for the measured numbers.
const EXPECTED_FAILURES: [usize; 2] = [4, 9];

const IDENTITY_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-8;
const SCALING_TOL: f64 = 1e-6;
const S_INVARIANCE_TOL: f64 = 1e-6;
const S_DESCENT_TOL: f64 = 5e-3;
const SLOPE_TOL: f64 = 0.15;
const R2_MIN: f64 = 0.99;
const P_TOL: f64 = 1e-8;
const EL_TOL: f64 = 1e-4;
const LAMBDA_TOL: f64 = 1e-3;
const LEVEL_TOL: f64 = 0.02;
const GAP_EPS: f64 = 1e-3;
const SUITE_BUDGET: Duration = Duration::from_secs(30 * 60);
/// Runtime budget per criterion in seconds, criteria 1 to 10.
const BUDGET_SECS: [u64; 10] = [1, 10, 60, 300, 30, 60, 300, 600, 120, 120];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

type Criterion = fn(&Setup) -> Result<Verdict>;

struct Setup {
    grid: Arc<RadialGrid>,
    s_ab: f64,
    c_ab: f64,
    th: Thresholds,
}

impl Setup {
    fn new() -> Result<Self> {
        let p = canonical(0.5)?;
        let grid = GridSpec::default().build(3)?;
        let s_ab = best_constant_s(&p, &s_grid(3)?)?;
        let c_ab = interp_constant_c(&p, &grid, 0)?.value;
        let th = thresholds(&p, s_ab, c_ab)?;
        Ok(Setup { grid, s_ab, c_ab, th })
    }

    fn half_beta1(&self) -> f64 {
        0.5 * self.th.beta1.expect("subcritical canonical point")
    }
}

/// Twenty smooth positive profiles `exp(-(r/w)^k)` of varying width and
/// steepness, normalized to unit mass.
fn family(grid: &Arc<RadialGrid>, a: f64) -> Result<Vec<RadialFunction>> {
    let mut out = Vec::new();
    for w in [0.5, 1.0, 2.0, 4.0, 8.0] {
        for k in [1.5, 2.0, 3.0, 4.0] {
            let u = RadialFunction::from_fn(grid.clone(), |r| (-(r / w).powf(k)).exp())?;
            let m = mass_sq(&u, a);
            out.push(u.scaled(1.0 / m.sqrt()));
        }
    }
    Ok(out)
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

fn c1_exponent_identities(_: &Setup) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_sharp, mut worst_qc) = (0.0_f64, 0.0_f64);
    let start = Instant::now();
    for _ in 0..1000 {
        let n: u32 = rng.random_range(3..=10);
        let a = rng.random_range(0.0..(n as f64 - 2.0) / 2.0);
        let b = a + rng.random_range(0.0..1.0);
        let probe = ckn_core::validate(n, a.max(1e-9), b.max(a + 1e-9), 2.5, 1.0, 1.0);
        let p = match probe {
            Ok(p) => p,
            Err(_) => continue,
        };
        let e = derive_exponents(&p);
        let ds = ckn_core::params::delta(n, p.a, p.b, e.two_sharp);
        let dqc = ckn_core::params::delta(n, p.a, p.b, e.q_c);
        worst_sharp = worst_sharp.max((ds - 1.0).abs());
        worst_qc = worst_qc.max((e.q_c * dqc - 2.0).abs());
    }
    let dt = start.elapsed();
    verdict(
        worst_sharp <= IDENTITY_TOL && worst_qc <= IDENTITY_TOL && dt < Duration::from_secs(1),
        format!("max |delta_2# - 1| = {worst_sharp:.2e}, max |q_c delta_qc - 2| = {worst_qc:.2e}, {dt:.2?}"),
    )
}

fn c2_dilation(s: &Setup) -> Result<Verdict> {
    let p = canonical(0.5)?;
    let e = p.exponents();
    let (mut dm, mut dc) = (0.0_f64, 0.0_f64);
    for u in family(&s.grid, p.a)? {
        let m0 = mass_sq(&u, p.a);
        let c0 = fiber_coefficients(&u, &p);
        for t in [-2.0, -1.0, 1.0, 2.0] {
            let v = dilate(&u, t, &p)?;
            dm = dm.max(rel(mass_sq(&v, p.a), m0));
            let c = fiber_coefficients(&v, &p);
            dc = dc
                .max(rel(c.a_grad, (2.0 * t).exp() * c0.a_grad))
                .max(rel(c.b_q, (p.q * e.delta_q * t).exp() * c0.b_q))
                .max(rel(c.c_crit, (e.two_sharp * t).exp() * c0.c_crit));
        }
    }
    verdict(
        dm <= MASS_TOL && dc <= SCALING_TOL,
        format!("mass drift {dm:.2e} (tol {MASS_TOL:.0e}), scaling error {dc:.2e} (tol {SCALING_TOL:.0e})"),
    )
}

fn c3_best_constant(_: &Setup) -> Result<Verdict> {
    let p = canonical(0.5)?;
    let est = estimate_s(&p, &s_grid(3)?)?;
    let desc = s_by_descent(&p, 4096)?;
    let dev = rel(desc, est.value);
    verdict(
        est.eps_invariance < S_INVARIANCE_TOL && dev <= S_DESCENT_TOL,
        format!(
            "S = {:.10}, eps spread {:.2e} (tol {S_INVARIANCE_TOL:.0e}), descent {desc:.6} off by {dev:.2e} (tol {S_DESCENT_TOL:.0e})",
            est.value, est.eps_invariance
        ),
    )
}

fn c4_asymptotics(_: &Setup) -> Result<Verdict> {
    let p = canonical(0.5)?;
    let eps = default_eps_list();
    let cg = ConcentrationGrid::default();
    let cases: [(Quantity, f64, f64); 5] = [
        (Quantity::MassSq, 2.5, 1.0),
        (Quantity::QNorm, 2.5, 0.5),
        (Quantity::QNorm, 3.5, 0.75),
        (Quantity::GradSq, 2.5, 1.0),
        (Quantity::CritNorm, 2.5, 2.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (quantity, q, target) in cases {
        let pq = p.with_q(q)?;
        match measure_asymptotics(quantity, &pq, &eps, &cg) {
            Ok(r) => {
                let ok = rel(r.fitted_slope, target) <= SLOPE_TOL && r.r2 >= R2_MIN;
                pass &= ok;
                parts.push(format!(
                    "{quantity}(q={q}) slope {:.3} vs {target} r2 {:.4}{}",
                    r.fitted_slope,
                    r.r2,
                    if ok { "" } else { " [off]" }
                ));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("{quantity}(q={q}) {err}"));
            }
        }
    }
    let log = measure_asymptotics(Quantity::QNorm, &p.with_q(3.0)?, &eps, &cg)?;
    let improves = log.log_regressor_improves() == Some(true);
    pass &= improves;
    parts.push(format!(
        "log branch q=3 rss {:.3e} -> {:.3e}",
        log.plain_rss,
        log.log_rss.unwrap_or(f64::NAN)
    ));
    verdict(pass, parts.join("; "))
}

fn c5_regions(_: &Setup) -> Result<Verdict> {
    let res = 400;
    let cells = region_map(3, res)?;
    let bound = case2_projection_bound(3);
    let amin = case2_min_a(&cells).unwrap_or(f64::NAN);
    let cell_a = 0.5 / res as f64;
    // every raster column strictly right of the bound must meet Case 2
    let mut columns_ok = true;
    for i in 0..res {
        let a = 0.5 * (i as f64 + 0.5) / res as f64;
        let hit = cells[i * res..(i + 1) * res]
            .iter()
            .any(|c| c.class.region != Region::Case1);
        if (a > bound) != hit {
            columns_ok = false;
        }
    }
    let boundary = classify_region(3, 0.45, 1.325)?.region;
    verdict(
        amin > bound && amin <= bound + 2.0 * cell_a && columns_ok && boundary == Region::Case2Boundary,
        format!(
            "first Case-2 column a = {amin:.5} vs bound {bound}, columns consistent {columns_ok}, (0.45, 1.325) -> {boundary}"
        ),
    )
}

fn c6_fiber_structure(s: &Setup) -> Result<Verdict> {
    let beta = s.half_beta1();
    let p = canonical(beta)?;
    let mut bad = 0;
    for u in family(&s.grid, p.a)? {
        let r = analyze_fiber(&u, &p, Some(&s.th))?;
        let plus = r.first(Branch::Plus).copied();
        let minus = r.last(Branch::Minus).copied();
        let ordered = match (plus, minus, r.zeros.as_slice()) {
            (Some(t1), Some(t2), [s1, s2]) => {
                r.criticals.len() == 2 && t1.t < *s1 && *s1 < t2.t && t2.t < *s2 && t1.phi < 0.0 && t2.phi > 0.0
            }
            _ => false,
        };
        if !(ordered && r.verdict == StructureVerdict::Holds) {
            bad += 1;
        }
    }
    let pc = canonical(0.1)?.at_mass_critical()?;
    let pc = pc.with_beta(0.5 * beta_star_mass_critical(&pc, s.c_ab)?)?;
    let p3 = canonical(1.0)?.with_q(3.0)?;
    let mut single_bad = 0;
    for pp in [pc, p3] {
        let e = pp.exponents();
        for u in family(&s.grid, pp.a)? {
            let r = analyze_fiber(&u, &pp, None)?;
            let one_max = r.criticals.len() == 1 && r.criticals[0].branch == Branch::Minus;
            let decreasing = one_max && {
                let map = FiberMap::new(&fiber_coefficients(&u, &pp), &pp, &e);
                let t0 = r.criticals[0].t;
                (1..100).all(|k| map.phi(t0 + 0.1 * k as f64) < map.phi(t0 + 0.1 * (k - 1) as f64))
            };
            if !(decreasing && r.structure_ok) {
                single_bad += 1;
            }
        }
    }
    verdict(
        bad == 0 && single_bad == 0,
        format!(
            "beta = 0.5 beta1 = {beta:.5}: {bad}/20 profiles off; single maximum at q_c (beta = {:.4}) and q = 3: {single_bad}/40 off",
            pc.beta
        ),
    )
}

fn c7_ground_state(s: &Setup, ground: &Result<ckn_core::SolutionReport>) -> Result<Verdict> {
    let beta = s.half_beta1();
    let r = match ground {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("solver error: {e}")),
    };
    let env = envelope(&canonical(beta)?, s.s_ab, s.c_ab)?;
    let lam_dev = rel(r.lambda_pohozaev, r.lambda);
    verdict(
        r.converged
            && r.energy < 0.0
            && r.lambda < 0.0
            && r.pohozaev.abs() <= P_TOL * r.a_grad
            && r.el_residual <= EL_TOL
            && r.grad_norm < env.kappa_tilde
            && lam_dev <= LAMBDA_TOL,
        format!(
            "beta {beta:.5}: E = {:.6e}, lambda = {:.6e} (pair dev {lam_dev:.1e}), |P|/A = {:.1e}, EL = {:.1e}, grad {:.4} < kappa~ {:.4}, {} iterations",
            r.energy,
            r.lambda,
            r.pohozaev.abs() / r.a_grad,
            r.el_residual,
            r.grad_norm,
            env.kappa_tilde,
            r.iterations
        ),
    )
}

fn c8_level_bracketing(s: &Setup) -> Result<Verdict> {
    let cfg = SolverConfig::minus();
    let pc = canonical(0.1)?.at_mass_critical()?;
    let pc = pc.with_beta(0.5 * beta_star_mass_critical(&pc, s.c_ab)?)?;
    let p3 = canonical(1.0)?.with_q(3.0)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, pp) in [("q_c", pc), ("q=3", p3)] {
        let (r, level) = minimize_minus(&pp, &cfg, &s.grid, None)?;
        let crit = level.details["critical_level"];
        let ok = r.converged && level.all_hold();
        pass &= ok;
        parts.push(format!(
            "{label} beta {:.4}: 0 < {:.6} < {crit:.6} {}",
            pp.beta,
            level.level_value,
            if ok { "holds" } else { "fails" }
        ));
    }
    let p0 = canonical(0.0)?;
    let crit = critical_level(&p0, s.s_ab);
    let level = match minimize_minus(&p0, &cfg, &s.grid, None) {
        Ok((r, _)) => r.energy,
        Err(CknError::NoConvergence { last, .. }) => last.energy,
        Err(e) => return Err(e),
    };
    let dev = rel(level, crit);
    pass &= dev <= LEVEL_TOL;
    parts.push(format!("beta 0: {level:.6} vs {crit:.6} ({:.2}%)", 100.0 * dev));
    verdict(pass, parts.join("; "))
}

fn c9_energy_gap(s: &Setup, ground: &Result<ckn_core::SolutionReport>) -> Result<Verdict> {
    let r = match ground {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("no ground state: {e}")),
    };
    let p = canonical(s.half_beta1())?;
    let level = energy_gap_check(&p, r, GAP_EPS)?;
    let margin = level
        .bound_check
        .iter()
        .map(|b| b.margin())
        .fold(f64::INFINITY, f64::min);
    let rhs = level.bound_check.first().map_or(f64::NAN, |b| b.rhs);
    verdict(
        level.all_hold() && margin > 0.0,
        format!(
            "eps {GAP_EPS:.0e}: sup_t E = {:.6} vs m + crit = {rhs:.6}, margin {margin:+.3e}",
            level.level_value
        ),
    )
}

fn run_cli(args: &[&str]) -> std::io::Result<Vec<u8>> {
    let out = Command::new(env!("CARGO_BIN_EXE_ckn")).args(args).output()?;
    Ok(out.stdout)
}

fn c10_cli_determinism(suite: Duration) -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().to_str().expect("utf-8 temp path");
    let csv = dir.path().join("profile_plus.csv");
    let csv = csv.to_str().expect("utf-8 temp path");
    let runs: [&[&str]; 3] = [
        &["--seed", "7", "constants"],
        &["--seed", "7", "--beta", "0.5", "--output-dir", out, "solve", "--branch", "plus"],
        &["--seed", "7", "--beta", "0.5", "fiber", "--profile", csv],
    ];
    let mut same = true;
    for args in runs {
        let a = run_cli(args)?;
        let b = run_cli(args)?;
        same &= !a.is_empty() && a == b;
    }
    verdict(
        same && suite < SUITE_BUDGET,
        format!("byte-identical JSON across repeated runs: {same}; criteria 1-9 took {suite:.1?}"),
    )
}

fn report(id: usize, elapsed: Duration, v: Result<Verdict>, mismatches: &mut Vec<usize>) {
    let v = v.unwrap_or_else(|e| Verdict {
        pass: false,
        detail: format!("error {}: {e}", e.code()),
    });
    let budget = Duration::from_secs(BUDGET_SECS[id - 1]);
    let pass = v.pass && elapsed <= budget;
    let tag = if pass { "PASS" } else { "FAIL" };
    let expected = if EXPECTED_FAILURES.contains(&id) { " (expected)" } else { "" };
    println!("criterion {id:>2} {tag}{expected} [{elapsed:.1?} of {budget:?}] {}", v.detail);
    if pass == EXPECTED_FAILURES.contains(&id) {
        mismatches.push(id);
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() {
    let suite = Instant::now();
    let setup = Setup::new().expect("constants at the canonical point");
    println!(
        "canonical point: S = {:.10}, C = {:.10}, beta1 = {:.5}",
        setup.s_ab,
        setup.c_ab,
        setup.th.beta1.unwrap_or(f64::NAN)
    );
    let mut mismatches = Vec::new();
    let simple: [(usize, Criterion); 6] = [
        (1, c1_exponent_identities),
        (2, c2_dilation),
        (3, c3_best_constant),
        (4, c4_asymptotics),
        (5, c5_regions),
        (6, c6_fiber_structure),
    ];
    for (id, f) in simple {
        let (v, dt) = timed(|| f(&setup));
        report(id, dt, v, &mut mismatches);
    }
    let (ground, dt_ground) = timed(|| {
        canonical(setup.half_beta1()).and_then(|p| minimize_plus(&p, &SolverConfig::plus(), &setup.grid))
    });
    let (v, dt) = timed(|| c7_ground_state(&setup, &ground));
    report(7, dt + dt_ground, v, &mut mismatches);
    let (v, dt) = timed(|| c8_level_bracketing(&setup));
    report(8, dt, v, &mut mismatches);
    let (v, dt) = timed(|| c9_energy_gap(&setup, &ground));
    report(9, dt, v, &mut mismatches);
    let suite = suite.elapsed();
    let (v, dt) = timed(|| c10_cli_determinism(suite));
    report(10, dt, v, &mut mismatches);
    if !mismatches.is_empty() {
        println!("criteria disagreeing with their expectation: {mismatches:?}");
        std::process::exit(1);
    }
}
