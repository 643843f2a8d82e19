//! Command-line front end.
//!
//! Every command prints deterministic JSON on stdout (or writes CSV into the
//! output directory and prints a JSON summary). Failures print
//! `{"error", "message", "exit_code"}` on stderr and exit with 2 (validation),
//! 3 (numeric failure) or 4 (non-convergence).

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CknError, Result};
use crate::extremals::{
    case2_min_a, case2_projection_bound, default_eps_list, estimate_s, estimate_s_with,
    interp_constant_c, measure_asymptotics, region_map, s_grid, write_region_csv,
    ConcentrationGrid, Quantity, Region,
};
use crate::fiber::{analyze_fiber, envelope, Branch};
use crate::grid::{GridSpec, RadialFunction};
use crate::json;
use crate::params::{derive_exponents, thresholds, validate, ProblemParams, Regime, Thresholds};
use crate::solver::{
    critical_level, energy_gap_check, evaluate_profile, minimize_minus, minimize_plus, sweep,
    write_sweep_csv, SolverConfig, SweepTask, VaryParam,
};

pub const OUTPUT_DIR_ENV: &str = "CKN_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "ckn", version, about = "Normalized solutions of weighted CKN problems")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON run configuration; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for randomized multistarts.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print bare values instead of JSON.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Comma-separated list of eps values.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub eps_list: Option<Vec<f64>>,
    /// Dimension N.
    #[arg(long, global = true)]
    pub dim: Option<u32>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub q: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Grid nodes.
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Plus,
    Minus,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derived exponents and regime.
    Exponents,
    /// Best constants, thresholds and envelope.
    Constants,
    /// Fiber-map analysis of a profile CSV.
    Fiber {
        #[arg(long)]
        profile: PathBuf,
    },
    /// Constrained minimization on one branch of the Pohozaev manifold.
    Solve {
        #[arg(long, value_enum)]
        branch: Option<BranchArg>,
    },
    /// Fitted eps-slope of a bubble quantity against its prediction.
    Asymptotics {
        #[arg(long)]
        quantity: String,
    },
    /// Case classification raster of the (a, b) strip, written as CSV.
    RegionMap {
        #[arg(long, default_value_t = 400)]
        resolution: usize,
    },
    /// Energy-gap inequality along ground state plus a concentrating bubble.
    GapCheck {
        /// Ground-state profile CSV; computed when absent.
        #[arg(long)]
        ground: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Run a solver task over a list of parameter values, written as CSV.
    Sweep {
        #[arg(long)]
        vary: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "minimize_plus")]
        task: String,
    },
}

/// Contents of `--config`. Every entry is optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsBlock,
    pub grid: Option<GridSpec>,
    pub solver: Option<SolverConfig>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub eps_list: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(rename = "N")]
    pub n: Option<u32>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub q: Option<f64>,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
}

/// Defaults: the canonical point `N = 3, a = 1/4, b = 1/2, q = 5/2, rho = 1`
/// with `beta = 1/2`.
const DEFAULT_PARAMS: (u32, f64, f64, f64, f64, f64) = (3, 0.25, 0.5, 2.5, 0.5, 1.0);

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub params: ProblemParams,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub eps_list: Option<Vec<f64>>,
    pub quiet: bool,
}

impl Context {
    /// Merge flags over the config file over defaults.
    pub fn resolve(g: &GlobalOpts) -> Result<Self> {
        let cfg: RunConfig = match &g.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        let (n0, a0, b0, q0, beta0, rho0) = DEFAULT_PARAMS;
        let pb = &cfg.params;
        let params = validate(
            g.dim.or(pb.n).unwrap_or(n0),
            g.a.or(pb.a).unwrap_or(a0),
            g.b.or(pb.b).unwrap_or(b0),
            g.q.or(pb.q).unwrap_or(q0),
            g.beta.or(pb.beta).unwrap_or(beta0),
            g.rho.or(pb.rho).unwrap_or(rho0),
        )?;
        let base = cfg.grid.unwrap_or_default();
        let grid = GridSpec {
            s_min: g.s_min.unwrap_or(base.s_min),
            s_max: g.s_max.unwrap_or(base.s_max),
            n: g.nodes.unwrap_or(base.n),
        };
        let solver = cfg.solver.unwrap_or_default();
        solver.validate()?;
        let output_dir = g
            .output_dir
            .clone()
            .or(cfg.output_dir)
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Context {
            params,
            grid,
            solver,
            output_dir,
            seed: g.seed.or(cfg.seed).unwrap_or(0),
            eps_list: g.eps_list.clone().or(cfg.eps_list),
            quiet: g.quiet,
        })
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)?;
        Ok(self.output_dir.join(name))
    }

    fn emit<T: Serialize>(&self, value: &T) -> Result<String> {
        if self.quiet {
            Ok(bare_values(&serde_json::to_value(value)?))
        } else {
            json::to_string(value)
        }
    }

    fn constants(&self) -> Result<(f64, f64)> {
        let s = estimate_s(&self.params, &s_grid(self.params.n)?)?.value;
        let c = interp_constant_c(&self.params, &self.grid.build(self.params.n)?, self.seed)?.value;
        Ok((s, c))
    }
}

/// Top-level scalars of a JSON object, one per line in key order; arrays and
/// nested objects are skipped. Non-objects print as a single line.
fn bare_values(v: &Value) -> String {
    let scalar = |x: &Value| -> Option<String> {
        match x {
            Value::Number(n) => Some(match (n.as_i64(), n.as_f64()) {
                (Some(i), _) => i.to_string(),
                (_, Some(f)) => json::format_f64(f),
                _ => n.to_string(),
            }),
            Value::String(s) => Some(s.clone()),
            Value::Bool(b) => Some(b.to_string()),
            Value::Null => Some("null".into()),
            _ => None,
        }
    };
    let mut out = String::new();
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for k in keys {
                if let Some(s) = scalar(&map[k]) {
                    out.push_str(&s);
                    out.push('\n');
                }
            }
        }
        other => {
            out.push_str(&scalar(other).unwrap_or_else(|| other.to_string()));
            out.push('\n');
        }
    }
    out
}

fn merge(base: Value, extra: Value) -> Value {
    match (base, extra) {
        (Value::Object(mut a), Value::Object(b)) => {
            a.extend(b);
            Value::Object(a)
        }
        (a, _) => a,
    }
}

fn thresholds_if_subcritical(ctx: &Context) -> Result<Option<Thresholds>> {
    if ctx.params.exponents().regime != Regime::Subcritical {
        return Ok(None);
    }
    let (s, c) = ctx.constants()?;
    Ok(Some(thresholds(&ctx.params, s, c)?))
}

fn error_value(e: &CknError) -> Value {
    json!({ "error": e.code(), "message": e.to_string() })
}

fn save_profile(ctx: &Context, u: &RadialFunction, name: &str) -> Result<String> {
    let path = ctx.out_path(name)?;
    u.save_csv(&path)?;
    Ok(path.display().to_string())
}

/// Run one parsed command and return its stdout text.
pub fn execute(cli: &Cli) -> Result<String> {
    let ctx = Context::resolve(&cli.global)?;
    let p = ctx.params;
    match &cli.command {
        Command::Exponents => ctx.emit(&derive_exponents(&p)),
        Command::Constants => {
            let sg = s_grid(p.n)?;
            let s = match &ctx.eps_list {
                Some(list) => estimate_s_with(&p, &sg, list)?,
                None => estimate_s(&p, &sg)?,
            };
            let c = interp_constant_c(&p, &ctx.grid.build(p.n)?, ctx.seed)?;
            let th = thresholds(&p, s.value, c.value)?;
            let env = match envelope(&p, s.value, c.value) {
                Ok(r) => serde_json::to_value(r)?,
                Err(e) => error_value(&e),
            };
            ctx.emit(&json!({
                "params": p,
                "exponents": p.exponents(),
                "S": s,
                "C": c,
                "thresholds": th,
                "critical_level": critical_level(&p, s.value),
                "envelope": env,
                "seed": ctx.seed,
            }))
        }
        Command::Fiber { profile } => {
            let u = RadialFunction::load_csv(profile, p.n)?;
            let th = thresholds_if_subcritical(&ctx)?;
            ctx.emit(&analyze_fiber(&u, &p, th.as_ref())?)
        }
        Command::Solve { branch } => {
            let branch = match branch {
                Some(BranchArg::Plus) => Branch::Plus,
                Some(BranchArg::Minus) => Branch::Minus,
                None => ctx.solver.branch,
            };
            let grid = ctx.grid.build(p.n)?;
            match branch {
                Branch::Minus => {
                    let mut cfg = SolverConfig {
                        branch: Branch::Minus,
                        ..ctx.solver.clone()
                    };
                    if ctx.solver == SolverConfig::default() {
                        cfg.seed_profile = SolverConfig::minus().seed_profile;
                    }
                    let (mut r, level) = minimize_minus(&p, &cfg, &grid, None)?;
                    r.profile_path = Some(save_profile(&ctx, &r.profile, "profile_minus.csv")?);
                    let v = merge(serde_json::to_value(&r)?, json!({ "level": level }));
                    ctx.emit(&v)
                }
                _ => {
                    let mut r = minimize_plus(&p, &ctx.solver, &grid)?;
                    r.profile_path = Some(save_profile(&ctx, &r.profile, "profile_plus.csv")?);
                    ctx.emit(&r)
                }
            }
        }
        Command::Asymptotics { quantity } => {
            let q: Quantity = quantity.parse()?;
            let eps = ctx.eps_list.clone().unwrap_or_else(default_eps_list);
            ctx.emit(&measure_asymptotics(q, &p, &eps, &ConcentrationGrid::default())?)
        }
        Command::RegionMap { resolution } => {
            let cells = region_map(p.n, *resolution)?;
            let path = ctx.out_path(&format!("region_map_N{}.csv", p.n))?;
            write_region_csv(&cells, fs::File::create(&path)?)?;
            let count = |r: Region| cells.iter().filter(|c| c.class.region == r).count();
            ctx.emit(&json!({
                "csv": path.display().to_string(),
                "N": p.n,
                "resolution": resolution,
                "cells": cells.len(),
                "case1_cells": count(Region::Case1),
                "case2_interior_cells": count(Region::Case2Interior),
                "case2_boundary_cells": count(Region::Case2Boundary),
                "case2_min_a": case2_min_a(&cells),
                "projection_bound": case2_projection_bound(p.n),
            }))
        }
        Command::GapCheck { ground, eps } => {
            let report = match ground {
                Some(path) => {
                    let u = RadialFunction::load_csv(path, p.n)?;
                    evaluate_profile(&p, &ctx.solver, &u, Branch::Plus)?
                }
                None => minimize_plus(&p, &ctx.solver, &ctx.grid.build(p.n)?)?,
            };
            let level = energy_gap_check(&p, &report, *eps)?;
            ctx.emit(&merge(
                serde_json::to_value(&level)?,
                json!({ "ground_converged": report.converged }),
            ))
        }
        Command::Sweep { vary, values, task } => {
            let what: VaryParam = vary.parse()?;
            let task: SweepTask = task.parse()?;
            let rows = sweep(&p, what, values, task, &ctx.solver, &ctx.grid);
            let path = ctx.out_path(&format!("sweep_{}_{}.csv", vary.to_ascii_lowercase(), task.name()))?;
            write_sweep_csv(&rows, fs::File::create(&path)?)?;
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            ctx.emit(&json!({
                "csv": path.display().to_string(),
                "rows": rows.len(),
                "failures": failures,
            }))
        }
    }
}

/// Machine-readable error record for stderr.
pub fn error_json(e: &CknError) -> String {
    let mut map = Map::new();
    map.insert("error".into(), Value::from(e.code()));
    map.insert("message".into(), Value::from(e.to_string()));
    map.insert("exit_code".into(), Value::from(e.exit_code()));
    match e {
        CknError::NoConvergence { last, .. } => {
            if let Ok(v) = serde_json::to_value(last.as_ref()) {
                map.insert("last".into(), v);
            }
        }
        CknError::StructureViolation(f) => {
            if let Ok(v) = serde_json::to_value(f.as_ref()) {
                map.insert("fiber".into(), v);
            }
        }
        _ => {}
    }
    json::to_string(&Value::Object(map)).unwrap_or_else(|_| format!("{{\"error\": \"{}\"}}\n", e.code()))
}

/// Parse, run inside a thread pool of the requested size, print, and return
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        pool = pool.num_threads(t);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| execute(&cli)),
        Err(e) => Err(CknError::BadGridSpec(format!("thread pool: {e}"))),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprint!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
