//! Command-line front end. Every subcommand has a table of parameters; each
//! parameter can come from its `--flag`, from the `--config` JSON file, or
//! from the built-in default, in that order of precedence. Headline numbers
//! go to stdout, diagnostics and the run directory to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::{json, Map, Value};

use crate::error::{LabError, Result};
use crate::experiments;
use crate::fractal_dim;
use crate::grid::GridFunction;
use crate::io_store::{self, fmt_f64, Artifact, RunManifest};
use crate::profiles;
use crate::sim::{self, Backend, ClusterConfig, InitialMeasure, SimConfig};
use crate::spectral::{self, Builtin, EigenResult, KillingSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_OUT: &str = "sbmlab-out";
const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy)]
enum Kind {
    Float,
    Int,
    Bool,
    Floats,
    Choice(&'static [&'static str]),
}

struct Param {
    key: &'static str,
    kind: Kind,
    default: Value,
    help: &'static str,
}

fn p(key: &'static str, kind: Kind, default: Value, help: &'static str) -> Param {
    Param { key, kind, default, help }
}

const BACKENDS: &[&str] = &["spde_grid", "particles"];
const SCHEMES: &[&str] = &["feller_split", "euler_clip"];
const PHIS: &[&str] = &["F", "F_half", "G", "zero"];
const METHODS: &[&str] = &["both", "hermite", "fd"];

fn sim_params(replicates: u64, t: f64, h: f64) -> Vec<Param> {
    vec![
        p("backend", Kind::Choice(BACKENDS), json!("spde_grid"), "simulation backend"),
        p("mass", Kind::Float, json!(1.0), "mass of the initial atom at 0"),
        p("t_final", Kind::Float, json!(t), "time of the snapshot"),
        p("h", Kind::Float, json!(h), "grid spacing / histogram bandwidth"),
        p("dt", Kind::Float, json!(0.0), "time step of the grid backend (0: h^2/2)"),
        p("x_min", Kind::Float, json!(-4.0), "initial window, left end"),
        p("x_max", Kind::Float, json!(4.0), "initial window, right end"),
        p("n_particles_per_unit_mass", Kind::Int, json!(1000), "particles per unit mass"),
        p("spde_scheme", Kind::Choice(SCHEMES), json!("feller_split"), "grid backend scheme"),
        p("replicates", Kind::Int, json!(replicates), "number of replicates"),
    ]
}

fn cluster_params(clusters: u64) -> Vec<Param> {
    vec![
        p("backend", Kind::Choice(BACKENDS), json!("spde_grid"), "simulation backend"),
        p("clusters", Kind::Int, json!(clusters), "surviving clusters per time"),
        p("m0_over_t", Kind::Float, json!(sim::DEFAULT_M0_OVER_T), "initial atom mass divided by t"),
        p("h1", Kind::Float, json!(sim::DEFAULT_H), "grid spacing at t = 1 (scaled by sqrt t)"),
        p("dt1", Kind::Float, json!(0.0), "time step at t = 1, scaled by t (0: h1^2/2)"),
        p("n_particles_per_unit_mass", Kind::Int, json!(1000), "particles per unit mass at t = 1"),
        p("spde_scheme", Kind::Choice(SCHEMES), json!("feller_split"), "grid backend scheme"),
        p("budget", Kind::Int, json!(50_000_000), "maximum simulation attempts"),
    ]
}

fn set_default(v: &mut [Param], key: &str, value: Value) {
    if let Some(prm) = v.iter_mut().find(|p| p.key == key) {
        prm.default = value;
    }
}

fn params(cmd: &str) -> Vec<Param> {
    match cmd {
        "solve-f" => vec![
            p("x_max", Kind::Float, json!(10.0), "right end of the shooting interval"),
            p("n_points", Kind::Int, json!(2001), "grid points on [0, x_max]"),
            p("tol", Kind::Float, json!(1e-10), "bisection width for F(0)"),
        ],
        "solve-g" => vec![
            p("x_min", Kind::Float, json!(-10.0), "left end of the grid"),
            p("x_max", Kind::Float, json!(10.0), "right end of the grid"),
            p("n_points", Kind::Int, json!(2001), "grid points"),
            p("infinity_surrogate", Kind::Float, json!(profiles::DEFAULT_INFINITY_SURROGATE), "finite stand-in for lambda = inf"),
            p("dt", Kind::Float, json!(1e-3), "largest time step"),
        ],
        "eig" => vec![
            p("phi", Kind::Choice(PHIS), json!("F"), "killing function"),
            p("method", Kind::Choice(METHODS), json!("both"), "discretization"),
            p("basis", Kind::Int, json!(spectral::DEFAULT_BASIS), "Hermite basis size"),
            p("k", Kind::Float, json!(spectral::DEFAULT_K), "truncation for the finite-volume method"),
            p("fd_n", Kind::Int, json!(spectral::DEFAULT_FD_N), "finite-volume cells"),
            p("convergence", Kind::Bool, json!(true), "also tabulate lambda0 against basis size and K"),
            p("survival_t", Kind::Float, json!(0.0), "Monte Carlo survival check at this time (0: skip)"),
            p("survival_samples", Kind::Int, json!(20000), "paths for the survival check"),
            p("survival_dt", Kind::Float, json!(spectral::DEFAULT_SURVIVAL_DT), "time step for the survival check"),
        ],
        "simulate" => {
            let mut v = sim_params(200, 1.0, sim::DEFAULT_H);
            v.push(p("lambdas", Kind::Floats, json!([0.5, 1.0, 2.0]), "Laplace arguments for the total-mass check"));
            v.push(p("duality_lambdas", Kind::Floats, json!([1.0, 2.0]), "Laplace arguments for the duality check"));
            v.push(p("duality_x", Kind::Floats, json!([0.0, 1.0]), "points x for the duality check"));
            v.push(p("hitting_r", Kind::Floats, json!([]), "radii for the hitting check (need R > 2 sqrt t)"));
            v.push(p("store_snapshots", Kind::Int, json!(20), "number of snapshot CSVs to store"));
            v
        }
        "localtime" => {
            let mut v = cluster_params(500);
            v.push(p("t_values", Kind::Floats, json!([0.5, 1.0, 2.0]), "times"));
            v.push(p("lambda", Kind::Float, json!(64.0), "approximant parameter"));
            v.push(p("lambda0", Kind::Float, json!(0.0), "exponent (0: spectral estimate for F)"));
            v.push(p("ladder", Kind::Floats, json!([64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0]), "stabilization ladder"));
            v
        }
        "growth" => {
            let mut v = sim_params(300, 1.0, 0.02);
            v.push(p("eps", Kind::Float, json!(2.5e-3), "mass to the right of tau"));
            v.push(p("n_u", Kind::Int, json!(8), "ladder points on [sqrt eps, 10 sqrt eps]"));
            v
        }
        "tail" => {
            let mut v = sim_params(10000, 1.0, sim::DEFAULT_H);
            v.push(p("x_values", Kind::Floats, json!([0.5, 1.0, 1.5]), "points x"));
            v.push(p("lambdas", Kind::Floats, json!([1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]), "lambda ladder"));
            v
        }
        "boxdim" => {
            let mut v = cluster_params(200);
            set_default(&mut v, "h1", json!(0.02));
            v.push(p("t", Kind::Float, json!(1.0), "time"));
            v.push(p("threshold", Kind::Float, json!(0.0), "numerical zero level (0: ten times the clip scale)"));
            v.push(p("levels", Kind::Int, json!(7), "dyadic box sizes h 2^k, k = 1..levels"));
            v
        }
        "pipeline" => vec![],
        _ => vec![],
    }
}

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("solve-f", "shoot for the self-similar profile F"),
    ("solve-g", "G by time stepping, cross-checked by shooting"),
    ("eig", "spectrum of the killed Ornstein-Uhlenbeck operator"),
    ("simulate", "simulate X_t from a point mass and check closed forms"),
    ("localtime", "local-time approximants over cluster ensembles"),
    ("growth", "mass near the right edge of the support"),
    ("tail", "small right-mass probabilities"),
    ("boxdim", "box-counting dimension of the zero-set boundary"),
    ("pipeline", "F, eigenvalues of F/2, F and G, and 2 - 2 lambda0"),
];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Command::new("sbmlab")
        .about("Numerical lab for the zero-set boundary of one-dimensional super-Brownian motion")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name)
            .about(*about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("JSON object of parameters"))
            .arg(Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)).help("master seed"))
            .arg(Arg::new("jobs").long("jobs").value_parser(clap::value_parser!(usize)).help("worker threads (default: all cores)"))
            .arg(Arg::new("out").long("out").value_name("DIR").help("store root (default: $SBMLAB_OUT or ./sbmlab-out)"));
        for prm in params(name) {
            sub = sub.arg(
                Arg::new(prm.key)
                    .long(flag_name(prm.key))
                    .action(ArgAction::Set)
                    .allow_negative_numbers(true)
                    .help(format!("{} [default: {}]", prm.help, prm.default)),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn usage_error(key: &str, reason: impl std::fmt::Display) -> LabError {
    LabError::invalid(key, reason.to_string())
}

fn parse_text(prm: &Param, text: &str) -> Result<Value> {
    let bad = |why: &str| usage_error(prm.key, format!("`{text}`: {why}"));
    Ok(match prm.kind {
        Kind::Float => json!(text.trim().parse::<f64>().map_err(|_| bad("expected a number"))?),
        Kind::Int => json!(text.trim().parse::<u64>().map_err(|_| bad("expected a non-negative integer"))?),
        Kind::Bool => json!(text.trim().parse::<bool>().map_err(|_| bad("expected true or false"))?),
        Kind::Floats => {
            let items: std::result::Result<Vec<f64>, _> = text
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect();
            json!(items.map_err(|_| bad("expected comma-separated numbers"))?)
        }
        Kind::Choice(opts) => {
            if !opts.contains(&text) {
                return Err(bad(&format!("expected one of {}", opts.join(", "))));
            }
            json!(text)
        }
    })
}

fn check_value(prm: &Param, v: &Value) -> Result<Value> {
    let ok = match prm.kind {
        Kind::Float => v.as_f64().is_some(),
        Kind::Int => v.as_u64().is_some(),
        Kind::Bool => v.is_boolean(),
        Kind::Floats => v.as_array().is_some_and(|a| a.iter().all(|x| x.as_f64().is_some())),
        Kind::Choice(opts) => v.as_str().is_some_and(|s| opts.contains(&s)),
    };
    if !ok {
        return Err(usage_error(prm.key, format!("config file value {v} has the wrong type")));
    }
    Ok(match prm.kind {
        Kind::Float => json!(v.as_f64().unwrap()),
        _ => v.clone(),
    })
}

/// Parameters after precedence has been applied.
struct Resolved {
    values: Map<String, Value>,
    sources: Map<String, Value>,
    seed: u64,
}

impl Resolved {
    fn f(&self, key: &str) -> f64 {
        self.values[key].as_f64().expect("validated float")
    }
    fn u(&self, key: &str) -> u64 {
        self.values[key].as_u64().expect("validated integer")
    }
    fn n(&self, key: &str) -> usize {
        self.u(key) as usize
    }
    fn b(&self, key: &str) -> bool {
        self.values[key].as_bool().expect("validated bool")
    }
    fn s(&self, key: &str) -> &str {
        self.values[key].as_str().expect("validated string")
    }
    fn fs(&self, key: &str) -> Vec<f64> {
        self.values[key].as_array().expect("validated list").iter().filter_map(Value::as_f64).collect()
    }
    fn opt(&self, key: &str) -> Option<f64> {
        let v = self.f(key);
        (v != 0.0).then_some(v)
    }
    fn config_value(&self) -> Value {
        Value::Object(self.values.clone())
    }
}

fn resolve(name: &str, m: &ArgMatches) -> Result<Resolved> {
    let table = params(name);
    let mut values = Map::new();
    let mut sources = Map::new();
    for prm in &table {
        values.insert(prm.key.into(), prm.default.clone());
        sources.insert(prm.key.into(), json!("default"));
    }
    let mut seed = DEFAULT_SEED;
    sources.insert("seed".into(), json!("default"));
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage_error("config", format!("cannot read {path}: {e}")))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| usage_error("config", format!("{path}: {e}")))?;
        let Value::Object(obj) = file else {
            return Err(usage_error("config", "the config file must hold a JSON object"));
        };
        for (k, v) in obj {
            if k == "seed" {
                seed = v.as_u64().ok_or_else(|| usage_error("seed", "expected a non-negative integer"))?;
                sources.insert("seed".into(), json!("file"));
                continue;
            }
            let prm = table
                .iter()
                .find(|p| p.key == k)
                .ok_or_else(|| usage_error(&k, format!("unknown key for `{name}`")))?;
            values.insert(k.clone(), check_value(prm, &v)?);
            sources.insert(k, json!("file"));
        }
    }
    for prm in &table {
        if let Some(text) = m.get_one::<String>(prm.key) {
            values.insert(prm.key.into(), parse_text(prm, text)?);
            sources.insert(prm.key.into(), json!("flag"));
        }
    }
    if let Some(s) = m.get_one::<u64>("seed") {
        seed = *s;
        sources.insert("seed".into(), json!("flag"));
    }
    Ok(Resolved { values, sources, seed })
}

/// What a subcommand produced.
struct Outcome {
    stdout: Vec<String>,
    stderr: Vec<String>,
    artifacts: Vec<Artifact>,
    extra: Map<String, Value>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            stdout: Vec::new(),
            stderr: Vec::new(),
            artifacts: Vec::new(),
            extra: Map::new(),
        }
    }
}

/// Run the command line and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match execute(name, sub) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LabError::InvalidInput { .. } => EXIT_USAGE,
                _ => EXIT_NUMERICAL,
            }
        }
    }
}

fn execute(name: &str, m: &ArgMatches) -> Result<()> {
    let cfg = resolve(name, m)?;
    let out: PathBuf = match m.get_one::<String>("out") {
        Some(o) => o.into(),
        None => std::env::var_os("SBMLAB_OUT").map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT.into()),
    };
    let mut manifest = RunManifest::new(name, &cfg.config_value(), cfg.seed);
    let jobs = m.get_one::<usize>("jobs").copied().unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| usage_error("jobs", e))?;
    let run_id = manifest.run_id.clone();
    let outcome = pool.install(|| dispatch(name, &cfg, &run_id))?;
    manifest.extra.insert("config_sources".into(), Value::Object(cfg.sources.clone()));
    manifest.extra.extend(outcome.extra);
    let dir = io_store::write_run(&out, &manifest, &outcome.artifacts)?;
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    for line in &outcome.stdout {
        let _ = writeln!(so, "{line}");
    }
    for line in &outcome.stderr {
        eprintln!("{line}");
    }
    eprintln!("run {} written to {}", manifest.run_id, dir.display());
    Ok(())
}

fn dispatch(name: &str, cfg: &Resolved, run_id: &str) -> Result<Outcome> {
    match name {
        "solve-f" => cmd_solve_f(cfg, run_id),
        "solve-g" => cmd_solve_g(cfg, run_id),
        "eig" => cmd_eig(cfg),
        "simulate" => cmd_simulate(cfg, run_id),
        "localtime" => cmd_localtime(cfg),
        "growth" => cmd_growth(cfg),
        "tail" => cmd_tail(cfg),
        "boxdim" => cmd_boxdim(cfg),
        "pipeline" => cmd_pipeline(run_id),
        other => Err(usage_error("subcommand", format!("unknown subcommand `{other}`"))),
    }
}

fn cmd_solve_f(cfg: &Resolved, run_id: &str) -> Result<Outcome> {
    let r = profiles::solve_f(cfg.f("x_max"), cfg.n("n_points"), cfg.f("tol"))?;
    let full = r.profile.even_extension()?;
    let res = profiles::ode_residual(&r.profile)?;
    let max_res = res.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut o = Outcome::new();
    o.stdout.push(format!("{:.10}", r.c_star));
    o.stderr.push(format!("bracket [{:e}, {:e}] after {} bisections, max ODE residual {max_res:.2e}", r.bracket.0, r.bracket.1, r.iterations));
    o.artifacts.push(Artifact::new("F.csv", io_store::profile_csv(&full, run_id)));
    o.artifacts.push(Artifact::json(
        "summary.json",
        &json!({
            "c_star": r.c_star,
            "bracket": [r.bracket.0, r.bracket.1],
            "iterations": r.iterations,
            "negativity_x": r.blowup_or_negativity_x,
            "max_ode_residual": max_res,
        }),
    )?);
    Ok(o)
}

fn cmd_solve_g(cfg: &Resolved, run_id: &str) -> Result<Outcome> {
    let g = profiles::solve_g(cfg.f("x_min"), cfg.f("x_max"), cfg.n("n_points"), cfg.f("infinity_surrogate"), cfg.f("dt"))?;
    let g0 = g.profile.eval(0.0);
    let left = g.profile.values[0];
    let mut o = Outcome::new();
    o.stdout.push(format!("{g0:.6}"));
    o.stderr.push(format!(
        "G(0) = {g0:.6}, G({}) = {left:.6}, shooting amplitude {:.8}, sup gap {:.2e}",
        g.profile.x_min, g.amplitude, g.gap
    ));
    o.artifacts.push(Artifact::new("G.csv", io_store::profile_csv(&g.profile, run_id)));
    o.artifacts.push(Artifact::new("G_shooting.csv", io_store::profile_csv(&g.shooting, run_id)));
    o.artifacts.push(Artifact::json(
        "summary.json",
        &json!({
            "g0": g0,
            "g_left": left,
            "amplitude": g.amplitude,
            "cross_check_gap": g.gap,
            "cross_check_tol": profiles::G_CROSS_CHECK_TOL,
        }),
    )?);
    Ok(o)
}

fn eigen_tables(tag: &str, r: &EigenResult, reference: Option<&GridFunction>, o: &mut Outcome) -> Result<()> {
    let rows: Vec<Vec<f64>> = r
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(n, l)| vec![n as f64, *l, r.thetas.get(n).copied().unwrap_or(f64::NAN)])
        .collect();
    o.artifacts.push(Artifact::new(format!("eigenvalues_{tag}.csv"), io_store::csv_table(&["n", "lambda", "theta"], &rows)));
    let psi0 = r.psi0();
    let count = r.eigenfunctions.len().min(4);
    let mut headers: Vec<String> = vec!["x".into()];
    headers.extend((0..count).map(|k| format!("psi{k}")));
    let scaled = match reference {
        Some(g) => Some(scale_to(g, psi0)),
        None => None,
    };
    if scaled.is_some() {
        headers.push("reference".into());
    }
    let rows: Vec<Vec<f64>> = (0..psi0.n_points())
        .map(|i| {
            let x = psi0.x(i);
            let mut row = vec![x];
            row.extend(r.eigenfunctions[..count].iter().map(|f| f.eval(x)));
            if let Some(s) = &scaled {
                row.push(s.eval(x));
            }
            row
        })
        .collect();
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    o.artifacts.push(Artifact::new(format!("eigenfunctions_{tag}.csv"), io_store::csv_table(&h, &rows)));
    Ok(())
}

/// `reference` multiplied by its best `L^2(m)` fit to `psi`, on the grid of `psi`.
fn scale_to(reference: &GridFunction, psi: &GridFunction) -> GridFunction {
    let w = |x: f64| (-0.5 * x * x).exp();
    let (mut pr, mut rr) = (0.0, 0.0);
    for i in 0..psi.n_points() {
        let x = psi.x(i);
        let r = reference.eval(x);
        pr += psi.values[i] * r * w(x);
        rr += r * r * w(x);
    }
    let s = if rr > 0.0 { pr / rr } else { 0.0 };
    psi.map("reference", |x, _| s * reference.eval(x)).expect("same grid")
}

fn cmd_eig(cfg: &Resolved) -> Result<Outcome> {
    let phi: Builtin = cfg.s("phi").parse()?;
    let spec = KillingSpec::builtin(phi)?;
    let method = cfg.s("method");
    let reference = if phi == Builtin::G {
        Some(experiments::g_eigenfunction_candidate(&spec.phi)?)
    } else {
        None
    };
    let mut o = Outcome::new();
    let mut summary = Map::new();
    let mut results = Vec::new();
    if method != "fd" {
        results.push(("hermite", spectral::eig_hermite(&spec, cfg.n("basis"))?));
    }
    if method != "hermite" {
        results.push(("fd", spectral::eig_neumann_fd(&spec, cfg.f("k"), cfg.n("fd_n"))?));
    }
    for (tag, r) in &results {
        o.stdout.push(format!("{tag} {:.4}", r.lambda0()));
        if let Some(w) = r.truncation_warning {
            o.stderr.push(format!("warning: {tag} truncation changes lambda0 by {w:.2e}"));
        }
        eigen_tables(tag, r, reference.as_ref(), &mut o)?;
        let mut entry = json!({
            "lambda0": r.lambda0(),
            "theta0": r.theta0,
            "eigenvalues": r.eigenvalues,
            "basis_size_or_n": r.basis_size_or_n,
            "truncation_k": r.truncation_k,
            "truncation_warning": r.truncation_warning,
        });
        if let Some(g) = &reference {
            entry["reference_l2m_error"] = json!(experiments::weighted_relative_error(r.psi0(), g, -4.0, 4.0));
        }
        summary.insert((*tag).into(), entry);
    }
    summary.insert("phi".into(), json!(spec.name));
    if cfg.b("convergence") {
        if method != "fd" {
            let sizes: Vec<usize> = [20, 40, 60, 80, 100, 120, 160].into_iter().filter(|&b| b <= cfg.n("basis")).collect();
            let rows: Vec<Vec<f64>> = sizes
                .iter()
                .map(|&b| spectral::eig_hermite(&spec, b).map(|r| vec![b as f64, r.lambda0()]))
                .collect::<Result<_>>()?;
            o.artifacts.push(Artifact::new("convergence_hermite.csv", io_store::csv_table(&["basis", "lambda0"], &rows)));
        }
        if method != "hermite" {
            let ks: Vec<f64> = [6.0, 6.5, 7.0, 7.5, 8.0].into_iter().filter(|&k| k <= cfg.f("k")).collect();
            let rows: Vec<Vec<f64>> = ks
                .iter()
                .map(|&k| {
                    let n = ((cfg.n("fd_n") as f64) * k / cfg.f("k")).round() as usize;
                    spectral::eig_neumann_fd(&spec, k, n.max(10)).map(|r| vec![k, r.lambda0()])
                })
                .collect::<Result<_>>()?;
            o.artifacts.push(Artifact::new("convergence_fd.csv", io_store::csv_table(&["k", "lambda0"], &rows)));
        }
    }
    if let Some(t) = cfg.opt("survival_t") {
        let (_, eig) = &results[0];
        let check = spectral::survival_probability_check(&spec, eig, t, cfg.n("survival_samples"), cfg.seed, cfg.f("survival_dt"))?;
        o.stderr.push(format!(
            "survival at t = {t}: MC {:.5} +- {:.5}, leading order {:.5} (z {:.2}), full sum {:.5} (z {:.2})",
            check.mc_estimate, check.mc_stderr, check.spectral_prediction, check.z_score, check.full_prediction, check.z_full
        ));
        o.artifacts.push(Artifact::json("survival.json", &check)?);
    }
    o.artifacts.push(Artifact::json("summary.json", &Value::Object(summary))?);
    Ok(o)
}

fn sim_config(cfg: &Resolved) -> Result<SimConfig> {
    let backend: Backend = cfg.s("backend").parse()?;
    let mut c = SimConfig::new(backend, InitialMeasure::delta(cfg.f("mass")), cfg.f("t_final"), cfg.seed);
    c.h = cfg.f("h");
    c.dt = cfg.opt("dt");
    c.window = (cfg.f("x_min"), cfg.f("x_max"));
    c.n_particles_per_unit_mass = cfg.u("n_particles_per_unit_mass");
    c.spde_scheme = cfg.s("spde_scheme").parse()?;
    c.validate()?;
    Ok(c)
}

fn cluster_config(cfg: &Resolved, t: f64, seed: u64) -> Result<ClusterConfig> {
    let mut c = ClusterConfig::new(t, seed);
    c.backend = cfg.s("backend").parse()?;
    c.m0_over_t = cfg.f("m0_over_t");
    c.h1 = cfg.f("h1");
    c.dt1 = cfg.opt("dt1");
    c.n_particles_per_unit_mass = cfg.u("n_particles_per_unit_mass");
    c.spde_scheme = cfg.s("spde_scheme").parse()?;
    c.budget = cfg.u("budget");
    Ok(c)
}

fn closed_form_lines(rows: &[experiments::ClosedFormRow], o: &mut Outcome) {
    for r in rows {
        o.stdout.push(format!(
            "{}: {:.5} +- {:.5} vs {:.5} (z {:+.2})",
            r.quantity, r.empirical, r.stderr, r.exact, r.z
        ));
    }
}

fn cmd_simulate(cfg: &Resolved, run_id: &str) -> Result<Outcome> {
    let sc = sim_config(cfg)?;
    let ens = sim::simulate(&sc, cfg.n("replicates"))?;
    let mut o = Outcome::new();
    let totals = experiments::total_mass_checks(&ens, &cfg.fs("lambdas"));
    let pairs: Vec<(f64, f64)> = cfg
        .fs("duality_lambdas")
        .iter()
        .flat_map(|&l| cfg.fs("duality_x").into_iter().map(move |x| (l, x)))
        .collect();
    let duality = experiments::duality_checks(&ens, &pairs)?;
    closed_form_lines(&totals, &mut o);
    closed_form_lines(&duality, &mut o);
    let mut table = String::from("replicate,seed,total_mass,max_right,clip_fraction\n");
    for (i, (r, s)) in ens.replicates.iter().zip(&ens.replicate_seeds).enumerate() {
        table.push_str(&format!("{i},{s},{},{},{}\n", fmt_f64(r.total_mass), fmt_f64(r.max_right), fmt_f64(r.clip_fraction)));
    }
    o.artifacts.push(Artifact::new("replicates.csv", table));
    for (i, snap) in ens.snapshots().take(cfg.n("store_snapshots")).enumerate() {
        o.artifacts.push(Artifact::new(format!("snapshot_{i:05}.csv"), io_store::profile_csv(snap, run_id)));
    }
    let mut summary = json!({ "total_mass": totals, "duality": duality });
    let radii = cfg.fs("hitting_r");
    if !radii.is_empty() {
        let hit = sim::hitting_tail_check(&ens, &radii)?;
        o.stderr.push(format!("hitting: fitted constant {:.3}", hit.fitted_c));
        summary["hitting"] = serde_json::to_value(&hit).expect("serializable");
    }
    o.extra.insert("branching_calibration".into(), json!(sc.branching_calibration));
    o.artifacts.push(Artifact::json("summary.json", &summary)?);
    Ok(o)
}

fn lambda0_for(cfg: &Resolved) -> Result<f64> {
    match cfg.opt("lambda0") {
        Some(l) => Ok(l),
        None => {
            let spec = KillingSpec::builtin(Builtin::F)?;
            Ok(spectral::eig_hermite(&spec, spectral::DEFAULT_BASIS)?.lambda0())
        }
    }
}

fn cmd_localtime(cfg: &Resolved) -> Result<Outcome> {
    let lambda0 = lambda0_for(cfg)?;
    let ts = cfg.fs("t_values");
    let mut ensembles = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        let cc = cluster_config(cfg, t, sim::replicate_seed(cfg.seed, i as u64))?;
        ensembles.push(sim::sample_cluster(&cc, cfg.n("clusters"))?);
    }
    let report = experiments::local_time_report(&ensembles, cfg.f("lambda"), lambda0)?;
    let mut o = Outcome::new();
    o.stdout.push(format!(
        "first moment exponent {:.4} +- {:.4} (lambda0 {:.4})",
        report.first_moment_fit.exponent, report.first_moment_fit.stderr, lambda0
    ));
    o.stdout.push(format!(
        "second moment exponent {:.4} +- {:.4} (bound exponent {:.4})",
        report.second_moment_fit.exponent,
        report.second_moment_fit.stderr,
        1.0 - 2.0 * lambda0
    ));
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.t,
                r.clusters as f64,
                r.survival_frequency,
                r.survival_probability,
                r.mean_total,
                r.mean_total_stderr,
                r.canonical_mean,
                r.second_moment,
                r.canonical_second_moment,
            ]
        })
        .collect();
    o.artifacts.push(Artifact::new(
        "localtime.csv",
        io_store::csv_table(
            &["t", "clusters", "survival_frequency", "survival_probability", "mean_total", "mean_total_stderr", "canonical_mean", "second_moment", "canonical_second_moment"],
            &rows,
        ),
    ));
    let ladder = cfg.fs("ladder");
    if ladder.len() >= 2 {
        let mid = &ensembles[ensembles.len() / 2];
        let snaps: Vec<GridFunction> = mid.samples.iter().map(|s| s.snapshot.clone()).collect();
        let st = crate::boundary_stats::local_time_stabilization(&snaps, &ladder, lambda0)?;
        let rows: Vec<Vec<f64>> = st.distances.iter().enumerate().map(|(i, d)| vec![st.lambdas[i], st.lambdas[i + 1], *d]).collect();
        o.artifacts.push(Artifact::new("stabilization.csv", io_store::csv_table(&["lambda", "lambda_next", "mean_l1_distance"], &rows)));
        o.extra.insert("stabilization_t".into(), json!(mid.config.t));
    }
    o.extra.insert("lambda0_used".into(), json!(lambda0));
    o.artifacts.push(Artifact::json("summary.json", &report)?);
    Ok(o)
}

fn cmd_growth(cfg: &Resolved) -> Result<Outcome> {
    let sc = sim_config(cfg)?;
    let ens = sim::simulate(&sc, cfg.n("replicates"))?;
    let eps = cfg.f("eps");
    let g = experiments::growth_report(&ens, eps, cfg.n("n_u"))?;
    let snaps: Vec<GridFunction> = ens.snapshots().cloned().collect();
    let below_ladder = experiments::geometric_ladder(0.1 * eps.sqrt(), eps.sqrt(), cfg.n("n_u"));
    let below = crate::boundary_stats::boundary_growth_experiment(&snaps, eps, &below_ladder)?;
    let mut o = Outcome::new();
    o.stdout.push(format!("u exponent {:.4} +- {:.4} over [{:.4}, {:.4}]", g.fit.exponent, g.fit.stderr, eps.sqrt(), 10.0 * eps.sqrt()));
    o.stderr.push(format!("below sqrt(eps): exponent {:.4}; survivors {}", below.fit.exponent, g.survivors));
    let table = |r: &crate::boundary_stats::GrowthResult| -> Vec<Vec<f64>> {
        r.u_values.iter().zip(&r.means).zip(&r.stderrs).map(|((u, m), s)| vec![*u, *m, *s, m / (u * u)]).collect()
    };
    let headers = ["u", "mean", "stderr", "mean_over_u2"];
    o.artifacts.push(Artifact::new("growth.csv", io_store::csv_table(&headers, &table(&g))));
    o.artifacts.push(Artifact::new("growth_below.csv", io_store::csv_table(&headers, &table(&below))));
    o.artifacts.push(Artifact::json("summary.json", &json!({ "growth": g, "below": below }))?);
    Ok(o)
}

fn cmd_tail(cfg: &Resolved) -> Result<Outcome> {
    let sc = sim_config(cfg)?;
    let ens = sim::simulate(&sc, cfg.n("replicates"))?;
    let rows = experiments::left_tail_report(&ens, &cfg.fs("x_values"), &cfg.fs("lambdas"))?;
    let mut o = Outcome::new();
    let mut table = Vec::new();
    for r in &rows {
        let slope = r.fit.as_ref().map_or(f64::NAN, |f| f.exponent);
        o.stdout.push(format!("x = {}: slope {slope:.4}, monotone {}", r.x, r.monotone));
        for ((l, c), pr) in r.lambdas.iter().zip(&r.counts).zip(&r.probabilities) {
            table.push(vec![r.x, *l, *c as f64, *pr]);
        }
    }
    o.artifacts.push(Artifact::new("tail.csv", io_store::csv_table(&["x", "lambda", "count", "probability"], &table)));
    o.artifacts.push(Artifact::json("summary.json", &rows)?);
    Ok(o)
}

fn cmd_boxdim(cfg: &Resolved) -> Result<Outcome> {
    let cc = cluster_config(cfg, cfg.f("t"), cfg.seed)?;
    let sc = cc.sim_config();
    let threshold = cfg.opt("threshold").unwrap_or(10.0 * sc.dt() / (2.0 * sc.h));
    let ens = sim::sample_cluster(&cc, cfg.n("clusters"))?;
    let snaps: Vec<&GridFunction> = ens.samples.iter().map(|s| &s.snapshot).collect();
    let levels = cfg.u("levels") as u32;
    let report = experiments::box_dimension_report(&snaps, threshold, levels)?;
    let mut counts = Vec::new();
    for (i, s) in snaps.iter().enumerate() {
        let ladder = fractal_dim::dyadic_ladder(s.h(), levels);
        if let Ok(r) = fractal_dim::box_dimension(s, &ladder, threshold) {
            counts.extend(r.eps_ladder.iter().zip(&r.counts).map(|(e, c)| vec![i as f64, *e, *c as f64]));
        }
    }
    let mut o = Outcome::new();
    o.stdout.push(format!("median box dimension {:.4} (IQR {:.4})", report.median, report.iqr));
    o.stderr.push(format!(
        "threshold {threshold:.3e}; {} of {} unreliable, {} degenerate; {}",
        report.unreliable, report.snapshots, report.degenerate, report.note
    ));
    o.artifacts.push(Artifact::new("boxcounts.csv", io_store::csv_table(&["cluster", "eps", "count"], &counts)));
    o.artifacts.push(Artifact::json("summary.json", &report)?);
    Ok(o)
}

fn cmd_pipeline(run_id: &str) -> Result<Outcome> {
    let (report, pairs, g, f) = experiments::pipeline()?;
    let mut o = Outcome::new();
    o.stdout.push(format!("{:.4}", report.dimension));
    o.stderr.push(format!("F(0) = {:.10}", report.f0));
    for p in &pairs {
        o.stderr.push(format!(
            "lambda0[{}] = {:.4} (hermite), {:.4} (fd)",
            p.phi,
            p.hermite.lambda0(),
            p.fd.lambda0()
        ));
    }
    o.stderr.push(format!("lambda0 = {:.4}", report.lambda0));
    o.stderr.push(format!("dim = 2 - 2 lambda0 = {:.4}", report.dimension));
    o.artifacts.push(Artifact::new("F.csv", io_store::profile_csv(&f, run_id)));
    o.artifacts.push(Artifact::new("G.csv", io_store::profile_csv(&g.profile, run_id)));
    o.artifacts.push(Artifact::new("G_shooting.csv", io_store::profile_csv(&g.shooting, run_id)));
    for pair in &pairs {
        let tag = match pair.phi.as_str() {
            "F/2" | "F_half" => "F_half",
            other => other,
        }
        .to_string();
        let reference = if tag == "G" {
            Some(experiments::g_eigenfunction_candidate(&g.shooting)?)
        } else {
            None
        };
        let mut sub = Outcome::new();
        eigen_tables(&format!("{tag}_hermite"), &pair.hermite, reference.as_ref(), &mut sub)?;
        eigen_tables(&format!("{tag}_fd"), &pair.fd, reference.as_ref(), &mut sub)?;
        o.artifacts.extend(sub.artifacts);
    }
    o.extra.insert("lambda0".into(), json!(report.lambda0));
    o.artifacts.push(Artifact::json("summary.json", &report)?);
    Ok(o)
}
