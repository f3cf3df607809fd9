//! Command-line verbs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use phasewave_core::{
    apply_propagator, exact_kernel, exact_manifold, exact_phase_function, exact_phase_solution,
    exact_position_propagator, exact_position_solution, initial_phase_state, kernel_ksc, lift_wkb,
    position_space_solution, solution_on_manifold, transport_manifold, wave_packet_transform, Axis, BuiltinKind,
    ComplexField, Domain, FlowOptions, HamiltonianModel, ModelSpec, PhasePoint, PropagatorOptions, Reading, WkbData,
    C64,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{load_config, wkb_data, Parameter};
use crate::error::CliError;
use crate::run::{convergence_study, run, write_convergence, write_jsonl, Record};

#[derive(Debug, Parser)]
#[command(name = "phasewave", version, about = "Phase-space propagation of semiclassical wave packets")]
pub struct Cli {
    /// Run description (TOML) for `run` and `convergence`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports; relative `--out` paths are resolved against it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for random test points.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute the pipelines of a run description.
    Run,
    /// Error-versus-parameter table with its log-log slope.
    Convergence(ConvergenceArgs),
    /// Propagate initial data in phase space by kernel quadrature.
    PropagatePhase(PropagateArgs),
    /// Reconstruct the position-space wave function at time t.
    PropagatePosition(PositionArgs),
    /// Dump K_sc(., Y, t) on a phase grid, or compare it with the closed forms at random points.
    KernelDump(KernelArgs),
    /// Lift WKB data to phase space.
    LiftWkb(LiftArgs),
    /// Transport the initial Lagrangian manifold.
    Manifold(ManifoldArgs),
    /// Leading-order solution on the transported manifold.
    SolutionOnManifold(ManifoldArgs),
    /// Evaluate a closed-form reference on a grid.
    OracleDump(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Free,
    Linear,
    Harmonic,
    Polynomial,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "free")]
    pub model: ModelArg,
    /// Polynomial terms `qpow,ppow,coeff;...`.
    #[arg(long)]
    pub coeffs: Option<String>,
}

#[derive(Debug, Args)]
pub struct WkbArgs {
    /// Ascending coefficients of S0.
    #[arg(long, default_value = "0,0,0.5")]
    pub s0: String,
    /// Ascending coefficients of the polynomial factor of R0 (defaults to pi^(-1/4)).
    #[arg(long)]
    pub r0: Option<String>,
    /// Ascending coefficients of the Gaussian exponent of R0.
    #[arg(long, default_value = "0,0,-0.5")]
    pub r0_exp: String,
    /// Order of the analytic extensions.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    /// hbar, grid-spacing or step (overrides the config).
    #[arg(long)]
    pub parameter: Option<Parameter>,
    /// Comma-separated parameter values (overrides the config).
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub wkb: WkbArgs,
    /// Coherent state `q,p` instead of WKB data.
    #[arg(long)]
    pub packet: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    pub hbar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Phase grid of the initial data, `min:max:n` for both axes or `qgrid,pgrid`.
    #[arg(long, default_value = "-5.5:5.5:51", allow_hyphen_values = true)]
    pub grid: String,
    /// Output phase grid (defaults to the flowed bounding box).
    #[arg(long, allow_hyphen_values = true)]
    pub output_grid: Option<String>,
    /// Position grid on which the initial state is sampled.
    #[arg(long, default_value = "-10:10:5001", allow_hyphen_values = true)]
    pub position_grid: String,
    #[arg(long, default_value = "phase.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PositionArgs {
    #[command(flatten)]
    pub propagate: PropagateArgs,
    /// Output position grid.
    #[arg(long, default_value = "-3:3:121", allow_hyphen_values = true)]
    pub x: String,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.1)]
    pub hbar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value = "-3:3:61", allow_hyphen_values = true)]
    pub grid: String,
    /// Base point `q,p`.
    #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
    pub base: String,
    /// Compare with the closed form at this many random (X, Y, t) tuples instead.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value = "kernel.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    #[command(flatten)]
    pub wkb: WkbArgs,
    #[arg(long, default_value_t = 0.1)]
    pub hbar: f64,
    #[arg(long, default_value = "-3:3:61", allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, default_value = "lift.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ManifoldArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub wkb: WkbArgs,
    #[arg(long, default_value_t = 0.1)]
    pub hbar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Parametrisation of the initial manifold.
    #[arg(long, default_value = "-2:2:41", allow_hyphen_values = true)]
    pub alpha: String,
    #[arg(long, default_value = "manifold.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Display {
    /// Phase-space initial data.
    Initial,
    PhaseSolution,
    PositionSolution,
    Kernel,
    PositionPropagator,
    /// Slope and offset of the transported manifold (no grid).
    Manifold,
    PhaseFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReadingArg {
    Literal,
    Corrected,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub display: Display,
    #[arg(long, value_enum, default_value = "free")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "corrected")]
    pub reading: ReadingArg,
    #[arg(long, default_value_t = 0.1)]
    pub hbar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Phase grid, or a position grid for position-space displays.
    #[arg(long, default_value = "-3:3:61", allow_hyphen_values = true)]
    pub grid: String,
    /// Second argument of the kernels: `q,p` for the phase kernel, `y` for the position propagator.
    #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
    pub base: String,
    #[arg(long, default_value = "oracle.csv")]
    pub out: PathBuf,
}

fn parse_list(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| CliError::usage(flag, format!("`{v}`: {e}"))))
        .collect()
}

fn parse_pair(flag: &str, s: &str) -> Result<[f64; 2], CliError> {
    match parse_list(flag, s)?.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(CliError::usage(flag, "expected two comma-separated numbers")),
    }
}

/// `min:max:n`.
pub fn parse_axis(flag: &str, s: &str) -> Result<Axis, CliError> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [min, max, n] = parts.as_slice() else {
        return Err(CliError::usage(flag, format!("`{s}` is not of the form min:max:n")));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| CliError::usage(flag, format!("`{v}`: {e}")));
    let n = n.parse::<usize>().map_err(|e| CliError::usage(flag, format!("`{n}`: {e}")))?;
    Axis::new(num(min)?, num(max)?, n).map_err(|e| CliError::usage(flag, e.to_string()))
}

/// One axis spec for both `q` and `p`, or `qspec,pspec`.
pub fn parse_phase_grid(flag: &str, s: &str) -> Result<Vec<Axis>, CliError> {
    match s.split_once(',') {
        Some((q, p)) => Ok(vec![parse_axis(flag, q)?, parse_axis(flag, p)?]),
        None => {
            let a = parse_axis(flag, s)?;
            Ok(vec![a, a])
        }
    }
}

fn check_positive(flag: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(flag, format!("must be positive (got {v})")))
    }
}

fn check_time(v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage("--t", format!("must be non-negative (got {v})")))
    }
}

impl ModelArgs {
    pub fn build(&self) -> Result<HamiltonianModel, CliError> {
        let spec = match self.model {
            ModelArg::Free => ModelSpec::builtin(BuiltinKind::Free),
            ModelArg::Linear => ModelSpec::builtin(BuiltinKind::Linear),
            ModelArg::Harmonic => ModelSpec::builtin(BuiltinKind::Harmonic),
            ModelArg::Polynomial => {
                let raw = self.coeffs.as_deref().ok_or_else(|| CliError::usage("--coeffs", "required for polynomial models"))?;
                let terms = raw
                    .split(';')
                    .map(|t| match parse_list("--coeffs", t)?.as_slice() {
                        [a, b, c] => Ok([*a, *b, *c]),
                        _ => Err(CliError::usage("--coeffs", format!("`{t}` is not qpow,ppow,coeff"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ModelSpec { kind: phasewave_core::models::ModelKindSpec::Polynomial, coeffs: Some(terms), dim: 1 }
            }
        };
        if self.coeffs.is_some() && self.model != ModelArg::Polynomial {
            return Err(CliError::usage("--coeffs", "only polynomial models take coefficients"));
        }
        spec.build().map_err(|e| CliError::usage("--model", e.to_string()))
    }

    fn builtin(&self) -> Option<BuiltinKind> {
        match self.model {
            ModelArg::Free => Some(BuiltinKind::Free),
            ModelArg::Linear => Some(BuiltinKind::Linear),
            ModelArg::Harmonic => Some(BuiltinKind::Harmonic),
            ModelArg::Polynomial => None,
        }
    }
}

impl WkbArgs {
    pub fn data(&self) -> Result<WkbData, CliError> {
        let s0 = parse_list("--s0", &self.s0)?;
        let r0 = match &self.r0 {
            Some(s) => parse_list("--r0", s)?,
            None => vec![std::f64::consts::PI.powf(-0.25)],
        };
        let ex = parse_list("--r0-exp", &self.r0_exp)?;
        Ok(wkb_data(&s0, &r0, &ex, self.order)?)
    }
}

fn builtin_of(m: ModelArg) -> Result<BuiltinKind, CliError> {
    match m {
        ModelArg::Free => Ok(BuiltinKind::Free),
        ModelArg::Linear => Ok(BuiltinKind::Linear),
        ModelArg::Harmonic => Ok(BuiltinKind::Harmonic),
        ModelArg::Polynomial => Err(CliError::usage("--model", "closed forms exist for free, linear and harmonic only")),
    }
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

/// Writes the CSV dump and its one-line JSON metadata next to it.
fn save_field(field: &ComplexField, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    field.save_csv(path)?;
    std::fs::write(path.with_extension("jsonl"), format!("{}\n", field.metadata_json()?))?;
    Ok(())
}

fn save_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn initial_field(a: &PropagateArgs) -> Result<ComplexField, CliError> {
    check_positive("--hbar", a.hbar)?;
    check_time(a.t)?;
    let x = parse_axis("--position-grid", &a.position_grid)?;
    let psi = match &a.packet {
        Some(c) => {
            let [q, p] = parse_pair("--packet", c)?;
            let c = PhasePoint::new_1d(q, p);
            ComplexField::from_fn(vec![x], a.hbar, Domain::Position, |x| phasewave_core::gaussian_packet(&c, a.hbar, x))?
        }
        None => a.wkb.data()?.position_field(x, a.hbar)?,
    };
    let grid = parse_phase_grid("--grid", &a.grid)?;
    Ok(wave_packet_transform(&psi, &grid)?)
}

fn propagate_phase(a: &PropagateArgs, out_dir: &Path) -> Result<(), CliError> {
    let model = a.model.build()?;
    let psi0 = initial_field(a)?;
    let mut opts = PropagatorOptions::default();
    if let Some(g) = &a.output_grid {
        opts.output = Some(parse_phase_grid("--output-grid", g)?);
    }
    let prop = apply_propagator(&psi0, a.t, &model, &opts)?;
    let path = resolve(out_dir, &a.out);
    save_field(&prop.field, &path)?;
    println!(
        "t = {}: norm {:.8}, {} base nodes ({} past the Ehrenfest bound), wrote {}",
        a.t,
        prop.field.norm(),
        prop.nodes_used,
        prop.nodes_past_ehrenfest,
        path.display()
    );
    Ok(())
}

fn propagate_position(a: &PositionArgs, out_dir: &Path) -> Result<(), CliError> {
    let p = &a.propagate;
    let model = p.model.build()?;
    let psi0 = initial_field(p)?;
    let x = parse_axis("--x", &a.x)?;
    let psi = position_space_solution(&psi0, p.t, &model, &[x], &PropagatorOptions::default())?;
    let path = resolve(out_dir, &p.out);
    save_field(&psi, &path)?;
    println!("t = {}: norm {:.8}, wrote {}", p.t, psi.norm(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct KernelSample {
    q: f64,
    p: f64,
    eta: f64,
    xi: f64,
    t: f64,
    ksc: [f64; 2],
    exact: [f64; 2],
    rel_error: f64,
}

fn kernel_dump(a: &KernelArgs, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    check_positive("--hbar", a.hbar)?;
    check_time(a.t)?;
    let model = a.model.build()?;
    let flow = FlowOptions::default();
    let path = resolve(out_dir, &a.out);
    if let Some(n) = a.random {
        let kind = a.model.builtin().ok_or_else(|| CliError::usage("--random", "needs a built-in model"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x = PhasePoint::new_1d(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let y = PhasePoint::new_1d(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let t = rng.random_range(1e-3..=1.0);
            let k = kernel_ksc(&x, &y, t, &model, a.hbar, &flow)?;
            let e = exact_kernel(kind, Reading::Corrected, &x, &y, t, a.hbar)?;
            samples.push(KernelSample {
                q: x.q[0],
                p: x.p[0],
                eta: y.q[0],
                xi: y.p[0],
                t,
                ksc: [k.re, k.im],
                exact: [e.re, e.im],
                rel_error: (k - e).norm() / e.norm(),
            });
        }
        let worst = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
        let path = path.with_extension("jsonl");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path)?), &samples)?;
        println!("{n} random tuples, max relative error {worst:.3e}, wrote {}", path.display());
        return Ok(());
    }
    let [q, p] = parse_pair("--base", &a.base)?;
    let y = PhasePoint::new_1d(q, p);
    let grid = parse_phase_grid("--grid", &a.grid)?;
    let bundle = phasewave_core::integrate_characteristics(&model, &y, a.t, &flow.at(vec![a.t]))?;
    let node = phasewave_core::KernelNode::new(&bundle, bundle.last(), a.hbar)?;
    let field = ComplexField::from_fn(grid, a.hbar, Domain::Phase, |x| node.eval(x))?;
    save_field(&field, &path)?;
    println!("K_sc(., ({q}, {p}), {}) on {} nodes, wrote {}", a.t, field.len(), path.display());
    Ok(())
}

fn lift(a: &LiftArgs, out_dir: &Path) -> Result<(), CliError> {
    check_positive("--hbar", a.hbar)?;
    let data = a.wkb.data()?;
    let grid = parse_phase_grid("--grid", &a.grid)?;
    let field = lift_wkb(&data, &grid, a.hbar)?;
    let path = resolve(out_dir, &a.out);
    save_field(&field, &path)?;
    println!("lifted WKB data on {} nodes, wrote {}", field.len(), path.display());
    Ok(())
}

fn manifold(a: &ManifoldArgs, out_dir: &Path, with_solution: bool) -> Result<(), CliError> {
    check_positive("--hbar", a.hbar)?;
    check_time(a.t)?;
    let model = a.model.build()?;
    let data = a.wkb.data()?;
    let alpha = parse_axis("--alpha", &a.alpha)?;
    let flow = FlowOptions::default();
    let lm = transport_manifold(&data, &model, a.t, &alpha, &flow)?;
    let path = resolve(out_dir, &a.out);
    if with_solution {
        let mut rows = Vec::with_capacity(lm.q.len());
        for k in 0..lm.q.len() {
            let x = PhasePoint::new_1d(lm.q[k], lm.p[k]);
            let v = solution_on_manifold(&x, &lm, &data, &model, a.hbar, &flow)?;
            rows.push(vec![lm.alpha[k], lm.q[k], lm.p[k], v.re, v.im]);
        }
        save_table(&path, &["alpha", "q", "p", "re", "im"], &rows)?;
        println!("solution on {} manifold samples, wrote {}", rows.len(), path.display());
    } else {
        let rows: Vec<Vec<f64>> = (0..lm.q.len())
            .map(|k| vec![lm.alpha[k], lm.q[k], lm.p[k], lm.phase[k], lm.dq_dalpha[k]])
            .collect();
        save_table(&path, &["alpha", "q", "p", "phase", "dq_dalpha"], &rows)?;
        let fit = lm.fit_line()?;
        std::fs::write(path.with_extension("jsonl"), format!("{}\n", serde_json::to_string(&fit)?))?;
        println!(
            "manifold at t = {}: slope {:.12}, offset {:.12}, wrote {}",
            a.t,
            fit.slope,
            fit.offset,
            path.display()
        );
    }
    Ok(())
}

fn oracle_dump(a: &OracleArgs, out_dir: &Path) -> Result<(), CliError> {
    check_positive("--hbar", a.hbar)?;
    check_time(a.t)?;
    let kind = builtin_of(a.model)?;
    let reading = match a.reading {
        ReadingArg::Literal => Reading::Literal,
        ReadingArg::Corrected => Reading::Corrected,
    };
    let (t, h) = (a.t, a.hbar);
    let path = resolve(out_dir, &a.out);
    let phase = |f: &dyn Fn(&PhasePoint) -> phasewave_core::Result<C64>| -> Result<ComplexField, CliError> {
        let grid = parse_phase_grid("--grid", &a.grid)?;
        let probe = ComplexField::zeros(grid.clone(), h, Domain::Phase)?;
        let values = (0..probe.len())
            .map(|k| f(&PhasePoint::from_stacked(&probe.coords(k))))
            .collect::<phasewave_core::Result<Vec<_>>>()?;
        Ok(ComplexField::new(grid, values, h, Domain::Phase)?)
    };
    let position = |f: &dyn Fn(f64) -> phasewave_core::Result<C64>| -> Result<ComplexField, CliError> {
        let x = parse_axis("--grid", &a.grid)?;
        let values = x.points().into_iter().map(f).collect::<phasewave_core::Result<Vec<_>>>()?;
        Ok(ComplexField::new(vec![x], values, h, Domain::Position)?)
    };
    let field = match a.display {
        Display::Initial => phase(&|x| initial_phase_state(reading, x, h))?,
        Display::PhaseSolution => phase(&|x| exact_phase_solution(kind, reading, x, t, h).map(|e| e.value))?,
        Display::Kernel => {
            let [q, p] = parse_pair("--base", &a.base)?;
            let y = PhasePoint::new_1d(q, p);
            phase(&|x| exact_kernel(kind, reading, x, &y, t, h))?
        }
        Display::PositionSolution => position(&|x| exact_position_solution(kind, x, t, h))?,
        Display::PositionPropagator => {
            let y = parse_list("--base", &a.base)?[0];
            position(&|x| exact_position_propagator(kind, reading, x, y, t, h))?
        }
        Display::PhaseFunction => position(&|x| exact_phase_function(kind, x, t).map(|v| C64::new(v, 0.0)))?,
        Display::Manifold => {
            let (slope, offset) = exact_manifold(kind, t)?;
            save_table(&path, &["t", "slope", "offset"], &[vec![t, slope, offset]])?;
            println!("{kind} manifold at t = {t}: p = {slope:.12} q + {offset:.12}");
            return Ok(());
        }
    };
    save_field(&field, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_verb(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::usage("--config", "required by `run`"))?;
    let plan = load_config(path)?.validate()?;
    let started = std::time::Instant::now();
    let report = run(&plan, &cli.out_dir)?;
    if let Some(i) = &report.initial {
        println!("t = 0: norm {:.8}, Fock-Bargmann residual {:.3e}", i.norm, i.fock_bargmann_residual);
    }
    for t in &report.times {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "t = {}: norm {:.8}, max rel {}, L2 rel {}, on-manifold {}",
            t.t,
            t.norm,
            fmt(t.max_rel),
            fmt(t.l2_rel),
            fmt(t.on_manifold)
        );
    }
    for w in report.warnings() {
        if let Record::Warning { t, kind, message } = w {
            println!("warning ({kind}) at t = {t}: {message}");
        }
    }
    println!(
        "report: {} ({:.1} s)",
        cli.out_dir.join(&plan.config.outputs.report).display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn convergence_verb(cli: &Cli, a: &ConvergenceArgs) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::usage("--config", "required by `convergence`"))?;
    let plan = load_config(path)?.validate()?;
    let from_cfg = plan.config.convergence.as_ref();
    let parameter = a
        .parameter
        .or(from_cfg.map(|c| c.parameter))
        .ok_or_else(|| CliError::usage("--parameter", "no parameter given and the config has no [convergence] table"))?;
    let values = match &a.values {
        Some(v) => parse_list("--values", v)?,
        None => from_cfg
            .map(|c| c.values.clone())
            .ok_or_else(|| CliError::usage("--values", "no values given and the config has no [convergence] table"))?,
    };
    let table = convergence_study(&plan, parameter, &values)?;
    let (csv_path, _) = write_convergence(&table, &cli.out_dir)?;
    for r in &table.rows {
        println!("{} = {:<10} {} = {:.4e}", table.parameter, r.value, table.quantity, r.error);
    }
    println!("log-log slope {:.3}, wrote {}", table.slope, csv_path.display());
    Ok(())
}

/// Runs a parsed invocation.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads", "must be at least 1"));
        }
        // A pool that is already built (repeated calls in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = &cli.out_dir;
    match &cli.command {
        Command::Run => run_verb(cli),
        Command::Convergence(a) => convergence_verb(cli, a),
        Command::PropagatePhase(a) => propagate_phase(a, out),
        Command::PropagatePosition(a) => propagate_position(a, out),
        Command::KernelDump(a) => kernel_dump(a, out, cli.seed),
        Command::LiftWkb(a) => lift(a, out),
        Command::Manifold(a) => manifold(a, out, false),
        Command::SolutionOnManifold(a) => manifold(a, out, true),
        Command::OracleDump(a) => oracle_dump(a, out),
    }
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
