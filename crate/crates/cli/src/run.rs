//! Configured pipelines: transform, propagate, compare with the closed forms.

use std::io::Write;
use std::path::{Path, PathBuf};

use phasewave_core::flow::EhrenfestWarning;
use phasewave_core::transform::PHASE_DECAY;
use phasewave_core::{
    apply_propagator, exact_phase_solution, exact_position_solution, fock_bargmann_residual, gaussian_packet,
    integrate_characteristics, lift_wkb, position_space_solution, solution_on_manifold, transform_at,
    transport_manifold, wave_packet_transform, Axis, BuiltinKind, ComplexField, Domain, FlowMethod, PhasePoint,
    PropagatorOptions, Reading, WkbData, C64,
};
use serde::Serialize;

use crate::config::{check_study, InitialSpec, Parameter, Plan};
use crate::error::CliError;

/// One line of the JSON-lines report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Run {
        schema_version: u32,
        model: String,
        hbar: f64,
        times: Vec<f64>,
        phase_grid: Vec<Axis>,
        oracle: Option<String>,
    },
    Initial(InitialEntry),
    Time(TimeEntry),
    Warning {
        t: f64,
        kind: String,
        message: String,
    },
    Error {
        stage: String,
        t: Option<f64>,
        message: String,
    },
    Convergence(ConvergenceTable),
    Summary {
        ok: bool,
        max_rel: Option<f64>,
        within_tolerance: Option<bool>,
    },
}

/// Checks of the initial phase-space data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialEntry {
    pub norm: f64,
    pub fock_bargmann_residual: f64,
    /// `max |lift_wkb - transform| / max |transform|` (WKB data only).
    pub lift_max_error: Option<f64>,
    pub oracle_max_rel: Option<f64>,
    pub field: Option<String>,
}

/// Error norms of one propagated time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeEntry {
    pub t: f64,
    pub norm: f64,
    pub max_rel: Option<f64>,
    pub l2_rel: Option<f64>,
    /// Leading-order solution on the transported manifold against the closed form.
    pub on_manifold: Option<f64>,
    pub position_max_rel: Option<f64>,
    pub nodes_used: usize,
    pub nodes_skipped: usize,
    pub nodes_past_ehrenfest: usize,
    pub field: Option<String>,
    pub position_field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub records: Vec<Record>,
    pub initial: Option<InitialEntry>,
    pub times: Vec<TimeEntry>,
    pub ok: bool,
}

impl RunReport {
    pub fn max_rel(&self) -> Option<f64> {
        self.times.iter().filter_map(|t| t.max_rel).reduce(f64::max)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| matches!(r, Record::Warning { .. }))
    }
}

/// Serializes records, one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, records: &[T]) -> Result<(), CliError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Largest relative error where `|exact| > cut * max |exact|`, and the relative weighted L2 error.
pub fn error_norms(approx: &[C64], exact: &[C64], weights: &[f64], cut: f64) -> (f64, f64) {
    let peak = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, e), w) in approx.iter().zip(exact).zip(weights) {
        if e.norm() > cut * peak {
            worst = worst.max((a - e).norm() / e.norm());
        }
        num += w * (a - e).norm_sqr();
        den += w * e.norm_sqr();
    }
    (worst, (num / den).sqrt())
}

fn close(a: &[f64], b: &[f64]) -> bool {
    let n = a.len().max(b.len());
    (0..n).all(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs() <= 1e-12)
}

/// The built-in model whose closed-form solutions apply to this run, if any.
pub fn oracle_kind(plan: &Plan) -> Option<BuiltinKind> {
    let kind = plan.model.builtin_kind()?;
    let chirp = WkbData::unit_chirp();
    let data = plan.wkb.as_ref()?;
    let same = close(&data.s0.coeffs, &chirp.s0.coeffs)
        && close(&data.r0.poly.coeffs, &chirp.r0.poly.coeffs)
        && close(&data.r0.exponent.coeffs, &chirp.r0.exponent.coeffs);
    same.then_some(kind)
}

/// Position-space initial state of the plan at `hbar`.
pub fn initial_position_field(plan: &Plan, hbar: f64) -> Result<ComplexField, CliError> {
    let field = match &plan.config.initial {
        InitialSpec::Wkb { .. } => plan.wkb.as_ref().expect("validated").position_field(plan.position, hbar)?,
        InitialSpec::Packet { center } => {
            let c = PhasePoint::new_1d(center[0], center[1]);
            ComplexField::from_fn(vec![plan.position], hbar, Domain::Position, |x| gaussian_packet(&c, hbar, x))?
        }
    };
    Ok(field)
}

fn phase_points(field: &ComplexField) -> Vec<PhasePoint> {
    (0..field.len()).map(|k| PhasePoint::from_stacked(&field.coords(k))).collect()
}

fn oracle_values(kind: BuiltinKind, field: &ComplexField, t: f64) -> Result<Vec<C64>, CliError> {
    let hbar = field.hbar();
    phase_points(field)
        .iter()
        .map(|x| Ok(exact_phase_solution(kind, Reading::Corrected, x, t, hbar)?.value))
        .collect()
}

struct Sink {
    dir: PathBuf,
    enabled: bool,
    meta: Vec<serde_json::Value>,
}

impl Sink {
    fn field(&mut self, name: &str, t: f64, field: &ComplexField) -> Result<Option<String>, CliError> {
        if !self.enabled {
            return Ok(None);
        }
        field.save_csv(&self.dir.join(name))?;
        let meta: serde_json::Value = serde_json::from_str(&field.metadata_json()?)?;
        self.meta.push(serde_json::json!({ "file": name, "t": t, "meta": meta }));
        Ok(Some(name.to_string()))
    }
}

fn ehrenfest_message(w: &EhrenfestWarning) -> String {
    format!("flow Jacobian norm {:.4e} exceeds hbar^(-1/2) = {:.4e}", w.jacobian_norm, w.threshold)
}

/// Executes the plan and writes the report (and CSV dumps) into `out_dir`.
///
/// Hard errors are recorded in the report before they are returned.
pub fn run(plan: &Plan, out_dir: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = &plan.config;
    let oracle = oracle_kind(plan);
    let mut report = RunReport { records: Vec::new(), initial: None, times: Vec::new(), ok: true };
    report.records.push(Record::Run {
        schema_version: cfg.schema_version,
        model: plan.model.builtin_kind().map_or("polynomial", |k| k.name()).to_string(),
        hbar: cfg.hbar,
        times: cfg.times.clone(),
        phase_grid: plan.phase.clone(),
        oracle: oracle.map(|k| k.name().to_string()),
    });
    let mut sink = Sink { dir: out_dir.to_path_buf(), enabled: cfg.outputs.fields, meta: Vec::new() };
    let result = run_stages(plan, oracle, &mut sink, &mut report);
    if let Err((stage, t, e)) = &result {
        report.ok = false;
        report.records.push(Record::Error { stage: stage.clone(), t: *t, message: e.to_string() });
    }
    let max_rel = report.max_rel();
    report.records.push(Record::Summary {
        ok: report.ok,
        max_rel,
        within_tolerance: max_rel.map(|m| m <= cfg.tolerances.max_rel),
    });
    let f = std::fs::File::create(out_dir.join(&cfg.outputs.report))?;
    write_jsonl(std::io::BufWriter::new(f), &report.records)?;
    if sink.enabled {
        let f = std::fs::File::create(out_dir.join("fields.jsonl"))?;
        write_jsonl(std::io::BufWriter::new(f), &sink.meta)?;
    }
    match result {
        Ok(()) => Ok(report),
        Err((_, _, e)) => Err(e),
    }
}

type StageError = (String, Option<f64>, CliError);

fn stage<T, E: Into<CliError>>(name: &str, t: Option<f64>, r: Result<T, E>) -> Result<T, StageError> {
    r.map_err(|e| (name.to_string(), t, e.into()))
}

fn run_stages(plan: &Plan, oracle: Option<BuiltinKind>, sink: &mut Sink, report: &mut RunReport) -> Result<(), StageError> {
    let cfg = &plan.config;
    let hbar = cfg.hbar;
    let tol = cfg.tolerances;
    let psi = stage("initial", None, initial_position_field(plan, hbar))?;
    let psi0 = stage("transform", None, wave_packet_transform(&psi, &plan.phase))?;
    let lift_max_error = match &plan.wkb {
        Some(data) => {
            let lifted = stage("lift", None, lift_wkb(data, &plan.phase, hbar))?;
            let peak = psi0.max_abs();
            let e = lifted.values().iter().zip(psi0.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            Some(e / peak)
        }
        None => None,
    };
    let oracle_max_rel = match oracle {
        Some(kind) => {
            let exact = stage("oracle", Some(0.0), oracle_values(kind, &psi0, 0.0))?;
            Some(error_norms(psi0.values(), &exact, &psi0.weights(), tol.region).0)
        }
        None => None,
    };
    let initial = InitialEntry {
        norm: psi0.norm(),
        fock_bargmann_residual: stage("transform", None, fock_bargmann_residual(&psi0))?,
        lift_max_error,
        oracle_max_rel,
        field: stage("output", None, sink.field("psi0_phase.csv", 0.0, &psi0))?,
    };
    report.initial = Some(initial.clone());
    report.records.push(Record::Initial(initial));

    let mut opts = PropagatorOptions { flow: plan.flow.clone(), ..PropagatorOptions::default() };
    opts.output = plan.output.clone();
    for (k, &t) in cfg.times.iter().enumerate() {
        let at = Some(t);
        let prop = stage("propagate", at, apply_propagator(&psi0, t, &plan.model, &opts))?;
        let field = &prop.field;
        let (max_rel, l2_rel) = match oracle {
            Some(kind) => {
                let exact = stage("oracle", at, oracle_values(kind, field, t))?;
                let (m, l) = error_norms(field.values(), &exact, &field.weights(), tol.region);
                (Some(m), Some(l))
            }
            None => (None, None),
        };
        if let Some(w) = prop.ehrenfest.first() {
            report.records.push(Record::Warning { t: w.t, kind: "ehrenfest".into(), message: ehrenfest_message(w) });
        }
        if let Err(e) = field.check_density_decay(PHASE_DECAY) {
            report.records.push(Record::Warning { t, kind: "truncation".into(), message: format!("output grid: {e}") });
        }
        let on_manifold = match (oracle, &plan.wkb) {
            (Some(kind), Some(data)) => match on_manifold_error(kind, data, plan, t) {
                Ok(v) => Some(v),
                Err(e) => {
                    report.records.push(Record::Warning { t, kind: "manifold".into(), message: e.to_string() });
                    None
                }
            },
            _ => None,
        };
        let (position_max_rel, position_field) = match plan.reconstruct {
            Some(axis) => {
                let rec = stage("reconstruct", at, position_space_solution(&psi0, t, &plan.model, &[axis], &opts))?;
                let err = match oracle {
                    Some(kind) => {
                        let exact: Vec<C64> = stage(
                            "oracle",
                            at,
                            axis.points().iter().map(|&x| exact_position_solution(kind, x, t, hbar)).collect(),
                        )?;
                        Some(error_norms(rec.values(), &exact, &rec.weights(), tol.region).0)
                    }
                    None => None,
                };
                (err, stage("output", at, sink.field(&format!("position_t{k}.csv"), t, &rec))?)
            }
            None => (None, None),
        };
        let entry = TimeEntry {
            t,
            norm: field.norm(),
            max_rel,
            l2_rel,
            on_manifold,
            position_max_rel,
            nodes_used: prop.nodes_used,
            nodes_skipped: prop.nodes_skipped,
            nodes_past_ehrenfest: prop.nodes_past_ehrenfest,
            field: stage("output", at, sink.field(&format!("phase_t{k}.csv"), t, field))?,
            position_field,
        };
        report.times.push(entry.clone());
        report.records.push(Record::Time(entry));
    }
    Ok(())
}

/// Relative error of the leading-order solution on the transported manifold.
fn on_manifold_error(kind: BuiltinKind, data: &WkbData, plan: &Plan, t: f64) -> Result<f64, CliError> {
    let hbar = plan.config.hbar;
    let lm = transport_manifold(data, &plan.model, t, &plan.alpha, &plan.flow)?;
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for (q, p) in lm.q.iter().zip(&lm.p) {
        let x = PhasePoint::new_1d(*q, *p);
        let v = solution_on_manifold(&x, &lm, data, &plan.model, hbar, &plan.flow)?;
        let e = exact_phase_solution(kind, Reading::Corrected, &x, t, hbar)?.value;
        worst = worst.max((v - e).norm());
        peak = peak.max(e.norm());
    }
    Ok(worst / peak)
}

/// Error against a refinement parameter with its fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub parameter: String,
    pub quantity: String,
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub value: f64,
    pub error: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Measures the error of one pipeline stage as `parameter` takes `values`.
///
/// * `hbar`: `max |lift_wkb - W psi0| / max |W psi0|` on the phase grid (WKB data).
/// * `grid-spacing`: Fock-Bargmann residual of `W psi0` on phase grids of the given spacing.
/// * `step`: endpoint error of the RK4 flow from `convergence.base` over the last
///   configured time (1 if none), against the closed form or a 16x finer RK4 run.
pub fn convergence_study(plan: &Plan, parameter: Parameter, values: &[f64]) -> Result<ConvergenceTable, CliError> {
    check_study(parameter, values).map_err(|m| crate::config::ConfigError::new("convergence.values", m))?;
    let cfg = &plan.config;
    let (quantity, errors) = match parameter {
        Parameter::Hbar => {
            let data = plan.wkb.as_ref().ok_or_else(|| {
                crate::config::ConfigError::new("initial.kind", "an hbar study needs WKB initial data")
            })?;
            let errs = values
                .iter()
                .map(|&hbar| {
                    let psi = initial_position_field(plan, hbar)?;
                    let lifted = lift_wkb(data, &plan.phase, hbar)?;
                    let w = transform_at(&psi, &phase_points(&lifted))?;
                    let peak = w.iter().map(|v| v.norm()).fold(0.0, f64::max);
                    let e = w.iter().zip(lifted.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                    Ok(e / peak)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("lift_max_error", errs)
        }
        Parameter::GridSpacing => {
            let psi = initial_position_field(plan, cfg.hbar)?;
            let errs = values
                .iter()
                .map(|&h| {
                    let axes = vec![
                        Axis::with_spacing(plan.phase[0].min, plan.phase[0].max, h)?,
                        Axis::with_spacing(plan.phase[1].min, plan.phase[1].max, h)?,
                    ];
                    Ok(fock_bargmann_residual(&wave_packet_transform(&psi, &axes)?)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("fock_bargmann_residual", errs)
        }
        Parameter::Step => {
            let base = cfg.convergence.as_ref().map(|c| c.base).unwrap_or([1.0, 0.5]);
            let x0 = PhasePoint::new_1d(base[0], base[1]);
            let t = cfg.times.last().copied().filter(|t| *t > 0.0).unwrap_or(1.0);
            let reference = if plan.model.builtin_kind().is_some() {
                plan.flow.clone().with_method(FlowMethod::Exact)
            } else {
                let finest = values.iter().copied().fold(f64::INFINITY, f64::min);
                plan.flow.clone().with_method(FlowMethod::Rk4).with_step(finest / 16.0)
            };
            let end = |o| -> Result<PhasePoint, CliError> {
                let b = integrate_characteristics(&plan.model, &x0, t, &o)?;
                Ok(b.points[b.last()].clone())
            };
            let exact = end(reference.at(vec![t]))?;
            let errs = values
                .iter()
                .map(|&s| {
                    let x = end(plan.flow.clone().with_method(FlowMethod::Rk4).with_step(s).at(vec![t]))?;
                    Ok((x.q[0] - exact.q[0]).abs().max((x.p[0] - exact.p[0]).abs()))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("flow_endpoint_error", errs)
        }
    };
    let rows = values.iter().zip(&errors).map(|(&value, &error)| ConvergenceRow { value, error }).collect();
    Ok(ConvergenceTable {
        parameter: parameter.name().to_string(),
        quantity: quantity.to_string(),
        rows,
        slope: loglog_slope(values, &errors),
    })
}

/// Writes `convergence_<parameter>.csv` and a one-record JSON-lines file.
pub fn write_convergence(table: &ConvergenceTable, out_dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("convergence_{}.csv", table.parameter));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([table.parameter.as_str(), table.quantity.as_str()])?;
    for r in &table.rows {
        w.write_record([r.value.to_string(), r.error.to_string()])?;
    }
    w.flush()?;
    let json_path = out_dir.join(format!("convergence_{}.jsonl", table.parameter));
    let f = std::fs::File::create(&json_path)?;
    write_jsonl(std::io::BufWriter::new(f), &[Record::Convergence(table.clone())])?;
    Ok((csv_path, json_path))
}
