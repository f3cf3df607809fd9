//! Run descriptions.
//!
//! A run is a TOML file:
//!
//! ```toml
//! schema_version = 1
//! hbar = 0.05
//! times = [0.1, 0.5, 1.0]
//!
//! [model]
//! kind = "free"            # free | linear | harmonic | polynomial
//!
//! [initial]
//! kind = "wkb"             # wkb | packet
//! s0 = [0.0, 0.0, 0.5]     # ascending coefficients
//!
//! [grids.position]
//! min = -10.0
//! max = 10.0
//! spacing = 0.0025
//!
//! [grids.phase]
//! q = { min = -6.6, max = 6.6, n = 81 }
//! p = { min = -6.6, max = 6.6, n = 81 }
//! ```
//!
//! Optional tables: `[grids.output]` (phase grid of the propagated fields,
//! defaults to the flowed bounding box), `[grids.alpha]` (manifold
//! parametrisation), `[grids.reconstruct]` (position grid for the
//! reconstructed wave function), `[flow]`, `[outputs]`, `[tolerances]` and
//! `[convergence]`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use phasewave_core::field::check_phase_spacing;
use phasewave_core::Error as CoreError;
use phasewave_core::{
    Axis, FlowMethod, FlowOptions, GaussPoly, HamiltonianModel, ModelSpec, Polynomial, WkbData,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Invalid run description; `field` is the dotted key at fault.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{} (line {l}): {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub hbar: f64,
    #[serde(default)]
    pub times: Vec<f64>,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub grids: Grids,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialSpec {
    /// `R0(x) exp(i S0(x)/hbar)` with `R0 = poly(x) exp(exponent(x))`.
    Wkb {
        s0: Vec<f64>,
        #[serde(default = "default_r0")]
        r0: Vec<f64>,
        #[serde(default = "default_r0_exponent")]
        r0_exponent: Vec<f64>,
        #[serde(default = "default_order")]
        order: usize,
    },
    /// Coherent state centred at `(q, p)`.
    Packet { center: [f64; 2] },
}

fn default_r0() -> Vec<f64> {
    vec![PI.powf(-0.25)]
}

fn default_r0_exponent() -> Vec<f64> {
    vec![0.0, 0.0, -0.5]
}

fn default_order() -> usize {
    2
}

/// Either `n` nodes or a maximal `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
}

impl AxisSpec {
    pub fn to_axis(&self, field: &str) -> Result<Axis, ConfigError> {
        let ax = match (self.n, self.spacing) {
            (Some(n), None) => Axis::new(self.min, self.max, n),
            (None, Some(h)) => Axis::with_spacing(self.min, self.max, h),
            _ => return Err(ConfigError::new(field, "exactly one of `n` and `spacing` is required")),
        };
        ax.map_err(|e| ConfigError::new(field, e.to_string()))
    }
}

impl From<Axis> for AxisSpec {
    fn from(a: Axis) -> Self {
        Self { min: a.min, max: a.max, n: Some(a.n), spacing: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGridSpec {
    pub q: AxisSpec,
    pub p: AxisSpec,
}

impl PhaseGridSpec {
    pub fn to_axes(&self, field: &str) -> Result<Vec<Axis>, ConfigError> {
        Ok(vec![self.q.to_axis(&format!("{field}.q"))?, self.p.to_axis(&format!("{field}.p"))?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub position: AxisSpec,
    pub phase: PhaseGridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PhaseGridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AxisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<AxisSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default)]
    pub method: FlowMethod,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
}

fn default_step() -> f64 {
    1e-3
}

fn default_rtol() -> f64 {
    1e-10
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self { method: FlowMethod::Auto, step: default_step(), rtol: default_rtol() }
    }
}

impl FlowSpec {
    pub fn options(&self) -> FlowOptions {
        let mut o = FlowOptions::default().with_method(self.method).with_step(self.step);
        o.rtol = self.rtol;
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Write CSV dumps of every field.
    #[serde(default = "yes")]
    pub fields: bool,
    #[serde(default = "default_report")]
    pub report: String,
}

fn yes() -> bool {
    true
}

fn default_report() -> String {
    "report.jsonl".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Self { fields: true, report: default_report() }
    }
}

/// Pass thresholds recorded alongside the error norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_max_rel")]
    pub max_rel: f64,
    /// Errors are measured where `|Psi_exact| > region * max |Psi_exact|`.
    #[serde(default = "default_region")]
    pub region: f64,
}

fn default_max_rel() -> f64 {
    1e-4
}

fn default_region() -> f64 {
    1e-3
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { max_rel: default_max_rel(), region: default_region() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameter {
    Hbar,
    GridSpacing,
    Step,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Hbar => "hbar",
            Parameter::GridSpacing => "grid-spacing",
            Parameter::Step => "step",
        }
    }
}

impl std::str::FromStr for Parameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hbar" => Ok(Parameter::Hbar),
            "grid-spacing" => Ok(Parameter::GridSpacing),
            "step" => Ok(Parameter::Step),
            _ => Err(format!("unknown parameter `{s}` (expected hbar, grid-spacing or step)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub parameter: Parameter,
    pub values: Vec<f64>,
    /// Start point of the flow for `step` studies.
    #[serde(default = "default_base")]
    pub base: [f64; 2],
}

fn default_base() -> [f64; 2] {
    [1.0, 0.5]
}

/// Validated run description with its derived objects.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    pub model: HamiltonianModel,
    pub position: Axis,
    pub phase: Vec<Axis>,
    pub output: Option<Vec<Axis>>,
    pub alpha: Axis,
    pub reconstruct: Option<Axis>,
    pub wkb: Option<WkbData>,
    pub flow: FlowOptions,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a run description; errors carry the dotted key and, when known, the line.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        field: "(syntax)".into(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "(root)".to_string() } else { path };
        let line = toml::from_str::<RunConfig>(text).err().and_then(|e| e.span()).map(|s| line_of(text, s.start));
        ConfigError { field, line, message: e.into_inner().to_string() }
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("(file)", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn model_field(msg: &str) -> String {
    match msg.split_once(':') {
        Some((head, _)) if head.starts_with("model.") => head.to_string(),
        _ => "model".to_string(),
    }
}

pub fn wkb_data(s0: &[f64], r0: &[f64], r0_exponent: &[f64], order: usize) -> Result<WkbData, ConfigError> {
    let poly = |field: &str, c: &[f64]| Polynomial::new(c.to_vec()).map_err(|e| ConfigError::new(field, e.to_string()));
    let amp = GaussPoly::new(poly("initial.r0", r0)?, poly("initial.r0_exponent", r0_exponent)?)
        .map_err(|e| ConfigError::new("initial.r0_exponent", e.to_string()))?;
    WkbData::new(poly("initial.s0", s0)?, amp, order).map_err(|e| ConfigError::new("initial", e.to_string()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<Plan, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {} (this build reads {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(ConfigError::new("hbar", format!("must be positive (got {})", self.hbar)));
        }
        if self.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(ConfigError::new("times", "times must be finite and non-negative"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::new("times", "times must be strictly ascending"));
        }
        if self.model.dim != 1 {
            return Err(ConfigError::new("model.dim", "runs are one-dimensional"));
        }
        let model = self.model.build().map_err(|e| match e {
            CoreError::Config(m) => ConfigError::new(model_field(&m), m),
            other => ConfigError::new("model.coeffs", other.to_string()),
        })?;
        let wkb = match &self.initial {
            InitialSpec::Wkb { s0, r0, r0_exponent, order } => Some(wkb_data(s0, r0, r0_exponent, *order)?),
            InitialSpec::Packet { center } => {
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(ConfigError::new("initial.center", "must be finite"));
                }
                None
            }
        };
        let position = self.grids.position.to_axis("grids.position")?;
        let phase = self.grids.phase.to_axes("grids.phase")?;
        check_phase_spacing(&phase, self.hbar).map_err(|e| ConfigError::new("grids.phase", e.to_string()))?;
        let output = self.grids.output.as_ref().map(|g| g.to_axes("grids.output")).transpose()?;
        let alpha = match &self.grids.alpha {
            Some(a) => a.to_axis("grids.alpha")?,
            None => Axis::new(-2.0, 2.0, 41).expect("static axis"),
        };
        let reconstruct = self.grids.reconstruct.as_ref().map(|a| a.to_axis("grids.reconstruct")).transpose()?;
        if !(self.flow.step > 0.0 && self.flow.step.is_finite()) {
            return Err(ConfigError::new("flow.step", "must be positive"));
        }
        if !(self.flow.rtol > 0.0) {
            return Err(ConfigError::new("flow.rtol", "must be positive"));
        }
        if !(self.tolerances.max_rel > 0.0) {
            return Err(ConfigError::new("tolerances.max_rel", "must be positive"));
        }
        if !(self.tolerances.region >= 0.0 && self.tolerances.region < 1.0) {
            return Err(ConfigError::new("tolerances.region", "must lie in [0, 1)"));
        }
        if self.outputs.report.is_empty() {
            return Err(ConfigError::new("outputs.report", "file name is empty"));
        }
        if let Some(c) = &self.convergence {
            check_study(c.parameter, &c.values).map_err(|m| ConfigError::new("convergence.values", m))?;
        }
        Ok(Plan {
            config: self.clone(),
            model,
            position,
            phase,
            output,
            alpha,
            reconstruct,
            wkb,
            flow: self.flow.options(),
        })
    }
}

/// At least three distinct positive values.
pub fn check_study(_parameter: Parameter, values: &[f64]) -> Result<(), String> {
    if values.len() < 3 {
        return Err(format!("a convergence study needs at least 3 values (got {})", values.len()));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err("values must be positive".into());
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err("values must be distinct".into());
    }
    Ok(())
}
