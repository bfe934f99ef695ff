//! JSON scenario files.
//!
//! A scenario is validated completely (schema, graphs, dimensions, time grid)
//! before anything is simulated. Unknown keys are rejected at every level.
//!
//! ```json
//! {
//!   "kind": "ode",
//!   "dynamics": {"dim": 1, "components": [[{"coeff": 1, "powers": [1]},
//!                                          {"coeff": -1, "powers": [3]}]]},
//!   "certificate": {"P": [[1]], "theta": 2, "box": [[-3, 3]]},
//!   "channels": [{"B": [[1]], "C": [[1]],
//!                 "graph": {"nodes": 2, "links": [[1, 2]]}}],
//!   "initial": {"seed": 1, "low": -2, "high": 2},
//!   "time": {"t_end": 20, "dt": 0.001, "record_every": 10},
//!   "adaptation": {"enabled": true, "default_gain": 1, "initial_weight": 0}
//! }
//! ```
//!
//! PDE scenarios replace `channels` with `grid` (`{"length", "n_cells"}`),
//! top-level `B`, `C` and an optional per-face `gamma`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::certificate::{Certificate, ChannelMap};
use crate::dynamics::{polynomial, PolynomialField, StateBox, VectorField};
use crate::graph::Graph;
use crate::integrator::TimeGrid;
use crate::ode_net::{Channel, Scenario, DEFAULT_DIVERGENCE_BOUND, DEFAULT_DT};
use crate::pde1d::{PdeGrid, PdeScenario};
use crate::rng::CounterRng;

pub const DEFAULT_CERT_GRID: usize = 41;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn schema<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Schema(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Ode,
    Pde,
}

/// Row-major matrix as a list of rows.
pub type MatrixSpec = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, len: usize, what: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrList::List(v) if v.len() == len => Ok(v.clone()),
            ScalarOrList::List(v) => schema(format!("{what}: expected {len} values, got {}", v.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    /// 1-based node pairs.
    pub links: Vec<[usize; 2]>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph, ScenarioError> {
        let pairs: Vec<_> = self.links.iter().map(|l| (l[0], l[1])).collect();
        Graph::from_one_based(self.nodes, &pairs).map_err(|e| ScenarioError::Schema(format!("graph: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<ScalarOrList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_weights: Option<ScalarOrList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(rename = "P")]
    pub p: MatrixSpec,
    pub theta: f64,
    #[serde(rename = "box")]
    pub state_box: StateBox,
    /// One multiplier per channel; all 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<f64>>,
    /// Grid points per dimension for the sampled inequality check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInitial {
    pub seed: u64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    /// One row per node (or cell), `n` entries each.
    Explicit(Vec<Vec<f64>>),
    Random(RandomInitial),
}

impl InitialSpec {
    /// Node-major initial data. Random draws are taken in node-major order
    /// from [`CounterRng`].
    pub fn expand(&self, rows: usize, dim: usize) -> Result<Vec<f64>, ScenarioError> {
        match self {
            InitialSpec::Explicit(v) => {
                if v.len() != rows || v.iter().any(|r| r.len() != dim) {
                    return schema(format!("initial: expected {rows} rows of {dim} values"));
                }
                Ok(v.iter().flatten().copied().collect())
            }
            InitialSpec::Random(r) => {
                if !(r.low.is_finite() && r.high.is_finite() && r.low <= r.high) {
                    return schema("initial: need finite low <= high");
                }
                let mut rng = CounterRng::new(r.seed);
                Ok((0..rows * dim).map(|_| rng.uniform(r.low, r.high)).collect())
            }
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "one")]
    pub default_gain: f64,
    #[serde(default)]
    pub initial_weight: f64,
}

impl Default for AdaptationSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            default_gain: 1.0,
            initial_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeGridSpec {
    pub length: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dynamics: PolynomialField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<ChannelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PdeGridSpec>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(default, rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<ScalarOrList>,
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub adaptation: AdaptationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_bound: Option<f64>,
}

/// Certificate together with its sampling parameters.
#[derive(Debug, Clone)]
pub struct CertificateSetup {
    pub cert: Certificate,
    pub grid: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct OdeSetup {
    pub scenario: Scenario,
    pub certificate: Option<CertificateSetup>,
}

#[derive(Debug, Clone)]
pub struct PdeSetup {
    pub scenario: PdeScenario,
    pub certificate: Option<CertificateSetup>,
}

/// A fully validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub enum Setup {
    Ode(OdeSetup),
    Pde(PdeSetup),
}

impl Setup {
    pub fn certificate(&self) -> Option<&CertificateSetup> {
        match self {
            Setup::Ode(s) => s.certificate.as_ref(),
            Setup::Pde(s) => s.certificate.as_ref(),
        }
    }

    pub fn field(&self) -> &dyn VectorField {
        match self {
            Setup::Ode(s) => s.scenario.field.as_ref(),
            Setup::Pde(s) => s.scenario.field.as_ref(),
        }
    }

    /// Interconnection graph of every channel (the cell path graph for PDEs).
    pub fn graphs(&self) -> Vec<Graph> {
        match self {
            Setup::Ode(s) => s.scenario.channels.iter().map(|c| c.graph.clone()).collect(),
            Setup::Pde(s) => vec![Graph::path(s.scenario.grid.n_cells).expect("n_cells >= 2")],
        }
    }
}

pub fn matrix(spec: &MatrixSpec, what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let rows = spec.len();
    let cols = spec.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || spec.iter().any(|r| r.len() != cols) {
        return schema(format!("{what}: expected a non-empty rectangular matrix"));
    }
    if spec.iter().flatten().any(|v| !v.is_finite()) {
        return schema(format!("{what}: non-finite entry"));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| spec[i][j]))
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))
    }

    pub fn from_value(value: Value) -> Result<Self, ScenarioError> {
        serde_json::from_value(value).map_err(|e| ScenarioError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&read(path)?)
    }

    fn time_grid(&self) -> Result<TimeGrid, ScenarioError> {
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return schema(format!("time.dt must be positive, got {}", t.dt));
        }
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            return schema(format!("time.t_end must be nonnegative, got {}", t.t_end));
        }
        if t.record_every == 0 {
            return schema("time.record_every must be >= 1");
        }
        Ok(TimeGrid {
            t_end: t.t_end,
            dt: t.dt,
            record_every: t.record_every,
        })
    }

    fn certificate_setup(
        &self,
        maps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Option<CertificateSetup>, ScenarioError> {
        let Some(spec) = &self.certificate else { return Ok(None) };
        let omegas = match &spec.omegas {
            Some(w) if w.len() != maps.len() => {
                return schema(format!("certificate.omegas: expected {} values", maps.len()))
            }
            Some(w) => w.clone(),
            None => vec![1.0; maps.len()],
        };
        let p = matrix(&spec.p, "certificate.P")?;
        if p.nrows() != self.dynamics.dim || p.ncols() != self.dynamics.dim {
            return schema(format!("certificate.P must be {0}x{0}", self.dynamics.dim));
        }
        if !(spec.theta > 0.0 && spec.theta.is_finite()) {
            return schema(format!("certificate.theta must be positive, got {}", spec.theta));
        }
        if omegas.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return schema("certificate.omegas must be positive");
        }
        spec.state_box
            .validate(self.dynamics.dim)
            .map_err(|e| ScenarioError::Schema(format!("certificate.box: {e}")))?;
        let grid = spec.grid.unwrap_or(DEFAULT_CERT_GRID);
        if grid < 2 {
            return schema("certificate.grid must be >= 2");
        }
        let channels = maps
            .into_iter()
            .zip(omegas)
            .map(|((b, c), omega)| ChannelMap { b, c, omega })
            .collect();
        Ok(Some(CertificateSetup {
            cert: Certificate {
                p,
                theta: spec.theta,
                state_box: spec.state_box.clone(),
                channels,
            },
            grid,
            seed: spec.seed.unwrap_or(0),
        }))
    }

    /// Validates everything and assembles the simulation inputs.
    pub fn build(&self) -> Result<Setup, ScenarioError> {
        let field: Arc<dyn VectorField> =
            Arc::new(polynomial(self.dynamics.clone()).map_err(|e| ScenarioError::Schema(format!("dynamics: {e}")))?);
        let n = self.dynamics.dim;
        let time = self.time_grid()?;
        let divergence_bound = self.divergence_bound.unwrap_or(DEFAULT_DIVERGENCE_BOUND);
        if !(divergence_bound > 0.0) {
            return schema("divergence_bound must be positive");
        }
        let ad = &self.adaptation;
        if !(ad.default_gain >= 0.0 && ad.default_gain.is_finite()) || !ad.initial_weight.is_finite() {
            return schema("adaptation: default_gain must be >= 0 and initial_weight finite");
        }
        match self.kind {
            Kind::Ode => {
                if self.grid.is_some() || self.b.is_some() || self.c.is_some() || self.gamma.is_some() {
                    return schema("ode scenarios take `channels`, not `grid`/`B`/`C`/`gamma`");
                }
                let Some(specs) = self.channels.as_ref().filter(|c| !c.is_empty()) else {
                    return schema("ode scenarios need at least one entry in `channels`");
                };
                let mut channels = Vec::with_capacity(specs.len());
                for (q, cs) in specs.iter().enumerate() {
                    let what = |s: &str| format!("channels[{q}].{s}");
                    let b = matrix(&cs.b, &what("B"))?;
                    let c = matrix(&cs.c, &what("C"))?;
                    if b.nrows() != n || c.ncols() != n || b.ncols() != c.nrows() {
                        return schema(format!(
                            "channels[{q}]: B must be {n}xp and C px{n}, got {}x{} and {}x{}",
                            b.nrows(),
                            b.ncols(),
                            c.nrows(),
                            c.ncols()
                        ));
                    }
                    let graph = cs.graph.build()?;
                    let m = graph.n_links();
                    let gains = match &cs.gains {
                        Some(g) => g.expand(m, &what("gains"))?,
                        None => vec![ad.default_gain; m],
                    };
                    let initial_weights = match &cs.initial_weights {
                        Some(w) => w.expand(m, &what("initial_weights"))?,
                        None => vec![ad.initial_weight; m],
                    };
                    channels.push(Channel {
                        b,
                        c,
                        graph,
                        gains,
                        initial_weights,
                        omega: 1.0,
                    });
                }
                let n_nodes = channels[0].graph.n_nodes();
                if channels.iter().any(|c| c.graph.n_nodes() != n_nodes) {
                    return schema("all channel graphs must have the same node count");
                }
                let certificate =
                    self.certificate_setup(channels.iter().map(|c| (c.b.clone(), c.c.clone())).collect())?;
                if let Some(cs) = &certificate {
                    for (ch, map) in channels.iter_mut().zip(&cs.cert.channels) {
                        ch.omega = map.omega;
                    }
                }
                let scenario = Scenario {
                    field,
                    channels,
                    n_nodes,
                    x0: self.initial.expand(n_nodes, n)?,
                    time,
                    adaptation_enabled: ad.enabled,
                    divergence_bound,
                };
                scenario.validate().map_err(|e| ScenarioError::Schema(e.to_string()))?;
                Ok(Setup::Ode(OdeSetup { scenario, certificate }))
            }
            Kind::Pde => {
                if self.channels.is_some() {
                    return schema("pde scenarios take `grid`/`B`/`C`, not `channels`");
                }
                let (Some(gs), Some(bs), Some(cs)) = (&self.grid, &self.b, &self.c) else {
                    return schema("pde scenarios need `grid`, `B` and `C`");
                };
                let grid = PdeGrid::new(gs.length, gs.n_cells).map_err(|e| ScenarioError::Schema(e.to_string()))?;
                let b = matrix(bs, "B")?;
                let c = matrix(cs, "C")?;
                if b.nrows() != n || c.ncols() != n || b.ncols() != c.nrows() {
                    return schema(format!("B must be {n}xp and C px{n}"));
                }
                let nf = grid.n_faces();
                let gamma = match &self.gamma {
                    Some(g) => g.expand(nf, "gamma")?,
                    None => vec![ad.default_gain; nf],
                };
                let certificate = self.certificate_setup(vec![(b.clone(), c.clone())])?;
                let scenario = PdeScenario {
                    field,
                    b,
                    c,
                    grid,
                    gamma,
                    k0: vec![ad.initial_weight; nf],
                    x0: self.initial.expand(grid.n_cells, n)?,
                    time,
                    adaptation_enabled: ad.enabled,
                    divergence_bound,
                };
                scenario.validate().map_err(|e| ScenarioError::Schema(e.to_string()))?;
                Ok(Setup::Pde(PdeSetup { scenario, certificate }))
            }
        }
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a scenario file as raw JSON (for parameter overrides).
pub fn load_value(path: &Path) -> Result<Value, ScenarioError> {
    serde_json::from_str(&read(path)?).map_err(|e| ScenarioError::Schema(e.to_string()))
}

/// Replaces the numeric scalar at a dotted path such as
/// `adaptation.default_gain` or `channels.0.gains`. Integer-valued targets
/// stay integers.
pub fn set_parameter(doc: &mut Value, dotted: &str, value: f64) -> Result<(), ScenarioError> {
    let unknown = || ScenarioError::UnknownParameter(dotted.to_string());
    let mut cur = doc;
    for seg in dotted.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(seg).ok_or_else(unknown)?,
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| unknown())?;
                items.get_mut(idx).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    let Value::Number(old) = cur else { return Err(unknown()) };
    let is_int = old.is_u64() || old.is_i64();
    *cur = if is_int && value.fract() == 0.0 && value.abs() < 9.0e15 {
        if value >= 0.0 {
            Value::from(value as u64)
        } else {
            Value::from(value as i64)
        }
    } else {
        serde_json::Number::from_f64(value)
            .map(Value::Number)
            .ok_or_else(unknown)?
    };
    Ok(())
}
