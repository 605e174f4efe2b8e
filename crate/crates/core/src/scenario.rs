//! Scenario files: JSON schema, defaults and load-time validation.
//!
//! Agents are indexed from 0 everywhere, including graph edges. Every check
//! runs before anything fails, so a bad file reports all of its problems at
//! once.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::aux_control::{aux_input_bounds, AuxGains, DEFAULT_Y_SWITCH};
use crate::error::{Error, Result, ValidationIssue};
use crate::mpc::{AgentModel, Horizon, MpcBounds, MpcProblem, MpcWeights, SolverConfig};
use crate::net_graph::{CommGraph, ConsensusGain, Edge};
use crate::paths::{PathSpec, Vec3};
use crate::vehicle::{AgentState, BodyOffset, CommonSpeed, Pose, DEFAULT_DT};

/// Scenario files shipped with the library.
pub const BUNDLED: [(&str, &str); 4] = [
    ("paper_q100", include_str!("../scenarios/paper_q100.json")),
    ("paper_q01", include_str!("../scenarios/paper_q01.json")),
    ("fixed_point", include_str!("../scenarios/fixed_point.json")),
    (
        "consensus_spread",
        include_str!("../scenarios/consensus_spread.json"),
    ),
];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Result<Scenario> {
    let text = bundled_text(name)
        .ok_or_else(|| Error::Malformed(format!("no bundled scenario named {name}")))?;
    parse_scenario(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Cpf,
    Decoupled,
    Consensus,
}

/// A 3x3 weight given as a scalar multiple of I, a diagonal, or in full.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl MatrixSpec {
    pub fn to_matrix(&self) -> Matrix3<f64> {
        match self {
            MatrixSpec::Scalar(s) => Matrix3::identity() * *s,
            MatrixSpec::Diagonal(d) => Matrix3::from_diagonal(&Vec3::new(d[0], d[1], d[2])),
            MatrixSpec::Full(m) => Matrix3::from_fn(|i, j| m[i][j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub n_agents: Option<usize>,
    pub edges: Vec<Edge>,
    pub eps_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingDoc {
    #[serde(default)]
    pub t0: f64,
    /// Uniform sampling period; ignored when `samples` is given.
    #[serde(default = "default_delta")]
    pub sampling_period: f64,
    /// Explicit sample instants, starting at `t0`.
    #[serde(default)]
    pub samples: Option<Vec<f64>>,
    /// Lower bound on every sampling interval. Required.
    pub delta_lb: Option<f64>,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record")]
    pub record_interval: f64,
}

fn default_delta() -> f64 {
    0.1
}
fn default_duration() -> f64 {
    40.0
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_record() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsDoc {
    pub k: MatrixSpec,
    #[serde(default = "default_y_switch")]
    pub y_switch: f64,
}

fn default_y_switch() -> f64 {
    DEFAULT_Y_SWITCH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverDoc {
    pub max_iters: usize,
    pub max_penalty_rounds: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub fd_step: f64,
    pub pg_tol: f64,
    pub feas_tol: f64,
}

impl Default for SolverDoc {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_iters: d.max_iters,
            max_penalty_rounds: d.max_penalty_rounds,
            penalty_init: d.penalty_init,
            penalty_growth: d.penalty_growth,
            fd_step: d.fd_step,
            pg_tol: d.pg_tol,
            feas_tol: d.feas_tol,
        }
    }
}

impl SolverDoc {
    fn to_config(self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            max_penalty_rounds: self.max_penalty_rounds,
            penalty_init: self.penalty_init,
            penalty_growth: self.penalty_growth,
            fd_step: self.fd_step,
            pg_tol: self.pg_tol,
            feas_tol: self.feas_tol,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcDoc {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_segments")]
    pub n_segments: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub q: MatrixSpec,
    #[serde(default = "default_u")]
    pub u: MatrixSpec,
    #[serde(default = "one")]
    pub qc: f64,
    #[serde(default = "one")]
    pub uc: f64,
    #[serde(default = "two")]
    pub m_eta: f64,
    /// Decay rate of the auxiliary `eta` law.
    #[serde(default = "one")]
    pub lambda_eta: f64,
    #[serde(default = "one")]
    pub r_eta: f64,
    #[serde(default = "default_a_eta")]
    pub a_eta: f64,
    /// Decay rate of the `eta` envelope.
    #[serde(default = "default_lambda_env")]
    pub lambda_env: f64,
    /// Defaults to `lambda_eta r_eta`.
    #[serde(default)]
    pub v_gamma_max: Option<f64>,
    /// Bound on `|u_gamma|` used to size the input box; defaults to `r_eta`.
    #[serde(default)]
    pub u_gamma_bound: Option<f64>,
    #[serde(default = "one")]
    pub input_box_scale: f64,
    #[serde(default)]
    pub y_box: Option<[f64; 3]>,
    #[serde(default)]
    pub solver: SolverDoc,
}

fn default_horizon() -> f64 {
    0.4
}
fn default_segments() -> usize {
    8
}
fn default_substeps() -> usize {
    4
}
fn default_u() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_a_eta() -> f64 {
    1e3
}
fn default_lambda_env() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsDoc {
    /// Scale of the consensus allowance in the value-decrease check.
    #[serde(default = "default_c_beta")]
    pub c_beta: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

impl Default for DiagnosticsDoc {
    fn default() -> Self {
        Self {
            c_beta: default_c_beta(),
            solver_tol: default_solver_tol(),
        }
    }
}

fn default_c_beta() -> f64 {
    1.0
}
fn default_solver_tol() -> f64 {
    1e-3
}

/// Initial orientation as a row-major matrix or yaw/pitch/roll in radians
/// (`R = Rz(yaw) Ry(pitch) Rx(roll)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Matrix([f64; 9]),
    Ypr([f64; 3]),
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation::Ypr([0.0; 3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    pub position: [f64; 3],
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default = "default_offset")]
    pub offset: [f64; 3],
    pub path: PathSpec,
    pub gamma0: f64,
    #[serde(default)]
    pub eta0: f64,
    /// Replaces the scenario-wide gains for this agent.
    #[serde(default)]
    pub gains: Option<GainsDoc>,
    /// Replaces the scenario-wide problem settings for this agent.
    #[serde(default)]
    pub mpc: Option<MpcDoc>,
}

fn default_offset() -> [f64; 3] {
    [-0.5, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub graph: GraphDoc,
    pub timing: TimingDoc,
    pub speed: CommonSpeed,
    pub gains: GainsDoc,
    pub mpc: MpcDoc,
    #[serde(default)]
    pub diagnostics: DiagnosticsDoc,
    pub agents: Vec<AgentDoc>,
}

#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub initial: AgentState,
    pub problem: MpcProblem,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub graph: CommGraph,
    pub gain: ConsensusGain,
    pub t0: f64,
    pub t_end: f64,
    /// Sample instants; the last interval runs to `t_end`.
    pub samples: Vec<f64>,
    pub delta_lb: f64,
    pub dt: f64,
    pub record_interval: f64,
    pub speed: CommonSpeed,
    pub agents: Vec<AgentSetup>,
    pub c_beta: f64,
    pub solver_tol: f64,
    pub doc: ScenarioDoc,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Interval from sample `k` to the next sample (or the end).
    pub fn interval(&self, k: usize) -> f64 {
        let next = self.samples.get(k + 1).copied().unwrap_or(self.t_end);
        next - self.samples[k]
    }

    /// Rebuilds from a modified document.
    pub fn from_doc(doc: ScenarioDoc) -> Result<Self> {
        build(doc)
    }

    /// Same scenario with a new duration.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        let mut doc = self.doc.clone();
        doc.timing.duration = duration;
        build(doc)
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc =
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    build(doc)
}

fn build(doc: ScenarioDoc) -> Result<Scenario> {
    let mut issues = Vec::new();
    let mut issue = |f: &str, m: String| issues.push(ValidationIssue::new(f, m));

    let n = doc.graph.n_agents.unwrap_or(doc.agents.len());
    if doc.agents.is_empty() {
        issue("agents", "at least one agent is required".into());
    }
    if n != doc.agents.len() {
        issue(
            "graph.n_agents",
            format!("{n} agents in the graph but {} listed", doc.agents.len()),
        );
    }
    let graph = match CommGraph::new(n.max(1), doc.graph.edges.clone()) {
        Ok(g) => Some(g),
        Err(e) => {
            issue("graph.edges", e.to_string());
            None
        }
    };
    let mut gain = None;
    if let Some(g) = &graph {
        match ConsensusGain::new(doc.graph.eps_bar, g) {
            Ok(k) => gain = Some(k),
            Err(e) => issue(
                "graph.eps_bar",
                format!("{e}; the consensus gain must lie strictly below 1/max degree"),
            ),
        }
        if !g.is_balanced(1e-12) {
            issue(
                "graph.edges",
                "graph is not balanced; the consensus law needs equal in- and out-weights".into(),
            );
        }
        if !g.is_strongly_connected() {
            issue(
                "graph.edges",
                "graph is not strongly connected; consensus cannot be reached".into(),
            );
        }
    }

    let t = &doc.timing;
    let delta_lb = match t.delta_lb {
        Some(d) if d > 0.0 => d,
        Some(d) => {
            issue("timing.delta_lb", format!("must be positive, got {d}"));
            f64::NAN
        }
        None => {
            issue(
                "timing.delta_lb",
                "required: sampling intervals need a positive lower bound".into(),
            );
            f64::NAN
        }
    };
    if !(t.duration > 0.0) {
        issue(
            "timing.duration",
            format!("must be positive, got {}", t.duration),
        );
    }
    if !(t.dt > 0.0) {
        issue("timing.dt", format!("must be positive, got {}", t.dt));
    }
    if !(t.record_interval > 0.0) {
        issue("timing.record_interval", "must be positive".into());
    }
    let t_end = t.t0 + t.duration;
    let samples: Vec<f64> = match &t.samples {
        Some(list) => list.clone(),
        None if t.sampling_period > 0.0 && t.duration > 0.0 => {
            let count = (t.duration / t.sampling_period - 1e-9).ceil().max(1.0) as usize;
            (0..count)
                .map(|k| t.t0 + k as f64 * t.sampling_period)
                .collect()
        }
        None => {
            issue("timing.sampling_period", "must be positive".into());
            vec![]
        }
    };
    if samples.first().is_some_and(|&s| (s - t.t0).abs() > 1e-12) {
        issue("timing.samples", "the first sample must be at t0".into());
    }
    if samples.is_empty() {
        issue("timing.samples", "no sample instants".into());
    }
    let horizon_len = doc.mpc.horizon;
    for k in 0..samples.len() {
        let next = samples.get(k + 1).copied().unwrap_or(t_end);
        let d = next - samples[k];
        let last = k + 1 == samples.len();
        // The final interval may be cut short by the end of the run.
        let too_short = !last && d < delta_lb * (1.0 - 1e-9);
        if !(d > 0.0) || too_short || d > horizon_len * (1.0 + 1e-9) {
            issue(
                "timing.samples",
                format!(
                    "interval {k} has length {d}; intervals must lie in [delta_lb, horizon] = [{delta_lb}, {horizon_len}]"
                ),
            );
            break;
        }
    }

    if let Err(e) = doc.speed.validate() {
        issue("speed", e.to_string());
    }

    let mut agents = Vec::new();
    for (i, a) in doc.agents.iter().enumerate() {
        let field = |s: &str| format!("agents[{i}].{s}");
        let offset = match BodyOffset::new(Vec3::from(a.offset)) {
            Ok(o) => Some(o),
            Err(e) => {
                issue(
                    &field("offset"),
                    format!("{e}; the output map is singular otherwise"),
                );
                None
            }
        };
        if let Err(e) = a.path.validate() {
            issue(&field("path"), e.to_string());
        }
        let r = match a.orientation {
            Orientation::Matrix(m) => Matrix3::from_row_slice(&m),
            Orientation::Ypr([y, p, r]) => Pose::from_ypr(Vec3::zeros(), y, p, r).r,
        };
        let pose = Pose::new(Vec3::from(a.position), r);
        if pose.orthogonality_error() > 1e-9 || r.determinant() <= 0.0 {
            issue(&field("orientation"), "not a rotation matrix".into());
        }
        let gdoc = a.gains.as_ref().unwrap_or(&doc.gains);
        let gains = match AuxGains::new(gdoc.k.to_matrix(), 1.0, gdoc.y_switch) {
            Ok(g) => Some(g),
            Err(e) => {
                issue(&field("gains"), e.to_string());
                None
            }
        };
        let mdoc = a.mpc.as_ref().unwrap_or(&doc.mpc);
        let problem = build_problem(mdoc, &a.path, offset, gains, &doc.speed, &mut |f, m| {
            issue(&format!("agents[{i}].mpc.{f}"), m)
        });
        if mdoc.horizon != doc.mpc.horizon {
            issue(
                &field("mpc.horizon"),
                "all agents must share one horizon".into(),
            );
        }
        if let Some(problem) = problem {
            if a.eta0.abs() > problem.bounds.r_eta + problem.bounds.a_eta {
                issue(&field("eta0"), "initial eta outside its bounds".into());
            }
            agents.push(AgentSetup {
                initial: AgentState {
                    pose,
                    gamma: a.gamma0,
                    eta: a.eta0,
                },
                problem,
            });
        }
    }

    if doc.diagnostics.c_beta < 0.0 || doc.diagnostics.solver_tol < 0.0 {
        issue(
            "diagnostics",
            "c_beta and solver_tol must be non-negative".into(),
        );
    }

    if !issues.is_empty() {
        return Err(Error::Invalid(issues));
    }
    Ok(Scenario {
        name: doc.name.clone(),
        mode: doc.mode,
        graph: graph.expect("checked"),
        gain: gain.expect("checked"),
        t0: t.t0,
        t_end,
        samples,
        delta_lb,
        dt: t.dt,
        record_interval: t.record_interval,
        speed: doc.speed.clone(),
        agents,
        c_beta: doc.diagnostics.c_beta,
        solver_tol: doc.diagnostics.solver_tol,
        doc,
    })
}

fn build_problem(
    m: &MpcDoc,
    path: &PathSpec,
    offset: Option<BodyOffset>,
    gains: Option<AuxGains>,
    speed: &CommonSpeed,
    issue: &mut dyn FnMut(&str, String),
) -> Option<MpcProblem> {
    let horizon = Horizon::new(m.horizon, m.n_segments, m.substeps)
        .map_err(|e| issue("horizon", e.to_string()))
        .ok();
    let weights = MpcWeights::new(
        m.q.to_matrix(),
        m.u.to_matrix(),
        m.qc,
        m.uc,
        m.m_eta,
        m.lambda_eta,
    )
    .map_err(|e| issue("weights", e.to_string()))
    .ok();
    if !(m.input_box_scale > 0.0) {
        issue("input_box_scale", "must be positive".into());
    }
    let (offset, mut gains, horizon, weights) = (offset?, gains?, horizon?, weights?);
    gains.lambda_eta = m.lambda_eta;
    let u_gamma_bound = m.u_gamma_bound.unwrap_or(m.r_eta);
    let bounds = MpcBounds {
        u_box: aux_input_bounds(path, &offset, &gains, speed.sup_abs(), u_gamma_bound)
            .scaled(m.input_box_scale),
        v_max: m.v_gamma_max.unwrap_or(m.lambda_eta * m.r_eta),
        r_eta: m.r_eta,
        a_eta: m.a_eta,
        lambda_env: m.lambda_env,
        y_box: m.y_box.map(Vec3::from),
    };
    if let Err(e) = bounds.validate(m.lambda_eta) {
        issue("bounds", e.to_string());
        return None;
    }
    Some(MpcProblem {
        model: AgentModel::new(path.clone(), offset, gains, speed.clone()),
        weights,
        bounds,
        horizon,
        solver: m.solver.to_config(),
    })
}
