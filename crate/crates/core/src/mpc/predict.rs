//! Single-shooting prediction and the cost quadrature.
//!
//! Each input segment is cut at the end of the auxiliary consensus window if
//! that falls inside it, and every resulting piece is integrated with an even
//! number of RK4 steps so its running cost can be integrated with composite
//! Simpson weights on the RK4 nodes.

use crate::paths::Vec3;
use crate::vehicle::{output_y, rk4_step, AgentState, StageInput, VehicleInput};

use super::cost::{consensus_stage_cost, stage_cost_with_output, terminal_cost};
use super::{DecisionVars, MpcProblem, ProblemParams, Violations};

/// Sampled open-loop trajectory and its cost breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Node times; a segment boundary appears once.
    pub times: Vec<f64>,
    pub states: Vec<AgentState>,
    pub y: Vec<Vec3>,
    /// `u_gamma = u_gamma_aux + eta` at each node, taking the auxiliary
    /// value of the piece that starts there.
    pub u_gamma: Vec<f64>,
    /// States at segment boundaries, `n_segments + 1` entries.
    pub segment_states: Vec<AgentState>,
    /// Running cost integrated up to each segment boundary.
    pub segment_running_cost: Vec<f64>,
    /// Integral of the regulation stage cost.
    pub stage_integral: f64,
    /// Integral of the consensus stage cost.
    pub consensus_integral: f64,
    /// `m(y(t+T)) + m_eta eta(t+T)^2 / 2`.
    pub terminal: f64,
    pub cost: f64,
    pub terminal_state: AgentState,
    pub y_terminal: Vec3,
    /// Smallest slack of the `eta` envelope over the nodes.
    pub envelope_slack: f64,
    /// Smallest slack of the optional output box over the nodes.
    pub y_box_slack: f64,
}

/// Running sums carried across segments.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Acc {
    pub stage: f64,
    pub consensus: f64,
    pub env_min: f64,
    pub y_min: f64,
    /// Sum of squared envelope and output-box violations.
    pub penalty: f64,
}

impl Acc {
    fn new() -> Self {
        Self {
            stage: 0.0,
            consensus: 0.0,
            env_min: f64::INFINITY,
            y_min: f64::INFINITY,
            penalty: 0.0,
        }
    }
}

/// What is needed to restart a rollout at any segment boundary.
#[derive(Debug, Clone)]
pub(crate) struct SegmentCache {
    pub states: Vec<AgentState>,
    pub acc: Vec<Acc>,
}

struct Recorder<'a> {
    pred: &'a mut Prediction,
}

pub(crate) struct Rollout<'a> {
    pub problem: &'a MpcProblem,
    pub params: &'a ProblemParams,
}

impl Rollout<'_> {
    fn segment_start(&self, j: usize) -> f64 {
        self.params.t + j as f64 * self.problem.horizon.segment_length()
    }

    /// Piece boundaries of segment `j` as `(start, end)`.
    fn pieces(&self, j: usize) -> ([(f64, f64); 2], usize) {
        let a = self.segment_start(j);
        let b = self.segment_start(j + 1);
        let cut = self.params.aux.active_until;
        let tol = 1e-12 * (1.0 + b.abs());
        if self.params.aux.value != 0.0 && cut > a + tol && cut < b - tol {
            ([(a, cut), (cut, b)], 2)
        } else {
            ([(a, b), (b, b)], 1)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn node(
        &self,
        t: f64,
        s: &AgentState,
        u: VehicleInput,
        v: f64,
        aux: f64,
        weight: f64,
        acc: &mut Acc,
        rec: &mut Option<Recorder<'_>>,
        store: bool,
    ) {
        let p = self.problem;
        let y = output_y(&s.pose, &p.model.offset, &p.model.path, s.gamma);
        let u_gamma = aux + s.eta;
        acc.stage += weight * stage_cost_with_output(t, s, &y, u, u_gamma, &p.weights, &p.model);
        acc.consensus += weight * consensus_stage_cost(s.eta, v, &p.weights);
        if self.params.envelope_active {
            let bound = p.bounds.a_eta * (-p.bounds.lambda_env * (t - self.params.t0)).exp();
            let slack = bound - s.eta.abs();
            acc.env_min = acc.env_min.min(slack);
            if slack < 0.0 {
                acc.penalty += slack * slack;
            }
        }
        if let Some(ymax) = p.bounds.y_box {
            for i in 0..3 {
                let slack = ymax[i] - y[i].abs();
                acc.y_min = acc.y_min.min(slack);
                if slack < 0.0 {
                    acc.penalty += slack * slack;
                }
            }
        }
        if store {
            if let Some(r) = rec.as_mut() {
                r.pred.times.push(t);
                r.pred.states.push(*s);
                r.pred.y.push(y);
                r.pred.u_gamma.push(u_gamma);
            }
        }
    }

    fn segment(
        &self,
        j: usize,
        s0: AgentState,
        u: VehicleInput,
        v: f64,
        acc: &mut Acc,
        rec: &mut Option<Recorder<'_>>,
    ) -> AgentState {
        let m = self.problem.horizon.substeps;
        let speed = &self.problem.model.speed;
        let (pieces, count) = self.pieces(j);
        let mut s = s0;
        for (pi, &(a, b)) in pieces[..count].iter().enumerate() {
            let h = (b - a) / m as f64;
            let aux = self.params.aux.at(0.5 * (a + b));
            let input = StageInput {
                u,
                v_gamma: v,
                u_gamma_aux: aux,
            };
            let w = h / 3.0;
            for k in 0..=m {
                let t = if k == m { b } else { a + k as f64 * h };
                let simpson = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                // The first node of a later piece duplicates the last node of
                // the previous one; record it only once.
                let store = !(k == 0 && (pi > 0 || j > 0));
                self.node(t, &s, u, v, aux, w * simpson, acc, rec, store);
                if k < m {
                    s = rk4_step(&s, t, h, speed, input);
                }
            }
        }
        s
    }

    fn terminal(&self, s: &AgentState) -> (f64, Vec3) {
        let p = self.problem;
        let y = output_y(&s.pose, &p.model.offset, &p.model.path, s.gamma);
        let m = terminal_cost(&y, &p.weights, &p.model) + 0.5 * p.weights.m_eta * s.eta * s.eta;
        (m, y)
    }

    /// Cost and penalty starting at segment `j0` from a cached boundary.
    pub fn cost_from(
        &self,
        j0: usize,
        s0: AgentState,
        acc0: Acc,
        dec: &DecisionVars,
    ) -> (f64, f64) {
        let mut acc = acc0;
        let mut s = s0;
        let mut none = None;
        for j in j0..dec.len() {
            s = self.segment(
                j,
                s,
                VehicleInput::from_vec(dec.u[j]),
                dec.v[j],
                &mut acc,
                &mut none,
            );
        }
        let (m, _) = self.terminal(&s);
        (acc.stage + acc.consensus + m, acc.penalty)
    }

    /// Full rollout keeping the boundary states for later restarts.
    pub fn cached(&self, dec: &DecisionVars) -> (f64, f64, SegmentCache) {
        let mut acc = Acc::new();
        let mut s = self.params.state;
        let mut cache = SegmentCache {
            states: Vec::with_capacity(dec.len() + 1),
            acc: Vec::with_capacity(dec.len() + 1),
        };
        let mut none = None;
        for j in 0..dec.len() {
            cache.states.push(s);
            cache.acc.push(acc);
            s = self.segment(
                j,
                s,
                VehicleInput::from_vec(dec.u[j]),
                dec.v[j],
                &mut acc,
                &mut none,
            );
        }
        cache.states.push(s);
        cache.acc.push(acc);
        let (m, _) = self.terminal(&s);
        (acc.stage + acc.consensus + m, acc.penalty, cache)
    }

    pub fn start_acc() -> Acc {
        Acc::new()
    }
}

/// Integrates segment `j` of the horizon from `s` under constant inputs.
pub(crate) fn advance_segment(
    problem: &MpcProblem,
    params: &ProblemParams,
    j: usize,
    s: AgentState,
    u: Vec3,
    v: f64,
) -> AgentState {
    let ro = Rollout { problem, params };
    ro.segment(
        j,
        s,
        VehicleInput::from_vec(u),
        v,
        &mut Acc::new(),
        &mut None,
    )
}

/// Forward-integrates the stacked state under a decision and evaluates the
/// cost terms on the horizon grid.
pub fn predict(problem: &MpcProblem, params: &ProblemParams, dec: &DecisionVars) -> Prediction {
    let ro = Rollout { problem, params };
    let mut pred = Prediction {
        times: vec![],
        states: vec![],
        y: vec![],
        u_gamma: vec![],
        segment_states: vec![params.state],
        segment_running_cost: vec![0.0],
        stage_integral: 0.0,
        consensus_integral: 0.0,
        terminal: 0.0,
        cost: 0.0,
        terminal_state: params.state,
        y_terminal: Vec3::zeros(),
        envelope_slack: f64::INFINITY,
        y_box_slack: f64::INFINITY,
    };
    let mut acc = Acc::new();
    let mut s = params.state;
    let mut boundaries = Vec::with_capacity(dec.len());
    let mut running = Vec::with_capacity(dec.len());
    {
        let mut rec = Some(Recorder { pred: &mut pred });
        for j in 0..dec.len() {
            s = ro.segment(
                j,
                s,
                VehicleInput::from_vec(dec.u[j]),
                dec.v[j],
                &mut acc,
                &mut rec,
            );
            boundaries.push(s);
            running.push(acc.stage + acc.consensus);
        }
    }
    let (m, y) = ro.terminal(&s);
    pred.segment_states.extend(boundaries);
    pred.segment_running_cost.extend(running);
    pred.stage_integral = acc.stage;
    pred.consensus_integral = acc.consensus;
    pred.terminal = m;
    pred.cost = acc.stage + acc.consensus + m;
    pred.terminal_state = s;
    pred.y_terminal = y;
    pred.envelope_slack = acc.env_min;
    pred.y_box_slack = acc.y_min;
    pred
}

/// Signed slacks of every constraint family for a decision and its prediction.
pub fn constraint_violations(
    problem: &MpcProblem,
    dec: &DecisionVars,
    pred: &Prediction,
) -> Violations {
    let b = &problem.bounds;
    let u_box = dec
        .u
        .iter()
        .map(|u| b.u_box.slack(VehicleInput::from_vec(*u)))
        .fold(f64::INFINITY, f64::min);
    let v_box = dec
        .v
        .iter()
        .map(|v| b.v_max - v.abs())
        .fold(f64::INFINITY, f64::min);
    Violations {
        u_box,
        v_box,
        eta_terminal: b.r_eta - pred.terminal_state.eta.abs(),
        eta_envelope: pred.envelope_slack,
        y_box: pred.y_box_slack,
    }
}
