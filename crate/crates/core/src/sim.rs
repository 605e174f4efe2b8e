//! Sampled-data closed loop and the two baselines.
//!
//! At every sample the orchestrator publishes the path parameters on a
//! snapshot bus, each agent reads only its neighbors' entries, solves its
//! local problem (agents in parallel), and the optimal inputs are applied
//! open-loop until the next sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aux_control::{aux_consensus_signal, k_aux, AuxConsensusSignal};
use crate::error::{Error, Result};
use crate::mpc::{shift_warm_start, solve, DecisionVars, ProblemParams, SolveOutcome};
use crate::net_graph::{consensus_law, edge_disagreement, NeighborValues};
use crate::paths::Vec3;
use crate::scenario::{Mode, Scenario};
use crate::vehicle::{
    output_y, rk4_step_compensated, substeps, AgentState, StageInput, VehicleInput,
};

/// Path parameters published once per sample.
#[derive(Debug, Default)]
pub struct SnapshotBus {
    slots: Vec<Vec<f64>>,
}

impl SnapshotBus {
    pub fn publish(&mut self, k: usize, gammas: Vec<f64>) {
        if self.slots.len() <= k {
            self.slots.resize(k + 1, vec![]);
        }
        self.slots[k] = gammas;
    }

    /// The entries of sample `k` that `agent` is allowed to read.
    pub fn receive(
        &self,
        k: usize,
        agent: usize,
        graph: &crate::net_graph::CommGraph,
    ) -> NeighborValues {
        graph
            .neighbors(agent)
            .map(|(j, _)| (j, self.slots[k][j]))
            .collect()
    }
}

/// One agent at one recorded instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub agent: usize,
    pub state: AgentState,
    pub y: Vec3,
    /// Input applied from this instant on.
    pub u: VehicleInput,
    pub v_gamma: f64,
    pub u_gamma_aux: f64,
    /// Network disagreement at `t`.
    pub phi: f64,
    /// Optimal cost of the current sample; NaN outside MPC mode.
    pub j_star: f64,
}

/// Per-agent record of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub k: usize,
    pub t: f64,
    pub agent: usize,
    pub gamma: f64,
    pub eta: f64,
    pub k_con: f64,
    pub j_star: f64,
    /// Running cost `l + l_c` predicted over the applied interval.
    pub running_integral: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub warm_violation: f64,
    pub kept_warm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub t: f64,
    pub agent: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub mode: Mode,
    pub n_agents: usize,
    /// Grouped by time, agents in index order.
    pub rows: Vec<TraceRow>,
    pub samples: Vec<SampleRecord>,
    pub abort: Option<Abort>,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.rows
            .iter()
            .step_by(self.n_agents)
            .map(|r| r.t)
            .collect()
    }

    pub fn agent_rows(&self, agent: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.agent == agent)
    }

    pub fn phi_series(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .step_by(self.n_agents)
            .map(|r| (r.t, r.phi))
            .collect()
    }

    pub fn final_rows(&self) -> &[TraceRow] {
        &self.rows[self.rows.len() - self.n_agents..]
    }

    pub fn agent_samples(&self, agent: usize) -> Vec<SampleRecord> {
        self.samples
            .iter()
            .filter(|s| s.agent == agent)
            .copied()
            .collect()
    }
}

pub fn run(scenario: &Scenario, mode: Mode) -> Trace {
    match mode {
        Mode::Cpf => run_cpf(scenario),
        Mode::Decoupled => run_decoupled(scenario),
        Mode::Consensus => run_consensus_only(scenario),
    }
}

/// What an agent applies over one sampling interval.
#[derive(Debug, Clone)]
struct Plan {
    aux: AuxConsensusSignal,
    dec: Option<DecisionVars>,
    seg_len: f64,
    j_star: f64,
}

impl Plan {
    fn open_loop(&self, t_k: f64, tau: f64) -> (VehicleInput, f64) {
        match &self.dec {
            Some(d) => {
                // Boundary instants belong to the segment they open.
                let j = (((tau - t_k) / self.seg_len + 1e-9).floor() as usize).min(d.len() - 1);
                (VehicleInput::from_vec(d.u[j]), d.v[j])
            }
            None => (VehicleInput::default(), 0.0),
        }
    }
}

struct Loop<'a> {
    sc: &'a Scenario,
    mode: Mode,
    states: Vec<AgentState>,
    /// Rounding carry of each path parameter.
    carry: Vec<f64>,
    rows: Vec<TraceRow>,
    samples: Vec<SampleRecord>,
}

impl Loop<'_> {
    fn phi(&self) -> f64 {
        let g: Vec<f64> = self.states.iter().map(|s| s.gamma).collect();
        edge_disagreement(&g, &self.sc.graph)
    }

    fn record(&mut self, t: f64, t_k: f64, plans: &[Plan]) {
        let phi = self.phi();
        for (i, s) in self.states.iter().enumerate() {
            let setup = &self.sc.agents[i];
            let m = &setup.problem.model;
            let y = output_y(&s.pose, &m.offset, &m.path, s.gamma);
            let p = &plans[i];
            let (u, v) = match self.mode {
                Mode::Cpf => p.open_loop(t_k, t),
                Mode::Decoupled => (decoupled_input(self.sc, i, t, s, p.aux.at(t)).u, 0.0),
                Mode::Consensus => (VehicleInput::default(), 0.0),
            };
            self.rows.push(TraceRow {
                t,
                agent: i,
                state: *s,
                y,
                u,
                v_gamma: v,
                u_gamma_aux: p.aux.at(t),
                phi,
                j_star: p.j_star,
            });
        }
    }

    fn run(mut self) -> Trace {
        let sc = self.sc;
        let n = sc.n_agents();
        let mut bus = SnapshotBus::default();
        let mut prev: Vec<Option<(DecisionVars, f64)>> = vec![None; n];
        let mut abort = None;
        let record_every = (sc.record_interval / sc.dt).round().max(1.0) as usize;

        'samples: for (k, &t_k) in sc.samples.iter().enumerate() {
            let delta = sc.interval(k);
            bus.publish(k, self.states.iter().map(|s| s.gamma).collect());
            let inputs: Vec<(NeighborValues, AgentState)> = (0..n)
                .map(|i| (bus.receive(k, i, &sc.graph), self.states[i]))
                .collect();

            let plans: Vec<Result<(Plan, f64, Option<SolveOutcome>)>> = inputs
                .par_iter()
                .enumerate()
                .map(|(i, (nb, state))| {
                    agent_step(sc, self.mode, i, t_k, delta, nb, state, prev[i].as_ref())
                })
                .collect();

            let mut ok_plans = Vec::with_capacity(n);
            for (i, r) in plans.into_iter().enumerate() {
                match r {
                    Ok((plan, k_con, outcome)) => {
                        let (running, iters, viol, warm_viol, kept) = match &outcome {
                            Some(o) => (
                                running_until(o, delta, plan.seg_len),
                                o.diagnostics.iterations,
                                o.diagnostics.max_violation,
                                o.diagnostics.warm_violation,
                                o.diagnostics.kept_warm,
                            ),
                            None => (f64::NAN, 0, 0.0, 0.0, false),
                        };
                        self.samples.push(SampleRecord {
                            k,
                            t: t_k,
                            agent: i,
                            gamma: self.states[i].gamma,
                            eta: self.states[i].eta,
                            k_con,
                            j_star: plan.j_star,
                            running_integral: running,
                            iterations: iters,
                            max_violation: viol,
                            warm_violation: warm_viol,
                            kept_warm: kept,
                        });
                        if let Some(o) = outcome {
                            prev[i] = Some((o.dec, delta));
                        }
                        ok_plans.push(plan);
                    }
                    Err(e) => {
                        abort = Some(Abort {
                            t: t_k,
                            agent: i,
                            message: e.to_string(),
                        });
                    }
                }
            }
            if abort.is_some() {
                break 'samples;
            }

            let steps = substeps(delta, sc.dt);
            let h = delta / steps as f64;
            for step in 0..steps {
                let t = t_k + step as f64 * h;
                if step % record_every == 0 {
                    self.record(t, t_k, &ok_plans);
                }
                self.advance(t, t_k, h, &ok_plans);
            }
        }
        // Close the trace at the instant the run stopped, with zero inputs
        // after an abort and the last applied inputs otherwise.
        let t_stop = abort.as_ref().map_or(sc.t_end, |a| a.t);
        let end_plans: Vec<Plan> = (0..n)
            .map(|i| Plan {
                aux: AuxConsensusSignal::zero(t_stop),
                dec: None,
                seg_len: 1.0,
                j_star: self
                    .samples
                    .iter()
                    .rev()
                    .find(|s| s.agent == i && s.t < t_stop)
                    .map_or(f64::NAN, |s| s.j_star),
            })
            .collect();
        let last_rows: Option<Vec<TraceRow>> = (abort.is_none() && !self.rows.is_empty())
            .then(|| self.rows[self.rows.len() - n..].to_vec());
        self.record(t_stop, t_stop, &end_plans);
        if let Some(last_rows) = last_rows {
            let len = self.rows.len();
            for (row, last) in self.rows[len - n..].iter_mut().zip(&last_rows) {
                row.u = last.u;
                row.v_gamma = last.v_gamma;
            }
        }
        Trace {
            mode: self.mode,
            n_agents: n,
            rows: self.rows,
            samples: self.samples,
            abort,
        }
    }

    fn advance(&mut self, t: f64, t_k: f64, h: f64, plans: &[Plan]) {
        let sc = self.sc;
        let mode = self.mode;
        let tm = t + 0.5 * h;
        for (i, (s, carry)) in self.states.iter_mut().zip(&mut self.carry).enumerate() {
            let p = &plans[i];
            let speed = &sc.agents[i].problem.model.speed;
            let aux = p.aux.at(tm);
            *s = match mode {
                Mode::Cpf => {
                    let (u, v_gamma) = p.open_loop(t_k, tm);
                    let inp = StageInput {
                        u,
                        v_gamma,
                        u_gamma_aux: aux,
                    };
                    rk4_step_compensated(s, carry, t, h, speed, |_, _| inp)
                }
                Mode::Decoupled => rk4_step_compensated(s, carry, t, h, speed, |tau, st| {
                    decoupled_input(sc, i, tau, st, aux)
                }),
                Mode::Consensus => {
                    let inp = StageInput {
                        u_gamma_aux: aux,
                        ..Default::default()
                    };
                    rk4_step_compensated(s, carry, t, h, speed, |_, _| inp)
                }
            };
        }
    }
}

/// `k_aux` fed with the held auxiliary consensus value.
fn decoupled_input(sc: &Scenario, i: usize, t: f64, s: &AgentState, aux: f64) -> StageInput {
    let m = &sc.agents[i].problem.model;
    StageInput {
        u: k_aux(
            &s.pose,
            s.gamma,
            aux + s.eta,
            m.speed.at(t),
            &m.path,
            &m.gains,
            &m.offset,
        ),
        v_gamma: 0.0,
        u_gamma_aux: aux,
    }
}

/// Running cost accumulated over the first `delta` seconds of the solution,
/// interpolating inside a segment when `delta` is not a whole number of them.
fn running_until(o: &SolveOutcome, delta: f64, seg_len: f64) -> f64 {
    let c = &o.prediction.segment_running_cost;
    let x = delta / seg_len;
    let j = (x.floor() as usize).min(c.len() - 1);
    if (x - x.round()).abs() < 1e-9 {
        return c[(x.round() as usize).min(c.len() - 1)];
    }
    let next = c[(j + 1).min(c.len() - 1)];
    c[j] + (x - j as f64) * (next - c[j])
}

#[allow(clippy::too_many_arguments)]
fn agent_step(
    sc: &Scenario,
    mode: Mode,
    i: usize,
    t_k: f64,
    delta: f64,
    nb: &NeighborValues,
    state: &AgentState,
    prev: Option<&(DecisionVars, f64)>,
) -> Result<(Plan, f64, Option<SolveOutcome>)> {
    let problem = &sc.agents[i].problem;
    let k_con = consensus_law(i, state.gamma, nb, &sc.graph, sc.gain)?;
    let aux = aux_consensus_signal(t_k, delta, i, state.gamma, nb, &sc.graph, sc.gain)?;
    let seg_len = problem.horizon.segment_length();
    if mode != Mode::Cpf {
        return Ok((
            Plan {
                aux,
                dec: None,
                seg_len,
                j_star: f64::NAN,
            },
            k_con,
            None,
        ));
    }
    let params = ProblemParams {
        t: t_k,
        state: *state,
        aux,
        t0: sc.t0,
        envelope_active: !nb.is_empty(),
    };
    let warm = prev.map(|(dec, d)| shift_warm_start(problem, dec, *d, &params));
    let out = solve(problem, &params, warm.as_ref())?;
    Ok((
        Plan {
            aux,
            dec: Some(out.dec.clone()),
            seg_len,
            j_star: out.cost,
        },
        k_con,
        Some(out),
    ))
}

fn start(sc: &Scenario, mode: Mode) -> Loop<'_> {
    Loop {
        sc,
        mode,
        states: sc.agents.iter().map(|a| a.initial).collect(),
        carry: vec![0.0; sc.n_agents()],
        rows: Vec::new(),
        samples: Vec::new(),
    }
}

/// Distributed MPC closed loop.
pub fn run_cpf(scenario: &Scenario) -> Trace {
    start(scenario, Mode::Cpf).run()
}

/// Auxiliary path-following law with the sampled consensus signal; no
/// optimization and no `eta` shaping.
pub fn run_decoupled(scenario: &Scenario) -> Trace {
    let mut l = start(scenario, Mode::Decoupled);
    for s in &mut l.states {
        s.eta = 0.0;
    }
    l.run()
}

/// Path parameters only, driven by the sampled consensus signal. Vehicles
/// stay where they are.
pub fn run_consensus_only(scenario: &Scenario) -> Trace {
    let mut l = start(scenario, Mode::Consensus);
    for s in &mut l.states {
        s.eta = 0.0;
    }
    l.run()
}

/// Fails on an aborted trace, handing back the reason.
pub fn require_complete(trace: &Trace) -> Result<()> {
    match &trace.abort {
        None => Ok(()),
        Some(a) => Err(Error::Trace(format!(
            "run aborted at t = {} (agent {}): {}",
            a.t, a.agent, a.message
        ))),
    }
}
