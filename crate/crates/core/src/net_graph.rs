//! Communication topology and the discrete consensus machinery built on it.
//!
//! Agents are indexed from 0. An edge `(i, j)` with weight `a_ij` means agent
//! `i` can read the coordination value of agent `j`, so `N(i) = { j : (i, j) }`.
//! All spectral quantities are dense; networks here are a handful of agents.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spread below which coordination values count as "at consensus".
pub const CONSENSUS_TOL: f64 = 1e-9;

/// Relative modulus gap used by the numeric primitivity test.
pub const PRIMITIVE_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Weighted directed graph over `n_agents` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_agents: usize,
    edges: Vec<Edge>,
}

impl CommGraph {
    pub fn new(n_agents: usize, edges: Vec<Edge>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::Graph("at least one agent is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &edges {
            if e.from >= n_agents || e.to >= n_agents {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) references an agent outside 0..{n_agents}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Graph(format!("self-edge on agent {}", e.from)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.from, e.to, e.weight
                )));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::Graph(format!(
                    "duplicate edge ({}, {})",
                    e.from, e.to
                )));
            }
        }
        Ok(Self { n_agents, edges })
    }

    /// Three agents in a line, the middle one talking both ways to each end.
    pub fn three_agent_line() -> Self {
        let e = |from, to| Edge {
            from,
            to,
            weight: 1.0,
        };
        Self::new(3, vec![e(0, 1), e(1, 0), e(1, 2), e(2, 1)]).expect("static graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(j, a_ij)` for every `j` in the neighborhood of `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.from == i)
            .map(|e| (e.to, e.weight))
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_agents, self.n_agents);
        for e in &self.edges {
            a[(e.from, e.to)] = e.weight;
        }
        a
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.neighbors(i).map(|(_, w)| w).sum()
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.to == i)
            .map(|e| e.weight)
            .sum()
    }

    /// Largest summed outgoing weight over all agents.
    pub fn max_degree(&self) -> f64 {
        (0..self.n_agents)
            .map(|i| self.out_degree(i))
            .fold(0.0, f64::max)
    }

    /// `L = D - A`, with `D` the out-degree diagonal.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for i in 0..self.n_agents {
            l[(i, i)] = self.out_degree(i);
        }
        l
    }

    pub fn is_balanced(&self, tol: f64) -> bool {
        (0..self.n_agents).all(|i| (self.in_degree(i) - self.out_degree(i)).abs() <= tol)
    }

    /// Every agent reaches every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.n_agents];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for e in &self.edges {
                    let (a, b) = if forward {
                        (e.from, e.to)
                    } else {
                        (e.to, e.from)
                    };
                    if a == v && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Second-smallest eigenvalue of the symmetric part `(L + L')/2`.
    pub fn algebraic_connectivity(&self) -> f64 {
        if self.n_agents < 2 {
            return 0.0;
        }
        let l = self.laplacian();
        let ls = (&l + l.transpose()) * 0.5;
        let mut eig: Vec<f64> = ls.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        eig[1]
    }
}

/// Validated consensus step size, strictly inside `(0, 1/max_degree)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusGain {
    eps_bar: f64,
}

impl ConsensusGain {
    pub fn new(eps_bar: f64, graph: &CommGraph) -> Result<Self> {
        let upper = upper_gain(graph);
        if !(eps_bar > 0.0 && eps_bar < upper) {
            return Err(Error::GainOutOfRange {
                eps: eps_bar,
                upper,
            });
        }
        Ok(Self { eps_bar })
    }

    pub fn value(&self) -> f64 {
        self.eps_bar
    }
}

fn upper_gain(graph: &CommGraph) -> f64 {
    let delta = graph.max_degree();
    if delta > 0.0 {
        1.0 / delta
    } else {
        f64::INFINITY
    }
}

/// `P = I - eps L`.
pub fn perron(graph: &CommGraph, gain: ConsensusGain) -> DMatrix<f64> {
    perron_matrix(graph, gain.value())
}

fn perron_matrix(graph: &CommGraph, eps: f64) -> DMatrix<f64> {
    DMatrix::identity(graph.n_agents, graph.n_agents) - graph.laplacian() * eps
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronReport {
    pub nonnegative: bool,
    pub row_stochastic: bool,
    pub column_stochastic: bool,
    pub doubly_stochastic: bool,
    pub balanced: bool,
    pub strongly_connected: bool,
    pub spectral_radius_le_one: bool,
    pub has_unit_eigenvalue: bool,
    pub primitive: bool,
    /// Eigenvalue moduli, descending.
    pub moduli: Vec<f64>,
}

impl PerronReport {
    /// Everything the consensus convergence argument relies on.
    pub fn all_ok(&self) -> bool {
        self.nonnegative
            && self.row_stochastic
            && self.doubly_stochastic
            && self.spectral_radius_le_one
            && self.has_unit_eigenvalue
            && self.primitive
    }
}

/// Structural and spectral checks on the Perron matrix. `eps` may sit on the
/// closed upper end `1/max_degree`; the report carries any failures.
pub fn verify_perron(graph: &CommGraph, eps: f64) -> PerronReport {
    const TOL: f64 = 1e-12;
    let p = perron_matrix(graph, eps);
    let n = graph.n_agents;
    let nonnegative = p.iter().all(|&x| x >= -TOL);
    let row_stochastic = nonnegative && (0..n).all(|i| (p.row(i).sum() - 1.0).abs() <= TOL);
    let column_stochastic = nonnegative && (0..n).all(|j| (p.column(j).sum() - 1.0).abs() <= TOL);

    let mut moduli: Vec<f64> = p.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let rho = moduli[0];
    let spectral_radius_le_one = rho <= 1.0 + 1e-9;
    let has_unit_eigenvalue = p
        .complex_eigenvalues()
        .iter()
        .any(|z| (z.re - 1.0).abs() <= 1e-9 && z.im.abs() <= 1e-9);
    let at_max = moduli
        .iter()
        .filter(|&&m| m >= rho * (1.0 - PRIMITIVE_GAP))
        .count();

    PerronReport {
        nonnegative,
        row_stochastic,
        column_stochastic,
        doubly_stochastic: row_stochastic && column_stochastic,
        balanced: graph.is_balanced(TOL),
        strongly_connected: graph.is_strongly_connected(),
        spectral_radius_le_one,
        has_unit_eigenvalue,
        primitive: at_max == 1,
        moduli,
    }
}

/// Coordination values an agent received from its neighbors at one sample.
pub type NeighborValues = BTreeMap<usize, f64>;

/// `-eps * sum_j a_ij (gamma_i - gamma_j)` over the neighborhood of `agent`.
///
/// The neighbor map must cover the neighborhood exactly; values from agents
/// outside it are rejected.
pub fn consensus_law(
    agent: usize,
    gamma_i: f64,
    neighbors: &NeighborValues,
    graph: &CommGraph,
    gain: ConsensusGain,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut used = 0usize;
    for (j, a_ij) in graph.neighbors(agent) {
        let gamma_j = neighbors
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        acc += a_ij * (gamma_i - gamma_j);
        used += 1;
    }
    if used != neighbors.len() {
        let other = neighbors
            .keys()
            .copied()
            .find(|k| !graph.neighbors(agent).any(|(j, _)| j == *k))
            .unwrap_or(agent);
        return Err(Error::UnexpectedNeighbor { agent, other });
    }
    Ok(-gain.value() * acc)
}

/// Collects the neighbor values agent `i` is allowed to see.
pub fn neighbor_values(graph: &CommGraph, agent: usize, all: &[f64]) -> NeighborValues {
    graph.neighbors(agent).map(|(j, _)| (j, all[j])).collect()
}

/// One synchronous step `xi + k_con(xi) + eta` of the discrete network.
pub fn consensus_step(
    graph: &CommGraph,
    gain: ConsensusGain,
    xi: &[f64],
    eta: &[f64],
) -> Result<Vec<f64>> {
    (0..graph.n_agents)
        .map(|i| {
            let k = consensus_law(i, xi[i], &neighbor_values(graph, i, xi), graph, gain)?;
            Ok(xi[i] + k + eta[i])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementSnapshot {
    /// Values minus their mean.
    pub delta: Vec<f64>,
    pub alpha: f64,
    /// Sum over directed edges of squared differences.
    pub phi: f64,
}

impl DisagreementSnapshot {
    /// `delta' delta`.
    pub fn lyapunov(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum()
    }
}

/// Mean-subtracted disagreement vector and its mean.
pub fn disagreement(values: &[f64]) -> (Vec<f64>, f64) {
    let alpha = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| v - alpha).collect(), alpha)
}

pub fn disagreement_fn(values: &[f64], graph: &CommGraph) -> DisagreementSnapshot {
    let (delta, alpha) = disagreement(values);
    DisagreementSnapshot {
        delta,
        alpha,
        phi: edge_disagreement(values, graph),
    }
}

pub fn edge_disagreement(values: &[f64], graph: &CommGraph) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let d = values[e.from] - values[e.to];
            d * d
        })
        .sum()
}

pub fn at_consensus(values: &[f64], tol: f64) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo < tol
}

/// Constants of the quadratic ISS-Lyapunov bound for the Perron iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssConstants {
    pub lambda2: f64,
    pub mu2: f64,
    pub lambda_phi: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Induced 2-norm of the Laplacian.
    pub laplacian_norm: f64,
}

impl IssConstants {
    /// Requires a balanced, strongly connected graph with at least two agents.
    pub fn new(graph: &CommGraph, gain: ConsensusGain) -> Result<Self> {
        if graph.n_agents < 2 {
            return Err(Error::Graph("ISS bound needs at least two agents".into()));
        }
        if !graph.is_balanced(1e-12) {
            return Err(Error::Graph("ISS bound requires a balanced graph".into()));
        }
        if !graph.is_strongly_connected() {
            return Err(Error::Graph(
                "ISS bound requires a strongly connected graph".into(),
            ));
        }
        let lambda2 = graph.algebraic_connectivity();
        let mu2 = 1.0 - gain.value() * lambda2;
        let lambda_phi = 0.5 * (1.0 - mu2 * mu2);
        let a = ((1.0 - mu2 * mu2) / 2.0).sqrt();
        let b = -mu2 / a;
        let c = b * b + 1.0;
        let laplacian_norm = graph
            .laplacian()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        Ok(Self {
            lambda2,
            mu2,
            lambda_phi,
            a,
            b,
            c,
            laplacian_norm,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssStepReport {
    pub phi_k: f64,
    pub phi_k1: f64,
    /// `(1 - lambda_phi) Phi(k) + c |delta_eta|^2`.
    pub bound: f64,
    /// `bound - Phi(k+1)`; negative means the inequality failed.
    pub margin: f64,
    pub passed: bool,
}

/// Checks one step of `Phi(k+1) <= (1 - lambda_phi) Phi(k) + c |delta_eta(k)|^2`.
pub fn iss_step_check(
    graph: &CommGraph,
    gain: ConsensusGain,
    xi_k: &[f64],
    eta_k: &[f64],
    xi_k1: &[f64],
) -> Result<IssStepReport> {
    let n = graph.n_agents;
    if xi_k.len() != n || eta_k.len() != n || xi_k1.len() != n {
        return Err(Error::Dimension(format!("expected vectors of length {n}")));
    }
    let consts = IssConstants::new(graph, gain)?;
    Ok(iss_step_with(&consts, xi_k, eta_k, xi_k1))
}

pub fn iss_step_with(
    consts: &IssConstants,
    xi_k: &[f64],
    eta_k: &[f64],
    xi_k1: &[f64],
) -> IssStepReport {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let phi_k = sq(&disagreement(xi_k).0);
    let phi_k1 = sq(&disagreement(xi_k1).0);
    let d_eta = sq(&disagreement(eta_k).0);
    let bound = (1.0 - consts.lambda_phi) * phi_k + consts.c * d_eta;
    let margin = bound - phi_k1;
    IssStepReport {
        phi_k,
        phi_k1,
        bound,
        margin,
        passed: margin >= -1e-9,
    }
}

/// Parameters of the class-KL envelope bounding the consensus action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEnvelope {
    pub consts: IssConstants,
    pub n_agents: usize,
    /// Largest per-agent amplitude of the exogenous input bound.
    pub a_eta_max: f64,
    /// Smallest per-agent decay rate of the exogenous input bound.
    pub lambda_eta_min: f64,
    pub k0: i64,
}

impl BetaEnvelope {
    pub fn new(
        graph: &CommGraph,
        gain: ConsensusGain,
        a_eta_max: f64,
        lambda_eta_min: f64,
        k0: i64,
    ) -> Result<Self> {
        Ok(Self {
            consts: IssConstants::new(graph, gain)?,
            n_agents: graph.n_agents,
            a_eta_max,
            lambda_eta_min,
            k0,
        })
    }

    /// Magnitude of the exogenous-input term. Uses `|d|` so the square-root
    /// splitting stays valid on both sides of the rate crossover, and is
    /// infinite exactly at the crossover.
    pub fn d(&self) -> f64 {
        let q = 1.0 - self.consts.lambda_phi;
        let growth = (2.0 * self.lambda_eta_min).exp();
        let denom = 1.0 - q * growth;
        let num = self.consts.c * self.n_agents as f64 * self.a_eta_max.powi(2) * growth;
        if num == 0.0 {
            0.0
        } else if denom == 0.0 {
            f64::INFINITY
        } else {
            (num / denom).abs()
        }
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        let q = 1.0 - self.consts.lambda_phi;
        let n = s.floor() + self.k0 as f64;
        let l = self.consts.laplacian_norm;
        let decay = q.powf(n / 2.0);
        let d = self.d();
        let tail = if d == 0.0 {
            0.0
        } else {
            l * d.sqrt() * ((-self.lambda_eta_min * n).exp() + decay)
        };
        l * decay * r + tail
    }
}

/// Convenience wrapper around [`BetaEnvelope::eval`].
pub fn beta_envelope(
    r: f64,
    s: f64,
    graph: &CommGraph,
    gain: ConsensusGain,
    a_eta_max: f64,
    lambda_eta_min: f64,
    k0: i64,
) -> Result<f64> {
    Ok(BetaEnvelope::new(graph, gain, a_eta_max, lambda_eta_min, k0)?.eval(r, s))
}

/// `L` applied to a value vector; handy in checks.
pub fn apply_laplacian(graph: &CommGraph, values: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(values);
    (graph.laplacian() * v).iter().copied().collect()
}
