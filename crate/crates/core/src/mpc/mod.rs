//! Finite-horizon optimal control problem solved by each agent at every
//! sample: prediction by single shooting over piecewise-constant inputs,
//! the combined regulation and consensus cost, constraint checks, a
//! projected-gradient solver, the shifted warm start and the value-function
//! decrease diagnostic.

mod cost;
mod diagnostics;
mod predict;
mod solver;
mod warm;

use nalgebra::{Matrix3, SymmetricEigen};

pub use cost::{consensus_stage_cost, stage_cost, terminal_cost, total_cost};
pub use diagnostics::{value_decrease_check, DecreaseReport, DecreaseSample};
pub use predict::{constraint_violations, predict, Prediction};
pub use solver::{project, solve, SolveDiagnostics, SolveOutcome, SolverConfig};
pub use warm::{auxiliary_pair, shift_warm_start};

use crate::aux_control::{AuxConsensusSignal, AuxGains, DeltaMatrix, InputBox};
use crate::error::{Error, Result};
use crate::paths::{PathSpec, Vec3};
use crate::vehicle::{AgentState, BodyOffset, CommonSpeed};

/// Everything about one agent that the predictor treats as fixed.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub path: PathSpec,
    pub offset: BodyOffset,
    pub delta: DeltaMatrix,
    pub gains: AuxGains,
    pub speed: CommonSpeed,
}

impl AgentModel {
    pub fn new(path: PathSpec, offset: BodyOffset, gains: AuxGains, speed: CommonSpeed) -> Self {
        Self {
            delta: crate::aux_control::delta_matrix(&offset),
            path,
            offset,
            gains,
            speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcWeights {
    q: Matrix3<f64>,
    u: Matrix3<f64>,
    pub qc: f64,
    pub uc: f64,
    pub m_eta: f64,
    /// Rate of the `eta` decay law used in the terminal ingredients.
    pub lambda_eta: f64,
    q_max: f64,
    q_min: f64,
}

fn psd_extremes(m: &Matrix3<f64>, name: &str) -> Result<(f64, f64)> {
    if (m - m.transpose()).abs().max() > 1e-12 {
        return Err(Error::Malformed(format!("{name} must be symmetric")));
    }
    let eig = SymmetricEigen::new(*m).eigenvalues;
    if eig.min() < -1e-12 {
        return Err(Error::Malformed(format!(
            "{name} must be positive semidefinite"
        )));
    }
    Ok((eig.min().max(0.0), eig.max()))
}

impl MpcWeights {
    /// Rejects weights for which `m_eta lambda_eta eta^2` fails to dominate
    /// `l_c(eta, -lambda_eta eta)`.
    pub fn new(
        q: Matrix3<f64>,
        u: Matrix3<f64>,
        qc: f64,
        uc: f64,
        m_eta: f64,
        lambda_eta: f64,
    ) -> Result<Self> {
        let (q_min, q_max) = psd_extremes(&q, "Q")?;
        psd_extremes(&u, "U")?;
        if !(qc > 0.0 && uc > 0.0) {
            return Err(Error::Malformed("Qc and Uc must be positive".into()));
        }
        if !(lambda_eta > 0.0) {
            return Err(Error::Malformed("lambda_eta must be positive".into()));
        }
        if !(m_eta >= 0.0) {
            return Err(Error::Malformed("m_eta must be non-negative".into()));
        }
        let need = qc + lambda_eta * lambda_eta * uc;
        if need > m_eta * lambda_eta * (1.0 + 1e-12) {
            return Err(Error::Malformed(format!(
                "terminal eta weight too small: Qc + lambda_eta^2 Uc = {need} exceeds m_eta lambda_eta = {}",
                m_eta * lambda_eta
            )));
        }
        Ok(Self {
            q,
            u,
            qc,
            uc,
            m_eta,
            lambda_eta,
            q_max,
            q_min,
        })
    }

    pub fn q(&self) -> &Matrix3<f64> {
        &self.q
    }

    pub fn u(&self) -> &Matrix3<f64> {
        &self.u
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn q_min(&self) -> f64 {
        self.q_min
    }
}

/// Constraint data of the open-loop problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcBounds {
    pub u_box: InputBox,
    /// `|v_gamma| <= v_max`.
    pub v_max: f64,
    /// Terminal ball on `eta`.
    pub r_eta: f64,
    /// Envelope `|eta(tau)| <= a_eta exp(-lambda_env (tau - t0))`.
    pub a_eta: f64,
    pub lambda_env: f64,
    /// Optional output box `|y_i| <= y_max_i`.
    pub y_box: Option<Vec3>,
}

impl MpcBounds {
    pub fn validate(&self, lambda_eta: f64) -> Result<()> {
        if self.u_box.max.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::Malformed("input box must be non-negative".into()));
        }
        if !(self.r_eta >= 0.0 && self.a_eta >= 0.0 && self.lambda_env >= 0.0) {
            return Err(Error::Malformed("eta bounds must be non-negative".into()));
        }
        if self.v_max < lambda_eta * self.r_eta * (1.0 - 1e-12) {
            return Err(Error::Malformed(format!(
                "v_gamma box {} must contain the ball of radius lambda_eta r_eta = {}",
                self.v_max,
                lambda_eta * self.r_eta
            )));
        }
        Ok(())
    }
}

/// Time discretization of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub length: f64,
    pub n_segments: usize,
    /// RK4 steps per segment; even, for Simpson quadrature.
    pub substeps: usize,
}

impl Horizon {
    pub fn new(length: f64, n_segments: usize, substeps: usize) -> Result<Self> {
        if !(length > 0.0) || n_segments == 0 {
            return Err(Error::Malformed(
                "horizon needs positive length and segments".into(),
            ));
        }
        if substeps == 0 || !substeps.is_multiple_of(2) {
            return Err(Error::Malformed(
                "substeps per segment must be even and positive".into(),
            ));
        }
        Ok(Self {
            length,
            n_segments,
            substeps,
        })
    }

    pub fn segment_length(&self) -> f64 {
        self.length / self.n_segments as f64
    }
}

/// Full per-agent problem definition.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub model: AgentModel,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub horizon: Horizon,
    pub solver: SolverConfig,
}

/// Data an agent holds at a sample: its own state and the auxiliary
/// consensus signal built from the neighbor snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub t: f64,
    pub state: AgentState,
    pub aux: AuxConsensusSignal,
    /// Start of the run, anchoring the `eta` envelope.
    pub t0: f64,
    /// False for agents without neighbors; drops the envelope constraint.
    pub envelope_active: bool,
}

/// Piecewise-constant decision signals over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVars {
    pub u: Vec<Vec3>,
    pub v: Vec<f64>,
}

impl DecisionVars {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![Vec3::zeros(); n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Flat layout: four numbers per segment, `(v1, w2, w3, v_gamma)`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.v)
            .flat_map(|(u, v)| [u[0], u[1], u[2], *v])
            .collect()
    }

    pub fn from_flat(z: &[f64]) -> Self {
        let n = z.len() / 4;
        Self {
            u: (0..n)
                .map(|j| Vec3::new(z[4 * j], z[4 * j + 1], z[4 * j + 2]))
                .collect(),
            v: (0..n).map(|j| z[4 * j + 3]).collect(),
        }
    }
}

/// Signed slacks per constraint family; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violations {
    pub u_box: f64,
    pub v_box: f64,
    pub eta_terminal: f64,
    pub eta_envelope: f64,
    pub y_box: f64,
}

impl Violations {
    pub fn satisfied() -> Self {
        Self {
            u_box: f64::INFINITY,
            v_box: f64::INFINITY,
            eta_terminal: f64::INFINITY,
            eta_envelope: f64::INFINITY,
            y_box: f64::INFINITY,
        }
    }

    pub fn slacks(&self) -> [f64; 5] {
        [
            self.u_box,
            self.v_box,
            self.eta_terminal,
            self.eta_envelope,
            self.y_box,
        ]
    }

    /// Largest amount by which any constraint is exceeded, zero if none.
    pub fn max_violation(&self) -> f64 {
        self.slacks().iter().fold(0.0, |m, &s| m.max(-s))
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}
