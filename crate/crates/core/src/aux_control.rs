//! Auxiliary path-following law, its input bounds and convergence envelope,
//! and the sampled auxiliary consensus signal.

use nalgebra::{Cholesky, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::net_graph::{consensus_law, CommGraph, ConsensusGain, NeighborValues};
use crate::paths::{PathSpec, Vec3};
use crate::vehicle::{output_y, BodyOffset, Pose, VehicleInput};

/// Default width of the smoothing layer around `y = 0`.
pub const DEFAULT_Y_SWITCH: f64 = 1e-3;

/// Input matrix of the output dynamics and its closed-form inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaMatrix {
    pub delta: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
}

pub fn delta_matrix(offset: &BodyOffset) -> DeltaMatrix {
    let e = offset.vector();
    let (e1, e2, e3) = (e[0], e[1], e[2]);
    let delta = Matrix3::new(1.0, e3, -e2, 0.0, 0.0, e1, 0.0, -e1, 0.0);
    let inverse = Matrix3::new(
        1.0,
        e2 / e1,
        e3 / e1,
        0.0,
        0.0,
        -1.0 / e1,
        0.0,
        1.0 / e1,
        0.0,
    );
    DeltaMatrix { delta, inverse }
}

/// Tuning of the auxiliary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxGains {
    k: Matrix3<f64>,
    lambda_min: f64,
    lambda_max: f64,
    /// Decay rate of the auxiliary `eta` law `v = -lambda_eta eta`.
    pub lambda_eta: f64,
    /// Below this output norm the correction term is linear in `y`.
    pub y_switch: f64,
}

impl AuxGains {
    pub fn new(k: Matrix3<f64>, lambda_eta: f64, y_switch: f64) -> Result<Self> {
        if (k - k.transpose()).abs().max() > 1e-12 {
            return Err(Error::Malformed("gain K must be symmetric".into()));
        }
        if Cholesky::new(k).is_none() {
            return Err(Error::Malformed("gain K must be positive definite".into()));
        }
        if !(lambda_eta > 0.0) {
            return Err(Error::Malformed(format!(
                "lambda_eta must be positive, got {lambda_eta}"
            )));
        }
        if !(y_switch > 0.0) {
            return Err(Error::Malformed(format!(
                "y_switch must be positive, got {y_switch}"
            )));
        }
        let eig = SymmetricEigen::new(k).eigenvalues;
        Ok(Self {
            k,
            lambda_min: eig.min(),
            lambda_max: eig.max(),
            lambda_eta,
            y_switch,
        })
    }

    pub fn diagonal(k: f64, lambda_eta: f64) -> Result<Self> {
        Self::new(Matrix3::identity() * k, lambda_eta, DEFAULT_Y_SWITCH)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

/// `Delta^-1 (R' c_d'(gamma) (g + u_gamma) - K y / max(|y|, y_switch))`.
///
/// Outside the layer this is the normalized finite-time law; inside it the
/// correction shrinks linearly to zero, leaving the pure feed-forward term
/// at `y = 0`.
pub fn k_aux(
    pose: &Pose,
    gamma: f64,
    u_gamma: f64,
    g: f64,
    spec: &PathSpec,
    gains: &AuxGains,
    offset: &BodyOffset,
) -> VehicleInput {
    let y = output_y(pose, offset, spec, gamma);
    k_aux_with_output(pose, &y, gamma, u_gamma, g, spec, gains, offset)
}

/// Same as [`k_aux`] with the output already evaluated.
#[allow(clippy::too_many_arguments)]
pub fn k_aux_with_output(
    pose: &Pose,
    y: &Vec3,
    gamma: f64,
    u_gamma: f64,
    g: f64,
    spec: &PathSpec,
    gains: &AuxGains,
    offset: &BodyOffset,
) -> VehicleInput {
    let ff = pose.r.transpose() * spec.derivative(gamma) * (g + u_gamma);
    let corr = gains.k * y / y.norm().max(gains.y_switch);
    VehicleInput::from_vec(delta_matrix(offset).inverse * (ff - corr))
}

/// Symmetric box `|u_i| <= max_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub max: Vec3,
}

impl InputBox {
    pub fn contains(&self, u: VehicleInput, tol: f64) -> bool {
        self.slack(u) >= -tol
    }

    /// Smallest `max_i - |u_i|`.
    pub fn slack(&self, u: VehicleInput) -> f64 {
        let u = u.to_vec();
        (0..3)
            .map(|i| self.max[i] - u[i].abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn clamp(&self, u: Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| u[i].clamp(-self.max[i], self.max[i]))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { max: self.max * s }
    }
}

/// Row-wise bound `|[Delta^-1]_i| n_bar + |[Delta^-1 K]_i|` with
/// `n_bar = (g_sup + r_eta) sup |c_d'|`.
pub fn aux_input_bounds(
    spec: &PathSpec,
    offset: &BodyOffset,
    gains: &AuxGains,
    g_sup: f64,
    r_eta: f64,
) -> InputBox {
    let inv = delta_matrix(offset).inverse;
    let n_bar = (g_sup.abs() + r_eta) * spec.derivative_bound();
    let ik = inv * gains.k;
    InputBox {
        max: Vec3::from_fn(|i, _| inv.row(i).norm() * n_bar + ik.row(i).norm()),
    }
}

/// `max(|y(t)| - lambda_min(K) (tau - t), 0)`.
pub fn finite_time_envelope(y0_norm: f64, gains: &AuxGains, tau_minus_t: f64) -> f64 {
    (y0_norm - gains.lambda_min * tau_minus_t).max(0.0)
}

/// Constant consensus rate held over one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxConsensusSignal {
    pub value: f64,
    pub active_from: f64,
    pub active_until: f64,
}

impl AuxConsensusSignal {
    pub fn zero(t: f64) -> Self {
        Self {
            value: 0.0,
            active_from: t,
            active_until: t,
        }
    }

    /// Signal value on `[active_from, active_until)`, zero elsewhere.
    pub fn at(&self, t: f64) -> f64 {
        if t >= self.active_from && t < self.active_until {
            self.value
        } else {
            0.0
        }
    }

    /// `k_con` recovered as the integral over the active window.
    pub fn integral(&self) -> f64 {
        self.value * (self.active_until - self.active_from)
    }
}

/// `k_con(gamma(t_k)) / delta_k` on `[t_k, t_k + delta_k)`.
pub fn aux_consensus_signal(
    t_k: f64,
    delta_k: f64,
    agent: usize,
    gamma_i: f64,
    neighbors: &NeighborValues,
    graph: &CommGraph,
    gain: ConsensusGain,
) -> Result<AuxConsensusSignal> {
    if !(delta_k > 0.0) {
        return Err(Error::SamplingInterval {
            delta: delta_k,
            lower_bound: 0.0,
        });
    }
    let k = consensus_law(agent, gamma_i, neighbors, graph, gain)?;
    Ok(AuxConsensusSignal {
        value: k / delta_k,
        active_from: t_k,
        active_until: t_k + delta_k,
    })
}
