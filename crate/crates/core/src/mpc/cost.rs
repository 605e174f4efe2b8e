use crate::aux_control::k_aux_with_output;
use crate::paths::Vec3;
use crate::vehicle::{output_y, AgentState, VehicleInput};

use super::{AgentModel, DecisionVars, MpcProblem, MpcWeights, ProblemParams};

/// `|y|_Q^2 + |u - k_aux(t, x, gamma, u_gamma)|_U^2`.
pub fn stage_cost(
    t: f64,
    state: &AgentState,
    u: VehicleInput,
    u_gamma: f64,
    weights: &MpcWeights,
    model: &AgentModel,
) -> f64 {
    let y = output_y(&state.pose, &model.offset, &model.path, state.gamma);
    stage_cost_with_output(t, state, &y, u, u_gamma, weights, model)
}

pub(crate) fn stage_cost_with_output(
    t: f64,
    state: &AgentState,
    y: &Vec3,
    u: VehicleInput,
    u_gamma: f64,
    weights: &MpcWeights,
    model: &AgentModel,
) -> f64 {
    let ka = k_aux_with_output(
        &state.pose,
        y,
        state.gamma,
        u_gamma,
        model.speed.at(t),
        &model.path,
        &model.gains,
        &model.offset,
    );
    let du = u.to_vec() - ka.to_vec();
    (y.transpose() * weights.q() * y)[0] + (du.transpose() * weights.u() * du)[0]
}

/// `Qc eta^2 + Uc v^2`.
pub fn consensus_stage_cost(eta: f64, v_gamma: f64, weights: &MpcWeights) -> f64 {
    weights.qc * eta * eta + weights.uc * v_gamma * v_gamma
}

/// `lambda_max(Q) / (3 lambda_min(K)) |y|^3`.
pub fn terminal_cost(y: &Vec3, weights: &MpcWeights, model: &AgentModel) -> f64 {
    weights.q_max() / (3.0 * model.gains.lambda_min()) * y.norm().powi(3)
}

/// Regulation plus consensus cost of a decision over the horizon.
pub fn total_cost(problem: &MpcProblem, params: &ProblemParams, dec: &DecisionVars) -> f64 {
    super::predict::predict(problem, params, dec).cost
}
