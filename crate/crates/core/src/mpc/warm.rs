//! Auxiliary decision pair and the shifted warm start.

use crate::aux_control::k_aux;

use super::predict::advance_segment;
use super::{DecisionVars, MpcProblem, ProblemParams};

/// Auxiliary inputs sampled per segment along their own closed loop:
/// `u = k_aux` and `v_gamma = -lambda_eta eta` at each segment start.
pub fn auxiliary_pair(problem: &MpcProblem, params: &ProblemParams) -> DecisionVars {
    let n = problem.horizon.n_segments;
    let mut dec = DecisionVars::zeros(n);
    let mut s = params.state;
    for j in 0..n {
        fill_auxiliary(problem, params, &mut dec, j, &s);
        s = advance_segment(problem, params, j, s, dec.u[j], dec.v[j]);
    }
    dec
}

fn fill_auxiliary(
    problem: &MpcProblem,
    params: &ProblemParams,
    dec: &mut DecisionVars,
    j: usize,
    s: &crate::vehicle::AgentState,
) {
    let m = &problem.model;
    let t = params.t + j as f64 * problem.horizon.segment_length();
    let u_gamma = params.aux.at(t) + s.eta;
    dec.u[j] = k_aux(
        &s.pose,
        s.gamma,
        u_gamma,
        m.speed.at(t),
        &m.path,
        &m.gains,
        &m.offset,
    )
    .to_vec();
    dec.v[j] = -problem.weights.lambda_eta * s.eta;
}

/// Drops the first `delta` seconds of `prev` and fills the uncovered tail
/// with the auxiliary pair, integrating from the new sample's state.
///
/// Segment `j` of the new horizon takes the previous segment containing its
/// midpoint, so shifts that are not whole segments stay well defined.
pub fn shift_warm_start(
    problem: &MpcProblem,
    prev: &DecisionVars,
    delta: f64,
    params: &ProblemParams,
) -> DecisionVars {
    let n = problem.horizon.n_segments;
    let h = problem.horizon.segment_length();
    let mut dec = DecisionVars::zeros(n);
    let mut s = params.state;
    for j in 0..n {
        let mid = delta + (j as f64 + 0.5) * h;
        let src = (mid / h).floor() as usize;
        if src < prev.len() && src < n {
            dec.u[j] = prev.u[src];
            dec.v[j] = prev.v[src];
        } else {
            fill_auxiliary(problem, params, &mut dec, j, &s);
        }
        s = advance_segment(problem, params, j, s, dec.u[j], dec.v[j]);
    }
    dec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::predict::tests::{on_path, problem};
    use crate::mpc::{constraint_violations, predict, solve};
    use crate::paths::Vec3;

    #[test]
    fn full_shift_is_the_auxiliary_pair() {
        let p = problem(100.0);
        let mut params = on_path(4.0, 0.4);
        params.state.pose.p += Vec3::new(0.2, 0.3, -0.1);
        let prev = DecisionVars {
            u: vec![Vec3::new(9.0, 9.0, 9.0); 8],
            v: vec![9.0; 8],
        };
        assert_eq!(
            shift_warm_start(&p, &prev, 0.4, &params),
            auxiliary_pair(&p, &params)
        );
    }

    #[test]
    fn shift_keeps_prefix_and_shrinks_eta_tail() {
        let p = problem(100.0);
        let mut params = on_path(4.0, 0.6);
        params.state.pose.p += Vec3::new(0.3, -0.2, 0.1);
        let first = solve(&p, &params, None).unwrap();
        let mut next = params;
        next.t = 0.1;
        next.state = first.prediction.segment_states[2];
        let warm = shift_warm_start(&p, &first.dec, 0.1, &next);
        assert_eq!(&warm.u[..6], &first.dec.u[2..]);
        assert_eq!(&warm.v[..6], &first.dec.v[2..]);
        let pred = predict(&p, &next, &warm);
        assert!(pred.terminal_state.eta.abs() <= first.prediction.terminal_state.eta.abs() + 1e-12);
        let viol = constraint_violations(&p, &warm, &pred);
        assert!(viol.max_violation() <= 1e-6, "{viol:?}");
    }

    #[test]
    fn unaligned_shift_uses_segment_midpoints() {
        let p = problem(100.0);
        let params = on_path(4.0, 0.0);
        let prev = DecisionVars {
            u: (0..8)
                .map(|j| Vec3::new(2.0 + 0.01 * j as f64, 0.0, 0.0))
                .collect(),
            v: vec![0.0; 8],
        };
        // 0.07 s: new segment 0 has its midpoint at 0.095, inside old segment 1.
        let warm = shift_warm_start(&p, &prev, 0.07, &params);
        assert_eq!(warm.u[0], prev.u[1]);
        assert_eq!(warm.u[5], prev.u[6]);
        assert_eq!(warm.u[6], prev.u[7]);
        // Feed-forward of 2 plus a correction no larger than |K| = 0.2.
        assert!((warm.u[7][0] - 2.0).abs() <= 0.2 + 1e-12);
    }
}
