//! Spectral projected gradient on the penalized cost.
//!
//! Input and `v_gamma` boxes and the terminal `eta` ball are handled exactly
//! by projection (the terminal `eta` is linear in the `v_gamma` segments).
//! The `eta` envelope and the optional output box enter through an exterior
//! quadratic penalty whose weight grows until they hold.

use crate::error::{Error, InfeasibleSolve, Result};

use super::predict::{predict, Rollout};
use super::warm::auxiliary_pair;
use super::{constraint_violations, DecisionVars, MpcProblem, Prediction, ProblemParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Projected-gradient iterations per penalty round.
    pub max_iters: usize,
    pub max_penalty_rounds: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Stop when the projected-gradient step is below this (infinity norm).
    pub pg_tol: f64,
    /// Largest violation still counted as feasible.
    pub feas_tol: f64,
    pub armijo: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 40,
            max_penalty_rounds: 4,
            penalty_init: 1e4,
            penalty_growth: 10.0,
            fd_step: 1e-6,
            pg_tol: 1e-7,
            feas_tol: 1e-6,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub penalty_rounds: usize,
    pub warm_cost: f64,
    /// Largest constraint violation of the warm start as given.
    pub warm_violation: f64,
    pub max_violation: f64,
    /// True when the optimizer failed to beat the warm start.
    pub kept_warm: bool,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub dec: DecisionVars,
    pub prediction: Prediction,
    pub cost: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Projects a flat decision onto the input boxes and the set of `v_gamma`
/// sequences whose terminal `eta` lies in the ball.
pub fn project(problem: &MpcProblem, params: &ProblemParams, z: &mut [f64]) {
    let umax = problem.bounds.u_box.max;
    let vm = problem.bounds.v_max;
    let n = z.len() / 4;
    for j in 0..n {
        for i in 0..3 {
            z[4 * j + i] = z[4 * j + i].clamp(-umax[i], umax[i]);
        }
    }
    let h = problem.horizon.segment_length();
    let r = problem.bounds.r_eta;
    let eta0 = params.state.eta;
    let lo = (-r - eta0) / h;
    let hi = (r - eta0) / h;
    let w: Vec<f64> = (0..n).map(|j| z[4 * j + 3]).collect();
    let sum_at = |mu: f64| w.iter().map(|x| (x - mu).clamp(-vm, vm)).sum::<f64>();
    let s0 = sum_at(0.0);
    let target = if s0 > hi {
        Some(hi)
    } else if s0 < lo {
        Some(lo)
    } else {
        None
    };
    let mu = match target {
        None => 0.0,
        Some(target) => {
            // sum_at is non-increasing in mu; bracket then bisect.
            let span = w.iter().fold(0.0f64, |m, x| m.max(x.abs())) + vm;
            let (mut a, mut b) = if s0 > target {
                (0.0, span)
            } else {
                (-span, 0.0)
            };
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if sum_at(mid) > target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            // Take the side that satisfies the ball.
            if s0 > target {
                b
            } else {
                a
            }
        }
    };
    for j in 0..n {
        z[4 * j + 3] = (w[j] - mu).clamp(-vm, vm);
    }
}

struct Objective<'a> {
    ro: Rollout<'a>,
    rho: f64,
    fd_step: f64,
}

impl Objective<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        let (c, pen) = self.ro.cost_from(
            0,
            self.ro.params.state,
            Rollout::start_acc(),
            &DecisionVars::from_flat(z),
        );
        c + self.rho * pen
    }

    /// Central differences, restarting each perturbed rollout at the
    /// boundary of the perturbed segment.
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let base = DecisionVars::from_flat(z);
        let (_, _, cache) = self.ro.cached(&base);
        let mut g = vec![0.0; z.len()];
        let mut work = base.clone();
        for (k, gk) in g.iter_mut().enumerate() {
            let (j, i) = (k / 4, k % 4);
            let eval = |work: &mut DecisionVars, x: f64| {
                if i < 3 {
                    work.u[j][i] = x;
                } else {
                    work.v[j] = x;
                }
                let (c, pen) = self.ro.cost_from(j, cache.states[j], cache.acc[j], work);
                c + self.rho * pen
            };
            let x0 = z[k];
            let fp = eval(&mut work, x0 + self.fd_step);
            let fm = eval(&mut work, x0 - self.fd_step);
            eval(&mut work, x0);
            *gk = (fp - fm) / (2.0 * self.fd_step);
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Returns the final iterate and the iteration count.
fn spg(
    problem: &MpcProblem,
    params: &ProblemParams,
    obj: &Objective<'_>,
    z0: Vec<f64>,
) -> (Vec<f64>, usize) {
    let cfg = &problem.solver;
    let proj_step = |z: &[f64], g: &[f64], alpha: f64| {
        let mut t: Vec<f64> = z.iter().zip(g).map(|(x, d)| x - alpha * d).collect();
        project(problem, params, &mut t);
        t.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    let mut z = z0;
    let mut f = obj.value(&z);
    let mut g = obj.gradient(&z);
    let first = inf_norm(&proj_step(&z, &g, 1.0));
    if first < cfg.pg_tol {
        return (z, 0);
    }
    let mut alpha = (1.0 / first).clamp(1e-10, 1e10);
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let d = proj_step(&z, &g, alpha);
        let gd = dot(&g, &d);
        if gd >= 0.0 || inf_norm(&d) < 1e-14 {
            break;
        }
        let mut lam = 1.0;
        let (zn, fnew) = loop {
            let zn: Vec<f64> = z.iter().zip(&d).map(|(x, di)| x + lam * di).collect();
            let fnew = obj.value(&zn);
            if fnew <= f + cfg.armijo * lam * gd {
                break (Some(zn), fnew);
            }
            lam *= 0.5;
            if lam < 1e-10 {
                break (None, f);
            }
        };
        let Some(zn) = zn else { break };
        let gn = obj.gradient(&zn);
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-10, 1e10)
        } else {
            1e10
        };
        z = zn;
        f = fnew;
        g = gn;
        if inf_norm(&proj_step(&z, &g, 1.0)) < cfg.pg_tol {
            break;
        }
    }
    (z, iters)
}

/// Solves the open-loop problem from `warm` (or the auxiliary pair).
///
/// The returned decision is never worse than a feasible warm start. If
/// neither the optimizer's iterate nor the warm start is feasible, the error
/// carries the best iterate.
pub fn solve(
    problem: &MpcProblem,
    params: &ProblemParams,
    warm: Option<&DecisionVars>,
) -> Result<SolveOutcome> {
    let n = problem.horizon.n_segments;
    let warm = match warm {
        Some(w) if w.len() == n => w.clone(),
        Some(w) => {
            return Err(Error::Dimension(format!(
                "warm start has {} segments, horizon has {n}",
                w.len()
            )))
        }
        None => auxiliary_pair(problem, params),
    };
    let cfg = problem.solver;
    let warm_pred = predict(problem, params, &warm);
    let warm_viol = constraint_violations(problem, &warm, &warm_pred);
    let warm_feasible = warm_viol.feasible(cfg.feas_tol);

    let mut z = warm.to_flat();
    project(problem, params, &mut z);
    let mut rho = cfg.penalty_init;
    let mut iterations = 0;
    let mut rounds = 0;
    let (cand, cand_pred, cand_viol) = loop {
        rounds += 1;
        let obj = Objective {
            ro: Rollout { problem, params },
            rho,
            fd_step: cfg.fd_step,
        };
        let (zn, it) = spg(problem, params, &obj, z);
        iterations += it;
        z = zn;
        let dec = DecisionVars::from_flat(&z);
        let pred = predict(problem, params, &dec);
        let viol = constraint_violations(problem, &dec, &pred);
        if viol.feasible(cfg.feas_tol) || rounds >= cfg.max_penalty_rounds {
            break (dec, pred, viol);
        }
        rho *= cfg.penalty_growth;
    };

    let cand_feasible = cand_viol.feasible(cfg.feas_tol);
    let diagnostics = |kept_warm: bool, max_violation: f64| SolveDiagnostics {
        iterations,
        penalty_rounds: rounds,
        warm_cost: warm_pred.cost,
        warm_violation: warm_viol.max_violation(),
        max_violation,
        kept_warm,
    };
    if cand_feasible && (!warm_feasible || cand_pred.cost <= warm_pred.cost) {
        Ok(SolveOutcome {
            cost: cand_pred.cost,
            diagnostics: diagnostics(false, cand_viol.max_violation()),
            dec: cand,
            prediction: cand_pred,
        })
    } else if warm_feasible {
        Ok(SolveOutcome {
            cost: warm_pred.cost,
            diagnostics: diagnostics(true, warm_viol.max_violation()),
            dec: warm,
            prediction: warm_pred,
        })
    } else {
        Err(Error::Infeasible(Box::new(InfeasibleSolve {
            best: cand,
            cost: cand_pred.cost,
            violations: cand_viol,
        })))
    }
}
