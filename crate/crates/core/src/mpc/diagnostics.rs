//! Sample-to-sample decrease of the optimal value.
//!
//! Between samples the optimal cost should drop by at least the running cost
//! actually incurred, up to a perturbation caused by the consensus input:
//! `V(k+1) - V(k) + int (l + l_c) <= beta_k + solver_tol` with
//! `beta_k = c_beta |k_con(k)| / delta_lb`. The proportionality constant is a
//! calibrated heuristic; the report is diagnostic only.

use serde::{Deserialize, Serialize};

/// One agent at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecreaseSample {
    pub t: f64,
    /// Optimal cost at this sample.
    pub value: f64,
    /// Running cost `l + l_c` integrated until the next sample.
    pub running_integral: f64,
    /// Consensus action `k_con` computed at this sample.
    pub k_con: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub checked: usize,
    /// Indices `k` of flagged transitions `k -> k+1`.
    pub flagged: Vec<usize>,
    /// Largest `V(k+1) - V(k) + int - beta_k` seen.
    pub worst_excess: f64,
}

impl DecreaseReport {
    pub fn flagged_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.flagged.len() as f64 / self.checked as f64
        }
    }
}

pub fn value_decrease_check(
    samples: &[DecreaseSample],
    c_beta: f64,
    delta_lb: f64,
    solver_tol: f64,
) -> DecreaseReport {
    let mut flagged = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (k, w) in samples.windows(2).enumerate() {
        let beta = c_beta * w[0].k_con.abs() / delta_lb;
        let excess = w[1].value - w[0].value + w[0].running_integral - beta;
        worst = worst.max(excess);
        if excess > solver_tol {
            flagged.push(k);
        }
    }
    DecreaseReport {
        checked: samples.len().saturating_sub(1),
        flagged,
        worst_excess: if worst.is_finite() { worst } else { 0.0 },
    }
}
