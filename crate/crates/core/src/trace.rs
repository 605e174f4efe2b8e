//! Trace export, plot data, run summaries and offline diagnostics.
//!
//! Files written by [`export`]:
//!
//! | file | contents |
//! |------|----------|
//! | `trace.csv` | one row per agent per recorded instant, columns [`TRACE_HEADER`] |
//! | `samples.csv` | one row per agent per sample ([`SampleRecord`]) |
//! | `positions.dat` | per agent block: `t px py pz cx cy cz`, `c` the path point at `gamma(t)` |
//! | `series.dat` | `t phi gamma_i... ynorm_i...` |
//! | `summary.json` | [`Summary`] |
//!
//! Floats are written in shortest round-trip form, so re-parsing yields the
//! exact values.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{value_decrease_check, DecreaseReport, DecreaseSample};
use crate::net_graph::{iss_step_with, IssConstants};
use crate::scenario::{Mode, Scenario};
use crate::sim::{Abort, SampleRecord, Trace};

pub const TRACE_HEADER: &str = "t,agent,px,py,pz,r11,r12,r13,r21,r22,r23,r31,r32,r33,\
gamma,eta,y1,y2,y3,v1,w2,w3,v_gamma,phi,J_star";

/// Flat CSV form of a [`crate::sim::TraceRow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: f64,
    pub agent: usize,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub r11: f64,
    pub r12: f64,
    pub r13: f64,
    pub r21: f64,
    pub r22: f64,
    pub r23: f64,
    pub r31: f64,
    pub r32: f64,
    pub r33: f64,
    pub gamma: f64,
    pub eta: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub v1: f64,
    pub w2: f64,
    pub w3: f64,
    pub v_gamma: f64,
    pub phi: f64,
    #[serde(rename = "J_star")]
    pub j_star: f64,
}

impl CsvRow {
    /// Bitwise comparison, so NaN entries compare equal to themselves.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.agent == other.agent
            && self
                .values()
                .iter()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn values(&self) -> [f64; 24] {
        [
            self.t,
            self.px,
            self.py,
            self.pz,
            self.r11,
            self.r12,
            self.r13,
            self.r21,
            self.r22,
            self.r23,
            self.r31,
            self.r32,
            self.r33,
            self.gamma,
            self.eta,
            self.y1,
            self.y2,
            self.y3,
            self.v1,
            self.w2,
            self.w3,
            self.v_gamma,
            self.phi,
            self.j_star,
        ]
    }
}

pub fn csv_rows(trace: &Trace) -> Vec<CsvRow> {
    trace
        .rows
        .iter()
        .map(|r| {
            let p = r.state.pose.p;
            let m = r.state.pose.r;
            CsvRow {
                t: r.t,
                agent: r.agent,
                px: p.x,
                py: p.y,
                pz: p.z,
                r11: m[(0, 0)],
                r12: m[(0, 1)],
                r13: m[(0, 2)],
                r21: m[(1, 0)],
                r22: m[(1, 1)],
                r23: m[(1, 2)],
                r31: m[(2, 0)],
                r32: m[(2, 1)],
                r33: m[(2, 2)],
                gamma: r.state.gamma,
                eta: r.state.eta,
                y1: r.y.x,
                y2: r.y.y,
                y3: r.y.z,
                v1: r.u.v1,
                w2: r.u.w2,
                w3: r.u.w3,
                v_gamma: r.v_gamma,
                phi: r.phi,
                j_star: r.j_star,
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Trace(format!("{other:?}")),
    }
}

pub fn write_csv<W: io::Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<CsvRow>> {
    read_csv(fs::File::open(path)?)
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleRecord>> {
    read_csv(fs::File::open(path)?)
}

/// Terminal and aggregate metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: Mode,
    pub n_agents: usize,
    pub t_final: f64,
    pub phi_final: f64,
    pub max_phi: f64,
    pub t_max_phi: f64,
    pub y_final_norms: Vec<f64>,
    pub gamma_final: Vec<f64>,
    pub eta_final: Vec<f64>,
    /// Trapezoidal `int |y|^2 dt` per agent over the recorded grid.
    pub integrated_y2: Vec<f64>,
    pub integrated_y2_total: f64,
    pub max_orthogonality_error: f64,
    pub n_samples: usize,
    pub total_iterations: usize,
    pub max_solver_violation: f64,
    pub max_warm_violation: f64,
    pub abort: Option<Abort>,
}

pub fn summarize(name: &str, trace: &Trace) -> Result<Summary> {
    if trace.rows.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    let n = trace.n_agents;
    let phi = trace.phi_series();
    let (t_max_phi, max_phi) = phi
        .iter()
        .copied()
        .fold((phi[0].0, f64::NEG_INFINITY), |acc, p| {
            if p.1 > acc.1 {
                p
            } else {
                acc
            }
        });
    let last = trace.final_rows();
    let integrated_y2: Vec<f64> = (0..n)
        .map(|i| {
            let rows: Vec<_> = trace.agent_rows(i).collect();
            rows.windows(2)
                .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].y.norm_squared() + w[1].y.norm_squared()))
                .sum()
        })
        .collect();
    let max_abs = |f: fn(&SampleRecord) -> f64| trace.samples.iter().map(f).fold(0.0, f64::max);
    Ok(Summary {
        scenario: name.to_string(),
        mode: trace.mode,
        n_agents: n,
        t_final: last[0].t,
        phi_final: last[0].phi,
        max_phi,
        t_max_phi,
        y_final_norms: last.iter().map(|r| r.y.norm()).collect(),
        gamma_final: last.iter().map(|r| r.state.gamma).collect(),
        eta_final: last.iter().map(|r| r.state.eta).collect(),
        integrated_y2_total: integrated_y2.iter().sum(),
        integrated_y2,
        max_orthogonality_error: trace
            .rows
            .iter()
            .map(|r| r.state.pose.orthogonality_error())
            .fold(0.0, f64::max),
        n_samples: trace.samples.iter().map(|s| s.k + 1).max().unwrap_or(0),
        total_iterations: trace.samples.iter().map(|s| s.iterations).sum(),
        max_solver_violation: max_abs(|s| s.max_violation),
        max_warm_violation: max_abs(|s| s.warm_violation),
        abort: trace.abort.clone(),
    })
}

/// Path geometry and positions, one block per agent separated by two blank
/// lines.
pub fn positions_dat(trace: &Trace, scenario: &Scenario) -> String {
    let mut s = String::from("# t px py pz cx cy cz\n");
    for i in 0..trace.n_agents {
        if i > 0 {
            s.push_str("\n\n");
        }
        let path = &scenario.agents[i].problem.model.path;
        let _ = writeln!(s, "# agent {i}");
        for r in trace.agent_rows(i) {
            let p = r.state.pose.p;
            let c = path.eval(r.state.gamma);
            let _ = writeln!(s, "{} {} {} {} {} {} {}", r.t, p.x, p.y, p.z, c.x, c.y, c.z);
        }
    }
    s
}

/// Time series of `phi`, each `gamma` and each `|y|`.
pub fn series_dat(trace: &Trace) -> String {
    let n = trace.n_agents;
    let mut s = String::from("# t phi");
    for i in 0..n {
        let _ = write!(s, " gamma_{i}");
    }
    for i in 0..n {
        let _ = write!(s, " ynorm_{i}");
    }
    s.push('\n');
    for block in trace.rows.chunks(n) {
        let _ = write!(s, "{} {}", block[0].t, block[0].phi);
        for r in block {
            let _ = write!(s, " {}", r.state.gamma);
        }
        for r in block {
            let _ = write!(s, " {}", r.y.norm());
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub trace_csv: PathBuf,
    pub samples_csv: PathBuf,
    pub positions_dat: PathBuf,
    pub series_dat: PathBuf,
    pub summary_json: PathBuf,
    pub scenario_json: PathBuf,
}

/// Writes every output file into `dir`, creating it if needed. The scenario
/// document is stored alongside so the run can be diagnosed later.
pub fn export(trace: &Trace, scenario: &Scenario, dir: &Path) -> Result<ExportedFiles> {
    let summary = summarize(&scenario.name, trace)?;
    fs::create_dir_all(dir)?;
    let files = ExportedFiles {
        trace_csv: dir.join("trace.csv"),
        samples_csv: dir.join("samples.csv"),
        positions_dat: dir.join("positions.dat"),
        series_dat: dir.join("series.dat"),
        summary_json: dir.join("summary.json"),
        scenario_json: dir.join("scenario.json"),
    };
    write_csv(
        io::BufWriter::new(fs::File::create(&files.trace_csv)?),
        &csv_rows(trace),
    )?;
    write_csv(
        io::BufWriter::new(fs::File::create(&files.samples_csv)?),
        &trace.samples,
    )?;
    fs::write(&files.positions_dat, positions_dat(trace, scenario))?;
    fs::write(&files.series_dat, series_dat(trace))?;
    fs::write(&files.summary_json, to_json(&summary)?)?;
    fs::write(&files.scenario_json, to_json(&scenario.doc)?)?;
    Ok(files)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Trace(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub checked: usize,
    /// Transitions `k -> k+1` where the bound failed.
    pub failed: Vec<usize>,
    /// Smallest `bound - Phi(k+1)` seen.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecrease {
    pub agent: usize,
    pub report: DecreaseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagReport {
    /// Empty outside MPC mode.
    pub value_decrease: Vec<AgentDecrease>,
    pub flagged_fraction: f64,
    pub iss: Option<IssReport>,
}

/// Offline checks on stored sample records.
///
/// The ISS check treats everything that moved the path parameters apart
/// beyond the consensus action as the disturbance:
/// `d_k = gamma(k+1) - gamma(k) - k_con(k)`. The common speed cancels in
/// the disagreement.
pub fn diagnose(samples: &[SampleRecord], scenario: &Scenario) -> Result<DiagReport> {
    let n = scenario.n_agents();
    let n_k = samples.iter().map(|s| s.k + 1).max().unwrap_or(0);
    let mut grid = vec![vec![None; n]; n_k];
    for s in samples {
        if s.agent >= n {
            return Err(Error::Dimension(format!(
                "sample for agent {} in a {n}-agent scenario",
                s.agent
            )));
        }
        grid[s.k][s.agent] = Some(*s);
    }
    let complete: Vec<Vec<SampleRecord>> = grid
        .into_iter()
        .map_while(|row| row.into_iter().collect::<Option<Vec<_>>>())
        .collect();

    let mut value_decrease = Vec::new();
    if samples.iter().any(|s| s.j_star.is_finite()) {
        for i in 0..n {
            let seq: Vec<DecreaseSample> = complete
                .iter()
                .map(|row| DecreaseSample {
                    t: row[i].t,
                    value: row[i].j_star,
                    running_integral: row[i].running_integral,
                    k_con: row[i].k_con,
                })
                .collect();
            value_decrease.push(AgentDecrease {
                agent: i,
                report: value_decrease_check(
                    &seq,
                    scenario.c_beta,
                    scenario.delta_lb,
                    scenario.solver_tol,
                ),
            });
        }
    }
    let (flagged, checked) = value_decrease.iter().fold((0, 0), |(f, c), a| {
        (f + a.report.flagged.len(), c + a.report.checked)
    });

    let iss = match IssConstants::new(&scenario.graph, scenario.gain) {
        Ok(consts) => {
            let mut failed = Vec::new();
            let mut worst = f64::INFINITY;
            for (k, w) in complete.windows(2).enumerate() {
                let xi_k: Vec<f64> = w[0].iter().map(|s| s.gamma).collect();
                let xi_k1: Vec<f64> = w[1].iter().map(|s| s.gamma).collect();
                let d: Vec<f64> = (0..n).map(|i| xi_k1[i] - xi_k[i] - w[0][i].k_con).collect();
                let r = iss_step_with(&consts, &xi_k, &d, &xi_k1);
                worst = worst.min(r.margin);
                if !r.passed {
                    failed.push(k);
                }
            }
            Some(IssReport {
                checked: complete.len().saturating_sub(1),
                failed,
                worst_margin: if worst.is_finite() { worst } else { 0.0 },
            })
        }
        Err(_) => None,
    };

    Ok(DiagReport {
        value_decrease,
        flagged_fraction: if checked == 0 {
            0.0
        } else {
            flagged as f64 / checked as f64
        },
        iss,
    })
}
