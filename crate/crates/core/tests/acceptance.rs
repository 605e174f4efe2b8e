//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};

use cpf_core::aux_control::{aux_input_bounds, finite_time_envelope, k_aux, AuxGains};
use cpf_core::net_graph::{
    consensus_step, disagreement, edge_disagreement, iss_step_with, perron, verify_perron,
    CommGraph, ConsensusGain, IssConstants,
};
use cpf_core::paths::{PathSpec, Vec3};
use cpf_core::scenario::{bundled, Mode, Scenario};
use cpf_core::sim::{run, Trace};
use cpf_core::trace::{diagnose, summarize};
use cpf_core::vehicle::{
    integrate, integrate_feedback, output_y, AgentState, BodyOffset, CommonSpeed, InputPiece, Pose,
    StageInput, VehicleInput,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn line_graph() -> (CommGraph, ConsensusGain) {
    let g = CommGraph::three_agent_line();
    let gain = ConsensusGain::new(0.0125, &g).expect("valid gain");
    (g, gain)
}

fn lyapunov(values: &[f64]) -> f64 {
    disagreement(values).0.iter().map(|d| d * d).sum()
}

/// Path parameters at each sample index, agents in order.
fn sample_gammas(tr: &Trace) -> Vec<Vec<f64>> {
    let n_k = tr.samples.iter().map(|s| s.k + 1).max().unwrap_or(0);
    let mut out = vec![vec![f64::NAN; tr.n_agents]; n_k];
    for s in &tr.samples {
        out[s.k][s.agent] = s.gamma;
    }
    out
}

struct Runs {
    q100: (Scenario, Trace),
    q01: (Scenario, Trace),
    dec100: Trace,
    dec01: Trace,
    fixed: (Scenario, Trace),
}

fn closed_loop_runs() -> Runs {
    let load = |n: &str| bundled(n).expect("bundled scenario");
    let (q100, q01) = rayon::join(
        || {
            let sc = load("paper_q100");
            let tr = run(&sc, Mode::Cpf);
            (sc, tr)
        },
        || {
            let sc = load("paper_q01");
            let tr = run(&sc, Mode::Cpf);
            (sc, tr)
        },
    );
    let fixed_sc = load("fixed_point");
    let fixed_tr = run(&fixed_sc, Mode::Cpf);
    Runs {
        dec100: run(&q100.0, Mode::Decoupled),
        dec01: run(&q01.0, Mode::Decoupled),
        q100,
        q01,
        fixed: (fixed_sc, fixed_tr),
    }
}

fn c1_spectral() -> Check {
    let start = Instant::now();
    let (g, gain) = line_graph();
    let report = verify_perron(&g, 0.0125);
    ensure(report.all_ok(), format!("Perron report {report:?}"))?;
    let p = perron(&g, gain);
    let n = g.n_agents();
    let worst_sum = (0..n)
        .flat_map(|i| [p.row(i).sum(), p.column(i).sum()])
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(
        worst_sum <= 1e-12,
        format!("row/column sum off by {worst_sum:e}"),
    )?;
    ensure(
        report.moduli.iter().all(|&m| m <= 1.0 + 1e-12),
        "eigenvalue outside unit disk",
    )?;
    let c = IssConstants::new(&g, gain).map_err(|e| e.to_string())?;
    ensure(
        (c.lambda2 - 1.0).abs() <= 1e-9,
        format!("lambda2 = {}", c.lambda2),
    )?;
    ensure((c.mu2 - 0.9875).abs() <= 1e-9, format!("mu2 = {}", c.mu2))?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, format!("took {elapsed} s"))?;
    Ok(format!(
        "lambda2 = {}, mu2 = {}, {:.1} ms",
        c.lambda2,
        c.mu2,
        elapsed * 1e3
    ))
}

fn c2_iss() -> Check {
    let (g, gain) = line_graph();
    let c = IssConstants::new(&g, gain).map_err(|e| e.to_string())?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for run in 0..50 {
        let a_eta = rng.gen_range(0.01..2.0);
        let lambda = rng.gen_range(0.001..0.5);
        let mut xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
        for k in 0..100 {
            let bound = a_eta * (-lambda * k as f64).exp();
            let eta: Vec<f64> = (0..3).map(|_| rng.gen_range(-bound..=bound)).collect();
            let next = consensus_step(&g, gain, &xi, &eta).map_err(|e| e.to_string())?;
            let r = iss_step_with(&c, &xi, &eta, &next);
            ensure(
                r.passed,
                format!("run {run} step {k}: margin {:e}", r.margin),
            )?;
            worst = worst.min(r.margin);
            xi = next;
        }
    }
    let mut xi = vec![15.0, 10.0, 5.0];
    let phi0 = lyapunov(&xi);
    for k in 1..=100 {
        xi = consensus_step(&g, gain, &xi, &[0.0; 3]).map_err(|e| e.to_string())?;
        let bound = c.mu2.powi(2 * k) * phi0 + 1e-12;
        ensure(
            lyapunov(&xi) <= bound,
            format!("undisturbed step {k} above geometric bound"),
        )?;
    }
    Ok(format!(
        "50 disturbed runs x 100 steps, smallest margin {worst:.3e}"
    ))
}

fn c3_sampled_equivalence() -> Check {
    let base = bundled("consensus_spread").map_err(|e| e.to_string())?;
    let mut still = base.doc.clone();
    still.speed = CommonSpeed::constant(0.0);
    let still = Scenario::from_doc(still).map_err(|e| e.to_string())?;
    let tr0 = run(&still, Mode::Consensus);
    let tr2 = run(&base, Mode::Consensus);

    let (g, gain) = line_graph();
    let mut sim = sample_gammas(&tr0);
    sim.push(tr0.final_rows().iter().map(|r| r.state.gamma).collect());
    ensure(sim.len() == 401, format!("{} sample instants", sim.len()))?;
    let mut xi = sim[0].clone();
    let mut worst = 0.0f64;
    for (k, row) in sim.iter().enumerate() {
        let err = row
            .iter()
            .zip(&xi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(err <= 1e-9, format!("sample {k}: |gamma - xi| = {err:e}"))?;
        xi = consensus_step(&g, gain, &xi, &[0.0; 3]).map_err(|e| e.to_string())?;
    }
    let phi: Vec<f64> = sim.iter().map(|v| edge_disagreement(v, &g)).collect();
    ensure(
        phi.windows(2).all(|w| w[1] <= w[0]),
        "phi increased between samples",
    )?;

    ensure(tr0.rows.len() == tr2.rows.len(), "traces differ in length")?;
    let drift = tr0
        .rows
        .iter()
        .zip(&tr2.rows)
        .map(|(a, b)| (a.phi - b.phi).abs())
        .fold(0.0, f64::max);
    ensure(
        drift <= 1e-12,
        format!("common speed changed phi by {drift:e}"),
    )?;
    Ok(format!(
        "401 samples, max |gamma - xi| = {worst:.1e}, common-speed phi drift {drift:.1e}"
    ))
}

fn c4_envelope() -> Check {
    let gains = AuxGains::diagonal(0.2, 1.0).map_err(|e| e.to_string())?;
    let off = BodyOffset::new(Vec3::new(-0.5, 0.0, 0.0)).map_err(|e| e.to_string())?;
    let speed = CommonSpeed::constant(2.0);
    let sinusoid = PathSpec::SinusoidOffsetLine {
        origin: [0.0; 3],
        direction: [1.0, 0.0, 0.0],
        offset: [0.0; 3],
        normal: [0.0, 0.0, 1.0],
        amplitude: 2.0,
        frequency: 0.1,
    };
    let cases = [
        (
            PathSpec::line([0.0; 3], [1.0, 0.0, 0.0]),
            Vec3::new(0.0, 0.6, 0.8),
            [0.0; 3],
        ),
        (sinusoid.clone(), Vec3::new(1.0, 0.0, 0.0), [0.3, 0.0, -0.2]),
        (sinusoid, Vec3::new(-0.48, 0.6, 0.64), [-1.0, 0.4, 2.0]),
    ];
    let dt = 1e-3;
    let mut worst_excess = f64::NEG_INFINITY;
    for (ci, (path, y0, ypr)) in cases.iter().enumerate() {
        let r = *Rotation3::from_euler_angles(ypr[2], ypr[1], ypr[0]).matrix();
        let gamma0 = 3.0;
        let p = path.eval(gamma0) + r * (y0 - off.vector());
        let mut s = AgentState {
            pose: Pose::new(p, r),
            gamma: gamma0,
            eta: 0.0,
        };
        let y_start = output_y(&s.pose, &off, path, s.gamma).norm();
        ensure(
            (y_start - 1.0).abs() < 1e-12,
            format!("case {ci}: |y0| = {y_start}"),
        )?;
        let law = |t: f64, st: &AgentState| StageInput {
            u: k_aux(&st.pose, st.gamma, 0.0, speed.at(t), path, &gains, &off),
            ..Default::default()
        };
        for k in 0..6000 {
            s = integrate_feedback(&s, k as f64 * dt, dt, 1, &speed, law);
            let t = (k + 1) as f64 * dt;
            let yn = output_y(&s.pose, &off, path, s.gamma).norm();
            let excess = yn - finite_time_envelope(1.0, &gains, t);
            worst_excess = worst_excess.max(excess);
            ensure(
                excess <= 1e-3,
                format!("case {ci}, t = {t}: |y| = {yn:e} above envelope"),
            )?;
            if t >= 5.1 - 1e-12 {
                ensure(yn <= 1e-3, format!("case {ci}, t = {t}: |y| = {yn:e}"))?;
            }
        }
    }
    Ok(format!(
        "3 initial conditions, largest excess over envelope {worst_excess:.2e}"
    ))
}

fn c5_input_box() -> Check {
    let gains = AuxGains::diagonal(0.2, 1.0).map_err(|e| e.to_string())?;
    let off = BodyOffset::new(Vec3::new(-0.5, 0.0, 0.0)).map_err(|e| e.to_string())?;
    let sc = bundled("paper_q100").map_err(|e| e.to_string())?;
    let path = &sc.agents[0].problem.model.path;
    let b = aux_input_bounds(path, &off, &gains, 2.0, 1.0);
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let mut violations = 0;
    let mut closest = f64::INFINITY;
    for _ in 0..10_000 {
        let r = *Rotation3::from_euler_angles(
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI / 2.0..PI / 2.0),
            rng.gen_range(-PI..PI),
        )
        .matrix();
        let p = Vec3::from_fn(|_, _| rng.gen_range(-30.0..30.0));
        let gamma = rng.gen_range(-100.0..100.0);
        let ug = rng.gen_range(-1.0..=1.0);
        let g = rng.gen_range(-2.0..=2.0);
        let u = k_aux(&Pose::new(p, r), gamma, ug, g, path, &gains, &off);
        closest = closest.min(b.slack(u));
        if !b.contains(u, 0.0) {
            violations += 1;
        }
    }
    ensure(
        violations == 0,
        format!("{violations} samples outside the box"),
    )?;
    Ok(format!(
        "box {:?}, smallest slack {closest:.3}",
        b.max.as_slice()
    ))
}

fn c6_fixed_point(r: &Runs) -> Check {
    let (_, tr) = &r.fixed;
    ensure(tr.abort.is_none(), format!("aborted: {:?}", tr.abort))?;
    let j = tr.samples.iter().map(|s| s.j_star).fold(0.0, f64::max);
    ensure(
        tr.samples.len() == 300,
        format!("{} sample records", tr.samples.len()),
    )?;
    ensure(j <= 1e-6, format!("J* reached {j:e}"))?;
    let y = tr.rows.iter().map(|r| r.y.norm()).fold(0.0, f64::max);
    let phi = tr.rows.iter().map(|r| r.phi).fold(0.0, f64::max);
    ensure(y < 1e-3, format!("|y| reached {y:e}"))?;
    ensure(phi < 1e-9, format!("phi reached {phi:e}"))?;
    Ok(format!(
        "max J* {j:.1e}, max |y| {y:.1e}, max phi {phi:.1e} over 10 s"
    ))
}

fn c7_recursive_feasibility(r: &Runs) -> Check {
    let (_, tr) = &r.q100;
    ensure(tr.abort.is_none(), format!("aborted: {:?}", tr.abort))?;
    let warm: Vec<_> = tr.samples.iter().filter(|s| s.k > 0).collect();
    ensure(
        warm.len() == 399 * 3,
        format!("{} warm-started solves", warm.len()),
    )?;
    let worst = warm.iter().map(|s| s.warm_violation).fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("warm start violation {worst:e}"))?;
    let solved = tr
        .samples
        .iter()
        .map(|s| s.max_violation)
        .fold(0.0, f64::max);
    Ok(format!(
        "{} warm starts, worst violation {worst:.1e}; applied solutions {solved:.1e}",
        warm.len()
    ))
}

fn c8_tradeoff(r: &Runs) -> Check {
    let s100 = summarize("q100", &r.q100.1).map_err(|e| e.to_string())?;
    let s01 = summarize("q01", &r.q01.1).map_err(|e| e.to_string())?;
    ensure(s100.abort.is_none() && s01.abort.is_none(), "a run aborted")?;
    ensure(
        s100.t_final == 40.0,
        format!("q100 ended at {}", s100.t_final),
    )?;
    let y_max = s100.y_final_norms.iter().copied().fold(0.0, f64::max);
    ensure(y_max < 0.05, format!("|y(40)| = {y_max:e}"))?;
    ensure(
        s100.phi_final < 1e-2,
        format!("phi(40) = {:e}", s100.phi_final),
    )?;
    ensure(
        s100.max_phi > 10.0 * s100.phi_final,
        format!("max phi {:e} vs phi(40) {:e}", s100.max_phi, s100.phi_final),
    )?;
    ensure(
        s01.max_phi < 0.05 * s100.max_phi,
        format!(
            "Q = 0.1 max phi {:e} vs Q = 100 max phi {:e}",
            s01.max_phi, s100.max_phi
        ),
    )?;
    Ok(format!(
        "Q=100: phi(40) {:.1e}, max phi {:.3}, max |y(40)| {y_max:.1e}; Q=0.1: max phi {:.1e}",
        s100.phi_final, s100.max_phi, s01.max_phi
    ))
}

fn c9_decoupled(r: &Runs) -> Check {
    let (a, b) = (&r.dec100, &r.dec01);
    ensure(
        a.rows.len() == b.rows.len(),
        "decoupled traces differ in length",
    )?;
    let same = a
        .rows
        .iter()
        .zip(&b.rows)
        .all(|(x, y)| x.state.gamma.to_bits() == y.state.gamma.to_bits());
    ensure(same, "gamma differs between Q settings")?;

    let (g, gain) = line_graph();
    let mu2 = IssConstants::new(&g, gain).map_err(|e| e.to_string())?.mu2;
    let spread = bundled("consensus_spread").map_err(|e| e.to_string())?;
    let spread_dec = run(&spread, Mode::Decoupled);
    let mut checked = 0;
    for tr in [a, &spread_dec] {
        let gammas = sample_gammas(tr);
        let phi0 = lyapunov(&gammas[0]);
        for (k, v) in gammas.iter().enumerate() {
            let bound = mu2.powi(2 * k as i32) * phi0 + 1e-9;
            ensure(
                lyapunov(v) <= bound,
                format!("sample {k} above geometric bound"),
            )?;
            checked += 1;
        }
    }

    let coupled = summarize("q100", &r.q100.1).map_err(|e| e.to_string())?;
    let dec = summarize("dec", a).map_err(|e| e.to_string())?;
    ensure(
        dec.integrated_y2_total > coupled.integrated_y2_total,
        format!(
            "decoupled {:.3} vs coupled {:.3}",
            dec.integrated_y2_total, coupled.integrated_y2_total
        ),
    )?;
    Ok(format!(
        "gamma bitwise equal, {checked} samples under geometric bound, int |y|^2: decoupled {:.2} > coupled {:.2}",
        dec.integrated_y2_total, coupled.integrated_y2_total
    ))
}

fn c10_value_decrease(r: &Runs) -> Check {
    let (sc, tr) = &r.q100;
    let d = diagnose(&tr.samples, sc).map_err(|e| e.to_string())?;
    ensure(
        sc.solver_tol == 1e-3,
        format!("solver_tol {}", sc.solver_tol),
    )?;
    ensure(
        d.flagged_fraction <= 0.05,
        format!("{:.2}% flagged", 100.0 * d.flagged_fraction),
    )?;
    let (fsc, ftr) = &r.fixed;
    let f = diagnose(&ftr.samples, fsc).map_err(|e| e.to_string())?;
    let flags: usize = f
        .value_decrease
        .iter()
        .map(|a| a.report.flagged.len())
        .sum();
    ensure(
        f.value_decrease.len() == 3,
        "fixed-point run has no value records",
    )?;
    ensure(flags == 0, format!("{flags} flags on the fixed point"))?;
    Ok(format!(
        "paper_q100 flagged {:.2}% (c_beta = {}), fixed point 0 flags",
        100.0 * d.flagged_fraction,
        sc.c_beta
    ))
}

fn c11_numerics(r: &Runs) -> Check {
    let drift = [&r.q100.1, &r.q01.1, &r.dec100, &r.dec01, &r.fixed.1]
        .iter()
        .flat_map(|tr| tr.rows.iter())
        .map(|row| row.state.pose.orthogonality_error())
        .fold(0.0, f64::max);
    ensure(drift < 1e-9, format!("SO(3) drift {drift:e}"))?;

    let paths = [
        PathSpec::line([1.0, 2.0, 3.0], [0.6, -0.8, 0.0]),
        PathSpec::CircularHelix {
            center: [1.0, -2.0, 0.5],
            radius: 3.0,
            pitch: 0.4,
            rate: 0.7,
            phase: 0.3,
        },
        PathSpec::SinusoidOffsetLine {
            origin: [0.0, -5.0, 0.0],
            direction: [1.0, 0.0, 0.0],
            offset: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            amplitude: 2.0,
            frequency: 0.1,
        },
    ];
    let h = 1e-5;
    let mut fd_err = 0.0f64;
    for path in &paths {
        for i in 0..200 {
            let gamma = -50.0 + 0.5 * i as f64;
            let fd = (path.eval(gamma + h) - path.eval(gamma - h)) / (2.0 * h);
            fd_err = fd_err.max((fd - path.derivative(gamma)).norm());
        }
    }
    ensure(
        fd_err <= 1e-6,
        format!("path derivative mismatch {fd_err:e}"),
    )?;

    // Unit-speed turn at rate pi about the body z axis.
    let exact = |t: f64| Vec3::new((PI * t).sin() / PI, (1.0 - (PI * t).cos()) / PI, 0.0);
    let err = |dt: f64| {
        let s0 = AgentState {
            pose: Pose::identity_at(Vec3::zeros()),
            gamma: 0.0,
            eta: 0.0,
        };
        let piece = InputPiece {
            duration: 1.5,
            input: StageInput {
                u: VehicleInput::new(1.0, 0.0, PI),
                ..Default::default()
            },
        };
        let s = integrate(&s0, 0.0, &[piece], dt, &CommonSpeed::constant(0.0));
        (s.pose.p - exact(1.5)).norm()
    };
    let (e1, e2, e3) = (err(0.04), err(0.02), err(0.01));
    let orders = [(e1 / e2).log2(), (e2 / e3).log2()];
    ensure(
        orders.iter().all(|p| (3.6..4.4).contains(p)),
        format!("observed orders {orders:?}"),
    )?;
    Ok(format!(
        "SO(3) drift {drift:.1e}, FD mismatch {fd_err:.1e}, RK4 orders {:.2}, {:.2}",
        orders[0], orders[1]
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Check)> = vec![
        (1, "consensus spectral suite", c1_spectral()),
        (2, "ISS decrease", c2_iss()),
        (3, "sampled consensus equivalence", c3_sampled_equivalence()),
        (4, "finite-time output envelope", c4_envelope()),
        (5, "auxiliary input bounds", c5_input_box()),
    ];
    let runs = closed_loop_runs();
    results.push((6, "MPC fixed point", c6_fixed_point(&runs)));
    results.push((7, "recursive feasibility", c7_recursive_feasibility(&runs)));
    results.push((8, "transient trade-off", c8_tradeoff(&runs)));
    results.push((9, "decoupled baseline", c9_decoupled(&runs)));
    results.push((10, "value-decrease diagnostic", c10_value_decrease(&runs)));
    results.push((11, "numerics hygiene", c11_numerics(&runs)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
