//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setpoint_core::estimator::{adapt, init_estimator, lsq_batch_oracle, EstimatorConfig};
use setpoint_core::fd::{synth_fd_samples, Excitation, MetanetFdParams, ParabolicFd, CAPACITY_CONSISTENCY_TOL};
use setpoint_core::output::{trajectory_csv, Summary};
use setpoint_core::scenario::{
    empirical_critical_density, improvement, run_scenario, run_suite, sensitivity_sweep, ControlMode,
    RunResult, ScenarioConfig, ScenarioId, PHASE1_TOL, PHASE2_TOL, SETTLE_SUSTAIN,
};

const DT: f64 = 1.0 / 360.0;
const MEASURED_CELL: usize = 14;

// Criterion 2
const CONGESTION_FACTOR: f64 = 1.3;
const CONGESTED_SPEED: f64 = 50.0;
const MIN_SPILLBACK_CELLS: usize = 3;
const MIN_EPISODES: usize = 2;
// Criterion 3
const S4_SLACK: f64 = 0.005;
const S2_BAND_PCT: (f64, f64) = (3.0, 10.0);
const SUITE_BUDGET: Duration = Duration::from_secs(10);
// Criterion 4
const SWITCH_WINDOW_MIN: f64 = 45.0;
const START_WINDOW_MIN: f64 = 40.0;
// Criterion 5
const ORACLE_SAMPLES: usize = 5000;
const ORACLE_REL_TOL: f64 = 1e-3;
const ORACLE_GAMMA_0: f64 = 1e6;
// Criterion 6
const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const SPOT_EVERY: usize = 100;
const SPOT_DIRECTIONS: usize = 100;
// Criterion 7
const RECOVERY_STEPS: usize = 2000;
const RECOVERY_REL_TOL: f64 = 0.01;
const NOISE_STD: f64 = 0.05;
const NOISE_SEEDS: u64 = 20;
const NOISE_BIAS_TOL: f64 = 0.02;
// Criterion 8
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
// Criterion 10
const CONSERVATION_TOL: f64 = 1e-6;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {n:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn by_id(runs: &[RunResult], id: ScenarioId) -> &RunResult {
    runs.iter().find(|r| r.id == id).expect("suite contains every scenario")
}

fn fd_consistency(rep: &mut Report) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, fd) in [("FD1", MetanetFdParams::fd1()), ("FD2", MetanetFdParams::fd2())] {
        let q = fd.equilibrium_flow(fd.rho_cr).unwrap();
        let rel = (q - fd.q_cap).abs() / fd.q_cap;
        pass &= rel <= CAPACITY_CONSISTENCY_TOL;
        detail.push(format!("{name} {:.0}*V = {q:.1} vs {:.0} ({:.3}%)", fd.rho_cr, fd.q_cap, 100.0 * rel));
    }
    rep.line(1, "FD consistency", pass, detail.join(", "));
}

struct Episode {
    start: usize,
    end: usize,
    peak_density: f64,
    spillback: usize,
}

fn congestion_episodes(run: &RunResult, cfg: &ScenarioConfig) -> Vec<Episode> {
    let mut episodes: Vec<Episode> = Vec::new();
    let mut open = false;
    for row in &run.trajectory {
        let threshold = CONGESTION_FACTOR * cfg.fd_at(row.k).rho_cr;
        let rho = row.rho[MEASURED_CELL];
        if rho > threshold {
            let spill = (0..MEASURED_CELL)
                .rev()
                .take_while(|&i| row.v[i] < CONGESTED_SPEED)
                .count();
            if !open {
                episodes.push(Episode { start: row.k, end: row.k, peak_density: rho, spillback: spill });
                open = true;
            }
            let e = episodes.last_mut().unwrap();
            e.end = row.k;
            e.peak_density = e.peak_density.max(rho);
            e.spillback = e.spillback.max(spill);
        } else {
            open = false;
        }
    }
    episodes
}

fn s1_congestion(rep: &mut Report, s1: &RunResult) {
    let cfg = ScenarioConfig::standard(ScenarioId::S1);
    let episodes = congestion_episodes(s1, &cfg);
    let qualifying = episodes.iter().filter(|e| e.spillback >= MIN_SPILLBACK_CELLS).count();
    let detail = episodes
        .iter()
        .map(|e| {
            format!(
                "[{:.0}-{:.0} min, peak {:.1}, spill-back {} cells]",
                e.start as f64 / 6.0,
                e.end as f64 / 6.0,
                e.peak_density,
                e.spillback
            )
        })
        .collect::<Vec<_>>()
        .join(" ");
    rep.line(2, "S1 congestion episodes", qualifying >= MIN_EPISODES, format!("{qualifying} qualifying: {detail}"));
}

fn tts_ordering(rep: &mut Report, runs: &[RunResult], elapsed: Duration) {
    let tts = |id| by_id(runs, id).tts;
    let imp = |id| improvement(tts(ScenarioId::S1), tts(id));
    use ScenarioId::*;
    let clauses = [
        ("S1 > S3a", tts(S1) > tts(S3a)),
        ("S1 > S3b", tts(S1) > tts(S3b)),
        ("S3a > S4a", tts(S3a) > tts(S4a)),
        ("S3b > S4b", tts(S3b) > tts(S4b)),
        ("S4a >= S2 - 0.5%", tts(S4a) >= tts(S2) * (1.0 - S4_SLACK)),
        ("S4b >= S2 - 0.5%", tts(S4b) >= tts(S2) * (1.0 - S4_SLACK)),
        ("S2 improvement in [3,10]%", (S2_BAND_PCT.0..=S2_BAND_PCT.1).contains(&imp(S2))),
        ("suite < 10 s", elapsed < SUITE_BUDGET),
    ];
    let pass = clauses.iter().all(|c| c.1);
    let failed: Vec<&str> = clauses.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let table = [S1, S2, S3a, S3b, S4a, S4b, S5a, S5b]
        .iter()
        .map(|&id| format!("{id} {:.1} ({:.2}%)", tts(id), imp(id)))
        .collect::<Vec<_>>()
        .join(", ");
    let verdict = if failed.is_empty() { String::new() } else { format!(" | violated: {}", failed.join("; ")) };
    rep.line(3, "TTS ordering", pass, format!("{table}; {:.2} s{verdict}", elapsed.as_secs_f64()));
}

fn estimator_convergence(rep: &mut Report, runs: &[RunResult]) {
    let conv = |id| by_id(runs, id).convergence_min.expect("adaptive run")[..].to_vec();
    let s4a = conv(ScenarioId::S4a)[1];
    let s5a = conv(ScenarioId::S5a)[0];
    let s5b = conv(ScenarioId::S5b)[0];
    let within = |x: Option<f64>, limit: f64| x.is_some_and(|m| m <= limit);
    let pass = within(s4a, SWITCH_WINDOW_MIN) && within(s5a, START_WINDOW_MIN) && within(s5b, START_WINDOW_MIN);
    let [c1, c2] = ScenarioConfig::standard(ScenarioId::S4a).critical_targets;
    let s1 = by_id(runs, ScenarioId::S1);
    let e1 = empirical_critical_density(s1, MEASURED_CELL, 0..720).unwrap_or(f64::NAN);
    let e2 = empirical_critical_density(s1, MEASURED_CELL, 720..1441).unwrap_or(f64::NAN);
    let fmt = |x: Option<f64>| x.map_or("never".into(), |m| format!("{m:.1} min"));
    rep.line(
        4,
        "estimator convergence",
        pass,
        format!(
            "S4a settles on {c2}±{PHASE2_TOL} ({} min sustained) after {} of the switch; \
             S5a/S5b reach {c1}±{PHASE1_TOL} after {} / {}; S1 flow peaks at {e1:.1} / {e2:.1}",
            SETTLE_SUSTAIN / 6,
            fmt(s4a),
            fmt(s5a),
            fmt(s5b)
        ),
    );
}

fn rls_oracle(rep: &mut Report) {
    let t0 = Instant::now();
    let fd = ParabolicFd::new(-1.0, 66.0).unwrap();
    let exc = Excitation::Sinusoid { mean: 33.0, amplitude: 15.0, period: 0.5, dt: DT, steps: ORACLE_SAMPLES };
    let samples = synth_fd_samples(&fd, &exc, 0.02, 5).unwrap();
    let init = init_estimator(EstimatorConfig { rho_star_0: 28.0, q_star_0: 1500.0, gamma_0: ORACLE_GAMMA_0, ..EstimatorConfig::default() }).unwrap();
    let s = init.config().prescale;
    let rows: Vec<(Vector2<f64>, Vector2<f64>)> = samples
        .iter()
        .map(|&(rho, q)| (Vector2::new(-rho * rho * s[0], rho * s[1]), Vector2::new(q, rho)))
        .collect();
    let mut pi = init.pi_hat;
    let mut gamma = Matrix2::identity() * init.config().gamma_0;
    for (v, y) in &rows {
        let e = pi.transpose() * v - y;
        adapt(&mut pi, &mut gamma, v, &e, DT).unwrap();
    }
    let fit = lsq_batch_oracle(&rows).unwrap();
    let rel = (pi - fit).norm() / fit.norm();
    let elapsed = t0.elapsed();
    rep.line(
        5,
        "RLS-oracle equivalence",
        rel <= ORACLE_REL_TOL && elapsed < Duration::from_secs(1),
        format!("relative Frobenius distance {rel:.2e} over {ORACLE_SAMPLES} samples in {:.3} s", elapsed.as_secs_f64()),
    );
}

fn gamma_properties(rep: &mut Report, runs: &[RunResult]) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sym: f64 = 0.0;
    let mut worst_psd: f64 = 0.0;
    let mut checks = 0usize;
    let mut replay_ok = true;
    for run in runs {
        let cfg = ScenarioConfig::standard(run.id);
        let ControlMode::Adaptive { estimator } = cfg.control else { continue };
        let mut est = init_estimator(estimator).unwrap();
        for (k, row) in run.trajectory.iter().enumerate() {
            let before = est.gamma;
            let (rho_hat, _) = est.step(row.rho[MEASURED_CELL], row.q[MEASURED_CELL], cfg.model.t).unwrap();
            replay_ok &= Some(rho_hat) == row.rho_star_hat;
            let g = est.gamma;
            let scale = before.amax();
            worst_sym = worst_sym.max((g - g.transpose()).amax() / scale);
            if k % SPOT_EVERY == 0 {
                for _ in 0..SPOT_DIRECTIONS {
                    let x = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let growth = (x.dot(&(g * x)) - x.dot(&(before * x))) / (scale * x.norm_squared());
                    worst_psd = worst_psd.max(growth);
                    checks += 1;
                }
            }
        }
    }
    rep.line(
        6,
        "Gamma symmetric and non-increasing",
        worst_sym <= SYMMETRY_TOL && worst_psd <= PSD_TOL && replay_ok,
        format!(
            "max relative asymmetry {worst_sym:.1e}, max relative growth {worst_psd:.1e} over {checks} \
             quadratic-form checks, replay matches runs: {replay_ok}"
        ),
    );
}

fn synthetic_run(noise: f64, seed: u64) -> (f64, Option<usize>) {
    let fd = ParabolicFd::new(-1.0, 66.0).unwrap();
    let exc = Excitation::Sinusoid { mean: 33.0, amplitude: 10.0, period: 0.5, dt: DT, steps: RECOVERY_STEPS };
    let samples = synth_fd_samples(&fd, &exc, noise, seed).unwrap();
    let mut est = init_estimator(EstimatorConfig { rho_star_0: 40.0, q_star_0: 1500.0, ..EstimatorConfig::default() }).unwrap();
    let mut entered = None;
    for (k, (rho, q)) in samples.into_iter().enumerate() {
        let (r, _) = est.step(rho, q, DT).unwrap();
        let inside = (r - 33.0).abs() <= RECOVERY_REL_TOL * 33.0;
        match (inside, entered) {
            (true, None) => entered = Some(k + 1),
            (false, Some(_)) => entered = None,
            _ => {}
        }
    }
    (est.rho_star_hat, entered)
}

fn synthetic_recovery(rep: &mut Report) {
    let (clean, steps) = synthetic_run(0.0, 0);
    let finals: Vec<f64> = (0..NOISE_SEEDS).map(|s| synthetic_run(NOISE_STD, s).0).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let bias = (mean - 33.0).abs() / 33.0;
    let pass = steps.is_some() && (clean - 33.0).abs() <= RECOVERY_REL_TOL * 33.0 && bias < NOISE_BIAS_TOL;
    rep.line(
        7,
        "synthetic parabola recovery",
        pass,
        format!(
            "noiseless {clean:.4} (inside 1% from step {}), 5% noise mean {mean:.3} over {NOISE_SEEDS} seeds, bias {:.2}%",
            steps.map_or("never".into(), |s| s.to_string()),
            100.0 * bias
        ),
    );
}

fn sweep(rep: &mut Report) {
    let t0 = Instant::now();
    let kr: Vec<f64> = (1..=20).map(f64::from).collect();
    let cr: Vec<f64> = (1..=9).map(f64::from).collect();
    let rows = sensitivity_sweep(&ScenarioConfig::standard(ScenarioId::S4a), &kr, &cr).unwrap();
    let elapsed = t0.elapsed();
    let worst = rows.iter().filter_map(|r| r.improvement_pct).fold(f64::INFINITY, f64::min);
    let best = rows.iter().filter_map(|r| r.improvement_pct).fold(f64::NEG_INFINITY, f64::max);
    let complete = rows.iter().all(|r| r.improvement_pct.is_some());
    rep.line(
        8,
        "sensitivity sweep",
        complete && worst > 0.0 && rows.len() == 180 && elapsed < SWEEP_BUDGET,
        format!("{} cells, improvement {worst:.2}% to {best:.2}%, {:.2} s", rows.len(), elapsed.as_secs_f64()),
    );
}

fn determinism(rep: &mut Report, runs: &[RunResult]) {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let base = by_id(runs, ScenarioId::S1).tts;
    let mut identical = true;
    for id in ScenarioId::SUITE {
        for dir in &dirs {
            let run = run_scenario(&ScenarioConfig::standard(id)).unwrap();
            let summary = Summary::from_run(&run, Some(base), 10.0, serde_json::Value::Null);
            fs::write(dir.path().join(format!("{id}_trajectory.csv")), trajectory_csv(&run)).unwrap();
            fs::write(dir.path().join(format!("{id}_summary.json")), summary.to_json()).unwrap();
        }
        for file in [format!("{id}_trajectory.csv"), format!("{id}_summary.json")] {
            identical &= fs::read(dirs[0].path().join(&file)).unwrap() == fs::read(dirs[1].path().join(&file)).unwrap();
        }
        identical &= run_scenario(&ScenarioConfig::standard(id)).unwrap() == *by_id(runs, id);
    }
    rep.line(9, "determinism", identical, format!("byte-identical outputs for all {} scenarios: {identical}", ScenarioId::SUITE.len()));
}

fn conservation(rep: &mut Report, runs: &[RunResult]) {
    let worst = runs.iter().map(|r| r.cumulative_conservation_residual.abs()).fold(0.0, f64::max);
    let step_worst = runs.iter().map(|r| r.max_conservation_residual).fold(0.0, f64::max);
    let clamps = runs.iter().map(|r| r.clamp_vehicles_total.abs()).fold(0.0, f64::max);
    rep.line(
        10,
        "vehicle conservation",
        worst <= CONSERVATION_TOL,
        format!("cumulative residual {worst:.2e} veh, per-step {step_worst:.2e} veh, clamp corrections {clamps:.2e} veh"),
    );
}

fn main() {
    let mut rep = Report { failures: 0 };
    let t0 = Instant::now();
    let runs = run_suite().expect("standard suite runs");
    let suite_time = t0.elapsed();

    fd_consistency(&mut rep);
    s1_congestion(&mut rep, by_id(&runs, ScenarioId::S1));
    tts_ordering(&mut rep, &runs, suite_time);
    estimator_convergence(&mut rep, &runs);
    rls_oracle(&mut rep);
    gamma_properties(&mut rep, &runs);
    synthetic_recovery(&mut rep);
    sweep(&mut rep);
    determinism(&mut rep, &runs);
    conservation(&mut rep, &runs);

    println!("acceptance: {} of 10 criteria failed", rep.failures);
    if rep.failures > 0 {
        std::process::exit(1);
    }
}
