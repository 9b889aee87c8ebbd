//! Scenario harness: the 20-cell test stretch, its demand profiles, the
//! control variants and the metrics computed on each run.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alinea::{applied_ramp_inflow, AlineaState};
use crate::error::{Error, Result};
use crate::estimator::{init_estimator, EstimatorConfig, ReferenceModelParams};
use crate::fd::MetanetFdParams;
use crate::metanet::{step_network, GlobalModelParams, Inflows, Network, NetworkState};

/// Tolerance for "reaches the critical value" in the first FD phase [veh/km/lane].
pub const PHASE1_TOL: f64 = 1.5;
/// Tolerance for "settles on the critical value" after the FD switch.
pub const PHASE2_TOL: f64 = 1.0;
/// Steps an estimate must remain in band to count as settled (30 min).
pub const SETTLE_SUSTAIN: usize = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3a,
    S3b,
    S4a,
    S4b,
    S5a,
    S5b,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioId {
    pub const SUITE: [ScenarioId; 8] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3a,
        ScenarioId::S3b,
        ScenarioId::S4a,
        ScenarioId::S4b,
        ScenarioId::S5a,
        ScenarioId::S5b,
    ];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3a => "S3a",
            ScenarioId::S3b => "S3b",
            ScenarioId::S4a => "S4a",
            ScenarioId::S4b => "S4b",
            ScenarioId::S5a => "S5a",
            ScenarioId::S5b => "S5b",
            ScenarioId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.to_ascii_lowercase().as_str() {
            "s1" => ScenarioId::S1,
            "s2" => ScenarioId::S2,
            "s3a" => ScenarioId::S3a,
            "s3b" => ScenarioId::S3b,
            "s4a" => ScenarioId::S4a,
            "s4b" => ScenarioId::S4b,
            "s5a" => ScenarioId::S5a,
            "s5b" => ScenarioId::S5b,
            "custom" => ScenarioId::Custom,
            _ => return Err(Error::config("scenario", format!("unknown scenario `{s}`"))),
        };
        Ok(id)
    }
}

/// Piecewise-linear profile over minutes. Repeating a time makes a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandProfile(pub Vec<(f64, f64)>);

impl DemandProfile {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::config(field, "needs at least one breakpoint"));
        }
        for w in self.0.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(Error::config(field, "breakpoint times must be non-decreasing"));
            }
        }
        if self.0.iter().any(|&(t, d)| !(t.is_finite() && d >= 0.0 && d.is_finite())) {
            return Err(Error::config(field, "demands must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn value_at(&self, t_min: f64) -> f64 {
        let pts = &self.0;
        if t_min < pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, d0), (t1, d1)) = (w[0], w[1]);
            if t0 <= t_min && t_min < t1 {
                return d0 + (d1 - d0) * (t_min - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }
}

pub fn mainstream_demand() -> DemandProfile {
    DemandProfile(vec![(0.0, 3200.0), (180.0, 3200.0), (180.0, 1800.0), (240.0, 1800.0)])
}

pub fn ramp_demand() -> DemandProfile {
    DemandProfile(vec![
        (0.0, 200.0),
        (5.0, 200.0),
        (10.0, 1100.0),
        (40.0, 1100.0),
        (45.0, 200.0),
        (115.0, 200.0),
        (120.0, 600.0),
        (165.0, 600.0),
        (170.0, 200.0),
        (240.0, 200.0),
    ])
}

/// Standard `(d_main, d_ramp)` at minute `t_min` of the 4-hour horizon.
pub fn demand_profile(t_min: f64) -> Result<(f64, f64)> {
    if !(0.0..=240.0).contains(&t_min) {
        return Err(Error::Domain(format!("t = {t_min} min outside [0, 240]")));
    }
    Ok((mainstream_demand().value_at(t_min), ramp_demand().value_at(t_min)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlMode {
    /// No metering; the ramp discharges up to its capacity.
    None,
    /// ALINEA with a set-point per FD phase.
    Known { phase1: f64, phase2: f64 },
    /// ALINEA fed by the online estimator.
    Adaptive { estimator: EstimatorConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub cells: usize,
    pub cell_length: f64,
    pub lanes: u32,
    /// Zero-based index of the on-ramp cell, which is also the measured cell.
    pub onramp_cell: usize,
    pub steps: usize,
    pub switch_step: usize,
    pub model: GlobalModelParams,
    pub fd_before: MetanetFdParams,
    pub fd_after: MetanetFdParams,
    pub main_demand: DemandProfile,
    pub ramp_demand: DemandProfile,
    pub initial_density: f64,
    pub ramp_capacity: f64,
    pub alinea_gain: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub control: ControlMode,
    /// Critical densities per phase used as convergence targets.
    pub critical_targets: [f64; 2],
    /// Multiplicative noise on the detector readings.
    pub noise_std: f64,
    pub seed: u64,
}

/// Known set-points per FD phase.
pub const KNOWN_SETPOINTS: [f64; 2] = [33.0, 28.0];

impl ScenarioConfig {
    pub fn standard(id: ScenarioId) -> Self {
        let adaptive = |rho: f64, q: f64| ControlMode::Adaptive {
            estimator: EstimatorConfig {
                rho_star_0: rho,
                q_star_0: q,
                ..EstimatorConfig::default()
            },
        };
        let [p1, p2] = KNOWN_SETPOINTS;
        let control = match id {
            ScenarioId::S1 => ControlMode::None,
            ScenarioId::S2 => ControlMode::Known { phase1: p1, phase2: p2 },
            ScenarioId::S3a => ControlMode::Known { phase1: p1, phase2: p1 },
            ScenarioId::S3b => ControlMode::Known { phase1: p2, phase2: p2 },
            ScenarioId::S4a | ScenarioId::Custom => adaptive(33.0, 4000.0),
            ScenarioId::S4b => adaptive(28.0, 3600.0),
            ScenarioId::S5a => adaptive(40.0, 4000.0),
            ScenarioId::S5b => adaptive(20.0, 4000.0),
        };
        Self {
            id,
            cells: 20,
            cell_length: 0.5,
            lanes: 2,
            onramp_cell: 14,
            steps: 1440,
            switch_step: 720,
            model: GlobalModelParams::default(),
            fd_before: MetanetFdParams::fd1(),
            fd_after: MetanetFdParams::fd2(),
            main_demand: mainstream_demand(),
            ramp_demand: ramp_demand(),
            initial_density: 10.0,
            ramp_capacity: 1800.0,
            alinea_gain: 15.0,
            u_min: 0.0,
            u_max: 1800.0,
            control,
            critical_targets: KNOWN_SETPOINTS,
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.fd_before.validate().map_err(|e| prefix(e, "fd1"))?;
        self.fd_after.validate().map_err(|e| prefix(e, "fd2"))?;
        self.main_demand.validate("main_demand")?;
        self.ramp_demand.validate("ramp_demand")?;
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.switch_step > self.steps {
            return Err(Error::config("switch_step", "beyond the horizon"));
        }
        if self.cells == 0 || self.onramp_cell >= self.cells {
            return Err(Error::config("onramp_cell", "outside the stretch"));
        }
        if !(self.initial_density > 0.0 && self.initial_density < self.fd_before.rho_jam) {
            return Err(Error::config("initial_density", "must lie in (0, rho_jam)"));
        }
        if !(self.ramp_capacity > 0.0) {
            return Err(Error::config("ramp_capacity", "must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std < 1.0) {
            return Err(Error::config("noise_std", "must lie in [0, 1)"));
        }
        AlineaState::new(self.alinea_gain, self.u_min, self.u_max, self.u_max)?;
        match &self.control {
            ControlMode::None => {}
            ControlMode::Known { phase1, phase2 } => {
                if !(*phase1 > 0.0 && *phase2 > 0.0) {
                    return Err(Error::config("control.phase1", "set-points must be positive"));
                }
            }
            ControlMode::Adaptive { estimator } => estimator.validate()?,
        }
        if self.id != ScenarioId::Custom {
            let hours = self.steps as f64 * self.model.t;
            if (hours - 4.0).abs() > 1e-9 {
                return Err(Error::config("steps", "horizon must be 4 h for the standard scenarios"));
            }
            if self.cells != 20 {
                return Err(Error::config("cells", "standard scenarios use 20 cells"));
            }
            if self.switch_step != 720 {
                return Err(Error::config("switch_step", "standard scenarios switch at step 720"));
            }
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        Network::uniform(self.cells, self.cell_length, self.lanes, self.onramp_cell)
    }

    pub fn fd_at(&self, k: usize) -> &MetanetFdParams {
        if k < self.switch_step {
            &self.fd_before
        } else {
            &self.fd_after
        }
    }

    pub fn with_reference(mut self, reference: ReferenceModelParams) -> Self {
        if let ControlMode::Adaptive { estimator } = &mut self.control {
            estimator.reference = reference;
        }
        self
    }
}

fn prefix(e: Error, name: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{name}.{}", field.trim_start_matches("fd.")),
            reason,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t_min: f64,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub w_ramp: f64,
    pub w_main: f64,
    pub u_cmd: Option<f64>,
    pub r_applied: f64,
    pub rho_star_hat: Option<f64>,
    pub q_star_hat: Option<f64>,
    pub e: Option<[f64; 2]>,
    pub trace_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub id: ScenarioId,
    pub trajectory: Vec<TrajectoryRow>,
    /// Total time spent [veh·h].
    pub tts: f64,
    pub peak_ramp_queue: f64,
    pub peak_main_queue: f64,
    /// Largest per-step vehicle balance residual [veh].
    pub max_conservation_residual: f64,
    /// Vehicles stored at the end minus stored at the start, minus the net
    /// boundary inflow and clamp corrections over the run [veh].
    pub cumulative_conservation_residual: f64,
    /// Vehicles added by the density clamps over the run [veh].
    pub clamp_vehicles_total: f64,
    /// Minutes from start to reach the phase-1 target, and from the switch
    /// to settle on the phase-2 target. `None` for non-adaptive runs.
    pub convergence_min: Option<[Option<f64>; 2]>,
}

impl RunResult {
    pub fn estimates(&self) -> Option<Vec<f64>> {
        self.trajectory.iter().map(|r| r.rho_star_hat).collect()
    }

    /// Density and flow of one cell over the run.
    pub fn cell_series(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        self.trajectory
            .iter()
            .map(|r| (r.rho[cell], r.q[cell]))
            .unzip()
    }
}

/// Total time spent `T·Σ_k (Σ_i L_i λ_i ρ_i(k) + w_ramp(k) + w_main(k))`
/// over the steps of the horizon; the final row only closes the last step.
pub fn tts(trajectory: &[TrajectoryRow], network: &Network, t: f64) -> f64 {
    let n = trajectory.len().saturating_sub(1);
    trajectory[..n]
        .iter()
        .map(|r| t * (network.vehicles(&r.rho) + r.w_ramp + r.w_main))
        .sum()
}

/// `100·(base − tts)/base`.
pub fn improvement(base_tts: f64, tts: f64) -> f64 {
    100.0 * (base_tts - tts) / base_tts
}

struct Detector {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl Detector {
    fn new(noise_std: f64, seed: u64) -> Result<Self> {
        let normal = if noise_std > 0.0 {
            Some(Normal::new(0.0, noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        })
    }

    fn read(&mut self, x: f64) -> f64 {
        match &self.normal {
            Some(n) => (x * (1.0 + n.sample(&mut self.rng))).max(0.0),
            None => x,
        }
    }
}

enum Controller {
    None,
    Known(AlineaState, [f64; 2]),
    Adaptive(AlineaState, Box<crate::estimator::EstimatorState>),
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let net = cfg.network()?;
    let t = cfg.model.t;
    let i_meas = cfg.onramp_cell;
    let mut state = NetworkState::uniform(&net, &cfg.fd_before, cfg.initial_density)?;
    let mut detector = Detector::new(cfg.noise_std, cfg.seed)?;
    let alinea = || AlineaState::new(cfg.alinea_gain, cfg.u_min, cfg.u_max, cfg.u_max);
    let mut ctl = match &cfg.control {
        ControlMode::None => Controller::None,
        ControlMode::Known { phase1, phase2 } => Controller::Known(alinea()?, [*phase1, *phase2]),
        ControlMode::Adaptive { estimator } => {
            Controller::Adaptive(alinea()?, Box::new(init_estimator(*estimator)?))
        }
    };

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut max_residual: f64 = 0.0;
    let stored = |s: &NetworkState| s.vehicles_on_mainline(&net) + s.w_main + s.w_ramp;
    let stored_start = stored(&state);
    let mut net_inflow = 0.0;
    let mut clamp_total = 0.0;
    for k in 0..=cfg.steps {
        let t_min = k as f64 * t * 60.0;
        let d_main = cfg.main_demand.value_at(t_min);
        let d_ramp = cfg.ramp_demand.value_at(t_min);
        let rho_meas = detector.read(state.rho[i_meas]);
        let q_meas = detector.read(state.q[i_meas]);
        let available = d_ramp + state.w_ramp / t;

        let (u_cmd, r, estimate) = match &mut ctl {
            Controller::None => (None, available.min(cfg.ramp_capacity).max(0.0), None),
            Controller::Known(a, sp) => {
                let set = if k < cfg.switch_step { sp[0] } else { sp[1] };
                let u = a.step(rho_meas, set);
                (Some(u), applied_ramp_inflow(u, d_ramp, state.w_ramp, t), None)
            }
            Controller::Adaptive(a, est) => {
                let (rho_hat, _) = est.step(rho_meas, q_meas, t).map_err(|e| at_step(e, k))?;
                let u = a.step(rho_meas, rho_hat);
                (Some(u), applied_ramp_inflow(u, d_ramp, state.w_ramp, t), Some(&**est))
            }
        };

        trajectory.push(TrajectoryRow {
            k,
            t_min,
            rho: state.rho.clone(),
            v: state.v.clone(),
            q: state.q.clone(),
            w_ramp: state.w_ramp,
            w_main: state.w_main,
            u_cmd,
            r_applied: r,
            rho_star_hat: estimate.map(|e| e.rho_star_hat),
            q_star_hat: estimate.map(|e| e.q_star_hat),
            e: estimate.map(|e| [e.e[0], e.e[1]]),
            trace_gamma: estimate.map(|e| e.trace_gamma()),
        });
        if k == cfg.steps {
            break;
        }

        let (next, flows) = step_network(&state, &net, &cfg.model, cfg.fd_at(k), Inflows { d_main, d_ramp, r })?;
        let boundary = t * (d_main + d_ramp - flows.outflow);
        let residual = stored(&next) - stored(&state) - boundary - flows.clamp_vehicles;
        max_residual = max_residual.max(residual.abs());
        net_inflow += boundary;
        clamp_total += flows.clamp_vehicles;
        state = next;
    }

    let peak = |f: fn(&TrajectoryRow) -> f64| trajectory.iter().map(f).fold(0.0, f64::max);
    let peak_ramp_queue = peak(|r| r.w_ramp);
    let peak_main_queue = peak(|r| r.w_main);
    let convergence_min = match cfg.control {
        ControlMode::Adaptive { .. } => {
            let est: Vec<f64> = trajectory.iter().filter_map(|r| r.rho_star_hat).collect();
            Some(phase_convergence(&est, cfg))
        }
        _ => None,
    };
    Ok(RunResult {
        id: cfg.id,
        tts: tts(&trajectory, &net, t),
        trajectory,
        peak_ramp_queue,
        peak_main_queue,
        max_conservation_residual: max_residual,
        cumulative_conservation_residual: stored(&state) - stored_start - net_inflow - clamp_total,
        clamp_vehicles_total: clamp_total,
        convergence_min,
    })
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::Estimator { stage } => Error::Simulation {
            step: k,
            reason: format!("estimator failed at stage `{stage}`"),
        },
        other => other,
    }
}

fn phase_convergence(est: &[f64], cfg: &ScenarioConfig) -> [Option<f64>; 2] {
    let minutes = cfg.model.t * 60.0;
    let sw = cfg.switch_step.min(est.len());
    let first = convergence_time(&est[..sw], cfg.critical_targets[0], PHASE1_TOL, 1);
    let second = convergence_time(&est[sw..], cfg.critical_targets[1], PHASE2_TOL, SETTLE_SUSTAIN);
    [first.map(|k| k as f64 * minutes), second.map(|k| k as f64 * minutes)]
}

/// First index from which `series` stays within `target ± tol` for `sustain`
/// consecutive samples.
pub fn convergence_time(series: &[f64], target: f64, tol: f64, sustain: usize) -> Option<usize> {
    let sustain = sustain.max(1);
    let mut run_start = None;
    for (k, x) in series.iter().enumerate() {
        if (x - target).abs() <= tol {
            let s = *run_start.get_or_insert(k);
            if k + 1 - s >= sustain {
                return Some(s);
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// Runs the standard suite in parallel, in `ScenarioId::SUITE` order.
pub fn run_suite() -> Result<Vec<RunResult>> {
    ScenarioId::SUITE
        .par_iter()
        .map(|id| run_scenario(&ScenarioConfig::standard(*id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k_r: f64,
    pub c_r: f64,
    /// `None` when the run failed.
    pub tts: Option<f64>,
    pub improvement_pct: Option<f64>,
}

/// Adaptive runs over a `K_r × C_r` grid, scored against the uncontrolled run.
pub fn sensitivity_sweep(base: &ScenarioConfig, k_r: &[f64], c_r: &[f64]) -> Result<Vec<SweepRow>> {
    if !matches!(base.control, ControlMode::Adaptive { .. }) {
        return Err(Error::config("control", "sweep needs an adaptive scenario"));
    }
    let mut no_control = base.clone();
    no_control.control = ControlMode::None;
    let baseline = run_scenario(&no_control)?.tts;
    let grid: Vec<(f64, f64)> = k_r
        .iter()
        .flat_map(|&k| c_r.iter().map(move |&c| (k, c)))
        .collect();
    for &x in k_r.iter().chain(c_r) {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::config("estimator.K_r", "sweep values must be positive"));
        }
    }
    Ok(grid
        .par_iter()
        .map(|&(k, c)| {
            let tts = ReferenceModelParams::new(k, c)
                .and_then(|rm| run_scenario(&base.clone().with_reference(rm)))
                .map(|r| r.tts)
                .ok();
            SweepRow {
                k_r: k,
                c_r: c,
                tts,
                improvement_pct: tts.map(|x| improvement(baseline, x)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub noise_std: f64,
    pub seeds: usize,
    /// Mean and standard deviation of the terminal `ρ̂⋆` across seeds.
    pub mean_final: f64,
    pub std_final: f64,
    /// `100·(mean_final − target)/target` against the final-phase critical value.
    pub bias_pct: f64,
    pub mean_tts: f64,
}

/// Repeats an adaptive scenario under detector noise, one run per seed and level.
pub fn noise_experiment(base: &ScenarioConfig, noise_std: &[f64], seeds: &[u64]) -> Result<Vec<NoiseRow>> {
    if !matches!(base.control, ControlMode::Adaptive { .. }) {
        return Err(Error::config("control", "noise experiment needs an adaptive scenario"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let target = base.critical_targets[1];
    noise_std
        .iter()
        .map(|&std| {
            let runs: Vec<(f64, f64)> = seeds
                .par_iter()
                .map(|&seed| {
                    let mut cfg = base.clone();
                    cfg.noise_std = std;
                    cfg.seed = seed;
                    let r = run_scenario(&cfg)?;
                    let last = r.trajectory.last().and_then(|row| row.rho_star_hat).unwrap_or(f64::NAN);
                    Ok((last, r.tts))
                })
                .collect::<Result<_>>()?;
            let n = runs.len() as f64;
            let mean_final = runs.iter().map(|r| r.0).sum::<f64>() / n;
            let var = runs.iter().map(|r| (r.0 - mean_final).powi(2)).sum::<f64>() / n;
            Ok(NoiseRow {
                noise_std: std,
                seeds: runs.len(),
                mean_final,
                std_final: var.sqrt(),
                bias_pct: 100.0 * (mean_final - target) / target,
                mean_tts: runs.iter().map(|r| r.1).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Density at which a cell carried its largest flow over steps `range`.
pub fn empirical_critical_density(run: &RunResult, cell: usize, range: std::ops::Range<usize>) -> Option<f64> {
    run.trajectory
        .get(range)?
        .iter()
        .max_by(|a, b| a.q[cell].total_cmp(&b.q[cell]))
        .map(|r| r.rho[cell])
}
