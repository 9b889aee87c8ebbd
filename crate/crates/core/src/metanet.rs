//! Second-order macroscopic (METANET) simulator for a single motorway
//! stretch with one on-ramp and point queues at both origins.
//!
//! Units: densities per lane [veh/km/lane], speeds [km/h], flows cross-lane
//! [veh/h], lengths [km], time [h].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::MetanetFdParams;

/// Lower density bound kept in every cell.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Queue values this far below zero are rounding, anything beyond is a guard violation.
pub const QUEUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    /// Cell length [km].
    pub length: f64,
    pub lanes: u32,
    pub has_onramp: bool,
    pub has_offramp: bool,
}

impl CellGeometry {
    pub fn new(length: f64, lanes: u32) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config("network.cell_length_km", "must be positive"));
        }
        if lanes == 0 {
            return Err(Error::config("network.lanes", "must be at least 1"));
        }
        Ok(Self {
            length,
            lanes,
            has_onramp: false,
            has_offramp: false,
        })
    }

    fn capacity_volume(&self) -> f64 {
        self.length * self.lanes as f64
    }
}

/// Ordered list of cells; vehicles enter at cell 0 and leave after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub cells: Vec<CellGeometry>,
    /// Zero-based index of the cell receiving the on-ramp.
    pub onramp: usize,
}

impl Network {
    /// `n` identical cells with the on-ramp at zero-based index `onramp`.
    pub fn uniform(n: usize, length: f64, lanes: u32, onramp: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("network.cells", "must be at least 1"));
        }
        if onramp >= n {
            return Err(Error::config("network.onramp_cell", "outside the stretch"));
        }
        let mut cells = vec![CellGeometry::new(length, lanes)?; n];
        cells[onramp].has_onramp = true;
        Ok(Self { cells, onramp })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Vehicles stored on the mainline, `Σ L_i λ_i ρ_i`.
    pub fn vehicles(&self, rho: &[f64]) -> f64 {
        self.cells
            .iter()
            .zip(rho)
            .map(|(c, r)| c.capacity_volume() * r)
            .sum()
    }
}

/// Global METANET constants. Times in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalModelParams {
    /// Simulation step [h].
    pub t: f64,
    /// Relaxation time [h].
    pub tau: f64,
    /// Anticipation [km²/h].
    pub nu: f64,
    /// Regularizer [veh/km/lane].
    pub kappa: f64,
    /// Merge coefficient.
    pub delta: f64,
}

impl Default for GlobalModelParams {
    fn default() -> Self {
        Self {
            t: 10.0 / 3600.0,
            tau: 20.0 / 3600.0,
            nu: 35.0,
            kappa: 13.0,
            delta: 0.8,
        }
    }
}

impl GlobalModelParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("model.step_s", self.t),
            ("model.tau_s", self.tau),
            ("model.nu", self.nu),
            ("model.kappa", self.kappa),
            ("model.delta", self.delta),
        ];
        for (name, x) in named {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.t >= self.tau * 1e3 {
            return Err(Error::config("model.step_s", "step is implausibly large relative to tau"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    /// Mainstream origin queue [veh].
    pub w_main: f64,
    /// On-ramp queue [veh].
    pub w_ramp: f64,
    pub k: usize,
}

impl NetworkState {
    /// Uniform density with equilibrium speeds and empty queues.
    pub fn uniform(network: &Network, fd: &MetanetFdParams, rho: f64) -> Result<Self> {
        let v0 = fd.equilibrium_speed(rho)?;
        let rho_vec = vec![rho.max(DENSITY_FLOOR); network.len()];
        let v = vec![v0.clamp(fd.v_min, fd.v_free); network.len()];
        let q = flows(network, &rho_vec, &v);
        Ok(Self {
            rho: rho_vec,
            v,
            q,
            w_main: 0.0,
            w_ramp: 0.0,
            k: 0,
        })
    }

    pub fn vehicles_on_mainline(&self, network: &Network) -> f64 {
        network.vehicles(&self.rho)
    }
}

fn flows(network: &Network, rho: &[f64], v: &[f64]) -> Vec<f64> {
    network
        .cells
        .iter()
        .zip(rho.iter().zip(v))
        .map(|(c, (r, s))| r * s * c.lanes as f64)
        .collect()
}

/// Demands and ramp flow applied during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inflows {
    /// Mainstream origin demand [veh/h].
    pub d_main: f64,
    /// On-ramp demand [veh/h].
    pub d_ramp: f64,
    /// Ramp flow actually entering the on-ramp cell [veh/h].
    pub r: f64,
}

/// Boundary flows realised during one step, all in veh/h.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepFlows {
    pub main_inflow: f64,
    pub ramp_inflow: f64,
    pub outflow: f64,
    /// Vehicles added (positive) or removed by the density clamps.
    pub clamp_vehicles: f64,
}

/// Downstream conditions seen by an origin.
#[derive(Debug, Clone, Copy)]
pub struct Supply<'a> {
    pub rho_downstream: f64,
    pub fd: &'a MetanetFdParams,
    pub lanes: u32,
}

/// Flow leaving a point-queue origin into the first cell [veh/h].
pub fn origin_outflow(demand: f64, queue: f64, t: f64, supply: Supply<'_>) -> f64 {
    let lanes = supply.lanes as f64;
    let fd = supply.fd;
    let available = demand + queue / t;
    let cap = lanes * fd.q_cap;
    let receiving = cap * (fd.rho_jam - supply.rho_downstream) / (fd.rho_jam - fd.rho_cr);
    available.min(cap).min(receiving).max(0.0)
}

/// Point-queue balance `w' = w + T(d − outflow)`.
pub fn queue_update(queue: f64, demand: f64, outflow: f64, t: f64) -> Result<f64> {
    let next = queue + t * (demand - outflow);
    if next < -QUEUE_TOLERANCE {
        return Err(Error::QueueGuard(format!(
            "queue would become {next} (w={queue}, d={demand}, outflow={outflow})"
        )));
    }
    Ok(next.max(0.0))
}

/// Advances the stretch by one step.
///
/// The upstream virtual speed equals the first cell's speed. The downstream
/// virtual density is the last cell's density capped at critical, so the
/// exit never acts as a bottleneck. No off-ramps.
pub fn step_network(
    state: &NetworkState,
    network: &Network,
    params: &GlobalModelParams,
    fd: &MetanetFdParams,
    inflows: Inflows,
) -> Result<(NetworkState, StepFlows)> {
    let n = network.len();
    let t = params.t;
    let k = state.k;
    let sim_err = |reason: String| Error::Simulation { step: k, reason };

    if state.rho.len() != n || state.v.len() != n {
        return Err(sim_err("state dimension does not match network".into()));
    }
    if state
        .rho
        .iter()
        .chain(&state.v)
        .chain([&state.w_main, &state.w_ramp])
        .any(|x| !x.is_finite())
    {
        return Err(sim_err("non-finite state".into()));
    }
    if !(inflows.d_main.is_finite() && inflows.d_ramp.is_finite() && inflows.r.is_finite()) {
        return Err(sim_err("non-finite inflow".into()));
    }

    let q = flows(network, &state.rho, &state.v);
    let main_inflow = origin_outflow(
        inflows.d_main,
        state.w_main,
        t,
        Supply {
            rho_downstream: state.rho[0],
            fd,
            lanes: network.cells[0].lanes,
        },
    );
    let ramp_inflow = inflows.r.max(0.0);

    let mut rho_next = vec![0.0; n];
    let mut v_next = vec![0.0; n];
    let mut clamp_vehicles = 0.0;
    for (i, cell) in network.cells.iter().enumerate() {
        let lanes = cell.lanes as f64;
        let len = cell.length;
        let rho = state.rho[i];
        let v = state.v[i];
        let q_up = if i == 0 { main_inflow } else { q[i - 1] };
        let v_up = if i == 0 { v } else { state.v[i - 1] };
        let rho_down = if i + 1 < n { state.rho[i + 1] } else { rho.min(fd.rho_cr) };
        let r = if i == network.onramp { ramp_inflow } else { 0.0 };

        let raw_rho = rho + t / (len * lanes) * (q_up - q[i] + r);
        let clamped = raw_rho.clamp(DENSITY_FLOOR, fd.rho_jam);
        clamp_vehicles += (clamped - raw_rho) * len * lanes;
        rho_next[i] = clamped;

        let relaxation = t / params.tau * (fd.speed_unchecked(rho) - v);
        let convection = t / len * v * (v_up - v);
        let anticipation = params.nu * t / (params.tau * len) * (rho_down - rho) / (rho + params.kappa);
        let merge = params.delta * t / (len * lanes) * r * v / (rho + params.kappa);
        v_next[i] = (v + relaxation + convection - anticipation - merge).clamp(fd.v_min, fd.v_free);
    }

    if rho_next.iter().chain(&v_next).any(|x| !x.is_finite()) {
        return Err(sim_err("non-finite successor state".into()));
    }

    let w_main = queue_update(state.w_main, inflows.d_main, main_inflow, t)
        .map_err(|e| sim_err(e.to_string()))?;
    let w_ramp = queue_update(state.w_ramp, inflows.d_ramp, ramp_inflow, t)
        .map_err(|e| sim_err(e.to_string()))?;
    let q_next = flows(network, &rho_next, &v_next);

    Ok((
        NetworkState {
            rho: rho_next,
            v: v_next,
            q: q_next,
            w_main,
            w_ramp,
            k: k + 1,
        },
        StepFlows {
            main_inflow,
            ramp_inflow,
            outflow: q[n - 1],
            clamp_vehicles,
        },
    ))
}
