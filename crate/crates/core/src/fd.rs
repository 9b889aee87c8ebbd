//! Flow–density laws.
//!
//! Two fundamental diagrams live here: the quadratic law `q = aρ² + bρ`
//! that the adaptive estimator assumes at the bottleneck, and the
//! exponential equilibrium-speed law used by the METANET plant. The
//! plant's law is never seen by the estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadratic flow–density law `q = a·ρ² + b·ρ` with `a < 0 < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicFd {
    a: f64,
    b: f64,
}

impl ParabolicFd {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= 0.0 || b <= 0.0 {
            return Err(Error::Domain(format!(
                "parabolic FD requires a < 0 < b, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    /// Parabola whose maximum sits exactly at `(rho_star, q_star)`.
    pub fn from_critical_point(rho_star: f64, q_star: f64) -> Result<Self> {
        if !(rho_star > 0.0 && q_star > 0.0) {
            return Err(Error::Domain(format!(
                "critical point must be positive, got ({rho_star}, {q_star})"
            )));
        }
        Self::new(-q_star / (rho_star * rho_star), 2.0 * q_star / rho_star)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn flow(&self, rho: f64) -> Result<f64> {
        if rho < 0.0 || rho.is_nan() {
            return Err(Error::Domain(format!("density must be non-negative, got {rho}")));
        }
        Ok(self.a * rho * rho + self.b * rho)
    }

    /// `(ρ*, q*) = (−b/2a, −b²/4a)`.
    pub fn critical_point(&self) -> (f64, f64) {
        (-self.b / (2.0 * self.a), -self.b * self.b / (4.0 * self.a))
    }

    pub fn critical_density(&self) -> f64 {
        self.critical_point().0
    }

    pub fn capacity(&self) -> f64 {
        self.critical_point().1
    }

    /// Density of the non-zero root (jam density of the parabola).
    pub fn jam_density(&self) -> f64 {
        -self.b / self.a
    }
}

/// Relative tolerance of the `ρ_cr·V(ρ_cr) = Q_cap` consistency check.
pub const CAPACITY_CONSISTENCY_TOL: f64 = 0.005;

/// Exponential METANET speed–density law for one FD phase (per lane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetanetFdParams {
    /// Free-flow speed [km/h].
    pub v_free: f64,
    /// Nominal critical density [veh/km/lane].
    pub rho_cr: f64,
    pub alpha: f64,
    /// Jam density [veh/km/lane].
    pub rho_jam: f64,
    /// Nominal capacity [veh/h/lane].
    pub q_cap: f64,
    /// Speed floor [km/h].
    pub v_min: f64,
}

impl MetanetFdParams {
    pub fn new(
        v_free: f64,
        rho_cr: f64,
        alpha: f64,
        rho_jam: f64,
        q_cap: f64,
        v_min: f64,
    ) -> Result<Self> {
        let fd = Self {
            v_free,
            rho_cr,
            alpha,
            rho_jam,
            q_cap,
            v_min,
        };
        fd.validate()?;
        Ok(fd)
    }

    /// Parameters before the capacity change.
    pub fn fd1() -> Self {
        Self {
            v_free: 107.0,
            rho_cr: 29.0,
            alpha: 2.2768,
            rho_jam: 180.0,
            q_cap: 2000.0,
            v_min: 7.0,
        }
    }

    /// Parameters after the capacity change.
    pub fn fd2() -> Self {
        Self {
            v_free: 107.0,
            rho_cr: 26.0,
            alpha: 2.2968,
            rho_jam: 180.0,
            q_cap: 1800.0,
            v_min: 7.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_free,
            self.rho_cr,
            self.alpha,
            self.rho_jam,
            self.q_cap,
            self.v_min,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("fd", "non-finite parameter"));
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_free) {
            return Err(Error::config("fd.v_min", "must satisfy 0 <= v_min < v_free"));
        }
        if !(self.rho_cr > 0.0 && self.rho_cr < self.rho_jam) {
            return Err(Error::config("fd.rho_cr", "must satisfy 0 < rho_cr < rho_jam"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::config("fd.alpha", "must be positive"));
        }
        if self.q_cap <= 0.0 {
            return Err(Error::config("fd.q_cap", "must be positive"));
        }
        let q_at_cr = self.rho_cr * self.raw_speed(self.rho_cr);
        if ((q_at_cr - self.q_cap) / self.q_cap).abs() > CAPACITY_CONSISTENCY_TOL {
            return Err(Error::config(
                "fd.q_cap",
                format!(
                    "rho_cr*V(rho_cr) = {q_at_cr:.2} differs from q_cap = {} by more than 0.5%",
                    self.q_cap
                ),
            ));
        }
        Ok(())
    }

    fn raw_speed(&self, rho: f64) -> f64 {
        self.v_free * (-(rho / self.rho_cr).powf(self.alpha) / self.alpha).exp()
    }

    /// `V(ρ) = v_free·exp(−(ρ/ρ_cr)^α / α)`, floored at `v_min`.
    pub fn equilibrium_speed(&self, rho: f64) -> Result<f64> {
        if rho < 0.0 || rho.is_nan() {
            return Err(Error::Domain(format!("density must be non-negative, got {rho}")));
        }
        Ok(self.speed_unchecked(rho))
    }

    /// Equilibrium speed without the domain check; callers guarantee `rho >= 0`.
    pub(crate) fn speed_unchecked(&self, rho: f64) -> f64 {
        self.raw_speed(rho).max(self.v_min)
    }

    /// Per-lane equilibrium flow `ρ·V(ρ)`.
    pub fn equilibrium_flow(&self, rho: f64) -> Result<f64> {
        Ok(rho * self.equilibrium_speed(rho)?)
    }
}

/// Density trajectory used to drive synthetic estimator tests.
#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    Constant { rho: f64, steps: usize },
    /// `mean + amplitude·sin(2π·k·dt/period)` for `k = 0..steps`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
        dt: f64,
        steps: usize,
    },
    Explicit(Vec<f64>),
}

impl Excitation {
    pub fn densities(&self) -> Vec<f64> {
        match self {
            Excitation::Constant { rho, steps } => vec![*rho; *steps],
            Excitation::Sinusoid {
                mean,
                amplitude,
                period,
                dt,
                steps,
            } => (0..*steps)
                .map(|k| {
                    let t = k as f64 * dt;
                    mean + amplitude * (std::f64::consts::TAU * t / period).sin()
                })
                .collect(),
            Excitation::Explicit(v) => v.clone(),
        }
    }
}

/// Samples `(ρ, q)` on the parabola with seeded multiplicative noise on `q`.
pub fn synth_fd_samples(
    fd: &ParabolicFd,
    excitation: &Excitation,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let densities = excitation.densities();
    let jam = fd.jam_density();
    if let Some(bad) = densities.iter().find(|r| !(**r >= 0.0 && **r <= jam)) {
        return Err(Error::Domain(format!(
            "excitation density {bad} outside [0, {jam}]"
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Domain(format!("noise std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Domain(e.to_string()))?;
    densities
        .into_iter()
        .map(|rho| {
            let eps = if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            Ok((rho, fd.flow(rho)? * (1.0 + eps)))
        })
        .collect()
}
