//! Online estimation of the bottleneck's critical density and capacity.
//!
//! The bottleneck flow is modelled as the parabola `q = −B₁₁ρ² + B₁₂ρ`,
//! identified by a recursive least-squares law on `Π̂` with gain `Γ`:
//!
//! ```text
//! Π̂ ← Π̂ − dt·Γ v eᵀ
//! Γ ← Γ − dt·Γ v vᵀ Γ      (rescaled when dt·vᵀΓv ≥ 1)
//! ```
//!
//! Regressors are multiplied by `exp(μt/2)`. Recent samples therefore weigh
//! `e^{μΔt}` more than samples `Δt` older, while `Γ` itself only ever
//! shrinks. A second-order reference model smooths the estimates.

use nalgebra::{DMatrix, Matrix2, SMatrix, SVector, SymmetricEigen, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::ParabolicFd;

pub type Matrix4 = SMatrix<f64, 4, 4>;

/// Mass-spring-damper reference model `p̈ = −K_r(p − r) − C_r ṗ`, one copy per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceModelParams {
    #[serde(rename = "K_r")]
    pub k_r: f64,
    #[serde(rename = "C_r")]
    pub c_r: f64,
}

impl Default for ReferenceModelParams {
    fn default() -> Self {
        Self { k_r: 10.0, c_r: 2.0 }
    }
}

impl ReferenceModelParams {
    pub fn new(k_r: f64, c_r: f64) -> Result<Self> {
        let p = Self { k_r, c_r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_r > 0.0 && self.k_r.is_finite()) {
            return Err(Error::config("estimator.K_r", "must be positive"));
        }
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return Err(Error::config("estimator.C_r", "must be positive"));
        }
        Ok(())
    }

    /// State order `[p_q, ṗ_q, p_ρ, ṗ_ρ]`.
    pub fn a_r(&self) -> Matrix4 {
        let (k, c) = (self.k_r, self.c_r);
        Matrix4::new(
            0.0, 1.0, 0.0, 0.0, //
            -k, -c, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, -k, -c,
        )
    }

    pub fn b_r(&self) -> SMatrix<f64, 4, 2> {
        let k = self.k_r;
        SMatrix::<f64, 4, 2>::new(
            0.0, 0.0, //
            k, 0.0, //
            0.0, 0.0, //
            0.0, k,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Initial critical density guess [veh/km/lane].
    pub rho_star_0: f64,
    /// Initial capacity guess, cross-lane [veh/h].
    pub q_star_0: f64,
    /// Initial gain, `Γ(0) = gamma_0·I`.
    pub gamma_0: f64,
    pub reference: ReferenceModelParams,
    /// Diagonal scaling applied to the regressors `[−ρ², ρ]`.
    pub prescale: [f64; 2],
    /// Data weighting rate μ [1/h]; zero gives plain least squares.
    pub memory_rate: f64,
    /// Safety bounds on the published critical density.
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            rho_star_0: 33.0,
            q_star_0: 4000.0,
            gamma_0: 20.0,
            reference: ReferenceModelParams::default(),
            prescale: [0.04, 0.2],
            memory_rate: 6.0,
            rho_min: 5.0,
            rho_max: 120.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        let positive = [
            ("estimator.rho_star_0", self.rho_star_0),
            ("estimator.q_star_0", self.q_star_0),
            ("estimator.gamma_0", self.gamma_0),
            ("estimator.prescale[0]", self.prescale[0]),
            ("estimator.prescale[1]", self.prescale[1]),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(self.memory_rate >= 0.0 && self.memory_rate.is_finite()) {
            return Err(Error::config("estimator.memory_rate", "must be non-negative"));
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max && self.rho_max.is_finite()) {
            return Err(Error::config("estimator.rho_max", "need 0 < rho_min < rho_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// Scaled parameters; column 0 predicts `q`, column 1 predicts `ρ`.
    pub pi_hat: Matrix2<f64>,
    pub gamma: Matrix2<f64>,
    /// Measurement integrals `[∫q dt, ∫ρ dt]`.
    pub x: Vector2<f64>,
    /// Reference-model state `[p_q, ṗ_q, p_ρ, ṗ_ρ]`.
    pub x_r: Vector4<f64>,
    /// Measured minus reference position, `[q − p_q, ρ − p_ρ]`.
    pub e: Vector2<f64>,
    pub rho_star_hat: f64,
    pub q_star_hat: f64,
    /// Time since initialisation [h].
    pub elapsed: f64,
    config: EstimatorConfig,
}

/// `B̂ = [[B₁₁, B₁₂], [0, 1]]` for the parabola with critical point `(ρ⋆, q⋆)`.
fn b_from_critical(rho_star: f64, q_star: f64) -> Matrix2<f64> {
    let a = -q_star / (rho_star * rho_star);
    let b = 2.0 * q_star / rho_star;
    Matrix2::new(-a, b, 0.0, 1.0)
}

pub fn init_estimator(config: EstimatorConfig) -> Result<EstimatorState> {
    config.validate()?;
    let b_hat = b_from_critical(config.rho_star_0, config.q_star_0);
    let s = config.prescale;
    let pi_hat = Matrix2::from_fn(|i, j| b_hat[(j, i)] / s[i]);
    Ok(EstimatorState {
        pi_hat,
        gamma: Matrix2::identity() * config.gamma_0,
        x: Vector2::zeros(),
        x_r: Vector4::new(config.q_star_0, 0.0, config.rho_star_0, 0.0),
        e: Vector2::zeros(),
        rho_star_hat: config.rho_star_0,
        q_star_hat: config.q_star_0,
        elapsed: 0.0,
        config,
    })
}

impl EstimatorState {
    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// `B̂` in physical units.
    pub fn b_hat(&self) -> Matrix2<f64> {
        let s = self.config.prescale;
        Matrix2::from_fn(|i, j| self.pi_hat[(j, i)] * s[j])
    }

    /// Critical point of the current parabola, or `None` if it is not concave.
    pub fn extract_setpoints(&self) -> Option<(f64, f64)> {
        let b = self.b_hat();
        let (b11, b12) = (b[(0, 0)], b[(0, 1)]);
        if b11 > 0.0 && b12 > 0.0 {
            Some((b12 / (2.0 * b11), b12 * b12 / (4.0 * b11)))
        } else {
            None
        }
    }

    /// Current parabola, if concave.
    pub fn parabola(&self) -> Option<ParabolicFd> {
        let b = self.b_hat();
        ParabolicFd::new(-b[(0, 0)], b[(0, 1)]).ok()
    }

    pub fn trace_gamma(&self) -> f64 {
        self.gamma.trace()
    }

    /// One measurement `(ρ, q)` taken `dt` hours after the previous one.
    /// Returns the new `(ρ̂⋆, q̂⋆)`.
    pub fn step(&mut self, rho_meas: f64, q_meas: f64, dt: f64) -> Result<(f64, f64)> {
        if !(rho_meas >= 0.0 && q_meas >= 0.0 && rho_meas.is_finite() && q_meas.is_finite()) {
            return Err(Error::Estimator { stage: "measurement" });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Estimator { stage: "dt" });
        }
        self.elapsed += dt;
        self.x += dt * Vector2::new(q_meas, rho_meas);

        let r_e = Vector2::new(self.q_star_hat, self.rho_star_hat);
        let rm = self.config.reference;
        self.x_r += dt * (rm.a_r() * self.x_r + rm.b_r() * r_e);
        self.e = Vector2::new(q_meas - self.x_r[0], rho_meas - self.x_r[2]);
        if !self.x_r.iter().all(|x| x.is_finite()) {
            return Err(Error::Estimator { stage: "reference model" });
        }

        let w = (0.5 * self.config.memory_rate * self.elapsed).exp();
        let s = self.config.prescale;
        let v = w * Vector2::new(-rho_meas * rho_meas * s[0], rho_meas * s[1]);
        let target = w * Vector2::new(q_meas, rho_meas);
        let err = self.pi_hat.transpose() * v - target;
        adapt(&mut self.pi_hat, &mut self.gamma, &v, &err, dt)?;

        if let Some((rho, q)) = self.extract_setpoints() {
            self.rho_star_hat = rho.clamp(self.config.rho_min, self.config.rho_max);
            self.q_star_hat = q;
        }
        if !(self.rho_star_hat.is_finite() && self.q_star_hat.is_finite()) {
            return Err(Error::Estimator { stage: "set-point extraction" });
        }
        Ok((self.rho_star_hat, self.q_star_hat))
    }
}

/// One least-squares update with `v` and the target held over `dt`.
/// `e = Π̂ᵀv − target`, evaluated before the update.
///
/// Integrates `d(Γ⁻¹)/dt = vvᵀ` exactly (Sherman–Morrison), then moves `Π̂`
/// with the updated gain. The result is the recursive form of the batch fit.
pub fn adapt<const N: usize, const M: usize>(
    pi_hat: &mut SMatrix<f64, N, M>,
    gamma: &mut SMatrix<f64, N, N>,
    v: &SVector<f64, N>,
    e: &SVector<f64, M>,
    dt: f64,
) -> Result<()> {
    let gv = *gamma * v;
    let quad = dt * v.dot(&gv);
    *gamma -= (dt / (1.0 + quad)) * gv * gv.transpose();
    *gamma = 0.5 * (*gamma + gamma.transpose());
    *pi_hat -= dt * (*gamma * v) * e.transpose();

    if !pi_hat.iter().all(|x| x.is_finite()) {
        return Err(Error::Estimator { stage: "parameter update" });
    }
    if !gamma.iter().all(|x| x.is_finite()) {
        return Err(Error::Estimator { stage: "gain update" });
    }
    Ok(())
}

/// Batch least squares `argmin Σ‖Πᵀv − y‖²` via the normal equations.
pub fn lsq_batch_oracle<const N: usize, const M: usize>(
    samples: &[(SVector<f64, N>, SVector<f64, M>)],
) -> Result<SMatrix<f64, N, M>> {
    let mut gram = SMatrix::<f64, N, N>::zeros();
    let mut cross = SMatrix::<f64, N, M>::zeros();
    for (v, y) in samples {
        gram += v * v.transpose();
        cross += v * y.transpose();
    }
    let (min, max) = eigen_range(&gram);
    if !(max > 0.0 && min > max * 1e-12) {
        return Err(Error::Oracle(format!(
            "singular Gram matrix (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Oracle("Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&cross))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range<const N: usize>(m: &SMatrix<f64, N, N>) -> (f64, f64) {
    let eig = SymmetricEigen::new(DMatrix::from_column_slice(N, N, m.as_slice())).eigenvalues;
    (eig.min(), eig.max())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationReport {
    /// Smallest eigenvalue of `Σ dt·v vᵀ`.
    pub lambda_min: f64,
    pub trace_gamma: f64,
}

pub fn excitation_diagnostic<const N: usize>(
    history: &[SVector<f64, N>],
    dt: f64,
    gamma: &SMatrix<f64, N, N>,
) -> ExcitationReport {
    let mut m = SMatrix::<f64, N, N>::zeros();
    for v in history {
        m += dt * v * v.transpose();
    }
    let lambda_min = eigen_range(&m).0.max(0.0);
    ExcitationReport {
        lambda_min,
        trace_gamma: gamma.trace(),
    }
}
