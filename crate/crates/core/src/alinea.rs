//! ALINEA integral ramp metering with anti-windup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlineaState {
    /// Last applied (already saturated) command [veh/h].
    pub u_prev: f64,
    /// Integral gain [veh/h per veh/km/lane].
    pub gain: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl AlineaState {
    pub fn new(gain: f64, u_min: f64, u_max: f64, u_init: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::config("controller.gain", "must be positive"));
        }
        if !(u_min >= 0.0 && u_min < u_max && u_max.is_finite()) {
            return Err(Error::config("controller.u_max", "bounds must satisfy 0 <= u_min < u_max"));
        }
        Ok(Self {
            u_prev: u_init.clamp(u_min, u_max),
            gain,
            u_min,
            u_max,
        })
    }

    /// `u = clamp(u_prev + K_A (ρ_set − ρ), u_min, u_max)`; the clamped value
    /// is what gets stored, so saturation never winds up the integrator.
    pub fn step(&mut self, rho_meas: f64, rho_setpoint: f64) -> f64 {
        let raw = self.u_prev + self.gain * (rho_setpoint - rho_meas);
        let u = raw.clamp(self.u_min, self.u_max);
        self.u_prev = u;
        u
    }
}

/// Ramp flow that can actually be released: the command, limited by the
/// vehicles that are demanding or already queued.
pub fn applied_ramp_inflow(u: f64, d_ramp: f64, w_ramp: f64, t: f64) -> f64 {
    u.min(d_ramp + w_ramp / t).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ctl(u_prev: f64) -> AlineaState {
        AlineaState::new(15.0, 0.0, 2000.0, u_prev).unwrap()
    }

    #[test]
    fn zero_error_holds_command() {
        assert_eq!(ctl(800.0).step(33.0, 33.0), 800.0);
    }

    #[test]
    fn integral_action() {
        assert_abs_diff_eq!(ctl(800.0).step(30.0, 33.0), 845.0, epsilon = 1e-12);
    }

    #[test]
    fn saturation_does_not_wind_up() {
        let mut c = ctl(1950.0);
        assert_eq!(c.step(20.0, 33.0), 2000.0);
        assert_eq!(c.u_prev, 2000.0);
        // First unsaturated step moves by exactly K_A * error from the bound.
        assert_abs_diff_eq!(c.step(35.0, 33.0), 1970.0, epsilon = 1e-12);
    }

    #[test]
    fn applied_inflow_examples() {
        let t = 1.0 / 360.0;
        assert_eq!(applied_ramp_inflow(900.0, 600.0, 0.0, t), 600.0);
        assert_eq!(applied_ramp_inflow(0.0, 750.0, 12.0, t), 0.0);
        assert_eq!(applied_ramp_inflow(900.0, 600.0, 2.0, t), 900.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(AlineaState::new(0.0, 0.0, 1800.0, 0.0).is_err());
        assert!(AlineaState::new(15.0, 1800.0, 1800.0, 0.0).is_err());
    }

    #[test]
    fn rises_monotonically_below_setpoint() {
        let mut c = AlineaState::new(15.0, 0.0, 1800.0, 0.0).unwrap();
        let mut last = 0.0;
        for _ in 0..200 {
            let u = c.step(25.0, 33.0);
            assert!(u >= last);
            last = u;
        }
        assert_eq!(last, 1800.0);
    }

    proptest! {
        #[test]
        fn output_within_bounds_and_state_tracks_output(
            init in 0.0f64..1800.0,
            meas in proptest::collection::vec(0.0f64..180.0, 1..50),
            set in 1.0f64..60.0,
        ) {
            let mut c = AlineaState::new(15.0, 0.0, 1800.0, init).unwrap();
            for m in meas {
                let u = c.step(m, set);
                prop_assert!((0.0..=1800.0).contains(&u));
                prop_assert_eq!(c.u_prev, u);
            }
        }
    }
}
