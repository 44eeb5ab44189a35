//! Composite task reward: velocity tracking, smoothness and posture kernels
//! minus energy and fall costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SimState, NJ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_s: f64,
    pub w_p: f64,
    pub w_e: f64,
    pub w_f: f64,
    pub sigma_v: f64,
    pub sigma_p: f64,
    pub energy_scale: f64,
    /// Root height below which the fall cost fires, in meters.
    pub h_fall: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_v: 1.0,
            w_s: 0.3,
            w_p: 0.3,
            w_e: 0.02,
            w_f: 1.0,
            sigma_v: 0.25,
            sigma_p: 0.4,
            energy_scale: 0.01,
            h_fall: 0.35 * crate::sim::BipedModel::default().standing_height(),
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_v, self.w_s, self.w_p, self.w_e, self.w_f, self.energy_scale, self.h_fall];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        if !(self.sigma_v > 0.0 && self.sigma_p > 0.0) {
            return Err(Error::Config("sigma_v and sigma_p must be positive".into()));
        }
        Ok(())
    }
}

/// Individual reward terms, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardTerms {
    pub cmd: f64,
    pub smooth: f64,
    pub posture: f64,
    pub energy: f64,
    pub fall: f64,
    pub total: f64,
}

impl RewardTerms {
    /// Recombines the terms with `weights`; equals `total`.
    pub fn weighted_sum(&self, w: &RewardWeights) -> f64 {
        w.w_v * self.cmd + w.w_s * self.smooth + w.w_p * self.posture - w.w_e * self.energy - w.w_f * self.fall
    }
}

/// Task reward for the state reached after applying `action`.
///
/// The smoothness term compares `action` with the action before it, which is
/// `state.prev_prev_action` once the step has shifted the action chain.
pub fn compute_task_reward(state: &SimState, action: &[f64; NJ], torques: &[f64; NJ], w: &RewardWeights) -> RewardTerms {
    let verr = state.qd[0] - state.command;
    let cmd = (-(verr * verr) / (w.sigma_v * w.sigma_v)).exp();
    let da: f64 = action
        .iter()
        .zip(&state.prev_prev_action)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let smooth = (-da).exp();
    let pitch = state.q[2];
    let posture = (-(pitch * pitch) / (w.sigma_p * w.sigma_p)).exp();
    let energy = w.energy_scale
        * torques
            .iter()
            .zip(&state.qd[3..])
            .map(|(t, v)| (t * v).abs())
            .sum::<f64>();
    let fall = if state.q[1] < w.h_fall { 1.0 } else { 0.0 };
    let mut terms = RewardTerms {
        cmd,
        smooth,
        posture,
        energy,
        fall,
        total: 0.0,
    };
    terms.total = terms.weighted_sum(w);
    terms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{BipedModel, NQ};

    fn upright(v_cmd: f64) -> SimState {
        let m = BipedModel::default();
        SimState {
            q: m.q_default(),
            qd: [0.0; NQ],
            time: 0.0,
            prev_action: [0.1; NJ],
            prev_prev_action: [0.1; NJ],
            command: v_cmd,
            foot_contact: [true; 2],
        }
    }

    #[test]
    fn perfect_step_scores_sum_of_positive_weights() {
        let w = RewardWeights::default();
        let mut s = upright(0.4);
        s.qd[0] = 0.4;
        let r = compute_task_reward(&s, &[0.1; NJ], &[0.0; NJ], &w);
        assert_eq!(r.total, w.w_v + w.w_s + w.w_p);
        assert_eq!((r.energy, r.fall), (0.0, 0.0));
    }

    #[test]
    fn one_sigma_tracking_error() {
        let w = RewardWeights::default();
        let mut s = upright(0.0);
        s.qd[0] = w.sigma_v;
        let r = compute_task_reward(&s, &[0.1; NJ], &[0.0; NJ], &w);
        assert!((r.cmd - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.cmd - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn fall_indicator() {
        let w = RewardWeights::default();
        let mut s = upright(0.0);
        s.q[1] = w.h_fall - 0.01;
        let r = compute_task_reward(&s, &[0.1; NJ], &[0.0; NJ], &w);
        assert_eq!(r.fall, 1.0);
        let base = w.w_v + w.w_s + r.posture * w.w_p;
        assert!((r.total - (base - w.w_f)).abs() < 1e-12);
    }

    #[test]
    fn energy_uses_absolute_power() {
        let w = RewardWeights::default();
        let mut s = upright(0.0);
        s.qd[3] = 2.0;
        s.qd[4] = -1.0;
        let tau = [1.5, 3.0, 0.0, 0.0, 0.0, 0.0];
        let r = compute_task_reward(&s, &[0.1; NJ], &tau, &w);
        assert!((r.energy - w.energy_scale * 6.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut w = RewardWeights::default();
        w.sigma_p = 0.0;
        assert!(w.validate().is_err());
        let mut w = RewardWeights::default();
        w.w_e = -1.0;
        assert!(w.validate().is_err());
        RewardWeights::default().validate().unwrap();
    }
}
