//! Reward shaping: a violation costs the terminal penalty `-C`; otherwise the
//! raw reward is bent by the estimated failure probability `q_safe` of the
//! state-action pair. Positive rewards are attenuated by `1 - lambda*q_safe`,
//! negative rewards pass through scaled by `lambda*q_safe`, so risk makes
//! gains less attractive and losses no worse than they are.
//!
//! The penalty must dominate anything the agent could collect on a doomed
//! detour: `C > (r_max - r_min) / gamma^{H*} - r_max` over the empirical
//! reward range, which `RewardRangeTracker` maintains online.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mdp::SafetyParams;

pub const DEFAULT_EPSILON_CLAMP: f64 = 0.01;
/// Multiplier applied to the penalty lower bound; the inequality is strict,
/// so C sits 5% above it.
pub const PENALTY_MARGIN: f64 = 1.05;

/// Running empirical reward range, clamped so that `r_min <= -epsilon` and
/// `r_max >= epsilon` even when the environment only ever emits rewards of
/// one sign. The range never shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRangeTracker {
    r_min_emp: f64,
    r_max_emp: f64,
    epsilon_clamp: f64,
}

impl RewardRangeTracker {
    pub fn new(epsilon_clamp: f64) -> Result<Self> {
        if !(epsilon_clamp > 0.0) || !epsilon_clamp.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "epsilon_clamp must be a positive real, got {epsilon_clamp}"
            )));
        }
        Ok(Self {
            r_min_emp: -epsilon_clamp,
            r_max_emp: epsilon_clamp,
            epsilon_clamp,
        })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min_emp
    }

    pub fn r_max(&self) -> f64 {
        self.r_max_emp
    }

    /// Folds one observed raw reward into the range. Returns true when the
    /// effective range grew, i.e. the penalty C (and with it lambda) must be
    /// re-derived.
    pub fn observe(&mut self, r: f64) -> Result<bool> {
        if !r.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "observed reward must be finite, got {r}"
            )));
        }
        let old = (self.r_min_emp, self.r_max_emp);
        self.r_min_emp = self.r_min_emp.min(r).min(-self.epsilon_clamp);
        self.r_max_emp = self.r_max_emp.max(r).max(self.epsilon_clamp);
        Ok((self.r_min_emp, self.r_max_emp) != old)
    }
}

/// Smallest admissible terminal penalty for the given reward range, discount
/// and irrecoverability horizon; any strictly larger C is admissible.
pub fn penalty_lower_bound(r_min: f64, r_max: f64, gamma: f64, h_star: u32) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(CoreError::Domain(format!(
            "penalty bound needs gamma > 0 (division by gamma^h), got {gamma}"
        )));
    }
    if !(gamma < 1.0) {
        return Err(CoreError::Domain(format!(
            "penalty bound needs gamma < 1, got {gamma}"
        )));
    }
    if h_star < 1 {
        return Err(CoreError::InvalidParameter("h_star must be at least 1".into()));
    }
    if !(r_min < r_max) {
        return Err(CoreError::InvalidParameter(format!(
            "reward range must be non-degenerate, got [{r_min}, {r_max}]"
        )));
    }
    Ok((r_max - r_min) / gamma.powi(h_star as i32) - r_max)
}

/// Penalty actually installed when the range changes: the bound with a strict
/// safety margin.
pub fn penalty_from_range(r_min: f64, r_max: f64, gamma: f64, h_star: u32) -> Result<f64> {
    Ok(PENALTY_MARGIN * penalty_lower_bound(r_min, r_max, gamma, h_star)?)
}

/// Shapes one collected reward.
///
/// `q_safe` is the critic's failure probability estimate for the pair that
/// produced the reward and must already be clamped to [0,1]. `violated` marks
/// transitions whose successor state is a violation; those always cost `-C`.
/// `clamp_weight` floors the attenuation factor `1 - lambda*q_safe` at zero
/// (off by default; with it off a large `lambda*q_safe` flips positive
/// rewards negative, which is the formula taken at face value).
pub fn shape_reward(
    r: f64,
    q_safe: f64,
    params: &SafetyParams,
    violated: bool,
    clamp_weight: bool,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&q_safe) {
        return Err(CoreError::ContractViolation(format!(
            "q_safe must lie in [0,1]; the critic must clamp (got {q_safe})"
        )));
    }
    if violated {
        return Ok(-params.penalty_c);
    }
    let significance = params.lambda * q_safe;
    if r >= 0.0 {
        let mut weight = 1.0 - significance;
        if clamp_weight {
            weight = weight.max(0.0);
        }
        Ok(weight * r)
    } else {
        Ok(significance * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, penalty_c: f64) -> SafetyParams {
        SafetyParams {
            gamma: 0.99,
            gamma_safe: 0.85,
            horizon_h_star: 10,
            lambda,
            penalty_c,
            r_min_emp: -1.0,
            r_max_emp: 1.0,
        }
    }

    #[test]
    fn penalty_bound_frozen_values() {
        // (r_max - r_min)/gamma^h - r_max at [-1,1], gamma=0.99, h=10
        let b = penalty_lower_bound(-1.0, 1.0, 0.99, 10).unwrap();
        assert!((b - 1.2114547106437614).abs() < 1e-12, "got {b}");

        // gamma^h = 0.5 => 2/0.5 - 1 = 3
        let g = 0.5f64.powf(0.1);
        let b = penalty_lower_bound(-1.0, 1.0, g, 10).unwrap();
        assert!((b - 3.0).abs() < 1e-9, "got {b}");

        // clamped degenerate range still yields a positive bound
        let b = penalty_lower_bound(-0.01, 0.01, 0.9, 5).unwrap();
        assert!(b > 0.0);
    }

    #[test]
    fn penalty_bound_domain_errors() {
        assert!(penalty_lower_bound(-1.0, 1.0, 0.0, 10).is_err());
        assert!(penalty_lower_bound(-1.0, 1.0, 1.0, 10).is_err());
        assert!(penalty_lower_bound(1.0, -1.0, 0.9, 10).is_err());
        assert!(penalty_lower_bound(-1.0, 1.0, 0.9, 0).is_err());
    }

    #[test]
    fn shape_reward_branch_values() {
        let p = params(0.5, 1.3);
        // attenuated positive: (1 - 0.5*0.5) * 2 = 1.5
        assert_eq!(shape_reward(2.0, 0.5, &p, false, false).unwrap(), 1.5);
        // q_safe = 0 leaves any positive reward untouched
        assert_eq!(shape_reward(5.0, 0.0, &p, false, false).unwrap(), 5.0);
        // violation always costs -C
        assert_eq!(shape_reward(7.0, 0.2, &p, true, false).unwrap(), -1.3);

        let p = params(1.0, 1.3);
        // negative branch: lambda*q*r = 1*0.8*(-1) = -0.8
        assert_eq!(shape_reward(-1.0, 0.8, &p, false, false).unwrap(), -0.8);
    }

    #[test]
    fn shape_reward_rejects_out_of_range_q() {
        let p = params(1.0, 1.0);
        assert!(shape_reward(1.0, -0.1, &p, false, false).is_err());
        assert!(shape_reward(1.0, 1.1, &p, false, false).is_err());
        assert!(shape_reward(1.0, f64::NAN, &p, false, false).is_err());
    }

    #[test]
    fn lambda_zero_is_identity_on_nonnegative_rewards() {
        let p = params(0.0, 2.0);
        for r in [0.0, 0.3, 2.0, 17.5] {
            assert_eq!(shape_reward(r, 0.7, &p, false, false).unwrap(), r);
        }
        // the negative branch scales by lambda*q, so it collapses to zero
        assert_eq!(shape_reward(-0.5, 0.7, &p, false, false).unwrap(), 0.0);
    }

    #[test]
    fn weight_clamp_floors_the_factor_at_zero() {
        let p = params(4.0, 1.0);
        // unclamped: (1 - 4*0.9) * 2 = -5.2
        let raw = shape_reward(2.0, 0.9, &p, false, false).unwrap();
        assert!((raw - (-5.2)).abs() < 1e-12);
        assert_eq!(shape_reward(2.0, 0.9, &p, false, true).unwrap(), 0.0);
    }

    #[test]
    fn tracker_clamps_and_grows() {
        let mut t = RewardRangeTracker::new(0.01).unwrap();
        assert_eq!((t.r_min(), t.r_max()), (-0.01, 0.01));

        // first positive observation widens only the max
        let changed = t.observe(0.3).unwrap();
        assert!(changed);
        assert_eq!((t.r_min(), t.r_max()), (-0.01, 0.3));

        // inside the range: no change
        assert!(!t.observe(0.2).unwrap());
        assert!(!t.observe(-0.005).unwrap());

        // extension below
        assert!(t.observe(-2.0).unwrap());
        assert_eq!((t.r_min(), t.r_max()), (-2.0, 0.3));

        assert!(t.observe(f64::INFINITY).is_err());
    }

    #[test]
    fn tracker_is_monotone_under_random_streams() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut t = RewardRangeTracker::new(0.01).unwrap();
        let (mut lo, mut hi) = (t.r_min(), t.r_max());
        for _ in 0..2000 {
            let r = rng.gen_range(-50.0..50.0);
            t.observe(r).unwrap();
            assert!(t.r_min() <= lo && t.r_max() >= hi);
            assert!(t.r_min() <= -0.01 && t.r_max() >= 0.01);
            assert!(t.r_min() <= r && t.r_max() >= r);
            lo = t.r_min();
            hi = t.r_max();
        }
    }

    #[test]
    fn shaping_is_non_increasing_in_q_safe() {
        for &lambda in &[0.0, 0.3, 1.0, 4.0] {
            let p = params(lambda, 1.0);
            for &r in &[-3.0, -0.2, 0.0, 0.4, 5.0] {
                let mut prev = f64::INFINITY;
                for i in 0..=100 {
                    let q = i as f64 / 100.0;
                    let v = shape_reward(r, q, &p, false, false).unwrap();
                    assert!(
                        v <= prev + 1e-15,
                        "not monotone at lambda={lambda} r={r} q={q}: {v} > {prev}"
                    );
                    prev = v;
                }
            }
        }
    }
}
