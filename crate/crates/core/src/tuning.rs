//! Closed-form safety-margin analysis and penalty-weight tuning.
//!
//! Everything here works on the worst-case return bound for a trajectory
//! that collects the maximum reward for `x` steps and then violates,
//! eating the penalty tail forever after. The margin between the best
//! guaranteed safe return and the best such unsafe return is concave in
//! the shaping weight, which lets us solve for a weight hitting a target
//! margin by bracketing plus bisection.

use crate::error::{CoreError, Result};
use crate::mdp::SafetyParams;

/// Inputs for the margin condition: discounts, horizon, empirical reward
/// range, penalty, and the shaping weight under evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionInputs {
    pub gamma: f64,
    pub gamma_safe: f64,
    pub h_star: u32,
    pub r_min: f64,
    pub r_max: f64,
    pub penalty_c: f64,
    pub lambda: f64,
}

impl ConditionInputs {
    pub fn from_params(p: &SafetyParams) -> Self {
        ConditionInputs {
            gamma: p.gamma,
            gamma_safe: p.gamma_safe,
            h_star: p.horizon_h_star,
            r_min: p.r_min_emp,
            r_max: p.r_max_emp,
            penalty_c: p.penalty_c,
            lambda: p.lambda,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Checks ranges; does not check that penalty_c clears the admissibility
    /// bound, so degenerate penalties can still be analyzed.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "gamma must be in (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.gamma_safe > 0.0 && self.gamma_safe < 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "gamma_safe must be in (0,1), got {}",
                self.gamma_safe
            )));
        }
        if self.h_star < 1 {
            return Err(CoreError::InvalidParameter(
                "h_star must be >= 1".into(),
            ));
        }
        if !(self.r_min < 0.0 && self.r_max > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "reward range must straddle zero, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !self.penalty_c.is_finite() || !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(CoreError::InvalidParameter(
                "penalty_c must be finite and lambda finite nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Partial geometric sum `1 + rho + ... + rho^(x-1)`, with the limit branch
/// `x` when rho is within 1e-12 of 1 so the ratio form never divides by ~0.
fn geom_partial(rho: f64, x: u32) -> f64 {
    if (1.0 - rho).abs() < 1e-12 {
        return x as f64;
    }
    (1.0 - rho.powi(x as i32)) / (1.0 - rho)
}

/// Upper bound on the shaped return of a trajectory that takes `x` steps of
/// maximal reward, shaped by the tightest safety-critic value consistent
/// with a violation `x` steps out, then pays the penalty forever:
///
///   r_max/(1-g) - (r_max+C)/(1-g) * g^x
///     - lambda * gs^H * r_max * sum_{t<x} (g/gs)^t
///
/// Errors if `x < 1`.
pub fn unsafe_return_bound(x: u32, inputs: &ConditionInputs) -> Result<f64> {
    if x < 1 {
        return Err(CoreError::Domain(
            "unsafe trajectory length must be >= 1".into(),
        ));
    }
    let g = inputs.gamma;
    let gs = inputs.gamma_safe;
    let head = inputs.r_max / (1.0 - g) - (inputs.r_max + inputs.penalty_c) / (1.0 - g) * g.powi(x as i32);
    let shaping_drag =
        inputs.lambda * gs.powi(inputs.h_star as i32) * inputs.r_max * geom_partial(g / gs, x);
    Ok(head - shaping_drag)
}

/// Length in `1..=h_star` maximizing [`unsafe_return_bound`], found by
/// exhaustive scan (ties keep the smallest length). This is the source of
/// truth; [`critical_length_closed_form`] is a fast cross-check.
pub fn worst_trajectory_length(inputs: &ConditionInputs) -> Result<u32> {
    let mut best_x = 1;
    let mut best = unsafe_return_bound(1, inputs)?;
    for x in 2..=inputs.h_star {
        let v = unsafe_return_bound(x, inputs)?;
        if v > best {
            best = v;
            best_x = x;
        }
    }
    Ok(best_x)
}

/// Floor of the continuous critical length where the bound's derivative in
/// `x` vanishes, or `None` when the critical point is undefined (zero
/// weight, equal discounts) or falls outside `[1, h_star]`. The true integer
/// argmax is always this value or this value plus one, so callers should
/// compare both against the exhaustive scan.
pub fn critical_length_closed_form(inputs: &ConditionInputs) -> Option<u32> {
    if inputs.lambda <= 0.0 {
        return None;
    }
    let g = inputs.gamma;
    let gs = inputs.gamma_safe;
    let rho = g / gs;
    if (1.0 - rho).abs() < 1e-12 {
        return None;
    }
    let a = (inputs.r_max + inputs.penalty_c) / (1.0 - g);
    let b = inputs.lambda * gs.powi(inputs.h_star as i32) * inputs.r_max / (1.0 - rho);
    let ratio = (b * rho.ln()) / (a * g.ln());
    if !(ratio > 0.0) || !ratio.is_finite() {
        return None;
    }
    let xc = ratio.ln() / gs.ln();
    if !(xc >= 1.0) || xc > inputs.h_star as f64 {
        return None;
    }
    Some(xc.floor() as u32)
}

/// Lower bound on the return of a trajectory that never violates: every
/// negative reward gets scaled by at most `lambda * gamma_safe`, so the
/// floor is `lambda * gamma_safe * r_min / (1 - gamma)`. Requires r_min < 0.
pub fn safe_return_lower_bound(inputs: &ConditionInputs) -> Result<f64> {
    if inputs.r_min >= 0.0 {
        return Err(CoreError::Domain(format!(
            "safe-return floor assumes r_min < 0, got {}",
            inputs.r_min
        )));
    }
    Ok(inputs.lambda * inputs.gamma_safe * inputs.r_min / (1.0 - inputs.gamma))
}

/// Margin between the guaranteed-safe floor and the best unsafe bound:
/// positive means every violating trajectory is strictly dominated.
pub fn delta_margin(inputs: &ConditionInputs) -> Result<f64> {
    let x_star = worst_trajectory_length(inputs)?;
    Ok(safe_return_lower_bound(inputs)? - unsafe_return_bound(x_star, inputs)?)
}

/// Result of solving for a shaping weight hitting a target margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSolution {
    pub lambda: f64,
    pub delta_achieved: f64,
    /// False when no weight reaches the target; `lambda` is then the
    /// closest-margin weight instead of a root.
    pub attainable: bool,
    /// Worst-case trajectory length at the returned weight.
    pub worst_length: u32,
}

const SOLVER_DOUBLINGS: u32 = 60;
const BISECT_ITERS: u32 = 200;
const TERNARY_ITERS: u32 = 300;

fn solve_tolerance(target: f64) -> f64 {
    1e-6 * target.abs().max(1.0)
}

/// Finds `lambda >= 0` with margin(lambda) == target_delta, up to
/// `1e-6 * max(1, |target|)`. The margin is concave in lambda, so roots
/// come in at most one pair; when both exist the one nearer `lambda_init`
/// (in doubling distance) is returned. If the target exceeds the peak
/// margin the result is flagged unattainable and carries the peak weight;
/// if the margin sits above the target everywhere (unbounded growth or a
/// floor above the target) the flagged result carries weight zero, the
/// closest the curve gets.
pub fn solve_lambda(
    target_delta: f64,
    inputs: &ConditionInputs,
    lambda_init: f64,
) -> Result<LambdaSolution> {
    inputs.validate()?;
    if !target_delta.is_finite() {
        return Err(CoreError::InvalidParameter("target margin must be finite".into()));
    }
    if !(lambda_init > 0.0) || !lambda_init.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "lambda_init must be positive and finite, got {lambda_init}"
        )));
    }

    let margin = |lam: f64| -> Result<f64> { delta_margin(&inputs.with_lambda(lam)) };
    let tol = solve_tolerance(target_delta);
    let finish = |lam: f64, attainable: bool| -> Result<LambdaSolution> {
        let at = inputs.with_lambda(lam);
        Ok(LambdaSolution {
            lambda: lam,
            delta_achieved: delta_margin(&at)?,
            attainable,
            worst_length: worst_trajectory_length(&at)?,
        })
    };

    let g_init = margin(lambda_init)? - target_delta;
    if g_init.abs() <= tol {
        return finish(lambda_init, true);
    }

    // Walk each direction independently; first sign change per direction
    // gives a bracket, and the bracket whose near endpoint sits closer to
    // lambda_init wins.
    let mut bracket_down: Option<(f64, f64)> = None;
    let mut prev = lambda_init;
    let mut prev_g = g_init;
    for k in 1..=SOLVER_DOUBLINGS + 1 {
        let lam = if k <= SOLVER_DOUBLINGS {
            lambda_init / f64::powi(2.0, k as i32)
        } else {
            0.0
        };
        let gv = margin(lam)? - target_delta;
        if gv == 0.0 || gv.signum() != prev_g.signum() {
            bracket_down = Some((lam, prev));
            break;
        }
        prev = lam;
        prev_g = gv;
        if lam == 0.0 {
            break;
        }
    }

    let mut bracket_up: Option<(f64, f64)> = None;
    prev = lambda_init;
    prev_g = g_init;
    for k in 1..=SOLVER_DOUBLINGS {
        let lam = lambda_init * f64::powi(2.0, k as i32);
        let gv = margin(lam)? - target_delta;
        if gv == 0.0 || gv.signum() != prev_g.signum() {
            bracket_up = Some((prev, lam));
            break;
        }
        prev = lam;
        prev_g = gv;
    }

    let chosen = match (bracket_down, bracket_up) {
        (Some(d), Some(u)) => {
            // Near endpoints: d.1 (largest point at or below init on the
            // far side of the root), u.0 likewise above.
            if (lambda_init - d.1).abs() <= (u.0 - lambda_init).abs() {
                Some(d)
            } else {
                Some(u)
            }
        }
        (Some(d), None) => Some(d),
        (None, Some(u)) => Some(u),
        (None, None) => None,
    };

    if let Some((lo, hi)) = chosen {
        let lam = bisect(lo, hi, target_delta, &margin, tol)?;
        return finish(lam, true);
    }

    // No sign change along either chain. Concavity narrows this to: the
    // target sits above the peak (unattainable), the margin rises without
    // bound and never comes back down to a low target (flagged, zero is the
    // closest approach), or a root exists beyond the scan or inside a
    // jumped-over band around the peak.
    let (lam_peak, peak, unbounded) = concave_peak(&margin, lambda_init)?;
    if !unbounded && peak - target_delta < 0.0 {
        return finish(lam_peak, false);
    }
    if g_init < 0.0 {
        if unbounded {
            // Rising without bound and below target at the init: the root
            // lies past the scan; expand until the sign flips.
            let mut lo = lambda_init * f64::powi(2.0, SOLVER_DOUBLINGS as i32);
            let mut hi = lo * 2.0;
            for _ in 0..200 {
                if margin(hi)? - target_delta >= 0.0 {
                    let lam = bisect(lo, hi, target_delta, &margin, tol)?;
                    return finish(lam, true);
                }
                lo = hi;
                hi *= 2.0;
            }
            return Err(CoreError::Domain(
                "margin solver failed to bracket an unbounded target".into(),
            ));
        }
        // The feasible band around the peak was jumped over; (init, peak)
        // brackets a root.
        let (lo, hi) = if lambda_init < lam_peak {
            (lambda_init, lam_peak)
        } else {
            (lam_peak, lambda_init)
        };
        let lam = bisect(lo, hi, target_delta, &margin, tol)?;
        return finish(lam, true);
    }
    if unbounded {
        // Monotone rising and already above the target at the init (and at
        // zero, per the down chain): the curve never meets the target;
        // weight zero is the closest approach.
        return finish(0.0, false);
    }
    // Above the target at the init but the curve comes down eventually; the
    // scan was just too short to see it. Expand from the far side of the
    // peak until the sign flips, then bisect.
    let mut lo = lambda_init.max(lam_peak).max(1.0);
    let mut hi = lo * 2.0;
    for _ in 0..200 {
        if margin(hi)? - target_delta < 0.0 {
            let lam = bisect(lo, hi, target_delta, &margin, tol)?;
            return finish(lam, true);
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(CoreError::Domain(
        "margin solver failed to bracket a decaying target".into(),
    ))
}

fn bisect(
    mut lo: f64,
    mut hi: f64,
    target: f64,
    margin: &dyn Fn(f64) -> Result<f64>,
    tol: f64,
) -> Result<f64> {
    let mut g_lo = margin(lo)? - target;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        let g_mid = margin(mid)? - target;
        if g_mid.abs() <= tol {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Locates the maximum of the concave margin over [0, inf). Returns
/// (argmax, max, unbounded); `unbounded` means the margin was still rising
/// after 80 doublings of the search radius.
fn concave_peak(
    margin: &dyn Fn(f64) -> Result<f64>,
    scale: f64,
) -> Result<(f64, f64, bool)> {
    let mut radius = scale.max(1.0);
    let mut rises = margin(2.0 * radius)? > margin(radius)?;
    let mut doublings = 0;
    while rises && doublings < 80 {
        radius *= 2.0;
        rises = margin(2.0 * radius)? > margin(radius)?;
        doublings += 1;
    }
    if rises {
        let v = margin(radius)?;
        return Ok((radius, v, true));
    }
    let mut lo = 0.0;
    let mut hi = 2.0 * radius;
    for _ in 0..TERNARY_ITERS {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if margin(m1)? < margin(m2)? {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let lam = 0.5 * (lo + hi);
    Ok((lam, margin(lam)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(
        gamma: f64,
        gamma_safe: f64,
        h_star: u32,
        r_min: f64,
        r_max: f64,
        penalty_c: f64,
        lambda: f64,
    ) -> ConditionInputs {
        ConditionInputs { gamma, gamma_safe, h_star, r_min, r_max, penalty_c, lambda }
    }

    /// Brute-force truncated series for the same bound the closed form
    /// expresses: at step t the safety critic is floored at gs^(h_star - t),
    /// so the trajectory collects g^t (1 - lam gs^(h_star - t)) r_max for
    /// x steps and then the discounted penalty tail.
    fn bound_by_summation(x: u32, inp: &ConditionInputs, terms: u32) -> f64 {
        let mut s = 0.0;
        for t in 0..x {
            let critic_floor = inp.gamma_safe.powi(inp.h_star as i32 - t as i32);
            s += inp.gamma.powi(t as i32) * (1.0 - inp.lambda * critic_floor) * inp.r_max;
        }
        for t in x..terms {
            s += inp.gamma.powi(t as i32) * (-inp.penalty_c);
        }
        s
    }

    #[test]
    fn bound_matches_frozen_example() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 0.0);
        let v = unsafe_return_bound(1, &inp).unwrap();
        assert!((v - -127.69999999999985).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn bound_matches_summation_oracle() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        for x in [1, 3, 5, 10] {
            let closed = unsafe_return_bound(x, &inp).unwrap();
            let summed = bound_by_summation(x, &inp, 10_000);
            assert!(
                (closed - summed).abs() <= 1e-9 * closed.abs().max(1.0),
                "x={x}: closed {closed} vs summed {summed}"
            );
        }
    }

    #[test]
    fn bound_limit_branch_matches_summation() {
        let inp = inputs(0.9, 0.9, 8, -0.5, 2.0, 3.0, 1.0);
        for x in [1, 4, 8] {
            let closed = unsafe_return_bound(x, &inp).unwrap();
            let summed = bound_by_summation(x, &inp, 10_000);
            assert!(
                (closed - summed).abs() <= 1e-9 * closed.abs().max(1.0),
                "x={x}: closed {closed} vs summed {summed}"
            );
        }
    }

    #[test]
    fn bound_rejects_zero_length() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        assert!(matches!(unsafe_return_bound(0, &inp), Err(CoreError::Domain(_))));
    }

    #[test]
    fn worst_length_is_horizon_at_zero_lambda() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 0.0);
        assert_eq!(worst_trajectory_length(&inp).unwrap(), 10);
    }

    #[test]
    fn worst_length_matches_frozen_values() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        assert_eq!(worst_trajectory_length(&inp).unwrap(), 10);
        let v = unsafe_return_bound(10, &inp).unwrap();
        assert!((v - -112.30345953822395).abs() < 1e-9, "got {v}");

        // Interior maxima at larger weights over a longer window.
        let long = inputs(0.99, 0.85, 30, -1.0, 1.0, 1.3, 20.0);
        assert_eq!(worst_trajectory_length(&long).unwrap(), 17);
        let long5 = inputs(0.99, 0.85, 30, -1.0, 1.0, 1.3, 5.0);
        assert_eq!(worst_trajectory_length(&long5).unwrap(), 26);
    }

    #[test]
    fn closed_form_brackets_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut in_range = 0;
        for _ in 0..400 {
            let inp = inputs(
                rng.gen_range(0.9..0.995),
                rng.gen_range(0.5..0.95),
                rng.gen_range(5..40),
                -1.0,
                rng.gen_range(0.1..5.0),
                rng.gen_range(0.0..10.0),
                rng.gen_range(0.01..50.0),
            );
            let exact = worst_trajectory_length(&inp).unwrap();
            if let Some(fl) = critical_length_closed_form(&inp) {
                in_range += 1;
                let lo = unsafe_return_bound(fl.max(1).min(inp.h_star), &inp).unwrap();
                let hi_x = (fl + 1).min(inp.h_star).max(1);
                let hi = unsafe_return_bound(hi_x, &inp).unwrap();
                let best_pair = if lo >= hi { fl.max(1).min(inp.h_star) } else { hi_x };
                let gap = (unsafe_return_bound(exact, &inp).unwrap()
                    - unsafe_return_bound(best_pair, &inp).unwrap())
                .abs();
                assert!(gap <= 1e-9, "argmax {exact} vs pair-best {best_pair}, gap {gap}");
            }
        }
        assert!(in_range > 50, "too few interior cases to be meaningful: {in_range}");
    }

    #[test]
    fn safe_floor_matches_frozen_value() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        let v = safe_return_lower_bound(&inp).unwrap();
        assert!((v - -84.99999999999993).abs() < 1e-12, "got {v}");
        let zero = safe_return_lower_bound(&inp.with_lambda(0.0)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn safe_floor_rejects_nonnegative_r_min() {
        let mut inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        inp.r_min = 0.0;
        assert!(matches!(safe_return_lower_bound(&inp), Err(CoreError::Domain(_))));
    }

    #[test]
    fn margin_frozen_values() {
        let inp = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 1.0);
        let d = delta_margin(&inp).unwrap();
        assert!((d - 27.30345953822402).abs() < 1e-9, "got {d}");

        // With no penalty and no shaping the unsafe bound is pure max
        // reward, so the margin goes negative.
        let bare = inputs(0.99, 0.85, 10, -1.0, 1.0, 0.0, 0.0);
        let d0 = delta_margin(&bare).unwrap();
        assert!((d0 - -9.561792499119548).abs() < 1e-9, "got {d0}");
    }

    #[test]
    fn margin_is_concave_on_lambda_grid() {
        let base = inputs(0.99, 0.85, 12, -1.0, 1.0, 1.3, 0.0);
        let lambdas: Vec<f64> = (0..60).map(|i| 0.25 * i as f64).collect();
        for w in lambdas.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let fa = delta_margin(&base.with_lambda(a)).unwrap();
            let fb = delta_margin(&base.with_lambda(b)).unwrap();
            let fc = delta_margin(&base.with_lambda(c)).unwrap();
            assert!(
                fb + 1e-9 >= 0.5 * (fa + fc),
                "midpoint concavity failed at lambda={b}: {fb} < avg({fa},{fc})"
            );
        }
    }

    #[test]
    fn solver_hits_attainable_targets() {
        let base = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let probe = rng.gen_range(0.01..30.0);
            let target = delta_margin(&base.with_lambda(probe)).unwrap();
            let sol = solve_lambda(target, &base, 1.0).unwrap();
            assert!(sol.attainable, "target {target} from probe {probe} flagged unattainable");
            assert!(
                (sol.delta_achieved - target).abs() <= solve_tolerance(target),
                "residual too large: {} vs {}",
                sol.delta_achieved,
                target
            );
        }
    }

    #[test]
    fn solver_flags_unattainable_and_returns_peak() {
        // Peaked landscape: drag dominates at small weights, the safe floor
        // wins at large ones.
        let base = inputs(0.99, 0.85, 10, -0.001, 0.2, 0.0338, 0.0);
        let sol = solve_lambda(1e6, &base, 1.0).unwrap();
        assert!(!sol.attainable);
        // Interior peak near 5.05 with margin near 2.916.
        assert!((sol.lambda - 5.05).abs() < 0.05, "peak lambda {}", sol.lambda);
        assert!((sol.delta_achieved - 2.9159237577915436).abs() < 1e-3);
        let up = delta_margin(&base.with_lambda(sol.lambda * 1.1)).unwrap();
        let down = delta_margin(&base.with_lambda(sol.lambda * 0.9)).unwrap();
        assert!(sol.delta_achieved + 1e-6 >= up && sol.delta_achieved + 1e-6 >= down);
    }

    #[test]
    fn solver_flags_targets_below_floor() {
        // Monotone-increasing margin: everything below delta(0) is out of
        // reach from above; solver reports weight zero, flagged.
        let base = inputs(0.9, 0.85, 10, -0.01, 1.0, 2.0, 0.0);
        let floor = delta_margin(&base.with_lambda(0.0)).unwrap();
        let sol = solve_lambda(floor - 50.0, &base, 1.0).unwrap();
        assert!(!sol.attainable);
        assert_eq!(sol.lambda, 0.0);
    }

    #[test]
    fn solver_prefers_root_near_init() {
        // Two roots straddle the peak (near 1.74 and 16.0 for this fixture);
        // each init should pull toward its own side.
        let base = inputs(0.99, 0.85, 10, -0.001, 0.2, 0.0338, 0.0);
        let peak = solve_lambda(1e6, &base, 1.0).unwrap();
        let target = peak.delta_achieved - 0.5;
        let left = solve_lambda(target, &base, 0.1).unwrap();
        let right = solve_lambda(target, &base, 100.0).unwrap();
        assert!(left.attainable && right.attainable);
        assert!(
            left.lambda < peak.lambda && right.lambda > peak.lambda,
            "left {} right {} peak {}",
            left.lambda,
            right.lambda,
            peak.lambda
        );
        assert!((left.lambda - 1.74).abs() < 0.05, "left root {}", left.lambda);
        assert!((right.lambda - 16.0).abs() < 0.1, "right root {}", right.lambda);
    }

    #[test]
    fn solver_rejects_bad_init() {
        let base = inputs(0.99, 0.85, 10, -1.0, 1.0, 1.3, 0.0);
        assert!(solve_lambda(1.0, &base, 0.0).is_err());
        assert!(solve_lambda(1.0, &base, -2.0).is_err());
        assert!(solve_lambda(f64::NAN, &base, 1.0).is_err());
    }
}
