//! Water-filling best-response operators.
//!
//! All variants share one structure: `p_i = clamp(s (mu - a_i), 0, cap_i)`
//! where the water level `mu` is chosen so that the budget binds. The plain
//! operator has `a_i = c_i`, `s = 1`; the regularized one shifts the floor by
//! the proximal anchor, `a_i = c_i - tau p_prev_i`, and scales by
//! `s = 1 / (tau + 1)`; the merit-controlled one additionally adds
//! `eps * grad_i` to the floor.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::precoding::PrecodedNetwork;

/// Internal accuracy of the water-level search.
pub const SOLVER_TOL: f64 = 1e-12;
/// Tolerance used when checking postconditions (budget, caps, KKT).
pub const CHECK_TOL: f64 = 1e-9;
/// Default termination threshold of the game iterations.
pub const TERMINATION_TOL: f64 = 1e-4;

/// Stacked nonnegative power vector, laid out as in [`PrecodedNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile(Vec<f64>);

impl PowerProfile {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(pn: &PrecodedNetwork) -> Self {
        Self(vec![0.0; pn.dim()])
    }

    /// Budget split evenly over each user's usable dimensions.
    pub fn uniform(pn: &PrecodedNetwork) -> Self {
        let mut p = vec![0.0; pn.dim()];
        for q in 0..pn.users() {
            let range = pn.user_range(q);
            let usable: Vec<usize> = range.filter(|&i| pn.is_usable(i)).collect();
            let mut share = pn.budget(q) / usable.len() as f64;
            if let Some(caps) = pn.caps(q) {
                // Caps exceed the budget in total, but a single cap may not.
                let base = pn.user_range(q).start;
                share = usable.iter().map(|&i| caps[i - base]).fold(share, f64::min);
            }
            for i in usable {
                p[i] = share;
            }
        }
        Self(p)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn block<'a>(&'a self, pn: &PrecodedNetwork, q: usize) -> &'a [f64] {
        &self.0[pn.user_range(q)]
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    /// Checks nonnegativity, budgets, caps and zero padding to `tol`.
    pub fn check_feasible(&self, pn: &PrecodedNetwork, tol: f64) -> Result<()> {
        if self.0.len() != pn.dim() {
            return Err(Error::Shape { expected: pn.dim(), got: self.0.len() });
        }
        for q in 0..pn.users() {
            let range = pn.user_range(q);
            let block = &self.0[range.clone()];
            if block.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("negative power for user {q}")));
            }
            let total: f64 = block.iter().sum();
            if total > pn.budget(q) + tol {
                return Err(Error::InvalidArgument(format!(
                    "user {q} uses {total} above its budget {}",
                    pn.budget(q)
                )));
            }
            if let Some(caps) = pn.caps(q) {
                if block.iter().zip(caps).any(|(x, c)| *x > c + tol) {
                    return Err(Error::InvalidArgument(format!("user {q} exceeds a per-dimension cap")));
                }
            }
            if range.clone().any(|i| !pn.is_usable(i) && self.0[i] != 0.0) {
                return Err(Error::InvalidArgument(format!("user {q} puts power on a padded dimension")));
            }
        }
        Ok(())
    }
}

impl Deref for PowerProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PowerProfile {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Output of one water-filling solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillResult {
    pub powers: Vec<f64>,
    /// Water level `mu`.
    pub level: f64,
    /// Dimensions with strictly positive power.
    pub active_set: Vec<usize>,
}

/// Proximal and merit terms of the regularized / controlled operators.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub tau: f64,
    pub anchor: &'a [f64],
    pub eps: f64,
    pub grad: Option<&'a [f64]>,
}

/// `p_i = (mu - c_i)^+` with `sum p_i = budget`.
pub fn waterfill(c: &[f64], budget: f64) -> Result<WaterfillResult> {
    waterfill_with(c, budget, None, None)
}

/// Regularized water-filling around `prev`.
pub fn waterfill_regularized(c: &[f64], budget: f64, tau: f64, prev: &[f64]) -> Result<WaterfillResult> {
    let prox = Proximal { tau, anchor: prev, eps: 0.0, grad: None };
    waterfill_with(c, budget, Some(&prox), None)
}

/// Merit-controlled water-filling: regularized around `prev` with the floor
/// raised by `eps * merit_grad`.
pub fn waterfill_controlled(
    c: &[f64],
    budget: f64,
    tau: f64,
    prev: &[f64],
    eps: f64,
    merit_grad: &[f64],
) -> Result<WaterfillResult> {
    let prox = Proximal { tau, anchor: prev, eps, grad: Some(merit_grad) };
    waterfill_with(c, budget, Some(&prox), None)
}

/// Water-filling with per-dimension caps. Requires `sum caps > budget`.
pub fn waterfill_capped(c: &[f64], budget: f64, caps: &[f64]) -> Result<WaterfillResult> {
    waterfill_with(c, budget, None, Some(caps))
}

/// General operator combining the optional proximal/merit terms and caps.
pub fn waterfill_with(
    c: &[f64],
    budget: f64,
    prox: Option<&Proximal<'_>>,
    caps: Option<&[f64]>,
) -> Result<WaterfillResult> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
    }
    if c.iter().any(|&x| x.is_nan() || x <= 0.0) {
        return Err(Error::InvalidArgument("normalized interference must be positive".into()));
    }
    let n = c.len();
    let mut floor = c.to_vec();
    let mut scale = 1.0;
    if let Some(prox) = prox {
        if !(prox.tau >= 0.0 && prox.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {}", prox.tau)));
        }
        if !(prox.eps >= 0.0 && prox.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {}", prox.eps)));
        }
        if prox.anchor.len() != n {
            return Err(Error::Shape { expected: n, got: prox.anchor.len() });
        }
        scale = 1.0 / (prox.tau + 1.0);
        for (a, &x) in floor.iter_mut().zip(prox.anchor) {
            *a -= prox.tau * x;
        }
        if let Some(grad) = prox.grad {
            if grad.len() != n {
                return Err(Error::Shape { expected: n, got: grad.len() });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::InvalidArgument("merit gradient must be finite".into()));
            }
            for (a, &g) in floor.iter_mut().zip(grad) {
                *a += prox.eps * g;
            }
        }
    }
    if floor.iter().all(|a| a.is_infinite()) {
        return Err(Error::NoUsableDimension);
    }
    match caps {
        None => Ok(fill_uncapped(&floor, scale, budget)),
        Some(caps) => {
            if caps.len() != n {
                return Err(Error::Shape { expected: n, got: caps.len() });
            }
            let total: f64 = caps.iter().sum();
            if !(total > budget) {
                return Err(Error::InvalidArgument(format!(
                    "sum of caps {total} must exceed the budget {budget}"
                )));
            }
            let usable: f64 = floor.iter().zip(caps).filter(|(a, _)| a.is_finite()).map(|(_, c)| c).sum();
            if !(usable > budget) {
                return Err(Error::InvalidArgument(format!(
                    "caps on usable dimensions ({usable}) cannot absorb the budget {budget}"
                )));
            }
            Ok(fill_capped(&floor, scale, budget, caps))
        }
    }
}

fn finish(floor: &[f64], scale: f64, level: f64, caps: Option<&[f64]>) -> WaterfillResult {
    let powers: Vec<f64> = floor
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if a.is_infinite() {
                return 0.0;
            }
            let x = (scale * (level - a)).max(0.0);
            match caps {
                Some(c) => x.min(c[i]),
                None => x,
            }
        })
        .collect();
    let active_set = powers.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, _)| i).collect();
    WaterfillResult { powers, level, active_set }
}

/// Exact sorted-breakpoint search.
fn fill_uncapped(floor: &[f64], scale: f64, budget: f64) -> WaterfillResult {
    let mut sorted: Vec<f64> = floor.iter().copied().filter(|a| a.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let target = budget / scale;
    let mut prefix = 0.0;
    let mut level = f64::NAN;
    for (k, &a) in sorted.iter().enumerate() {
        prefix += a;
        let candidate = (target + prefix) / (k + 1) as f64;
        if k + 1 == sorted.len() || candidate <= sorted[k + 1] {
            level = candidate;
            break;
        }
    }
    finish(floor, scale, level, None)
}

/// Bisection on the water level, then an exact solve on the identified
/// active pattern.
fn fill_capped(floor: &[f64], scale: f64, budget: f64, caps: &[f64]) -> WaterfillResult {
    let allocated = |level: f64| -> f64 {
        floor
            .iter()
            .zip(caps)
            .filter(|(a, _)| a.is_finite())
            .map(|(&a, &c)| (scale * (level - a)).clamp(0.0, c))
            .sum()
    };
    let finite = floor.iter().zip(caps).filter(|(a, _)| a.is_finite());
    let mut lo = finite.clone().map(|(&a, _)| a).fold(f64::INFINITY, f64::min);
    let mut hi = finite.map(|(&a, &c)| a + c / scale).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if allocated(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let mut level = 0.5 * (lo + hi);
    // Exact level on the linear piece containing `level`.
    let (mut capped_sum, mut free_sum, mut free_count) = (0.0, 0.0, 0usize);
    for (&a, &c) in floor.iter().zip(caps).filter(|(a, _)| a.is_finite()) {
        let x = scale * (level - a);
        if x >= c {
            capped_sum += c;
        } else if x > 0.0 {
            free_sum += a;
            free_count += 1;
        }
    }
    if free_count > 0 {
        let exact = (budget - capped_sum + scale * free_sum) / (scale * free_count as f64);
        if (exact - level).abs() <= 1e-6 * level.abs().max(1.0) {
            level = exact;
        }
    }
    finish(floor, scale, level, Some(caps))
}

/// Point-to-point rate `sum ln(1 + p_i / c_i)` in nats; padded entries skipped.
pub fn rate(c: &[f64], p: &[f64]) -> f64 {
    c.iter()
        .zip(p)
        .filter(|(c, _)| c.is_finite())
        .map(|(&c, &p)| (p / c).ln_1p())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bisection on the level of `sum clamp(s(mu - a), 0, cap) = budget`.
    fn bisect_level(floor: &[f64], scale: f64, budget: f64, caps: Option<&[f64]>) -> Vec<f64> {
        let cap = |i: usize| caps.map_or(f64::INFINITY, |c| c[i]);
        let alloc = |mu: f64| -> Vec<f64> {
            floor
                .iter()
                .enumerate()
                .map(|(i, &a)| if a.is_finite() { (scale * (mu - a)).clamp(0.0, cap(i)) } else { 0.0 })
                .collect()
        };
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if alloc(mid).iter().sum::<f64>() < budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        alloc(0.5 * (lo + hi))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn symmetric_case() {
        let r = waterfill(&[1.0, 1.0], 2.0).unwrap();
        assert!(close(&r.powers, &[1.0, 1.0], 1e-12));
        assert!((r.level - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_dimension() {
        let r = waterfill(&[5.0], 3.0).unwrap();
        assert!(close(&r.powers, &[3.0], 1e-12));
        assert!((r.level - 8.0).abs() < 1e-12);
    }

    #[test]
    fn three_dims_one_inactive() {
        let r = waterfill(&[1.0, 2.0, 4.0], 3.0).unwrap();
        assert!((r.level - 3.0).abs() < 1e-12);
        assert!(close(&r.powers, &[2.0, 1.0, 0.0], 1e-12));
        assert_eq!(r.active_set, vec![0, 1]);
        let oracle = bisect_level(&[1.0, 2.0, 4.0], 1.0, 3.0, None);
        assert!(close(&r.powers, &oracle, 1e-9));
    }

    #[test]
    fn sentinels_get_nothing() {
        let r = waterfill(&[1.0, f64::INFINITY, 2.0], 1.0).unwrap();
        assert_eq!(r.powers[1], 0.0);
        assert!((r.powers.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(waterfill(&[f64::INFINITY; 2], 1.0), Err(Error::NoUsableDimension));
    }

    #[test]
    fn invalid_inputs() {
        assert!(waterfill(&[1.0], 0.0).is_err());
        assert!(waterfill(&[0.0, 1.0], 1.0).is_err());
        assert!(waterfill(&[f64::NAN], 1.0).is_err());
        assert!(waterfill_regularized(&[1.0], 1.0, -1.0, &[0.0]).is_err());
        assert!(waterfill_regularized(&[1.0], 1.0, 1.0, &[0.0, 1.0]).is_err());
        assert!(waterfill_controlled(&[1.0], 1.0, 1.0, &[0.0], 1.0, &[f64::NAN]).is_err());
    }

    #[test]
    fn regularized_tau_to_zero_limit() {
        let c = [1.0, 2.0, 4.0];
        let plain = waterfill(&c, 3.0).unwrap();
        let reg = waterfill_regularized(&c, 3.0, 1e-12, &[3.0, 0.0, 0.0]).unwrap();
        assert!(close(&plain.powers, &reg.powers, 1e-9));
    }

    #[test]
    fn regularized_fixed_point() {
        let c = [0.3, 1.1, 2.5, 0.7];
        let p = waterfill(&c, 2.0).unwrap().powers;
        for tau in [0.1, 1.0, 7.0] {
            let r = waterfill_regularized(&c, 2.0, tau, &p).unwrap();
            assert!(close(&r.powers, &p, 1e-9));
        }
    }

    #[test]
    fn regularized_against_bisection() {
        let c = [1.0, 2.0, 4.0];
        let prev = [3.0, 0.0, 0.0];
        let r = waterfill_regularized(&c, 3.0, 1.0, &prev).unwrap();
        let floor: Vec<f64> = c.iter().zip(&prev).map(|(c, p)| c - p).collect();
        let oracle = bisect_level(&floor, 0.5, 3.0, None);
        assert!(close(&r.powers, &oracle, 1e-9));
        // floors (-2, 2, 4), scale 1/2: mu = 3 gives (2.5, 0.5, 0)
        assert!(close(&r.powers, &[2.5, 0.5, 0.0], 1e-9));
        assert!((r.level - 3.0).abs() < 1e-9);
    }

    #[test]
    fn controlled_reduces_to_regularized() {
        let c = [0.5, 1.5, 0.9];
        let prev = [0.2, 0.8, 1.0];
        let reg = waterfill_regularized(&c, 2.0, 0.7, &prev).unwrap();
        let zero_eps = waterfill_controlled(&c, 2.0, 0.7, &prev, 0.0, &[5.0, -3.0, 1.0]).unwrap();
        assert!(close(&reg.powers, &zero_eps.powers, 1e-12));
        let flat_grad = waterfill_controlled(&c, 2.0, 0.7, &prev, 0.3, &[4.0, 4.0, 4.0]).unwrap();
        assert!(close(&reg.powers, &flat_grad.powers, 1e-9));
    }

    #[test]
    fn controlled_against_bisection() {
        let c = [1.0, 2.0];
        let prev = [1.0, 1.0];
        let grad = [2.0, 0.0];
        let r = waterfill_controlled(&c, 2.0, 1.0, &prev, 0.5, &grad).unwrap();
        let floor: Vec<f64> = (0..2).map(|i| c[i] - prev[i] + 0.5 * grad[i]).collect();
        let oracle = bisect_level(&floor, 0.5, 2.0, None);
        assert!(close(&r.powers, &oracle, 1e-9));
    }

    #[test]
    fn caps_inactive_match_plain() {
        let c = [0.4, 1.0, 3.0];
        let plain = waterfill(&c, 2.0).unwrap();
        let capped = waterfill_capped(&c, 2.0, &[2.0, 2.0, 2.0]).unwrap();
        assert!(close(&plain.powers, &capped.powers, 1e-9));
    }

    #[test]
    fn capped_examples() {
        let r = waterfill_capped(&[1.0, 1.0], 2.0, &[0.5, 10.0]).unwrap();
        assert!(close(&r.powers, &[0.5, 1.5], 1e-9));
        assert!(close(&r.powers, &bisect_level(&[1.0, 1.0], 1.0, 2.0, Some(&[0.5, 10.0])), 1e-9));
        let r = waterfill_capped(&[1.0, 2.0, 4.0], 3.0, &[1.5, 1.5, 1.5]).unwrap();
        assert!(close(&r.powers, &[1.5, 1.5, 0.0], 1e-9));
    }

    #[test]
    fn capped_requires_slack() {
        assert!(waterfill_capped(&[1.0, 1.0], 2.0, &[1.0, 1.0]).is_err());
        assert!(waterfill_capped(&[1.0, f64::INFINITY], 2.0, &[1.5, 5.0]).is_err());
    }

    #[test]
    fn level_increases_with_budget() {
        let c = [0.3, 0.9, 1.7, 2.2];
        let mut last = f64::NEG_INFINITY;
        for k in 1..50 {
            let r = waterfill(&c, 0.1 * k as f64).unwrap();
            assert!(r.level > last);
            last = r.level;
        }
    }

    #[test]
    fn continuous_in_interference() {
        let c = [0.3, 0.9, 1.7, 2.2];
        let base = waterfill(&c, 1.3).unwrap();
        let shifted: Vec<f64> = c.iter().map(|x| x + 1e-8).collect();
        let moved = waterfill(&shifted, 1.3).unwrap();
        assert!(close(&base.powers, &moved.powers, 1e-6));
    }
}
