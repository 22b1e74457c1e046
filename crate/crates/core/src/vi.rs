//! Variational-inequality layer: uniqueness diagnostics, the regularization
//! bound on `tau`, merit functions for equilibrium selection and the
//! controlled / inexact outer loops.
//!
//! The controlled loop solves, at each outer iteration `n`, the regularized
//! and merit-perturbed game whose best responses are
//! `p_q = (mu_q - c_q + tau p_q^(n-1) - eps_n grad_q phi(p))^+ / (tau + 1)`
//! by Jacobi sweeps warm-started at `p^(n-1)`. With `eps_n = 0` it reduces to
//! the plain regularized game.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{jacobi_sweep, normalized_change, RunTrace, Steering, Verdict};
use crate::precoding::PrecodedNetwork;
use crate::waterfill::{max_abs, PowerProfile, CHECK_TOL, TERMINATION_TOL};

/// Margin added to the smallest admissible `tau`.
pub const TAU_SAFETY: f64 = 0.05;

const POWER_ITERATION_TOL: f64 = 1e-10;
const POWER_ITERATION_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniquenessVerdict {
    UniqueGuaranteed,
    Unknown,
}

impl fmt::Display for UniquenessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UniqueGuaranteed => "unique_guaranteed",
            Self::Unknown => "unknown",
        })
    }
}

/// Sufficient conditions for a unique equilibrium evaluated on `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    /// Largest row sum of `M` (received normalized interference).
    pub row_margin: f64,
    pub row_condition: bool,
    /// Largest column sum of `M` (generated normalized interference).
    pub col_margin: f64,
    pub col_condition: bool,
    pub spectral_radius: f64,
    /// Positive `v` with `||M||_inf^v < 1`, when one was found.
    pub weighting_vector: Option<Vec<f64>>,
    pub verdict: UniquenessVerdict,
}

impl UniquenessReport {
    pub fn rho_condition(&self) -> bool {
        self.spectral_radius < 1.0
    }
}

/// Perron root of a nonnegative matrix by power iteration on `A + I`.
///
/// The iterate stays strictly positive, so the Collatz-Wielandt ratios
/// bracket the root; when the bracket does not close within the iteration
/// cap the (nonincreasing) upper bound is returned.
pub fn perron_root(a: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut x = vec![1.0; n];
    let mut upper = f64::INFINITY;
    let mut lower = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        let mut y = x.clone();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[(i, j)] * x[j];
            }
            y[i] += acc;
        }
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let ratio = y[i] / x[i];
            hi = hi.max(ratio);
            lo = lo.min(ratio);
        }
        let scale = max_abs(&y);
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / scale);
        let stalled = upper - hi <= 1e-15 * hi;
        upper = upper.min(hi);
        lower = f64::max(lower, lo);
        if upper - lower <= POWER_ITERATION_TOL * upper {
            return ((0.5 * (upper + lower) - 1.0).max(0.0), x);
        }
        if stalled && upper - lower <= POWER_ITERATION_TOL * upper * 1e3 {
            break;
        }
    }
    ((upper - 1.0).max(0.0), x)
}

/// Row test, column test and spectral radius of `M`.
pub fn check_uniqueness(pn: &PrecodedNetwork) -> UniquenessReport {
    let row_margin = pn.row_sums().into_iter().fold(0.0, f64::max);
    let col_margin = pn.col_sums().into_iter().fold(0.0, f64::max);
    let spectral_radius = (0..pn.carriers())
        .map(|k| perron_root(pn.carrier_block(k)).0)
        .fold(0.0, f64::max);
    let row_condition = row_margin < 1.0;
    let col_condition = col_margin < 1.0;
    let weighting_vector = if spectral_radius < 1.0 && !row_condition && !col_condition {
        weighting_vector(pn)
    } else {
        None
    };
    let verdict = if row_condition || col_condition || spectral_radius < 1.0 {
        UniquenessVerdict::UniqueGuaranteed
    } else {
        UniquenessVerdict::Unknown
    };
    UniquenessReport {
        row_margin,
        row_condition,
        col_margin,
        col_condition,
        spectral_radius,
        weighting_vector,
        verdict,
    }
}

/// Perron vector of `M + eta * 11^T` per carrier, kept if it certifies
/// `max_i (M v)_i / v_i < 1`.
fn weighting_vector(pn: &PrecodedNetwork) -> Option<Vec<f64>> {
    const ETA: f64 = 1e-6;
    let mut v = vec![0.0; pn.dim()];
    for k in 0..pn.carriers() {
        let block = pn.carrier_block(k);
        let perturbed = block.map(|x| x + ETA);
        let (_, local) = perron_root(&perturbed);
        for q in 0..pn.users() {
            for j in 0..pn.tx_antennas(q) {
                let local_idx = (0..q).map(|r| pn.tx_antennas(r)).sum::<usize>() + j;
                v[pn.index(q, k, j)] = local[local_idx];
            }
        }
    }
    if v.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let mv = pn.interference(&v).ok()?;
    let norm = mv.iter().zip(&v).map(|(a, b)| a / b).fold(0.0, f64::max);
    (norm < 1.0).then_some(v)
}

/// Smallest `tau` for which convergence of the regularized (and
/// merit-perturbed) iteration is guaranteed: `max(0, row_margin + eps L - 1)`.
pub fn tau_min(pn: &PrecodedNetwork, eps_n: f64, lipschitz: f64) -> f64 {
    let row_margin = pn.row_sums().into_iter().fold(0.0, f64::max);
    tau_min_from_margin(row_margin, eps_n, lipschitz)
}

pub fn tau_min_from_margin(row_margin: f64, eps_n: f64, lipschitz: f64) -> f64 {
    (row_margin + eps_n * lipschitz - 1.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeritKind {
    None,
    /// Total normalized multiuser interference.
    MinMui,
    /// Rates of the other users (pricing).
    MaxSumRate,
}

impl fmt::Display for MeritKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::MinMui => "min_mui",
            Self::MaxSumRate => "max_sum_rate",
        })
    }
}

/// Gradient of the total interference `1^T M p`: the column sums of `M`.
pub fn grad_min_mui(pn: &PrecodedNetwork) -> Vec<f64> {
    pn.col_sums()
}

/// Value of the total normalized interference `1^T M p`.
pub fn min_mui_value(pn: &PrecodedNetwork, p: &[f64]) -> Result<f64> {
    Ok(pn.interference(p)?.iter().sum())
}

/// Pricing gradient: entry `(q, i)` is the derivative of
/// `-sum_{r != q} R_r` with respect to `p_q^i`.
pub fn grad_max_sr(pn: &PrecodedNetwork, p: &[f64]) -> Result<Vec<f64>> {
    let c = pn.normalized_interference(p)?;
    let mut weights = vec![0.0; p.len()];
    for (i, w) in weights.iter_mut().enumerate() {
        if !c[i].is_finite() {
            continue;
        }
        if !(c[i] > 0.0) {
            return Err(Error::InvalidArgument(format!("nonpositive interference at dimension {i}")));
        }
        *w = p[i] / (c[i] * (c[i] + p[i]));
    }
    pn.interference_transpose(&weights)
}

/// `sum_{r != q} R_r` in nats.
pub fn others_rate(pn: &PrecodedNetwork, p: &[f64], q: usize) -> Result<f64> {
    let rates = crate::game::user_rates(pn, p)?;
    Ok(rates.iter().enumerate().filter(|(r, _)| *r != q).map(|(_, x)| x).sum())
}

/// A merit function with value and gradient evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct MeritFunction {
    pub kind: MeritKind,
    cached_grad: Option<Vec<f64>>,
}

impl MeritFunction {
    pub fn new(kind: MeritKind, pn: &PrecodedNetwork) -> Self {
        let cached_grad = match kind {
            MeritKind::MinMui => Some(grad_min_mui(pn)),
            MeritKind::None => Some(vec![0.0; pn.dim()]),
            MeritKind::MaxSumRate => None,
        };
        Self { kind, cached_grad }
    }

    /// `phi(p)`: total interference, minus the sum-rate in nats, or zero.
    pub fn value(&self, pn: &PrecodedNetwork, p: &[f64]) -> Result<f64> {
        match self.kind {
            MeritKind::None => Ok(0.0),
            MeritKind::MinMui => min_mui_value(pn, p),
            MeritKind::MaxSumRate => Ok(-crate::game::user_rates(pn, p)?.iter().sum::<f64>()),
        }
    }

    pub fn gradient(&self, pn: &PrecodedNetwork, p: &[f64]) -> Result<Vec<f64>> {
        match &self.cached_grad {
            Some(g) => Ok(g.clone()),
            None => grad_max_sr(pn, p),
        }
    }

    /// Whether the gradient does not depend on `p`.
    pub fn is_constant(&self) -> bool {
        self.cached_grad.is_some()
    }

    /// Lipschitz bound used to size `tau`. For the linear interference merit
    /// this is the gradient's max-norm; for the pricing merit it is twice the
    /// largest gradient difference quotient over `pairs` random feasible pairs.
    pub fn lipschitz_bound(&self, pn: &PrecodedNetwork, pairs: usize, seed: u64) -> Result<f64> {
        match self.kind {
            MeritKind::None => Ok(0.0),
            MeritKind::MinMui => Ok(max_abs(&grad_min_mui(pn))),
            MeritKind::MaxSumRate => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut best: f64 = 0.0;
                for _ in 0..pairs {
                    let a = random_feasible(pn, &mut rng);
                    let b = random_feasible(pn, &mut rng);
                    let ga = grad_max_sr(pn, &a)?;
                    let gb = grad_max_sr(pn, &b)?;
                    let num = ga.iter().zip(&gb).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
                    let den = a.iter().zip(&b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
                    if den > 0.0 {
                        best = best.max(num / den);
                    }
                }
                Ok(2.0 * best)
            }
        }
    }
}

/// Random feasible profile: each user spends a random fraction of its budget
/// (the full budget half of the time) spread by exponential weights over its
/// usable dimensions, scaled down if a cap would be exceeded.
pub fn random_feasible(pn: &PrecodedNetwork, rng: &mut impl Rng) -> Vec<f64> {
    let mut p = vec![0.0; pn.dim()];
    for q in 0..pn.users() {
        let range = pn.user_range(q);
        let total = if rng.random_bool(0.5) { pn.budget(q) } else { pn.budget(q) * rng.random::<f64>() };
        let weights: Vec<f64> = range
            .clone()
            .map(|i| if pn.is_usable(i) { -(1.0 - rng.random::<f64>()).ln() } else { 0.0 })
            .collect();
        let sum: f64 = weights.iter().sum();
        let mut block: Vec<f64> = weights.iter().map(|w| total * w / sum).collect();
        if let Some(caps) = pn.caps(q) {
            let worst = block.iter().zip(caps).map(|(x, c)| x / c).fold(0.0, f64::max);
            if worst > 1.0 {
                block.iter_mut().for_each(|x| *x /= worst);
            }
        }
        p[range].copy_from_slice(&block);
    }
    p
}

/// Rule for the merit weights `eps^(n)`, `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsRule {
    /// `1 / (1 + alpha n)`.
    Harmonic(f64),
    /// `eps^(n) = eps^(n-1) (1 - e eps^(n-1))` from `eps^(0) = start`.
    Recursive { e: f64, start: f64 },
    Zero,
}

impl EpsRule {
    /// The first `len` terms `eps^(1), ..., eps^(len)`.
    pub fn terms(&self, len: usize) -> Vec<f64> {
        match *self {
            Self::Harmonic(alpha) => (1..=len).map(|n| 1.0 / (1.0 + alpha * n as f64)).collect(),
            Self::Recursive { e, start } => {
                let mut eps = start;
                (0..len)
                    .map(|_| {
                        eps *= 1.0 - e * eps;
                        eps
                    })
                    .collect()
            }
            Self::Zero => vec![0.0; len],
        }
    }

    pub fn first(&self) -> f64 {
        self.terms(1)[0]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Harmonic(alpha) if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidArgument(format!("harmonic rate must be positive, got {alpha}")))
            }
            Self::Recursive { e, start } if !(e > 0.0 && e < 1.0 && start > 0.0 && start * e < 1.0) => Err(
                Error::InvalidArgument(format!("recursive rule needs e in (0,1) and 0 < start < 1/e, got e={e}, start={start}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Rule for the inexactness tolerances `delta_n`, `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// `ratio^n` with `ratio` in (0, 1).
    Geometric(f64),
    /// Exact inner solves.
    Zero,
}

impl DeltaRule {
    pub fn term(&self, n: usize) -> f64 {
        match *self {
            Self::Geometric(ratio) => ratio.powi(n as i32),
            Self::Zero => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Geometric(r) if !(r > 0.0 && r < 1.0) => {
                Err(Error::InvalidArgument(format!("delta ratio must lie in (0, 1), got {r}")))
            }
            _ => Ok(()),
        }
    }
}

/// The pair of sequences driving the controlled and inexact loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSpec {
    pub eps: EpsRule,
    pub delta: DeltaRule,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self { eps: EpsRule::Harmonic(10.0), delta: DeltaRule::Geometric(0.95) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauPolicy {
    /// Smallest admissible value plus a margin.
    Auto { safety: f64 },
    Fixed(f64),
}

/// Configuration of the controlled and inexact loops.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub merit: MeritKind,
    pub eps: EpsRule,
    /// `Zero` gives exact inner solves.
    pub delta: DeltaRule,
    pub tau: TauPolicy,
    /// Lipschitz bound of the merit; estimated when absent.
    pub lipschitz: Option<f64>,
    pub outer_it_max: usize,
    pub inner_it_max: usize,
    /// Normalized inner change that ends an exact inner solve.
    pub inner_tol: f64,
    /// Normalized outer change that ends the run.
    pub tol: f64,
    /// Compare `(tau + 1)` times the outer change against `tol`. Successive
    /// proximal iterates differ by roughly the game residual over `tau`, so
    /// the unscaled test stops far from equilibrium when `tau` is large.
    pub scale_tol_by_tau: bool,
    pub initial: Option<PowerProfile>,
    pub record_powers: bool,
    pub seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            merit: MeritKind::MinMui,
            eps: EpsRule::Harmonic(10.0),
            delta: DeltaRule::Zero,
            tau: TauPolicy::Auto { safety: TAU_SAFETY },
            lipschitz: None,
            outer_it_max: 500,
            inner_it_max: 2_000,
            inner_tol: 1e-7,
            tol: TERMINATION_TOL,
            scale_tol_by_tau: true,
            initial: None,
            record_powers: true,
            seed: 0,
        }
    }
}

impl ControlConfig {
    /// Regularized game without a merit.
    pub fn regularized() -> Self {
        Self { merit: MeritKind::None, eps: EpsRule::Zero, ..Self::default() }
    }

    /// Resolves `tau` and the Lipschitz bound for `pn`, checking the bound.
    pub fn resolve(&self, pn: &PrecodedNetwork) -> Result<ResolvedControl> {
        self.eps.validate()?;
        self.delta.validate()?;
        let merit = MeritFunction::new(self.merit, pn);
        let lipschitz = match self.lipschitz {
            Some(l) if l >= 0.0 => l,
            Some(l) => return Err(Error::InvalidArgument(format!("Lipschitz bound must be nonnegative, got {l}"))),
            None => merit.lipschitz_bound(pn, 1_000, self.seed)?,
        };
        let eps_first = if self.merit == MeritKind::None { 0.0 } else { self.eps.first() };
        let floor = tau_min(pn, eps_first, lipschitz);
        let tau = match self.tau {
            TauPolicy::Auto { safety } => floor + safety,
            TauPolicy::Fixed(t) => t,
        };
        if !(tau > 0.0) || tau < floor {
            return Err(Error::TauTooSmall { tau, tau_min: floor });
        }
        Ok(ResolvedControl { tau, tau_min: floor, lipschitz, merit })
    }
}

/// `tau` and merit actually used by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedControl {
    pub tau: f64,
    pub tau_min: f64,
    pub lipschitz: f64,
    pub merit: MeritFunction,
}

/// Merit-controlled loop with exact inner solves (unless `config.delta`
/// is nonzero, in which case this is [`run_inexact`]).
pub fn run_controlled(pn: &PrecodedNetwork, config: &ControlConfig) -> Result<RunTrace> {
    let resolved = config.resolve(pn)?;
    run_outer(pn, config, &resolved)
}

/// Inexact variant: each inner solve may stop once
/// `(tau + 1) ||p - BR(p)||_inf * 2 sum_q P_q <= delta_n`.
pub fn run_inexact(pn: &PrecodedNetwork, config: &ControlConfig) -> Result<RunTrace> {
    run_controlled(pn, config)
}

/// Runs the outer loop with an already resolved `tau` and merit.
pub fn run_outer(pn: &PrecodedNetwork, config: &ControlConfig, resolved: &ResolvedControl) -> Result<RunTrace> {
    let p0 = config.initial.clone().unwrap_or_else(|| PowerProfile::uniform(pn));
    p0.check_feasible(pn, CHECK_TOL)?;
    let tau = resolved.tau;
    let merit = &resolved.merit;
    let scale = if config.scale_tol_by_tau { tau + 1.0 } else { 1.0 };
    let diameter = 2.0 * pn.budgets().iter().sum::<f64>();
    let eps_terms = if config.merit == MeritKind::None {
        vec![0.0; config.outer_it_max]
    } else {
        config.eps.terms(config.outer_it_max)
    };

    let mut trace = RunTrace::new();
    trace.record(pn, &p0, true)?;
    trace.merit.push(merit.value(pn, &p0)?);
    let mut anchor = p0.into_inner();
    let mut grad = merit.gradient(pn, &anchor)?;

    for n in 1..=config.outer_it_max {
        let eps = eps_terms[n - 1];
        let delta = config.delta.term(n);
        let mut inner = anchor.clone();
        let mut sweeps = 0;
        while sweeps < config.inner_it_max {
            if !merit.is_constant() {
                grad = merit.gradient(pn, &inner)?;
            }
            let steering = Steering { tau, anchor: &anchor, eps, grad: Some(&grad) };
            let next = jacobi_sweep(pn, &inner, Some(&steering))?;
            sweeps += 1;
            let step = normalized_change(&next, &inner);
            let certificate = (tau + 1.0)
                * next.iter().zip(&inner).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
                * diameter;
            inner = next;
            if step <= config.inner_tol || certificate <= delta {
                break;
            }
        }
        let residual = normalized_change(&inner, &anchor);
        trace.inner_iterations.push(sweeps);
        trace.residuals.push(residual);
        trace.record(pn, &inner, config.record_powers)?;
        trace.merit.push(merit.value(pn, &inner)?);
        trace.iterations_used = n;
        anchor = inner;
        if residual * scale <= config.tol {
            trace.verdict = Verdict::Converged;
            return Ok(trace);
        }
    }
    trace.verdict = Verdict::Exhausted;
    Ok(trace)
}

/// Game VI map `F(p) = -grad R`: entry `(q, i)` is `-1 / (c_q^i + p_q^i)`,
/// zero on padded dimensions.
pub fn vi_map(pn: &PrecodedNetwork, p: &[f64]) -> Result<Vec<f64>> {
    let c = pn.normalized_interference(p)?;
    Ok(c.iter().zip(p).map(|(&c, &x)| if c.is_finite() { -1.0 / (c + x) } else { 0.0 }).collect())
}

/// Sampled VI gap `min_y (y - p)^T F(p)` over `samples` random feasible `y`.
/// Nonnegative (up to rounding) exactly at a Nash equilibrium.
pub fn vi_residual(pn: &PrecodedNetwork, p: &[f64], samples: usize, seed: u64) -> Result<f64> {
    let f = vi_map(pn, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let y = random_feasible(pn, &mut rng);
        let gap: f64 = y.iter().zip(p).zip(&f).map(|((y, x), f)| (y - x) * f).sum();
        worst = worst.min(gap);
    }
    Ok(worst)
}
