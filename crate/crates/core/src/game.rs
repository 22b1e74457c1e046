//! The non-cooperative power-control game: iterative water-filling under
//! Jacobi, Gauss-Seidel and asynchronous update schedules.
//!
//! Iterations are numbered from 1; `p^(0)` is the initial profile. When
//! user `q` updates at iteration `n` it water-fills against interference
//! computed from the profile of user `r` at iteration `theta_r^q(n)`, with
//! `n - 1 - D <= theta_r^q(n) <= n - 1` for a delay bound `D`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::precoding::PrecodedNetwork;
use crate::waterfill::{max_abs, rate, waterfill_with, PowerProfile, Proximal, TERMINATION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Jacobi,
    GaussSeidel,
    Asynchronous,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jacobi => "jacobi",
            Self::GaussSeidel => "gauss_seidel",
            Self::Asynchronous => "asynchronous",
        })
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Self::Jacobi),
            "gauss_seidel" | "gauss-seidel" => Ok(Self::GaussSeidel),
            "asynchronous" | "async" => Ok(Self::Asynchronous),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Who updates at one iteration and which past iterates they see.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub updates: Vec<bool>,
    /// `seen[q][r]`: iteration whose power of user `r` is known to user `q`.
    pub seen: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSchedule {
    kind: ScheduleKind,
    users: usize,
    max_delay: usize,
    steps: Vec<ScheduleStep>,
}

/// Builds an update schedule covering iterations `1..=it_max`.
///
/// Jacobi: everyone updates with fresh information. Gauss-Seidel: user
/// `(n - 1) mod Q` updates at iteration `n`. Asynchronous: each user updates
/// with probability 1/2 (at least one user per iteration) and sees the
/// others' powers with a delay drawn uniformly from `0..=max_delay`.
pub fn make_schedule(
    kind: ScheduleKind,
    users: usize,
    it_max: usize,
    seed: u64,
    max_delay: usize,
) -> UpdateSchedule {
    let fresh = |n: usize| vec![vec![n - 1; users]; users];
    let steps = match kind {
        ScheduleKind::Jacobi => (1..=it_max)
            .map(|n| ScheduleStep { updates: vec![true; users], seen: fresh(n) })
            .collect(),
        ScheduleKind::GaussSeidel => (1..=it_max)
            .map(|n| ScheduleStep {
                updates: (0..users).map(|q| q == (n - 1) % users).collect(),
                seen: fresh(n),
            })
            .collect(),
        ScheduleKind::Asynchronous => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (1..=it_max)
                .map(|n| {
                    let mut updates: Vec<bool> = (0..users).map(|_| rng.random_bool(0.5)).collect();
                    if !updates.iter().any(|&u| u) {
                        updates[rng.random_range(0..users)] = true;
                    }
                    let oldest = (n - 1).saturating_sub(max_delay);
                    let seen = (0..users)
                        .map(|q| {
                            (0..users)
                                .map(|r| if r == q { n - 1 } else { rng.random_range(oldest..=n - 1) })
                                .collect()
                        })
                        .collect();
                    ScheduleStep { updates, seen }
                })
                .collect()
        }
    };
    let max_delay = if kind == ScheduleKind::Asynchronous { max_delay } else { 0 };
    UpdateSchedule { kind, users, max_delay, steps }
}

impl UpdateSchedule {
    /// Schedule from explicit steps; step `i` is iteration `i + 1`.
    pub fn from_steps(kind: ScheduleKind, users: usize, max_delay: usize, steps: Vec<ScheduleStep>) -> Result<Self> {
        let s = Self { kind, users, max_delay, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step of iteration `n >= 1`.
    pub fn step(&self, n: usize) -> &ScheduleStep {
        &self.steps[n - 1]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            if step.updates.len() != self.users || step.seen.len() != self.users {
                return Err(Error::Schedule(format!("iteration {n}: expected {} users", self.users)));
            }
            for (q, row) in step.seen.iter().enumerate() {
                if row.len() != self.users {
                    return Err(Error::Schedule(format!("iteration {n}: delay vector of user {q} has wrong length")));
                }
                if row[q] != n - 1 {
                    return Err(Error::Schedule(format!("iteration {n}: user {q} must see its own latest power")));
                }
                for (r, &t) in row.iter().enumerate() {
                    if t > n - 1 {
                        return Err(Error::Schedule(format!(
                            "iteration {n}: user {q} sees iteration {t} of user {r} from the future"
                        )));
                    }
                    if n - 1 - t > self.max_delay {
                        return Err(Error::Schedule(format!(
                            "iteration {n}: delay {} exceeds the bound {}",
                            n - 1 - t,
                            self.max_delay
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Termination and recording options of a game run.
#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    pub it_max: usize,
    /// Threshold on the normalized successive difference.
    pub tol: f64,
    /// `p^(0)`; the uniform split over usable dimensions when absent.
    pub initial: Option<PowerProfile>,
    /// Consecutive confirmations required to declare an oscillation.
    pub oscillation_window: usize,
    /// Largest oscillation period searched for.
    pub max_period: usize,
    /// Keep every iterate in the trace (the last two are always kept).
    pub record_powers: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            it_max: 100,
            tol: TERMINATION_TOL,
            initial: None,
            oscillation_window: 5,
            max_period: 4,
            record_powers: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converged,
    Oscillating(usize),
    Exhausted,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Converged => f.write_str("converged"),
            Self::Oscillating(k) => write!(f, "oscillating({k})"),
            Self::Exhausted => f.write_str("exhausted"),
        }
    }
}

/// Record of one run. Entry `n` of `powers`, `rates`, `sum_rates` and
/// `merit` describes iterate `p^(n)` (entry 0 is the initial profile);
/// `residuals[n - 1]` is the normalized change at iteration `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub powers: Vec<PowerProfile>,
    /// Per-user rates in nats.
    pub rates: Vec<Vec<f64>>,
    /// Sum-rate in bits per channel use.
    pub sum_rates: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Merit value per iterate (controlled runs only).
    pub merit: Vec<f64>,
    /// Inner sweeps used per outer iteration (controlled runs only).
    pub inner_iterations: Vec<usize>,
    pub verdict: Verdict,
    pub iterations_used: usize,
}

impl RunTrace {
    pub(crate) fn new() -> Self {
        Self {
            powers: Vec::new(),
            rates: Vec::new(),
            sum_rates: Vec::new(),
            residuals: Vec::new(),
            merit: Vec::new(),
            inner_iterations: Vec::new(),
            verdict: Verdict::Exhausted,
            iterations_used: 0,
        }
    }

    pub fn final_powers(&self) -> &PowerProfile {
        self.powers.last().expect("trace holds at least the initial profile")
    }

    pub fn final_sum_rate(&self) -> f64 {
        *self.sum_rates.last().expect("trace holds at least the initial profile")
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.inner_iterations.iter().sum()
    }

    pub fn converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }

    pub(crate) fn record(&mut self, pn: &PrecodedNetwork, p: &[f64], keep: bool) -> Result<()> {
        let rates = user_rates(pn, p)?;
        self.sum_rates.push(rates.iter().sum::<f64>() / std::f64::consts::LN_2);
        self.rates.push(rates);
        if !keep && self.powers.len() >= 2 {
            self.powers.remove(0);
        }
        self.powers.push(PowerProfile::new(p.to_vec()));
        Ok(())
    }
}

/// Per-user rates `R_q` in nats.
pub fn user_rates(pn: &PrecodedNetwork, p: &[f64]) -> Result<Vec<f64>> {
    let c = pn.normalized_interference(p)?;
    Ok((0..pn.users())
        .map(|q| {
            let r = pn.user_range(q);
            rate(&c[r.clone()], &p[r])
        })
        .collect())
}

/// Sum of all users' rates in bits per channel use.
pub fn sum_rate(pn: &PrecodedNetwork, p: &[f64]) -> Result<f64> {
    Ok(user_rates(pn, p)?.iter().sum::<f64>() / std::f64::consts::LN_2)
}

/// `||a - b||_inf / ||b||_inf`, falling back to the absolute change when `b = 0`.
pub fn normalized_change(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = max_abs(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Regularization and merit terms applied to each user's best response.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Steering<'a> {
    pub tau: f64,
    pub anchor: &'a [f64],
    pub eps: f64,
    pub grad: Option<&'a [f64]>,
}

/// Best response of user `q` to normalized interference `c_q`.
pub(crate) fn user_best_response(
    pn: &PrecodedNetwork,
    q: usize,
    c_q: &[f64],
    steering: Option<&Steering<'_>>,
) -> Result<Vec<f64>> {
    let range = pn.user_range(q);
    let prox = steering.map(|s| Proximal {
        tau: s.tau,
        anchor: &s.anchor[range.clone()],
        eps: s.eps,
        grad: s.grad.map(|g| &g[range.clone()]),
    });
    Ok(waterfill_with(c_q, pn.budget(q), prox.as_ref(), pn.caps(q))?.powers)
}

/// One Jacobi sweep: every user best-responds to `p`.
pub(crate) fn jacobi_sweep(pn: &PrecodedNetwork, p: &[f64], steering: Option<&Steering<'_>>) -> Result<Vec<f64>> {
    let c = pn.normalized_interference(p)?;
    let mut next = vec![0.0; p.len()];
    for q in 0..pn.users() {
        let range = pn.user_range(q);
        let br = user_best_response(pn, q, &c[range.clone()], steering)?;
        next[range].copy_from_slice(&br);
    }
    Ok(next)
}

/// `max_q || waterfill(c_q(p), P_q) - p_q ||_inf`; zero exactly at a Nash
/// equilibrium.
pub fn best_response_residual(pn: &PrecodedNetwork, p: &[f64]) -> Result<f64> {
    let br = jacobi_sweep(pn, p, None)?;
    Ok(br.iter().zip(p).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Tracks successive changes to classify a run.
pub(crate) struct ConvergenceMonitor {
    tol: f64,
    window: usize,
    max_period: usize,
    detect_oscillation: bool,
    quiet_since: usize,
    fresh: Vec<bool>,
    recent: Vec<Vec<f64>>,
    streak: Vec<usize>,
}

impl ConvergenceMonitor {
    pub fn new(users: usize, tol: f64, window: usize, max_period: usize, detect_oscillation: bool) -> Self {
        Self {
            tol,
            window,
            max_period,
            detect_oscillation,
            quiet_since: 0,
            fresh: vec![false; users],
            recent: Vec::new(),
            streak: vec![0; max_period + 1],
        }
    }

    pub fn start(&mut self, p0: &[f64]) {
        self.recent.push(p0.to_vec());
    }

    /// Registers iterate `n`. `updated` lists, for each user that updated,
    /// the oldest iteration its information came from.
    pub fn observe(&mut self, n: usize, p: &[f64], residual: f64, updated: &[(usize, usize)]) -> Option<Verdict> {
        if residual > self.tol {
            self.quiet_since = n;
            self.fresh.iter_mut().for_each(|f| *f = false);
        } else {
            for &(q, oldest) in updated {
                if oldest >= self.quiet_since {
                    self.fresh[q] = true;
                }
            }
        }
        self.recent.push(p.to_vec());
        if self.recent.len() > self.max_period + 1 {
            self.recent.remove(0);
        }
        if self.fresh.iter().all(|&f| f) {
            return Some(Verdict::Converged);
        }
        if !self.detect_oscillation {
            return None;
        }
        let len = self.recent.len();
        let mut found = None;
        for k in 2..=self.max_period {
            let matches = len > k && residual > self.tol && normalized_change(p, &self.recent[len - 1 - k]) <= self.tol;
            self.streak[k] = if matches { self.streak[k] + 1 } else { 0 };
            if found.is_none() && self.streak[k] >= self.window {
                found = Some(Verdict::Oscillating(k));
            }
        }
        found
    }
}

/// Iterative water-filling (plain best responses) under `schedule`.
pub fn run_iwfa(pn: &PrecodedNetwork, schedule: &UpdateSchedule, config: &GameConfig) -> Result<RunTrace> {
    schedule.validate()?;
    if schedule.users() != pn.users() {
        return Err(Error::Schedule(format!(
            "schedule has {} users, network has {}",
            schedule.users(),
            pn.users()
        )));
    }
    let p0 = config.initial.clone().unwrap_or_else(|| PowerProfile::uniform(pn));
    p0.check_feasible(pn, crate::waterfill::CHECK_TOL)?;

    let users = pn.users();
    let depth = schedule.max_delay() + 1;
    let mut history: Vec<Vec<f64>> = vec![p0.to_vec()];
    let mut trace = RunTrace::new();
    trace.record(pn, &p0, true)?;
    let mut monitor = ConvergenceMonitor::new(
        users,
        config.tol,
        config.oscillation_window,
        config.max_period,
        schedule.kind() == ScheduleKind::Jacobi,
    );
    monitor.start(&p0);

    let it_max = config.it_max.min(schedule.len());
    for n in 1..=it_max {
        let step = schedule.step(n);
        let current = history.last().expect("history is never empty").clone();
        let mut next = current.clone();
        let all_fresh = step.seen.iter().all(|row| row.iter().all(|&t| t == n - 1));
        let shared_c = if all_fresh { Some(pn.normalized_interference(&current)?) } else { None };
        let mut updated = Vec::new();
        for q in (0..users).filter(|&q| step.updates[q]) {
            let range = pn.user_range(q);
            let c_q = match &shared_c {
                Some(c) => c[range.clone()].to_vec(),
                None => {
                    let mut view = current.clone();
                    for r in (0..users).filter(|&r| r != q) {
                        let t = step.seen[q][r];
                        let past = &history[history.len() - 1 - (n - 1 - t)];
                        let rr = pn.user_range(r);
                        view[rr.clone()].copy_from_slice(&past[rr]);
                    }
                    pn.normalized_interference(&view)?[range.clone()].to_vec()
                }
            };
            next[range].copy_from_slice(&user_best_response(pn, q, &c_q, None)?);
            updated.push((q, *step.seen[q].iter().min().expect("at least one user")));
        }
        let residual = normalized_change(&next, &current);
        trace.residuals.push(residual);
        trace.record(pn, &next, config.record_powers)?;
        trace.iterations_used = n;
        let verdict = monitor.observe(n, &next, residual, &updated);
        history.push(next);
        if history.len() > depth {
            history.remove(0);
        }
        if let Some(v) = verdict {
            trace.verdict = v;
            return Ok(trace);
        }
    }
    trace.verdict = Verdict::Exhausted;
    Ok(trace)
}
