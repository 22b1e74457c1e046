//! Monte Carlo experiments: uniqueness probabilities versus distance,
//! convergence traces, exact versus inexact inner loops and sum-rate sweeps
//! over transmit power and path-loss.
//!
//! Trials run in parallel. Trial `t` draws its channels from a seed derived
//! from `(seed, t)` only, so every grid point sees the same realizations and
//! the output does not depend on the thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, generate_flat, generate_frequency_selective, Topology};
use crate::error::{Error, Result};
use crate::game::{make_schedule, run_iwfa, GameConfig, RunTrace, ScheduleKind, Verdict};
pub use crate::game::sum_rate;
use crate::precoding::{precode, PrecodedNetwork};
use crate::vi::{check_uniqueness, run_controlled, ControlConfig, DeltaRule, EpsRule, MeritKind, TauPolicy, UniquenessReport};
use crate::waterfill::{rate, waterfill_with, CHECK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    UniquenessVsDistance,
    ConvergenceTrace,
    ExactVsInexact,
    SumrateVsPower,
    SumrateVsPathloss,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UniquenessVsDistance => "uniqueness_vs_distance",
            Self::ConvergenceTrace => "convergence_trace",
            Self::ExactVsInexact => "exact_vs_inexact",
            Self::SumrateVsPower => "sumrate_vs_power",
            Self::SumrateVsPathloss => "sumrate_vs_pathloss",
        })
    }
}

/// Power-control algorithms compared by the experiments, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "IWFA")]
    Iwfa,
    #[serde(rename = "RJ")]
    Rj,
    #[serde(rename = "MIN_MUI")]
    MinMui,
    #[serde(rename = "MAX_SR")]
    MaxSr,
    #[serde(rename = "TDMA")]
    Tdma,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Iwfa, Self::Rj, Self::MinMui, Self::MaxSr, Self::Tdma];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Iwfa => "IWFA",
            Self::Rj => "RJ",
            Self::MinMui => "MIN_MUI",
            Self::MaxSr => "MAX_SR",
            Self::Tdma => "TDMA",
        }
    }

    /// Merit steering the controlled loop, if this is a controlled algorithm.
    pub fn merit(&self) -> Option<MeritKind> {
        match self {
            Self::Rj => Some(MeritKind::None),
            Self::MinMui => Some(MeritKind::MinMui),
            Self::MaxSr => Some(MeritKind::MaxSumRate),
            Self::Iwfa | Self::Tdma => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Antenna configuration `NT x NR` shared by all users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AntennaConfig {
    pub tx: usize,
    pub rx: usize,
}

impl fmt::Display for AntennaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.tx, self.rx)
    }
}

impl FromStr for AntennaConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("antenna configuration '{s}' is not of the form NTxNR"));
        let (tx, rx) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let tx: usize = tx.trim().parse().map_err(|_| bad())?;
        let rx: usize = rx.trim().parse().map_err(|_| bad())?;
        if tx == 0 || rx == 0 {
            return Err(bad());
        }
        Ok(Self { tx, rx })
    }
}

impl TryFrom<String> for AntennaConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AntennaConfig> for String {
    fn from(a: AntennaConfig) -> Self {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            trials: 200,
            seed: 1,
            algorithms: vec![Algorithm::Iwfa, Algorithm::Rj, Algorithm::MinMui],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySpec {
    pub users: usize,
    /// The first entry is used by every experiment except the uniqueness
    /// sweep, which runs all of them.
    pub antennas: Vec<AntennaConfig>,
    pub d_qq: f64,
    /// Cross distance for single-geometry experiments.
    pub d_rq: f64,
    /// Cross distances swept by the uniqueness experiment.
    pub d_rq_grid: Vec<f64>,
    pub pathloss_exponent: f64,
    /// `1` gives flat channels.
    pub carriers: usize,
    pub taps: usize,
    pub noise: f64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            users: 4,
            antennas: vec![AntennaConfig { tx: 2, rx: 2 }],
            d_qq: 15.0,
            d_rq: 15.0,
            d_rq_grid: Vec::new(),
            pathloss_exponent: 2.5,
            carriers: 1,
            taps: 1,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSpec {
    /// Per-user budget in dB.
    pub budget_db: f64,
    /// Budgets swept by the power experiment, dB.
    pub grid_db: Vec<f64>,
    /// Per-dimension cap in dB; none when absent.
    pub cap_db: Option<f64>,
    /// `(d_qq / d_rq)^gamma` in dB for the power sweep.
    pub pathloss_ratio_db: f64,
    /// Ratios swept by the path-loss experiment, dB.
    pub pathloss_grid_db: Vec<f64>,
}

impl Default for PowerSpec {
    fn default() -> Self {
        Self { budget_db: 10.0, grid_db: Vec::new(), cap_db: None, pathloss_ratio_db: 10.0, pathloss_grid_db: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSpec {
    pub it_max: usize,
    pub tol: f64,
}

impl Default for GameSpec {
    fn default() -> Self {
        Self { it_max: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsKind {
    #[default]
    Harmonic,
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    /// Fixed `tau`; the smallest admissible value plus `tau_safety` when absent.
    pub tau: Option<f64>,
    pub tau_safety: f64,
    pub eps: EpsKind,
    pub eps_alpha: f64,
    pub eps_e: f64,
    pub eps_start: f64,
    /// Ratio of the geometric inexactness sequence.
    pub delta_ratio: f64,
    /// Merit of the exact-versus-inexact experiment.
    pub merit: MeritKind,
    pub outer_it_max: usize,
    pub inner_it_max: usize,
    pub inner_tol: f64,
    pub tol: f64,
    pub scale_tol_by_tau: bool,
}

impl Default for ControlSpec {
    fn default() -> Self {
        let base = ControlConfig::default();
        Self {
            tau: None,
            tau_safety: crate::vi::TAU_SAFETY,
            eps: EpsKind::Harmonic,
            eps_alpha: 10.0,
            eps_e: 0.5,
            eps_start: 1.0,
            delta_ratio: 0.95,
            merit: MeritKind::MinMui,
            outer_it_max: base.outer_it_max,
            inner_it_max: base.inner_it_max,
            inner_tol: base.inner_tol,
            tol: base.tol,
            scale_tol_by_tau: base.scale_tol_by_tau,
        }
    }
}

impl ControlSpec {
    pub fn eps_rule(&self) -> EpsRule {
        match self.eps {
            EpsKind::Harmonic => EpsRule::Harmonic(self.eps_alpha),
            EpsKind::Recursive => EpsRule::Recursive { e: self.eps_e, start: self.eps_start },
        }
    }

    /// Loop configuration for `merit`, exact unless `inexact`.
    pub fn config(&self, merit: MeritKind, inexact: bool, seed: u64) -> ControlConfig {
        ControlConfig {
            merit,
            eps: if merit == MeritKind::None { EpsRule::Zero } else { self.eps_rule() },
            delta: if inexact { DeltaRule::Geometric(self.delta_ratio) } else { DeltaRule::Zero },
            tau: match self.tau {
                Some(t) => TauPolicy::Fixed(t),
                None => TauPolicy::Auto { safety: self.tau_safety },
            },
            lipschitz: None,
            outer_it_max: self.outer_it_max,
            inner_it_max: self.inner_it_max,
            inner_tol: self.inner_tol,
            tol: self.tol,
            scale_tol_by_tau: self.scale_tol_by_tau,
            initial: None,
            record_powers: false,
            seed,
        }
    }
}

/// Full description of one experiment; mirrors the config file sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub topology: TopologySpec,
    pub power: PowerSpec,
    pub game: GameSpec,
    pub control: ControlSpec,
}

impl ExperimentSpec {
    /// Checks ranges and that the grid required by the experiment is present.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let e = &self.experiment;
        let t = &self.topology;
        if e.trials == 0 {
            return cfg("experiment.trials must be at least 1".into());
        }
        if self.control.outer_it_max == 0 || self.control.inner_it_max == 0 {
            return cfg("control.outer_it_max and control.inner_it_max must be positive".into());
        }
        if t.users == 0 {
            return cfg("topology.users must be at least 1".into());
        }
        if t.antennas.is_empty() {
            return cfg("topology.antennas must list at least one configuration".into());
        }
        if !(t.d_qq > 0.0) || !(t.d_rq > 0.0) || t.d_rq_grid.iter().any(|&d| !(d > 0.0)) {
            return cfg("distances must be positive".into());
        }
        if !(t.pathloss_exponent > 0.0) || !(t.noise > 0.0) {
            return cfg("topology.pathloss_exponent and topology.noise must be positive".into());
        }
        if t.carriers == 0 || t.taps == 0 || (t.carriers > 1 && t.taps > t.carriers) {
            return cfg("need 1 <= topology.taps <= topology.carriers".into());
        }
        if !self.game.tol.is_finite() || self.game.tol <= 0.0 || self.game.it_max == 0 {
            return cfg("game.it_max and game.tol must be positive".into());
        }
        match e.kind {
            ExperimentKind::UniquenessVsDistance if t.d_rq_grid.is_empty() => {
                return cfg("uniqueness_vs_distance needs a nonempty topology.d_rq_grid".into())
            }
            ExperimentKind::SumrateVsPower if self.power.grid_db.is_empty() => {
                return cfg("sumrate_vs_power needs a nonempty power.grid_db".into())
            }
            ExperimentKind::SumrateVsPathloss if self.power.pathloss_grid_db.is_empty() => {
                return cfg("sumrate_vs_pathloss needs a nonempty power.pathloss_grid_db".into())
            }
            ExperimentKind::SumrateVsPower | ExperimentKind::SumrateVsPathloss | ExperimentKind::ConvergenceTrace
                if e.algorithms.is_empty() =>
            {
                return cfg("experiment.algorithms must not be empty".into())
            }
            _ => {}
        }
        self.control.eps_rule().validate().map_err(|e| Error::Config(format!("control.eps: {e}")))?;
        DeltaRule::Geometric(self.control.delta_ratio)
            .validate()
            .map_err(|e| Error::Config(format!("control.delta_ratio: {e}")))?;
        Ok(())
    }

    fn topology(&self, antennas: AntennaConfig, d_rq: f64) -> Topology {
        let t = &self.topology;
        Topology::symmetric(t.users, antennas.tx, antennas.rx, t.d_qq, d_rq, t.pathloss_exponent)
    }

    /// Cross distance giving `(d_qq / d_rq)^gamma = ratio_db`.
    pub fn d_rq_for_ratio(&self, ratio_db: f64) -> f64 {
        self.topology.d_qq * 10f64.powf(-ratio_db / (10.0 * self.topology.pathloss_exponent))
    }

    /// Precoded realization with the given geometry, budget and channel seed.
    pub fn network(&self, antennas: AntennaConfig, d_rq: f64, budget_db: f64, channel_seed: u64) -> Result<PrecodedNetwork> {
        let t = &self.topology;
        let topo = self.topology(antennas, d_rq);
        let inst = if t.carriers == 1 {
            generate_flat(&topo, t.noise, channel_seed)?
        } else {
            generate_frequency_selective(&topo, t.taps, t.carriers, t.noise, channel_seed)?
        };
        let mut inst = inst.with_uniform_budget(db_to_linear(budget_db))?;
        if let Some(cap) = self.power.cap_db {
            inst = inst.with_uniform_cap(db_to_linear(cap))?;
        }
        precode(&inst)
    }

    fn game_config(&self, record_powers: bool) -> GameConfig {
        GameConfig { it_max: self.game.it_max, tol: self.game.tol, record_powers, ..GameConfig::default() }
    }
}

/// Channel seed of trial `trial`: a SplitMix64 mix of the base seed and the
/// trial index.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed ^ (trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Interference-free time sharing: each user transmits alone for `1/Q` of
/// the time with its full budget. Bits per channel use.
pub fn tdma_baseline(pn: &PrecodedNetwork) -> Result<f64> {
    let mut total = 0.0;
    for q in 0..pn.users() {
        let c = &pn.noise_norm()[pn.user_range(q)];
        let wf = waterfill_with(c, pn.budget(q), None, pn.caps(q))?;
        total += rate(c, &wf.powers);
    }
    Ok(total / (pn.users() as f64 * std::f64::consts::LN_2))
}

/// Runs one iterative algorithm on `pn`.
pub fn run_algorithm(spec: &ExperimentSpec, pn: &PrecodedNetwork, alg: Algorithm, seed: u64, record_powers: bool) -> Result<RunTrace> {
    match alg.merit() {
        None if alg == Algorithm::Iwfa => {
            let schedule = make_schedule(ScheduleKind::Jacobi, pn.users(), spec.game.it_max, seed, 0);
            run_iwfa(pn, &schedule, &spec.game_config(record_powers))
        }
        None => Err(Error::InvalidArgument(format!("{alg} is not an iterative algorithm"))),
        Some(merit) => {
            let config = ControlConfig { record_powers, ..spec.control.config(merit, false, seed) };
            run_controlled(pn, &config)
        }
    }
}

/// Final sum-rate of `alg` on `pn` in bits, and whether it converged.
fn final_sum_rate(spec: &ExperimentSpec, pn: &PrecodedNetwork, alg: Algorithm, seed: u64, spot_check: bool) -> Result<(f64, bool)> {
    if alg == Algorithm::Tdma {
        return Ok((tdma_baseline(pn)?, true));
    }
    let trace = run_algorithm(spec, pn, alg, seed, spot_check)?;
    if spot_check {
        for p in &trace.powers {
            p.check_feasible(pn, CHECK_TOL)?;
        }
    }
    Ok((trace.final_sum_rate(), trace.converged()))
}

/// Mean and standard error (sample deviation over `sqrt(n)`).
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessRow {
    pub d_rq: f64,
    pub config: String,
    pub n: usize,
    /// Fraction of trials where the row test holds and the game converges.
    pub p_row: f64,
    pub p_col: f64,
    pub p_rho: f64,
    pub p_converged: f64,
    /// Fraction where either the row or the column test holds and the game
    /// converges.
    pub p_row_or_col: f64,
}

/// Per-trial uniqueness diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessTrialRow {
    pub seed: u64,
    pub d_rq: f64,
    pub row_margin: f64,
    pub col_margin: f64,
    pub rho: f64,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumRateRow {
    pub grid_value: f64,
    pub algorithm: Algorithm,
    pub mean_sumrate: f64,
    pub std_error: f64,
    pub n: usize,
    /// Fraction of trials that met the termination test.
    pub converged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub algorithm: Algorithm,
    pub sumrate: f64,
    pub residual: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InexactRow {
    pub trial: usize,
    pub seed: u64,
    pub mode: String,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_merit: f64,
    pub final_sumrate: f64,
    pub verdict: String,
}

/// Output of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum ResultTable {
    Uniqueness { rows: Vec<UniquenessRow>, trials: Vec<UniquenessTrialRow> },
    SumRate(Vec<SumRateRow>),
    Trace(Vec<TraceRow>),
    Inexact(Vec<InexactRow>),
}

fn write_rows<W: Write, R: Serialize>(w: W, rows: &[R]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

impl ResultTable {
    /// Writes the summary table as CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Self::Uniqueness { rows, .. } => write_rows(w, rows),
            Self::SumRate(rows) => write_rows(w, rows),
            Self::Trace(rows) => write_rows(w, rows),
            Self::Inexact(rows) => write_rows(w, rows),
        }
    }

    /// Whether the table carries per-trial uniqueness reports.
    pub fn has_trials(&self) -> bool {
        matches!(self, Self::Uniqueness { .. })
    }

    /// Per-trial uniqueness reports `(seed, d_rq, row_margin, col_margin,
    /// rho, verdict)`; writes nothing for other tables.
    pub fn write_trials_csv<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Self::Uniqueness { trials, .. } => write_rows(w, trials),
            _ => Ok(()),
        }
    }
}

/// Per-iteration, per-dimension power trace of one run:
/// `(iteration, user, dim, power, rate, residual, verdict)`.
pub fn write_power_trace<W: Write>(w: W, pn: &PrecodedNetwork, trace: &RunTrace) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        iteration: usize,
        user: usize,
        dim: usize,
        power: f64,
        rate: f64,
        residual: Option<f64>,
        verdict: String,
    }
    let offset = trace.iterations_used + 1 - trace.powers.len();
    let verdict = trace.verdict.to_string();
    let mut rows = Vec::new();
    for (k, p) in trace.powers.iter().enumerate() {
        let iteration = k + offset;
        let residual = iteration.checked_sub(1).and_then(|i| trace.residuals.get(i).copied());
        for q in 0..pn.users() {
            for (dim, &power) in p.block(pn, q).iter().enumerate() {
                rows.push(Row { iteration, user: q, dim, power, rate: trace.rates[iteration][q], residual, verdict: verdict.clone() });
            }
        }
    }
    write_rows(w, &rows)
}

/// Probability curves of the uniqueness tests and of empirical convergence
/// of Jacobi IWFA, per antenna configuration and cross distance.
pub fn exp_uniqueness(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let trials = spec.experiment.trials;
    let mut rows = Vec::new();
    let mut trial_rows = Vec::new();
    for &antennas in &spec.topology.antennas {
        for &d_rq in &spec.topology.d_rq_grid {
            let outcomes: Vec<(u64, UniquenessReport, bool)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(spec.experiment.seed, t);
                    let pn = spec.network(antennas, d_rq, spec.power.budget_db, seed)?;
                    let report = check_uniqueness(&pn);
                    let converged = run_algorithm(spec, &pn, Algorithm::Iwfa, seed, false)?.converged();
                    Ok((seed, report, converged))
                })
                .collect::<Result<_>>()?;
            let frac = |f: &dyn Fn(&UniquenessReport, bool) -> bool| {
                outcomes.iter().filter(|(_, r, c)| f(r, *c)).count() as f64 / trials as f64
            };
            rows.push(UniquenessRow {
                d_rq,
                config: antennas.to_string(),
                n: trials,
                p_row: frac(&|r, c| r.row_condition && c),
                p_col: frac(&|r, c| r.col_condition && c),
                p_rho: frac(&|r, c| r.rho_condition() && c),
                p_converged: frac(&|_, c| c),
                p_row_or_col: frac(&|r, c| (r.row_condition || r.col_condition) && c),
            });
            trial_rows.extend(outcomes.iter().map(|(seed, r, _)| UniquenessTrialRow {
                seed: *seed,
                d_rq,
                row_margin: r.row_margin,
                col_margin: r.col_margin,
                rho: r.spectral_radius,
                verdict: r.verdict.to_string(),
            }));
        }
    }
    Ok(ResultTable::Uniqueness { rows, trials: trial_rows })
}

/// Runs of every iterative algorithm on a single realization.
#[derive(Debug, Clone)]
pub struct TraceExperiment {
    pub network: PrecodedNetwork,
    pub runs: Vec<(Algorithm, RunTrace)>,
}

impl TraceExperiment {
    /// One row per algorithm and iterate.
    pub fn table(&self) -> ResultTable {
        let mut rows = Vec::new();
        for (alg, trace) in &self.runs {
            let verdict = trace.verdict.to_string();
            for (iter, &sumrate) in trace.sum_rates.iter().enumerate() {
                let residual = iter.checked_sub(1).and_then(|i| trace.residuals.get(i).copied());
                rows.push(TraceRow { iter, algorithm: *alg, sumrate, residual, verdict: verdict.clone() });
            }
        }
        ResultTable::Trace(rows)
    }

    pub fn run(&self, alg: Algorithm) -> Option<&RunTrace> {
        self.runs.iter().find(|(a, _)| *a == alg).map(|(_, t)| t)
    }
}

/// Sum-rate per iteration of each configured algorithm on the realization
/// drawn from `experiment.seed` (TDMA is not iterative and is skipped).
pub fn exp_convergence_trace(spec: &ExperimentSpec) -> Result<TraceExperiment> {
    spec.validate()?;
    let seed = spec.experiment.seed;
    let network = spec.network(spec.topology.antennas[0], spec.topology.d_rq, spec.power.budget_db, seed)?;
    let mut algorithms: Vec<Algorithm> = spec.experiment.algorithms.iter().copied().filter(|&a| a != Algorithm::Tdma).collect();
    algorithms.sort();
    algorithms.dedup();
    let runs = algorithms
        .par_iter()
        .map(|&alg| Ok((alg, run_algorithm(spec, &network, alg, seed, true)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceExperiment { network, runs })
}

/// Exact and inexact inner loops on the same realizations; two rows per trial.
pub fn exp_exact_vs_inexact(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let merit = spec.control.merit;
    let per_trial: Vec<[InexactRow; 2]> = (0..spec.experiment.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(spec.experiment.seed, t);
            let pn = spec.network(spec.topology.antennas[0], spec.topology.d_rq, spec.power.budget_db, seed)?;
            let row = |inexact: bool| -> Result<InexactRow> {
                let trace = run_controlled(&pn, &spec.control.config(merit, inexact, seed))?;
                Ok(InexactRow {
                    trial: t,
                    seed,
                    mode: if inexact { "inexact" } else { "exact" }.into(),
                    outer_iterations: trace.iterations_used,
                    inner_iterations: trace.total_inner_iterations(),
                    final_merit: *trace.merit.last().expect("merit recorded per iterate"),
                    final_sumrate: trace.final_sum_rate(),
                    verdict: trace.verdict.to_string(),
                })
            };
            Ok([row(false)?, row(true)?])
        })
        .collect::<Result<_>>()?;
    Ok(ResultTable::Inexact(per_trial.into_iter().flatten().collect()))
}

fn sumrate_sweep(spec: &ExperimentSpec, grid: &[f64], point: impl Fn(f64) -> (f64, f64) + Sync) -> Result<ResultTable> {
    spec.validate()?;
    let mut algorithms = spec.experiment.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let trials = spec.experiment.trials;
    let mut rows = Vec::new();
    for &g in grid {
        let (d_rq, budget_db) = point(g);
        let results: Vec<Vec<(f64, bool)>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(spec.experiment.seed, t);
                let pn = spec.network(spec.topology.antennas[0], d_rq, budget_db, seed)?;
                let spot_check = t % 100 == 0;
                algorithms.iter().map(|&alg| final_sum_rate(spec, &pn, alg, seed, spot_check)).collect()
            })
            .collect::<Result<_>>()?;
        for (a, &alg) in algorithms.iter().enumerate() {
            let values: Vec<f64> = results.iter().map(|r| r[a].0).collect();
            let (mean_sumrate, std_error) = mean_and_std_error(&values);
            let converged = results.iter().filter(|r| r[a].1).count() as f64 / trials as f64;
            rows.push(SumRateRow { grid_value: g, algorithm: alg, mean_sumrate, std_error, n: trials, converged });
        }
    }
    Ok(ResultTable::SumRate(rows))
}

/// Mean sum-rate versus per-user budget (dB) at a fixed path-loss ratio.
pub fn exp_sumrate_vs_power(spec: &ExperimentSpec) -> Result<ResultTable> {
    let d_rq = spec.d_rq_for_ratio(spec.power.pathloss_ratio_db);
    sumrate_sweep(spec, &spec.power.grid_db, |p_db| (d_rq, p_db))
}

/// Mean sum-rate versus `(d_qq / d_rq)^gamma` (dB) at a fixed budget.
pub fn exp_sumrate_vs_pathloss(spec: &ExperimentSpec) -> Result<ResultTable> {
    sumrate_sweep(spec, &spec.power.pathloss_grid_db, |ratio_db| (spec.d_rq_for_ratio(ratio_db), spec.power.budget_db))
}

/// Dispatches on `experiment.kind`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.experiment.kind {
        ExperimentKind::UniquenessVsDistance => exp_uniqueness(spec),
        ExperimentKind::ConvergenceTrace => Ok(exp_convergence_trace(spec)?.table()),
        ExperimentKind::ExactVsInexact => exp_exact_vs_inexact(spec),
        ExperimentKind::SumrateVsPower => exp_sumrate_vs_power(spec),
        ExperimentKind::SumrateVsPathloss => exp_sumrate_vs_pathloss(spec),
    }
}

/// Whether a verdict counts as convergence.
pub fn is_converged(v: Verdict) -> bool {
    v == Verdict::Converged
}
