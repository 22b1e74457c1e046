use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use powergame::channel::{generate_flat, generate_frequency_selective, Topology};
use powergame::experiments::{
    exp_sumrate_vs_power, exp_uniqueness, trial_seed, Algorithm, AntennaConfig, ExperimentKind, ExperimentSpec,
    ResultTable,
};
use powergame::game::{best_response_residual, make_schedule, run_iwfa, sum_rate, GameConfig, ScheduleKind};
use powergame::precoding::{precode, PrecodedNetwork};
use powergame::vi::{
    check_uniqueness, grad_max_sr, grad_min_mui, min_mui_value, others_rate, perron_root, random_feasible,
    run_controlled, vi_residual, ControlConfig, DeltaRule, EpsRule,
};
use powergame::waterfill::{waterfill, waterfill_capped, waterfill_regularized, CHECK_TOL};

fn levels(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..20.0, 1..=max_len)
}

fn network(users: usize, ant: usize, carriers: usize, d_rq: f64, seed: u64) -> PrecodedNetwork {
    let topo = Topology::symmetric(users, ant, ant, 1.0, d_rq, 2.5);
    let inst = if carriers == 1 {
        generate_flat(&topo, 1.0, seed).unwrap()
    } else {
        generate_frequency_selective(&topo, 2, carriers, 1.0, seed).unwrap()
    };
    precode(&inst.with_uniform_budget(10.0).unwrap()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #[test]
    fn waterfill_satisfies_kkt(c in levels(8), budget in 0.01f64..50.0) {
        let wf = waterfill(&c, budget).unwrap();
        let total: f64 = wf.powers.iter().sum();
        prop_assert!((total - budget).abs() <= 1e-9 * budget.max(1.0));
        for (&p, &ci) in wf.powers.iter().zip(&c) {
            prop_assert!(p >= 0.0);
            if p > 0.0 {
                prop_assert!((ci + p - wf.level).abs() <= 1e-9 * wf.level.max(1.0));
            } else {
                prop_assert!(ci >= wf.level - 1e-9 * wf.level.max(1.0));
            }
        }
    }

    #[test]
    fn waterfill_is_monotone_in_budget(c in levels(8), budget in 0.01f64..20.0, extra in 0.0f64..20.0) {
        let small = waterfill(&c, budget).unwrap();
        let large = waterfill(&c, budget + extra).unwrap();
        prop_assert!(large.level >= small.level - 1e-12);
        for (a, b) in small.powers.iter().zip(&large.powers) {
            prop_assert!(b >= &(a - 1e-9));
        }
    }

    #[test]
    fn waterfill_is_homogeneous_and_shift_invariant(c in levels(8), budget in 0.01f64..20.0, s in 0.1f64..10.0, t in 0.0f64..5.0) {
        let base = waterfill(&c, budget).unwrap();
        let scaled: Vec<f64> = c.iter().map(|x| s * x).collect();
        let scaled = waterfill(&scaled, s * budget).unwrap();
        for (a, b) in base.powers.iter().zip(&scaled.powers) {
            prop_assert!((s * a - b).abs() <= 1e-9 * (s * budget).max(1.0));
        }
        let shifted: Vec<f64> = c.iter().map(|x| x + t).collect();
        let shifted = waterfill(&shifted, budget).unwrap();
        prop_assert!(max_diff(&base.powers, &shifted.powers) <= 1e-9 * budget.max(1.0));
    }

    #[test]
    fn caps_are_respected(c in levels(8), frac in 0.05f64..0.95, cap_seed in 0u64..1000) {
        let n = c.len();
        let caps: Vec<f64> = (0..n).map(|i| 0.5 + ((cap_seed + i as u64 * 7) % 11) as f64 / 4.0).collect();
        let budget = frac * caps.iter().sum::<f64>();
        let wf = waterfill_capped(&c, budget, &caps).unwrap();
        prop_assert!((wf.powers.iter().sum::<f64>() - budget).abs() <= 1e-9 * budget.max(1.0));
        for ((&p, &cap), &ci) in wf.powers.iter().zip(&caps).zip(&c) {
            prop_assert!(p >= 0.0 && p <= cap + 1e-12);
            if p > 1e-12 && p < cap - 1e-12 {
                prop_assert!((ci + p - wf.level).abs() <= 1e-8 * wf.level.max(1.0));
            }
        }
    }

    #[test]
    fn regularization_with_zero_tau_is_plain(c in levels(8), budget in 0.01f64..20.0) {
        let prev = vec![budget / c.len() as f64; c.len()];
        let a = waterfill(&c, budget).unwrap();
        let b = waterfill_regularized(&c, budget, 0.0, &prev).unwrap();
        prop_assert!(max_diff(&a.powers, &b.powers) <= 1e-12 * budget.max(1.0));
    }

    #[test]
    fn regularized_fixed_point_is_the_anchor_at_equilibrium(c in levels(6), budget in 0.1f64..20.0, tau in 0.0f64..10.0) {
        // With the anchor at the plain solution the proximal step stays put.
        let plain = waterfill(&c, budget).unwrap();
        let reg = waterfill_regularized(&c, budget, tau, &plain.powers).unwrap();
        prop_assert!(max_diff(&plain.powers, &reg.powers) <= 1e-9 * budget.max(1.0));
    }

    #[test]
    fn perron_root_matches_dense_eigenvalues(n in 1usize..7, entries in prop::collection::vec(0.0f64..2.0, 36)) {
        let a = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
        let (rho, v) = perron_root(&a);
        let oracle = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!((rho - oracle).abs() <= 1e-6 * oracle.max(1.0), "{rho} vs {oracle}");
        prop_assert!(v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn spectral_radius_is_below_both_sum_tests(seed in 0u64..10_000, d_rq in 0.5f64..6.0) {
        let pn = network(3, 2, 2, d_rq, seed);
        let r = check_uniqueness(&pn);
        prop_assert!(r.spectral_radius <= r.row_margin * (1.0 + 1e-9));
        prop_assert!(r.spectral_radius <= r.col_margin * (1.0 + 1e-9));
        if r.row_condition || r.col_condition {
            prop_assert!(r.rho_condition());
        }
    }

    #[test]
    fn row_condition_makes_unit_diagonal_matrix_positive_stable(seed in 0u64..10_000, d_rq in 1.0f64..6.0) {
        let pn = network(3, 2, 1, d_rq, seed);
        if check_uniqueness(&pn).row_condition {
            let m = pn.unit_diagonal_matrix();
            let min_real = m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            prop_assert!(min_real > 0.0);
        }
    }

    #[test]
    fn merit_gradients_match_finite_differences(seed in 0u64..10_000, d_rq in 0.5f64..4.0) {
        let pn = network(3, 2, 2, d_rq, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_feasible(&pn, &mut rng);
        let g_mui = grad_min_mui(&pn);
        let g_sr = grad_max_sr(&pn, &p).unwrap();
        let scale_mui = g_mui.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-12);
        let scale_sr = g_sr.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-12);
        for i in (0..pn.dim()).filter(|&i| pn.is_usable(i)) {
            let h = 1e-5 * p[i].abs().max(1e-2);
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (min_mui_value(&pn, &up).unwrap() - min_mui_value(&pn, &down).unwrap()) / (2.0 * h);
            prop_assert!((fd - g_mui[i]).abs() <= 1e-6 * scale_mui);
            let q = pn.user_of(i);
            let fd = (others_rate(&pn, &down, q).unwrap() - others_rate(&pn, &up, q).unwrap()) / (2.0 * h);
            prop_assert!((fd - g_sr[i]).abs() <= 1e-6 * scale_sr);
        }
    }

    #[test]
    fn harmonic_and_geometric_sequences(alpha in 0.1f64..50.0, r in 0.05f64..0.99) {
        let eps = EpsRule::Harmonic(alpha).terms(2000);
        prop_assert!(eps.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        // Harmonic partial sums grow like ln(n) / alpha; geometric ones are bounded.
        let tail: f64 = eps[1000..].iter().sum();
        prop_assert!((tail - 2f64.ln() / alpha).abs() <= 0.03 * 2f64.ln() / alpha);
        let delta = DeltaRule::Geometric(r);
        let sum: f64 = (1..=5000).map(|n| delta.term(n)).sum();
        prop_assert!(sum <= r / (1.0 - r) + 1e-9);
    }

    #[test]
    fn random_profiles_are_feasible(seed in 0u64..10_000) {
        let pn = network(3, 2, 3, 1.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let p = random_feasible(&pn, &mut rng);
            prop_assert!(powergame::waterfill::PowerProfile::new(p).check_feasible(&pn, CHECK_TOL).is_ok());
        }
    }
}

#[test]
fn iterates_stay_feasible_under_every_schedule() {
    for seed in 0..10 {
        let pn = network(4, 2, 2, 1.0, seed);
        for kind in [ScheduleKind::Jacobi, ScheduleKind::GaussSeidel, ScheduleKind::Asynchronous] {
            let sched = make_schedule(kind, 4, 60, seed, 3);
            let trace = run_iwfa(&pn, &sched, &GameConfig { it_max: 60, record_powers: true, ..GameConfig::default() }).unwrap();
            for p in &trace.powers {
                p.check_feasible(&pn, CHECK_TOL).unwrap();
            }
        }
        let controlled = run_controlled(&pn, &ControlConfig { record_powers: true, ..ControlConfig::default() }).unwrap();
        for p in &controlled.powers {
            p.check_feasible(&pn, CHECK_TOL).unwrap();
        }
    }
}

#[test]
fn tight_equilibria_pass_both_certificates() {
    for seed in 0..10 {
        let pn = network(4, 2, 2, 4.0, seed);
        let sched = make_schedule(ScheduleKind::Jacobi, 4, 5000, 0, 0);
        let trace = run_iwfa(&pn, &sched, &GameConfig { it_max: 5000, tol: 1e-12, ..GameConfig::default() }).unwrap();
        if !trace.converged() {
            continue;
        }
        let p = trace.final_powers();
        assert!(best_response_residual(&pn, p).unwrap() <= 1e-9);
        assert!(vi_residual(&pn, p, 1000, seed).unwrap() >= -1e-9);
        // A point away from equilibrium has a direction of improvement.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = random_feasible(&pn, &mut rng);
        if best_response_residual(&pn, &y).unwrap() > 1e-3 {
            assert!(vi_residual(&pn, &y, 1000, seed).unwrap() < 0.0);
        }
    }
}

#[test]
fn sum_rate_matches_straight_line_evaluation() {
    let pn = network(3, 2, 2, 1.5, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_feasible(&pn, &mut rng);
    // Interference from the block matrices, evaluated entry by entry.
    let mut total = 0.0;
    for k in 0..pn.carriers() {
        let block = pn.carrier_block(k);
        let mut local = Vec::new();
        for q in 0..pn.users() {
            for j in 0..pn.tx_antennas(q) {
                local.push(pn.index(q, k, j));
            }
        }
        for (a, &row) in local.iter().enumerate() {
            if !pn.is_usable(row) {
                continue;
            }
            let mut mui = 0.0;
            for (b, &col) in local.iter().enumerate() {
                mui += block[(a, b)] * p[col];
            }
            let c = pn.noise_norm()[row] + mui;
            total += (1.0 + p[row] / c).log2();
        }
    }
    assert!((sum_rate(&pn, &p).unwrap() - total).abs() <= 1e-10 * total.max(1.0));
}

fn small_spec(kind: ExperimentKind, trials: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.experiment.kind = kind;
    spec.experiment.trials = trials;
    spec.experiment.seed = 21;
    spec.experiment.algorithms = vec![Algorithm::Iwfa, Algorithm::Tdma];
    spec.topology.antennas = vec![AntennaConfig { tx: 2, rx: 2 }];
    spec.topology.d_qq = 1.0;
    spec.topology.d_rq_grid = vec![1.0, 3.0];
    spec.power.grid_db = vec![0.0, 10.0];
    spec
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = small_spec(ExperimentKind::UniquenessVsDistance, 40);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| exp_uniqueness(&spec).unwrap())
    };
    let csv = |t: ResultTable| {
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        out
    };
    assert_eq!(csv(run(1)), csv(run(4)));
    assert_ne!(trial_seed(21, 0), trial_seed(21, 1));
    assert_ne!(trial_seed(21, 0), trial_seed(22, 0));
}

#[test]
fn standard_error_shrinks_with_trials() {
    let se = |trials: usize| {
        let ResultTable::SumRate(rows) = exp_sumrate_vs_power(&small_spec(ExperimentKind::SumrateVsPower, trials)).unwrap() else {
            unreachable!()
        };
        rows.iter().filter(|r| r.algorithm == Algorithm::Iwfa).map(|r| r.std_error).collect::<Vec<_>>()
    };
    for (a, b) in se(50).iter().zip(se(200)) {
        // Expected ratio is sqrt(200 / 50) = 2.
        let ratio = a / b;
        assert!((1.4..=2.8).contains(&ratio), "{a} / {b} = {ratio}");
    }
}
