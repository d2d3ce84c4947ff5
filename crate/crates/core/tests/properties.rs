use proptest::prelude::*;

use fedmom::diagnostics::{rate_fit, TrajectoryStats};
use fedmom::problems::{make_quadratic_suite, QuadraticSuiteParams};
use fedmom::sampling::subset_mean_second_moment;
use fedmom::schedules::GAMMA_L_MAX;
use fedmom::{schedule_for, AlgoConfig, Engine, ScheduleInput, Variant};

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

prop_compose! {
    fn schedule_input()(
        n in 1usize..64,
        frac in 0.0f64..=1.0,
        k in 1usize..64,
        r in 1usize..5000,
        l_exp in -2.0f64..2.0,
        delta_exp in -3.0f64..3.0,
        sigma in prop_oneof![Just(0.0), 0.01f64..10.0],
        g0 in 0.0f64..100.0,
        cap in 0.05f64..=1.0,
        alt in any::<bool>(),
    ) -> ScheduleInput {
        let s = ((frac * n as f64).ceil() as usize).clamp(1, n);
        ScheduleInput {
            n_clients: n,
            local_steps: k,
            rounds: r,
            cohort_size: s,
            smoothness: 10f64.powf(l_exp),
            delta: 10f64.powf(delta_exp),
            sigma,
            g0_energy: g0,
            momentum_cap: cap,
            safety: 0.1,
            alt_branch: alt,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn schedules_respect_preconditions(v in variant(), inp in schedule_input()) {
        let s = schedule_for(v, &inp).unwrap();
        prop_assert!(s.beta > 0.0 && s.beta <= 1.0);
        prop_assert!(s.gamma > 0.0 && s.gamma * inp.smoothness <= GAMMA_L_MAX * (1.0 + 1e-12));
        prop_assert!(s.eta.is_finite() && s.eta > 0.0);
        if v.pins_beta() {
            prop_assert_eq!(s.beta, 1.0);
        }
        if v.needs_init_batches() {
            prop_assert!(s.init_batches >= 1);
        }
    }

    #[test]
    fn more_noise_never_raises_momentum(v in variant(), inp in schedule_input(), factor in 1.0f64..10.0) {
        let louder = ScheduleInput { sigma: inp.sigma * factor + 1e-3, ..inp };
        let quiet = schedule_for(v, &inp).unwrap();
        let loud = schedule_for(v, &louder).unwrap();
        prop_assert!(loud.beta <= quiet.beta * (1.0 + 1e-12));
    }

    #[test]
    fn sampling_closed_form_brackets(
        vectors in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..12),
        frac in 0.0f64..=1.0,
    ) {
        let n = vectors.len();
        let s = ((frac * n as f64).ceil() as usize).clamp(1, n);
        let m = subset_mean_second_moment(&vectors, s).unwrap();
        let mean: Vec<f64> = (0..3).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let mean_sq: f64 = mean.iter().map(|a| a * a).sum();
        let avg_sq: f64 = vectors.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>()).sum::<f64>() / n as f64;
        let tol = 1e-10 * (1.0 + avg_sq);
        // Between full participation and a single client.
        prop_assert!(m >= mean_sq - tol);
        prop_assert!(m <= avg_sq + tol);
        if s == n {
            prop_assert!((m - mean_sq).abs() <= tol);
        }
        if s == 1 {
            prop_assert!((m - avg_sq).abs() <= tol);
        }
    }

    #[test]
    fn rate_fit_recovers_power_laws(
        c in 1e-3f64..1e3,
        p in -3.0f64..3.0,
        xs in prop::collection::btree_set(1u32..10_000, 3..10),
    ) {
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(p)).collect();
        let slope = rate_fit(&xs, &ys).unwrap();
        prop_assert!((slope - p).abs() <= 1e-9);
    }

    #[test]
    fn engine_runs_are_reproducible(v in variant(), seed in any::<u64>(), cohort in 1usize..=5) {
        let p = make_quadratic_suite(&QuadraticSuiteParams {
            n_clients: 5,
            dim: 4,
            hetero_scale: 1.0,
            l_target: 1.0,
            mu_min: 0.1,
            sigma: 0.5,
            seed: 3,
        })
        .unwrap();
        let cfg = AlgoConfig::new(v, 0.5, 0.05, 0.04, 3, cohort).with_init_batches(2);
        let run = |parallel: bool| {
            let engine = Engine::new(&p, cfg, seed).unwrap().parallel(parallel);
            let mut reports = engine.run_experiment(&[0.0; 4], 8, &mut |_| {}).unwrap();
            reports.iter_mut().for_each(|r| r.wall_ms = 0.0);
            reports
        };
        let a = run(true);
        let b = run(false);
        prop_assert_eq!(&a, &b);
        let stats = TrajectoryStats::from_reports(&a);
        prop_assert_eq!(stats.rounds(), 8);
        let running = stats.min_so_far();
        prop_assert!(running.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(a.iter().all(|r| r.est_err >= 0.0 && r.client_drift >= 0.0 && r.cohort.len() == cohort));
    }
}
