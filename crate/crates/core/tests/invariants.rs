use proptest::prelude::*;

use learnhmm::hmm::{
    brute_force_log_likelihood, build_transition_matrix, nb_log_pmf, sequence_log_likelihood, CommonParams, ModelSpec,
    RandomEffects, ThresholdSet,
};
use learnhmm::panel::{read_panel, write_panel, PeriodObservation, QueryObservation};
use learnhmm::provenance::Provenance;
use learnhmm::simulate::{simulate, ActivityProcess, CovariateProcess, CovariateSampler, SimConfig};

fn params_strategy(n: usize, n_act: usize, n_cov: usize) -> impl Strategy<Value = (ModelSpec, CommonParams)> {
    let spec = ModelSpec::new(n, n_act, n_cov).unwrap();
    prop::collection::vec(-2.0..2.0f64, spec.n_psi()).prop_map(move |v| {
        let mut p = CommonParams::from_vec(&spec, &v).unwrap();
        for rho in p.rho.iter_mut() {
            rho[0] += 2.0;
        }
        (spec.clone(), p)
    })
}

fn periods_strategy(horizon: usize) -> impl Strategy<Value = Vec<PeriodObservation>> {
    prop::collection::vec(
        (
            prop::collection::vec((0i64..40, -1.0..1.0f64), 0..3),
            prop::collection::vec(0u8..4, 2),
        ),
        horizon,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(t, (qs, acts))| PeriodObservation {
                period_index: t + 1,
                queries: qs
                    .into_iter()
                    .enumerate()
                    .map(|(j, (tau, x))| QueryObservation {
                        query_id: format!("q{t}_{j}"),
                        completion_time: tau,
                        covariates: vec![1.0, x],
                    })
                    .collect(),
                activities: acts.into_iter().map(f64::from).collect(),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_rows_are_distributions(
        (_, p) in params_strategy(4, 2, 2),
        zeta in -3.0..3.0f64,
        a in prop::collection::vec(0.0..5.0f64, 2),
    ) {
        let q = build_transition_matrix(&p, zeta, &a).unwrap();
        for s in 0..4 {
            let row = q.row(s);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn higher_stock_never_lowers_the_chance_of_moving_up(
        (_, p) in params_strategy(3, 2, 1),
        zeta in -3.0..3.0f64,
        bump in 0.0..3.0f64,
    ) {
        // ζ enters the stock additively, so raising it raises the stock
        let lo = build_transition_matrix(&p, zeta, &[1.0, 1.0]).unwrap();
        let hi = build_transition_matrix(&p, zeta + bump, &[1.0, 1.0]).unwrap();
        for s in 0..2 {
            prop_assert!(hi.get(s, s + 1) >= lo.get(s, s + 1) - 1e-12);
        }
        for s in 1..3 {
            prop_assert!(hi.get(s, s - 1) <= lo.get(s, s - 1) + 1e-12);
        }
    }

    #[test]
    fn negative_binomial_sums_to_one(log_delta in -0.5..2.5f64, log_mean in -2.0..3.0f64) {
        let total: f64 = (0..20_000).map(|t| nb_log_pmf(t, log_delta, log_mean).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-8, "total {total}");
    }

    #[test]
    fn forward_matches_enumeration(
        (spec, p) in params_strategy(3, 2, 2),
        periods in periods_strategy(5),
        zeta in -1.0..1.0f64,
        eta in -0.5..0.5f64,
    ) {
        let re = RandomEffects { zeta, eta };
        let f = sequence_log_likelihood(&spec, &p, &re, &periods).unwrap();
        let b = brute_force_log_likelihood(&spec, &p, &re, &periods).unwrap();
        prop_assert!((f - b).abs() < 1e-9, "{f} vs {b}");
    }

    #[test]
    fn emission_shift_moves_between_intercepts_and_eta(
        (spec, p) in params_strategy(3, 2, 2),
        periods in periods_strategy(6),
        shift in -2.0..2.0f64,
    ) {
        let re = RandomEffects { zeta: 0.3, eta: 0.1 };
        let base = sequence_log_likelihood(&spec, &p, &re, &periods).unwrap();
        let mut q = p.clone();
        for rho in q.rho.iter_mut() {
            rho[0] += shift;
        }
        let moved = RandomEffects { zeta: 0.3, eta: 0.1 - shift };
        let other = sequence_log_likelihood(&spec, &q, &moved, &periods).unwrap();
        prop_assert!((base - other).abs() < 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn identical_states_collapse_to_one(
        (spec, mut p) in params_strategy(3, 2, 2),
        periods in periods_strategy(6),
        eta in -0.5..0.5f64,
    ) {
        let rho = p.rho[0].clone();
        let ld = p.log_delta[0];
        for s in 0..3 {
            p.rho[s] = rho.clone();
            p.log_delta[s] = ld;
        }
        let one = ModelSpec::new(1, 2, 2).unwrap();
        let mut single = CommonParams::zeros(&one);
        single.rho = vec![rho];
        single.log_delta = vec![ld];
        let re = RandomEffects { zeta: 0.7, eta };
        let a = sequence_log_likelihood(&spec, &p, &re, &periods).unwrap();
        let b = sequence_log_likelihood(&one, &single, &re, &periods).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn panels_survive_a_round_trip(seed in 0u64..1000, n in 1usize..8, horizon in 1usize..6) {
        let spec = ModelSpec::new(2, 1, 2).unwrap();
        let mut params = CommonParams::zeros(&spec);
        params.thresholds = ThresholdSet::from_cutpoints(&[(None, Some(0.5)), (Some(-0.5), None)]).unwrap();
        params.rho = vec![vec![3.0, 0.2], vec![1.5, -0.1]];
        let cfg = SimConfig {
            spec,
            params,
            sigma_theta: [[0.2, 0.05], [0.05, 0.1]],
            n_analysts: n,
            horizon,
            activity_names: vec!["n_written".into()],
            activity_process: ActivityProcess::Poisson { means: vec![1.3] },
            covariate_process: CovariateProcess {
                columns: vec![("workload".into(), CovariateSampler::Normal { mean: 0.0, sd: 1.7 })],
            },
            queries_per_period: 2.0,
            seed,
        };
        let panel = simulate(&cfg).unwrap().panel;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.json");
        write_panel(&path, &panel, &Provenance::new("t", Some(seed))).unwrap();
        prop_assert_eq!(read_panel(&path).unwrap().panel, panel);
    }
}
