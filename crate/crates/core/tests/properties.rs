use pgkit::io::{read_data_csv, write_data_csv};
use pgkit::pg::initial_path;
use pgkit::smc::{conditional_sweep, ParticleSystem, SweepOptions};
use pgkit::{
    pg_run, resample_conditional_ids, simulate, BenchmarkModel, InvGammaPrior, NoiseParams, PgConfig, RngStream,
    ThetaMode,
};
use proptest::prelude::*;

fn infer() -> ThetaMode {
    ThetaMode::Infer {
        prior: InvGammaPrior::default(),
        init: NoiseParams { q: 1.0, r: 1.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulation_replays_per_seed(seed in any::<u64>(), t in 1usize..60) {
        let p = BenchmarkModel::TRUE_PARAMS;
        let a = simulate(&BenchmarkModel, p, t, &mut RngStream::from_seed(seed)).unwrap();
        let b = simulate(&BenchmarkModel, p, t, &mut RngStream::from_seed(seed)).unwrap();
        prop_assert_eq!(a.0.len(), t);
        prop_assert_eq!(a.0[0], 0.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn conditional_sweeps_keep_the_reference(seed in any::<u64>(), n in 2usize..30, t in 1usize..40, as_ in any::<bool>()) {
        let p = BenchmarkModel::TRUE_PARAMS;
        let mut rng = RngStream::from_seed(seed);
        let (x, y) = simulate(&BenchmarkModel, p, t, &mut rng).unwrap();
        let mut ps = ParticleSystem::new();
        let opts = SweepOptions { ancestor_sampling: as_, ..SweepOptions::default() };
        let res = conditional_sweep(&BenchmarkModel, p, &y, &x, n, opts, &mut ps, &mut rng).unwrap();
        for k in 0..t {
            prop_assert_eq!(ps.particles_at(k)[n - 1], x[k]);
        }
        prop_assert!(res.chosen_index < n);
        prop_assert_eq!(res.sampled_path.to_vec(), ps.trace_path(res.chosen_index));
    }

    #[test]
    fn conditional_ids_are_distinct(seed in any::<u64>(), r in 1usize..10, p_frac in 0.0f64..1.0) {
        let p = 1 + ((r - 1) as f64 * p_frac) as usize;
        let mut rng = RngStream::from_seed(seed);
        let log_z: Vec<f64> = (0..r).map(|_| 10.0 * rng.standard_normal()).collect();
        let current: Vec<usize> = (0..p).collect();
        let ids = resample_conditional_ids(&log_z, &current, &mut rng).unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), p);
        prop_assert!(ids.iter().all(|&i| i < r));
    }

    #[test]
    fn burn_in_keeps_two_thirds(m in 3usize..60) {
        let mut rng = RngStream::from_seed(m as u64);
        let (_, y) = simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, 4, &mut rng).unwrap();
        let init = initial_path(&BenchmarkModel, &y, infer().initial(), 3, &mut rng).unwrap();
        let tr = pg_run(&BenchmarkModel, &y, &PgConfig::new(3, m, infer()), &init, &mut rng).unwrap();
        let kept = tr.discard_burn_in().unwrap();
        prop_assert_eq!(kept.len(), m - m / 3);
        prop_assert_eq!(kept.first_iter, m / 3);
        prop_assert_eq!(kept.theta.as_slice(), &tr.theta[m / 3..]);
    }

    #[test]
    fn data_csv_round_trips(ys in proptest::collection::vec(-1e300f64..1e300, 1..40)) {
        let xs: Vec<f64> = ys.iter().map(|v| v / 3.0).collect();
        let mut buf = Vec::new();
        write_data_csv(&mut buf, Some(&xs), &ys).unwrap();
        let d = read_data_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(d.y.values(), ys.as_slice());
        let x = d.x.unwrap();
        prop_assert_eq!(x.values(), xs.as_slice());
    }

    #[test]
    fn derived_streams_ignore_consumed_draws(seed in any::<u64>(), skip in 0usize..50, key in any::<u64>()) {
        let a = RngStream::from_seed(seed);
        let mut b = RngStream::from_seed(seed);
        for _ in 0..skip {
            b.uniform();
        }
        let (mut da, mut db) = (a.derive(&[key]), b.derive(&[key]));
        prop_assert_eq!(da.uniform().to_bits(), db.uniform().to_bits());
    }
}
