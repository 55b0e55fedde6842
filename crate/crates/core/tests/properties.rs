use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redtail_core::asymptotics::{coc_fcfs_bound_curves, cos_fcfs_bound_curves, lcfs_busy_period_asymptote};
use redtail_core::engine::run_keyed;
use redtail_core::heavytail::draw_replicas;
use redtail_core::recursion::{jsw_d_step, ArrivalEvent, WorkloadVector};
use redtail_core::scenario::{factorial, k_factor};
use redtail_core::sink::{FnSink, SequenceSink};
use redtail_core::tailstats::fit_tail_slope;
use redtail_core::{
    tail_index_prediction, CcdfPoint, Discipline, Distribution, ReplicaDependence, ReplicaState, RunOptions,
    ScenarioConfig, StreamKey, TailCounter, TailGrid, Variant,
};

fn size_law() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (1.1f64..4.0, 0.05f64..3.0).prop_map(|(nu, xm)| Distribution::pareto(nu, xm).unwrap()),
        (0.2f64..5.0).prop_map(|r| Distribution::exponential(r).unwrap()),
    ]
}

fn pareto_law() -> impl Strategy<Value = Distribution> {
    (1.1f64..4.0, 0.05f64..3.0).prop_map(|(nu, xm)| Distribution::pareto(nu, xm).unwrap())
}

fn dependence() -> impl Strategy<Value = ReplicaDependence> {
    prop_oneof![Just(ReplicaDependence::Identical), Just(ReplicaDependence::Iid)]
}

/// (N, n_F, n_J) with 1 <= n_J <= n_F <= N.
fn shape(max_n: u32) -> impl Strategy<Value = (u32, u32, u32)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), 1..=n)).prop_flat_map(|(n, f)| (Just(n), Just(f), 1..=f))
}

fn scenario(
    (n, nf, nj): (u32, u32, u32),
    variant: Variant,
    discipline: Discipline,
    dependence: ReplicaDependence,
    size: Distribution,
    rho: f64,
) -> ScenarioConfig {
    let mean = size.mean().finite().unwrap();
    ScenarioConfig {
        name: "prop".into(),
        servers: n,
        n_fork: nf,
        n_join: nj,
        variant,
        discipline,
        dependence,
        arrival: Distribution::exponential(rho / mean).unwrap(),
        job_size: size,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residual_tail_nonincreasing(size in size_law(), xs in prop::collection::vec(0.0f64..1e4, 2..40)) {
        prop_assert_eq!(size.residual_ccdf(0.0).unwrap(), 1.0);
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        let vals: Vec<f64> = xs.iter().map(|&x| size.residual_ccdf(x).unwrap()).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
        }
        prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn replica_draws_follow_dependence(size in size_law(), n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Default::default();
        draw_replicas(&size, ReplicaDependence::Identical, n, &mut rng, &mut out);
        prop_assert_eq!(out.len(), n);
        prop_assert!(out.iter().all(|&b| b == out[0]));
        draw_replicas(&size, ReplicaDependence::Iid, n, &mut rng, &mut out);
        prop_assert_eq!(out.len(), n);
        for i in 0..n {
            for j in 0..i {
                prop_assert!(out[i] != out[j]);
            }
        }
    }

    #[test]
    fn recursion_step_conserves_work(
        start in prop::collection::vec(0.0f64..50.0, 1..6),
        size in 0.0f64..20.0,
        gap in 0.0f64..20.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let n = start.len();
        let mut state = WorkloadVector::from_workloads(start.clone());
        let server = pick.index(n) as u16;
        let before = state.total();
        jsw_d_step(&mut state, &ArrivalEvent { servers: &[server], sizes: &[size], next_gap: gap });
        let after = state.total();
        prop_assert!(after <= before + size + 1e-9);
        prop_assert!(after >= before + size - n as f64 * gap - 1e-9);
        let ordered = state.ordered();
        prop_assert!(ordered.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ordered.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn larger_sample_never_waits_longer(
        start in prop::collection::vec(0.0f64..50.0, 2..6),
        size in 0.1f64..20.0,
        mask in any::<u8>(),
        extra in any::<prop::sample::Index>(),
    ) {
        // the small sample is a nonempty subset of the large one
        let n = start.len();
        let large: Vec<u16> = (0..n as u16).filter(|i| mask & (1 << i) != 0).chain([extra.index(n) as u16]).collect();
        let mut large = large;
        large.sort_unstable();
        large.dedup();
        let small = vec![large[large.len() - 1]];
        let sizes_small = vec![size];
        let sizes_large = vec![size; large.len()];
        let w_small = WorkloadVector::from_workloads(start.clone()).assign(&small, &sizes_small).waiting;
        let w_large = WorkloadVector::from_workloads(start).assign(&large, &sizes_large).waiting;
        prop_assert!(w_large <= w_small);
    }

    #[test]
    fn counter_counts_are_monotone_and_merge(
        a in prop::collection::vec(0.0f64..1e5, 0..200),
        b in prop::collection::vec(0.0f64..1e5, 0..200),
        c in prop::collection::vec(0.0f64..1e5, 0..200),
    ) {
        let grid = TailGrid::log_spaced(1.0, 1e5, 30).unwrap();
        let fill = |v: &[f64]| {
            let mut t = TailCounter::new(grid.clone());
            for &x in v {
                t.record(x).unwrap();
            }
            t
        };
        let (ca, cb, cc) = (fill(&a), fill(&b), fill(&c));
        let counts = ca.counts();
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(counts.iter().all(|&k| k <= a.len() as u64));
        for (k, x) in counts.iter().zip(grid.points()) {
            prop_assert_eq!(*k, a.iter().filter(|&&v| v > *x).count() as u64);
        }

        let mut ab = ca.clone();
        ab.merge(&cb).unwrap();
        let sum: Vec<u64> = ca.counts().iter().zip(cb.counts()).map(|(x, y)| x + y).collect();
        prop_assert_eq!(ab.counts(), sum);
        prop_assert_eq!(ab.total(), (a.len() + b.len()) as u64);

        let mut left = ab;
        left.merge(&cc).unwrap();
        let mut bc = cb.clone();
        bc.merge(&cc).unwrap();
        let mut right = ca.clone();
        right.merge(&bc).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn slope_fit_exact_on_power_law(alpha in 0.1f64..4.0, c in 1e-3f64..1.0) {
        let ccdf: Vec<CcdfPoint> = TailGrid::log_spaced(1.0, 1e6, 60)
            .unwrap()
            .points()
            .iter()
            .map(|&x| CcdfPoint { x, p: c * x.powf(-alpha), stderr: 0.0, count: 1_000 })
            .collect();
        let fit = fit_tail_slope(&ccdf, (1e1, 1e5), 100).unwrap();
        prop_assert!((fit.slope + alpha).abs() < 1e-9, "{}", fit.slope);
    }

    #[test]
    fn thinning_factor_identities(n in 1u32..12, pick in any::<prop::sample::Index>()) {
        let nf = pick.index(n as usize) as u32 + 1;
        prop_assert_eq!(k_factor(n, nf, nf), factorial(n) / factorial(n - nf));
        prop_assert_eq!(k_factor(n, 1, 1), n as f64);
    }

    #[test]
    fn lower_load_never_exceeds_upper(
        sh in shape(5),
        dep in dependence(),
        size in size_law(),
        rho in 0.05f64..3.0,
    ) {
        let cfg = scenario(sh, Variant::Coc, Discipline::Fcfs, dep, size, rho);
        prop_assert!(cfg.rho_lower() <= cfg.rho_upper());
        prop_assert!(cfg.k_factor() >= 1.0);
    }

    #[test]
    fn prediction_ignores_time_units(
        sh in shape(4),
        dep in dependence(),
        variant in prop_oneof![Just(Variant::Cos), Just(Variant::Coc)],
        discipline in prop_oneof![Just(Discipline::Fcfs), Just(Discipline::LcfsPr)],
        size in pareto_law(),
        rho in 0.05f64..0.9,
        c in 1e-3f64..1e3,
    ) {
        let cfg = scenario(sh, variant, discipline, dep, size, rho);
        let base = tail_index_prediction(&cfg);
        let scaled = tail_index_prediction(&cfg.rescaled(c));
        match (base, scaled) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.exponent, b.exponent);
                prop_assert_eq!(a.preconditions_hold(), b.preconditions_hold());
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn coc_lower_curve_below_upper(sh in shape(4), dep in dependence(), size in size_law(), rho in 0.05f64..0.95) {
        let cfg = scenario(sh, Variant::Coc, Discipline::Fcfs, dep, size, rho);
        let grid = TailGrid::log_spaced(0.1, 1e6, 40).unwrap();
        let (lo, hi) = coc_fcfs_bound_curves(&cfg, grid.points()).unwrap();
        if lo.valid && hi.valid {
            for (l, u) in lo.points.iter().zip(&hi.points) {
                prop_assert!(l.1 <= u.1, "x={}: {} > {}", l.0, l.1, u.1);
            }
        }
    }

    #[test]
    fn lcfs_envelope_ordered(sh in shape(4), dep in dependence(), size in pareto_law(), rho in 0.05f64..0.95) {
        let cfg = scenario(sh, Variant::Coc, Discipline::LcfsPr, dep, size, rho);
        let grid = TailGrid::log_spaced(0.1, 1e6, 40).unwrap();
        let upper = lcfs_busy_period_asymptote(&cfg, grid.points(), None).unwrap();
        let law = cfg.order_stat_law();
        if upper.valid {
            for &(x, u) in &upper.points {
                prop_assert!(law.ccdf(x) <= u * (1.0 + 1e-12), "x={x}");
            }
        }
    }

    #[test]
    fn cos_curves_i_and_iii_share_exponent(size in pareto_law(), extra in 0.05f64..0.95, n in 2u32..5, kk in any::<prop::sample::Index>()) {
        // d = N - k puts i and iii on the same power of the residual tail
        let k = kk.index(n as usize) as u32;
        let d = n - k;
        let rho = k as f64 + extra;
        let cfg = scenario((n, d, 1), Variant::Cos, Discipline::Fcfs, ReplicaDependence::Identical, size, rho);
        let xs = [1e6, 1e8];
        let curves = cos_fcfs_bound_curves(&cfg, &xs, 0.05).unwrap();
        let slope = |i: usize| (curves[i].points[1].1 / curves[i].points[0].1).log10() / 2.0;
        prop_assert!(curves[2].valid);
        prop_assert!((slope(0) - slope(2)).abs() < 1e-9, "{} vs {}", slope(0), slope(2));
        let Distribution::Pareto { shape: nu, .. } = size else { unreachable!() };
        let d_cap = cfg.d_cap().unwrap() as f64;
        prop_assert!((slope(0) - d_cap * (1.0 - nu)).abs() < 1e-9);
    }

    #[test]
    fn engine_replica_bookkeeping(
        sh in shape(4),
        dep in dependence(),
        variant in prop_oneof![Just(Variant::Cos), Just(Variant::Coc)],
        discipline in prop_oneof![Just(Discipline::Fcfs), Just(Discipline::LcfsPr)],
        size in size_law(),
        rho in 0.05f64..0.8,
        seed in any::<u64>(),
    ) {
        let (_, nf, nj) = sh;
        let cfg = scenario(sh, variant, discipline, dep, size, rho);
        let mut finished = 0u64;
        let mut sink = FnSink(|o: &redtail_core::JobOutcome<'_>| {
            let completed = o.replicas.iter().filter(|r| r.state == ReplicaState::Completed).count();
            let cancelled = o.replicas.iter().filter(|r| r.state == ReplicaState::Cancelled).count();
            assert_eq!(o.replicas.len(), nf as usize);
            assert_eq!(completed, nj as usize);
            assert_eq!(cancelled, (nf - nj) as usize);
            for r in o.replicas {
                assert!(r.rendered >= 0.0 && r.rendered <= r.size * (1.0 + 1e-12) + 1e-12);
                if r.state == ReplicaState::Completed {
                    assert!((r.rendered - r.size).abs() <= 1e-9 * r.size.max(1.0));
                }
            }
            assert!(o.response >= o.waiting && o.waiting >= 0.0);
            finished += 1;
            Ok(())
        });
        run_keyed(&cfg, 400, &RunOptions::no_warmup(), StreamKey::new(seed), &mut sink).unwrap();
        prop_assert_eq!(finished, 400);
    }

    #[test]
    fn variants_agree_without_redundancy(
        n in 1u32..5,
        discipline in prop_oneof![Just(Discipline::Fcfs), Just(Discipline::LcfsPr)],
        size in size_law(),
        rho in 0.05f64..0.9,
        seed in any::<u64>(),
    ) {
        let run = |variant| {
            let cfg = scenario((n, 1, 1), variant, discipline, ReplicaDependence::Identical, size, rho);
            let mut sink = SequenceSink::with_capacity(500);
            run_keyed(&cfg, 500, &RunOptions::no_warmup(), StreamKey::new(seed), &mut sink).unwrap();
            sink.response
        };
        let (cos, coc) = (run(Variant::Cos), run(Variant::Coc));
        prop_assert!(cos.iter().zip(&coc).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
