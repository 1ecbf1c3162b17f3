use balajoin::bppr::BalanceScope;
use balajoin::datagen::{build_workload, Arrival, Placement, Workload, WorkloadConfig};
use balajoin::simulator::{oracle_join, run_detailed, ClusterSpec, CostModel, DetectorMode, SimOptions};
use balajoin::strategies::Strategy as JoinStrategy;
use proptest::prelude::*;

fn workload_config() -> impl Strategy<Value = WorkloadConfig> {
    (2usize..7, 50usize..1500, 0.05f64..2.0, 0.0f64..1.6, any::<bool>(), any::<bool>(), any::<u64>(), 5u64..300).prop_map(
        |(n, s, ratio, z, concentrated, clustered, seed, universe)| WorkloadConfig {
            n_nodes: n,
            s_count: s,
            rs_ratio: ratio,
            universe,
            zipf_z: z,
            placement: if concentrated {
                Placement::ConcentratedSkew(seed as usize % n)
            } else {
                Placement::Uniform
            },
            arrival: if clustered { Arrival::ClusteredByKey } else { Arrival::Interleaved },
            seed,
            skew_threshold: 0.01,
        },
    )
}

fn options() -> impl Strategy<Value = SimOptions> {
    (0.0f64..1.2, 0u64..200, prop_oneof![Just(8usize), Just(64)], any::<bool>()).prop_map(|(eps, warmup, k, active)| {
        let mut o = SimOptions {
            epsilon: eps,
            scope: if active { BalanceScope::ActiveNodes } else { BalanceScope::AllNodes },
            record_trace: true,
            debug_checks: true,
            ..SimOptions::default()
        };
        o.detector.theta = 0.01;
        o.detector.warmup = warmup;
        o.detector.capacity = k;
        o
    })
}

fn mode() -> impl Strategy<Value = DetectorMode> {
    prop_oneof![Just(DetectorMode::Oracle), Just(DetectorMode::Online), Just(DetectorMode::TwoPass)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_strategy_joins_exactly(wc in workload_config(), opts in options(), mode in mode()) {
        let w = build_workload(&wc).unwrap();
        let oracle = oracle_join(&w);
        let cluster = ClusterSpec::new(wc.n_nodes);
        for s in JoinStrategy::ALL {
            let out = run_detailed(&w, s, &cluster, &CostModel::default(), mode, &opts).unwrap();
            let r = &out.report;
            prop_assert_eq!(oracle.check(&out.result()), Ok(()), "{} {}", s, mode);
            prop_assert_eq!(r.total_result_count, oracle.size);
            prop_assert_eq!(r.diagnostics.invariant_violations, 0);

            let sent: u64 = r.nodes.iter().map(|l| l.bytes_sent).sum();
            let received: u64 = r.nodes.iter().map(|l| l.bytes_received).sum();
            prop_assert_eq!(sent, received);
            prop_assert_eq!(sent, r.total_network_bytes);
            let traced: u64 = r.trace.as_ref().unwrap().transfers.iter().map(|t| t.bytes).sum();
            prop_assert_eq!(traced, sent);

            let probes: u64 = r.nodes.iter().map(|l| l.probe_processed).sum();
            prop_assert!(probes >= w.s_count() as u64);
            if mode == DetectorMode::Online && s.uses_skew() {
                let observes: u64 = r.nodes.iter().map(|l| l.detector_observes).sum();
                prop_assert_eq!(observes, w.s_count() as u64);
            }
        }
    }

    #[test]
    fn csv_round_trip_preserves_results(wc in workload_config()) {
        let w = build_workload(&wc).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = Workload::read_csv(&buf[..], Some(wc.n_nodes)).unwrap();
        prop_assert_eq!(&back.build_shards, &w.build_shards);
        prop_assert_eq!(&back.probe_shards, &w.probe_shards);
        prop_assert_eq!(oracle_join(&back).size, oracle_join(&w).size);
    }

    #[test]
    fn generation_is_a_pure_function(wc in workload_config()) {
        let a = build_workload(&wc).unwrap();
        let b = build_workload(&wc).unwrap();
        prop_assert_eq!(&a.build_shards, &b.build_shards);
        prop_assert_eq!(&a.probe_shards, &b.probe_shards);
        prop_assert_eq!(a.s_count(), wc.s_count);
        prop_assert_eq!(a.r_count(), wc.r_count());
    }
}
