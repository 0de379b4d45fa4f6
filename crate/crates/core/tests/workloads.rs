use nearmem_core::memory::AllocationPolicy;
use nearmem_core::rack::RackConfig;
use nearmem_core::workload::{run_workload, Mode, RunMetrics, WorkloadKind, WorkloadSpec};

fn run(config: &RackConfig, spec: &WorkloadSpec, mode: Mode) -> RunMetrics {
    let m = run_workload(config, spec, mode).unwrap().metrics;
    assert_eq!((m.failed, m.oracle_mismatches), (0, 0));
    m
}

// Each host iteration is a full remote round trip, so the gap tracks the mean
// iterations per lookup (about 7.5 at the default load factor of 14).
#[test]
fn host_lookups_are_at_least_five_times_slower() {
    let config = RackConfig { seed: 3, ..Default::default() };
    let spec = WorkloadSpec { kind: WorkloadKind::Upc, dataset: 3000, requests: 500, ..Default::default() };
    let chase = run(&config, &spec, Mode::Chase);
    let host = run(&config, &spec, Mode::Host);
    assert!(host.mean_ns >= 5.0 * chase.mean_ns, "host {} vs chase {}", host.mean_ns, chase.mean_ns);
}

#[test]
fn list_walk_latency_is_linear_in_length() {
    let config = RackConfig::default();
    let mean = |len: usize| {
        let spec = WorkloadSpec {
            kind: WorkloadKind::ListWalk,
            dataset: len,
            requests: 5,
            concurrency: Some(1),
            ..Default::default()
        };
        run(&config, &spec, Mode::Chase).mean_ns
    };
    let (a, b, c) = (mean(10), mean(20), mean(40));
    let slope = (c - a) / 30.0;
    let predicted = a + slope * 10.0;
    assert!((b - predicted).abs() / b <= 0.02, "{a} {b} {c}");
    // The intercept is the fixed network and stack cost.
    let intercept = a - 10.0 * slope;
    assert!(intercept > 9000.0, "{intercept}");
}

#[test]
fn partitioned_lookups_scale_with_nodes() {
    let spec = WorkloadSpec { kind: WorkloadKind::Upc, dataset: 8000, requests: 4000, ..Default::default() };
    let throughput = |nodes| {
        let config =
            RackConfig { nodes, allocation_policy: AllocationPolicy::Partitioned, seed: 9, ..Default::default() };
        let m = run(&config, &spec, Mode::Chase);
        assert_eq!(m.xnode_hops, 0);
        m.throughput_rps
    };
    let one = throughput(1);
    for n in [2usize, 4] {
        let t = throughput(n);
        let ratio = t / (one * n as f64);
        assert!((0.9..=1.1).contains(&ratio), "{n} nodes: {ratio:.3}");
    }
}

#[test]
fn uniform_allocation_doubles_scan_latency() {
    let spec = WorkloadSpec { kind: WorkloadKind::Tc, dataset: 5000, requests: 400, ..Default::default() };
    let mean = |policy| {
        run(&RackConfig { nodes: 2, allocation_policy: policy, ..Default::default() }, &spec, Mode::Chase).mean_ns
    };
    let ratio = mean(AllocationPolicy::Uniform) / mean(AllocationPolicy::Partitioned);
    assert!(ratio >= 2.0, "{ratio}");
}
