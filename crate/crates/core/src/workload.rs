//! Workload generators, closed-loop runs and the metrics they produce.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accelerator::{AccelEvent, Accelerator, AcceleratorConfig, CoreConfig, Effects};
use crate::datastructs::{gen_traversal, Agg, BuildOptions, DsError, Kind, Operation, Oracle, Placement};
use crate::fabric::{Kernel, RequestId, TraversalPacket};
use crate::isa::{encode, Instruction, Opcode, Operand, Program};
use crate::memory::{partition_base, MemoryPool, Perms};
use crate::offload::{OpId, OpMode, OpResult};
use crate::rack::{Rack, RackConfig, SubmitError, TraceRecord};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WorkloadKind {
    /// Uniform point lookups in a chained hash table.
    Upc,
    /// Range scans over a B+tree leaf chain.
    Tc,
    /// Windowed aggregation over time-ordered readings.
    Tsv,
    /// Full walks of one fixed-length list.
    ListWalk,
}

impl WorkloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Upc => "upc",
            WorkloadKind::Tc => "tc",
            WorkloadKind::Tsv => "tsv",
            WorkloadKind::ListWalk => "listwalk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Mode {
    Chase,
    /// Cross-node continuations detour through the CPU node.
    ChaseAcc,
    Host,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Chase => "chase",
            Mode::ChaseAcc => "chase-acc",
            Mode::Host => "host",
        }
    }
}

pub const MAX_DATASET: usize = 1_000_000;
pub const MAX_REQUESTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Entries in the structure (list length for `ListWalk`).
    pub dataset: usize,
    pub requests: usize,
    /// Keys per TC scan.
    pub scan_len: u64,
    /// Leaves per TSV window.
    pub window_leaves: u64,
    pub agg: Agg,
    /// Average hash chain length for UPC.
    pub load_factor: usize,
    pub hash_value_bytes: u16,
    pub placement: Placement,
    /// Outstanding requests; defaults to four per workspace in the rack.
    pub concurrency: Option<usize>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Upc,
            dataset: 10_000,
            requests: 2_000,
            scan_len: 100,
            window_leaves: 64,
            agg: Agg::Sum,
            load_factor: 14,
            hash_value_bytes: 240,
            placement: Placement::Range,
            concurrency: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Build(#[from] DsError),
    #[error(transparent)]
    Submit(#[from] SubmitError),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.dataset == 0 || self.dataset > MAX_DATASET {
            return Err(WorkloadError::Invalid("dataset must be in 1..=1000000"));
        }
        if self.requests == 0 || self.requests > MAX_REQUESTS {
            return Err(WorkloadError::Invalid("requests must be in 1..=100000"));
        }
        if self.kind == WorkloadKind::Tc && self.scan_len == 0 {
            return Err(WorkloadError::Invalid("scan_len must be positive"));
        }
        if self.kind == WorkloadKind::Tsv && self.window_leaves == 0 {
            return Err(WorkloadError::Invalid("window_leaves must be positive"));
        }
        if self.load_factor == 0 {
            return Err(WorkloadError::Invalid("load_factor must be positive"));
        }
        if self.concurrency == Some(0) {
            return Err(WorkloadError::Invalid("concurrency must be positive"));
        }
        Ok(())
    }

    fn structure(&self) -> Kind {
        match self.kind {
            WorkloadKind::Upc => Kind::HashMap,
            WorkloadKind::Tc | WorkloadKind::Tsv => Kind::BTree,
            WorkloadKind::ListWalk => Kind::List,
        }
    }

    /// TSV readings are spaced this far apart in time.
    const TSV_STEP: u64 = 10;

    fn entries(&self) -> Vec<(u64, u64)> {
        let n = self.dataset as u64;
        match self.kind {
            WorkloadKind::Upc | WorkloadKind::ListWalk => (0..n).map(|i| (i + 1, i * 31 + 7)).collect(),
            WorkloadKind::Tc => (0..n).map(|i| (i, i ^ 0x5a5a)).collect(),
            WorkloadKind::Tsv => (0..n).map(|i| (i * Self::TSV_STEP, (i * 2_654_435_761) % 1000)).collect(),
        }
    }

    fn build_options(&self) -> BuildOptions {
        BuildOptions {
            buckets: (self.dataset / self.load_factor).max(1),
            hash_value_bytes: self.hash_value_bytes,
            placement: self.placement,
            nodes: 1,
        }
    }

    fn operation(&self, rng: &mut ChaCha8Rng) -> Operation {
        let n = self.dataset as u64;
        match self.kind {
            WorkloadKind::Upc => Operation::Find(rng.gen_range(1..=n)),
            WorkloadKind::ListWalk => Operation::Find(n),
            WorkloadKind::Tc => {
                let lo = rng.gen_range(0..n);
                Operation::ScanAgg { agg: Agg::Count, lo, hi: lo + self.scan_len - 1 }
            }
            WorkloadKind::Tsv => {
                let span = self.window_leaves * 8 * Self::TSV_STEP;
                let lo = rng.gen_range(0..n) * Self::TSV_STEP;
                Operation::ScanAgg { agg: self.agg, lo, hi: lo + span - 1 }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CoreUtil {
    pub node: u16,
    pub core: u16,
    pub mem: f64,
    pub logic: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct RunMetrics {
    pub workload: WorkloadKind,
    pub mode: Mode,
    pub nodes: usize,
    pub eta: usize,
    pub seed: u64,
    /// Requests that completed successfully.
    pub requests: usize,
    pub failed: usize,
    pub oracle_mismatches: usize,
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    /// Completions per simulated second between the 10th and 90th
    /// percentile completion times.
    pub throughput_rps: f64,
    pub mem_util: f64,
    pub logic_util: f64,
    pub per_core: Vec<CoreUtil>,
    pub xnode_hops: u64,
    /// Accelerator iterations across all nodes.
    pub iterations: u64,
    pub mem_slots: u64,
    pub cpu_round_trips: u64,
    pub network_bytes: u64,
    pub retransmits: u64,
    pub makespan_ns: f64,
    /// Time-averaged number of requests in flight.
    pub mean_concurrency: f64,
}

impl RunMetrics {
    /// Memory slots per simulated second across the rack.
    pub fn slot_throughput(&self) -> f64 {
        self.mem_slots as f64 / (self.makespan_ns * 1e-9)
    }

    /// Share of accelerator iterations that ended by leaving the node.
    pub fn cross_node_fraction(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.xnode_hops as f64 / self.iterations as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// Per request in issue order: the operation and how it ended.
    pub results: Vec<(Operation, OpResult)>,
    pub trace: Vec<TraceRecord>,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[u64], pct: usize) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct * sorted.len()).div_ceil(100);
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Builds the workload's structure in a fresh rack and drives `requests`
/// traversals closed-loop. Identical inputs give identical outputs.
pub fn run_workload(config: &RackConfig, spec: &WorkloadSpec, mode: Mode) -> Result<RunOutput, WorkloadError> {
    spec.validate()?;
    let mut cfg = config.clone();
    cfg.accelerator.detour_on_miss = mode == Mode::ChaseAcc;
    let op_mode = if mode == Mode::Host { OpMode::Host } else { OpMode::Offload };
    let mut rack = Rack::new(cfg);

    let entries = spec.entries();
    let handle = rack.build(spec.structure(), &entries, &spec.build_options())?;
    let oracle = Oracle::new(&handle, &entries);
    // Separate stream from the link model's drop decisions.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9));
    let ops: Vec<Operation> = (0..spec.requests).map(|_| spec.operation(&mut rng)).collect();

    let core = &config.accelerator.core;
    let workspaces = config.nodes * config.accelerator.cores * core.workspaces();
    let concurrency = spec.concurrency.unwrap_or(4 * workspaces).min(spec.requests);

    let mut by_op: BTreeMap<OpId, usize> = BTreeMap::new();
    let mut results: Vec<Option<OpResult>> = vec![None; ops.len()];
    let submit = |rack: &mut Rack, by_op: &mut BTreeMap<OpId, usize>, at: SimTime, idx: usize| {
        let s = gen_traversal(&handle, &ops[idx])?;
        let id = rack.submit(at, &s.program, s.init_cur_ptr, s.init_scratch, op_mode)?;
        by_op.insert(id, idx);
        Ok::<(), WorkloadError>(())
    };
    for idx in 0..concurrency {
        submit(&mut rack, &mut by_op, SimTime::ZERO, idx)?;
    }
    let mut next = concurrency;
    for _ in 0..ops.len() {
        let r = rack.run_until_next_completion().expect("outstanding requests always complete");
        let idx = by_op.remove(&r.op).expect("known op");
        let at = r.completed;
        results[idx] = Some(r);
        if next < ops.len() {
            submit(&mut rack, &mut by_op, at, next)?;
            next += 1;
        }
    }
    let results: Vec<(Operation, OpResult)> =
        ops.into_iter().zip(results).map(|(op, r)| (op, r.expect("every request completed"))).collect();
    let metrics = summarize(config, spec, mode, &rack, &results, &oracle, &handle);
    Ok(RunOutput { metrics, results, trace: rack.trace().to_vec() })
}

fn summarize(
    config: &RackConfig,
    spec: &WorkloadSpec,
    mode: Mode,
    rack: &Rack,
    results: &[(Operation, OpResult)],
    oracle: &Oracle,
    handle: &crate::datastructs::StructureHandle,
) -> RunMetrics {
    let mut latencies = Vec::with_capacity(results.len());
    let (mut failed, mut mismatches) = (0, 0);
    let (mut hops, mut retransmits, mut cpu) = (0u64, 0u64, 0u64);
    for (op, r) in results {
        hops += r.hops as u64;
        retransmits += r.retransmits as u64;
        cpu += r.cpu_tx as u64;
        match &r.result {
            Ok(scratch) => {
                latencies.push(r.latency().as_ps());
                let range = crate::datastructs::result_range(handle.kind, op);
                if scratch.get(range) != oracle.run(op).ok().as_deref() {
                    mismatches += 1;
                }
            }
            Err(_) => failed += 1,
        }
    }
    let start = results.iter().map(|r| r.1.issued).min().unwrap_or(SimTime::ZERO);
    let end = results.iter().map(|r| r.1.completed).max().unwrap_or(SimTime::ZERO);
    let makespan = (end - start).as_ps().max(1) as f64;
    let busy: u64 = results.iter().map(|r| r.1.latency().as_ps()).sum();

    let mut completions: Vec<u64> = results.iter().map(|r| r.1.completed.as_ps()).collect();
    completions.sort_unstable();
    let n = completions.len();
    let (i10, i90) = (n / 10, (n * 9 / 10).min(n.saturating_sub(1)));
    let throughput_rps = if i90 > i10 && completions[i90] > completions[i10] {
        (i90 - i10) as f64 / ((completions[i90] - completions[i10]) as f64 * 1e-12)
    } else {
        n as f64 / (makespan * 1e-12)
    };

    latencies.sort_unstable();
    let mean_ns = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().map(|&l| l as f64).sum::<f64>() / latencies.len() as f64 / 1000.0
    };

    let core = &config.accelerator.core;
    let mut per_core = Vec::new();
    let (mut mem_busy, mut logic_busy, mut slots, mut iterations) = (0u64, 0u64, 0u64, 0u64);
    for a in rack.accelerators() {
        for (c, k) in a.counters().enumerate() {
            mem_busy += k.mem_busy.as_ps();
            logic_busy += k.logic_busy.as_ps();
            slots += k.mem_slots;
            iterations += k.iterations;
            per_core.push(CoreUtil {
                node: a.node(),
                core: c as u16,
                mem: k.mem_busy.as_ps() as f64 / makespan,
                logic: k.logic_busy.as_ps() as f64 / (makespan * core.eta as f64),
            });
        }
    }
    let cores = (config.nodes * config.accelerator.cores) as f64;
    let net = rack.net_stats();
    RunMetrics {
        workload: spec.kind,
        mode,
        nodes: config.nodes,
        eta: core.eta,
        seed: config.seed,
        requests: latencies.len(),
        failed,
        oracle_mismatches: mismatches,
        mean_ns,
        p50_ns: percentile(&latencies, 50) as f64 / 1000.0,
        p99_ns: percentile(&latencies, 99) as f64 / 1000.0,
        throughput_rps,
        mem_util: mem_busy as f64 / (makespan * cores),
        logic_util: logic_busy as f64 / (makespan * cores * core.eta as f64),
        per_core,
        xnode_hops: hops,
        iterations,
        mem_slots: slots,
        cpu_round_trips: cpu,
        network_bytes: net.bytes_sent + net.host_bytes,
        retransmits,
        makespan_ns: makespan / 1000.0,
        mean_concurrency: busy as f64 / makespan,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Utilization {
    pub mem: f64,
    pub logic: f64,
}

/// Self-looping body that executes exactly `n` instructions per iteration.
fn spin_program(n: usize) -> Program {
    let mut insts = vec![Instruction::load(0, 8)];
    insts.extend((1..n).map(|_| Instruction::alu_imm(Opcode::Add, Operand::Sp(0), 1)));
    insts.push(Instruction::next_iter());
    Program::new(insts)
}

/// Steady-state pipeline utilization of one core holding `resident`
/// endless traversals whose logic time is exactly `eta * t_d`.
pub fn utilization_experiment(eta: usize, workspaces_per_logic: usize, resident: usize) -> Utilization {
    const BODY: usize = 6;
    let t_d = SimTime::from_ns(120);
    let config = AcceleratorConfig {
        cores: 1,
        core: CoreConfig {
            eta,
            workspaces_per_logic,
            t_d,
            t_i_ns: (t_d.as_ps() * eta as u64) as f64 / 1000.0 / BODY as f64,
            max_iter: u16::MAX,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut pool = MemoryPool::new(1, 1 << 20);
    pool.map(partition_base(0), 4096, Perms::READ).expect("fresh pool");
    let mut acc = Accelerator::new(0, config);
    let mut kernel: Kernel<AccelEvent> = Kernel::new();
    // Skip the ramp-up, then measure over many full cycles.
    let cycle = t_d * (1 + eta as u64);
    let (start, end) = (cycle * 20, cycle * 520);
    acc.set_measurement_window(start, end);
    let code = encode(&spin_program(BODY));
    let mut fx = Effects::default();
    for id in 0..resident as u64 {
        let p = TraversalPacket::request(RequestId(id + 1), partition_base(0), code.clone(), vec![0; 8]);
        acc.admit(SimTime::ZERO, p, &mut fx);
    }
    loop {
        for (t, e) in fx.timers.drain(..) {
            kernel.schedule_at(t, e);
        }
        if !kernel.peek_time().is_some_and(|t| t < end) {
            break;
        }
        let (t, e) = kernel.pop().expect("peeked");
        acc.on_event(t, e, pool.node_mut(0), &mut fx);
    }
    let k = acc.counters().next().expect("one core");
    let window = (end - start).as_ps() as f64;
    Utilization {
        mem: k.mem_busy_window.as_ps() as f64 / window,
        logic: k.logic_busy_window.as_ps() as f64 / (window * eta as f64),
    }
}
