//! Metrics CSV and JSON-lines traces.

use std::io::Write;

use nearmem_core::rack::TraceRecord;
use nearmem_core::workload::RunMetrics;

pub const CSV_HEADER: [&str; 14] = [
    "workload",
    "mode",
    "nodes",
    "eta",
    "seed",
    "requests",
    "mean_ns",
    "p50_ns",
    "p99_ns",
    "throughput_rps",
    "mem_util",
    "logic_util",
    "xnode_hops",
    "retransmits",
];

/// One CSV row. Floats use a fixed number of decimals so output is stable.
pub fn csv_row(m: &RunMetrics) -> [String; 14] {
    [
        m.workload.as_str().to_string(),
        m.mode.as_str().to_string(),
        m.nodes.to_string(),
        m.eta.to_string(),
        m.seed.to_string(),
        m.requests.to_string(),
        format!("{:.3}", m.mean_ns),
        format!("{:.3}", m.p50_ns),
        format!("{:.3}", m.p99_ns),
        format!("{:.3}", m.throughput_rps),
        format!("{:.6}", m.mem_util),
        format!("{:.6}", m.logic_util),
        m.xnode_hops.to_string(),
        m.retransmits.to_string(),
    ]
}

pub fn write_csv<W: Write>(out: W, rows: &[RunMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for m in rows {
        w.write_record(csv_row(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
