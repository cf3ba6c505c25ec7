use joinopt::config::RunConfig;
use joinopt::engine::Strategy;
use joinopt::report::{cells, sweep, write_csv, COLUMNS};
use joinopt::sim::RunMode;

fn tiny(extra: &str) -> RunConfig {
    let text = format!(
        r#"
[workload]
preset = "DCH"
tuples = 600
key_universe = 80
{extra}
"#
    );
    RunConfig::from_toml_str(&text).unwrap()
}

fn csv_text(cfg: &RunConfig) -> String {
    let rows = sweep(cfg).unwrap();
    let mut out = Vec::new();
    write_csv(&mut out, cfg, &rows).unwrap();
    String::from_utf8(out).unwrap()
}

fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn csv_columns_are_stable() {
    let golden = [
        "strategy",
        "adaptive",
        "zipf_z",
        "seed",
        "tuples",
        "completion_time_s",
        "throughput_tuples_per_s",
        "normalized",
        "nonadaptive_ratio",
        "mean_latency_s",
        "data_requests",
        "compute_requests",
        "coalesced_requests",
        "computed_at_data",
        "returned_raw",
        "local_from_memory",
        "local_from_disk",
        "local_fetched",
        "local_returned",
        "mem_admissions",
        "mem_evictions",
        "invalidations",
        "stale_local",
        "messages",
        "bytes_sent",
        "events",
        "data_cpu_skew",
        "mean_kept_fraction",
        "compute_cpu_busy_frac",
        "data_cpu_busy_frac",
        "data_disk_busy_frac",
        "data_link_out_busy_frac",
        "event_log_sha256",
    ];
    assert_eq!(COLUMNS, golden);
    let (header, rows) = table(&csv_text(&tiny("zipf = [1.0]\n[run]\nseeds = [1]\nstrategies = [\"FO\"]")));
    assert_eq!(header, golden);
    assert!(rows.iter().all(|r| r.len() == golden.len()));
}

#[test]
fn full_grid_has_one_row_per_cell() {
    let cfg = tiny("");
    assert_eq!(cells(&cfg).len(), 7 * 4 * 3);
    let rows = sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 84);
    for r in &rows {
        assert_eq!(r.result.metrics.completed, 600);
    }
}

#[test]
fn baseline_normalizes_to_one() {
    let cfg = tiny("");
    let rows = sweep(&cfg).unwrap();
    for r in rows.iter().filter(|r| r.cell.strategy == Strategy::No && r.cell.z == 0.0) {
        assert_eq!(r.normalized, Some(1.0));
    }
    for r in &rows {
        let base = rows
            .iter()
            .find(|b| b.cell.strategy == Strategy::No && b.cell.z == 0.0 && b.cell.seed == r.cell.seed)
            .unwrap();
        let expected = r.result.metrics.completion_time / base.result.metrics.completion_time;
        assert_eq!(r.normalized, Some(expected));
    }
}

#[test]
fn frozen_runs_report_their_ratio() {
    let cfg = tiny("zipf = [0.0, 1.5]\ndrift_shifts = 3\n[run]\nseeds = [2]\nnonadaptive = true");
    let rows = sweep(&cfg).unwrap();
    // One extra frozen row for each caching strategy.
    assert_eq!(rows.len(), 2 * (7 + 2));
    for r in &rows {
        let caching_adaptive = r.cell.adaptive && r.cell.strategy.caches();
        assert_eq!(r.nonadaptive_ratio.is_some(), caching_adaptive, "{:?}", r.cell);
        if let Some(q) = r.nonadaptive_ratio {
            let frozen = rows
                .iter()
                .find(|f| !f.cell.adaptive && f.cell.strategy == r.cell.strategy && f.cell.z == r.cell.z)
                .unwrap();
            assert_eq!(q, frozen.value(RunMode::Batch) / r.value(RunMode::Batch));
        }
    }
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = tiny("zipf = [0.5, 1.5]\nupdate_rate = 10.0\n[run]\nseeds = [4, 5]");
    let a = csv_text(&cfg);
    assert_eq!(a, csv_text(&cfg));
    assert!(a.starts_with("# joinopt "));
}

#[test]
fn stream_mode_reports_throughput() {
    let cfg = tiny(
        "zipf = [1.0]\n[run]\nseeds = [1]\nstrategies = [\"NO\", \"FO\"]\nmode = { kind = \"stream\", arrival_rate = 40.0, duration = 10.0, warmup = 0.1 }",
    );
    let rows = sweep(&cfg).unwrap();
    for r in &rows {
        assert_eq!(r.result.metrics.completion_time, 10.0);
        assert!(r.value(cfg.run.mode) > 0.0);
        assert_eq!(r.value(cfg.run.mode), r.result.metrics.throughput);
    }
}

#[test]
fn replayed_trace_matches_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("zipf = [1.2]\n[run]\nseeds = [3]\nstrategies = [\"FO\", \"LO\"]");
    let spec = cfg.workload.spec(1.2).unwrap();
    let trace = joinopt::workload::build_trace(&spec, 3).unwrap();
    let path = dir.path().join("trace.tsv");
    joinopt::workload::dump_trace(&path, &trace).unwrap();
    let mut replay = cfg.clone();
    replay.workload.trace = Some(path);
    let a = sweep(&cfg).unwrap();
    let b = sweep(&replay).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.result.metrics, y.result.metrics);
    }
}
