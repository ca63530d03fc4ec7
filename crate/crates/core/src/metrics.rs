//! Per-transaction timing records, run summaries and report export.
//!
//! Latency runs from client submission to the client receiving its terminal
//! status. Throughput counts terminal notifications inside the measurement
//! window: it starts at the submission of the first transaction after the
//! warm-up prefix and ends at the last submission, which also leaves out the
//! drain after the offered load stops. Execution duration is
//! the service time of each endorsement reply (zero for a skipped
//! simulation).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::TxStatus;
use crate::ledger::{ClientId, TxId};
use crate::netsim::SimTime;
use crate::Mode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{0} was never registered")]
    UnknownTx(TxId),
    #[error("{0} already has a terminal status")]
    DuplicateTerminal(TxId),
    #[error("measurement window is empty")]
    EmptyWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    EndorseDone,
    OrderAck,
    Verdict,
    Notify(TxStatus),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx_id: TxId,
    pub client: ClientId,
    pub hot: bool,
    pub submit: SimTime,
    pub endorse_done: Option<SimTime>,
    pub order_ack: Option<SimTime>,
    pub verdict: Option<SimTime>,
    pub notify: Option<SimTime>,
    pub status: Option<TxStatus>,
    /// Endorsement service time consumed on behalf of this transaction.
    pub exec_time: SimTime,
}

impl TxRecord {
    pub fn latency(&self) -> Option<SimTime> {
        self.notify.map(|n| n - self.submit)
    }
}

#[derive(Clone, Debug, Default)]
pub struct MetricsCollector {
    records: BTreeMap<TxId, TxRecord>,
    /// (tx, duration) per endorsement reply.
    endorsements: Vec<(TxId, SimTime)>,
    pub protocol_bugs: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tx_id: TxId, client: ClientId, hot: bool, submit: SimTime) {
        self.records.insert(
            tx_id,
            TxRecord {
                tx_id,
                client,
                hot,
                submit,
                endorse_done: None,
                order_ack: None,
                verdict: None,
                notify: None,
                status: None,
                exec_time: SimTime::ZERO,
            },
        );
    }

    pub fn record(&mut self, kind: EventKind, tx_id: TxId, time: SimTime) -> Result<(), MetricsError> {
        let rec = self.records.get_mut(&tx_id).ok_or(MetricsError::UnknownTx(tx_id))?;
        match kind {
            EventKind::EndorseDone => rec.endorse_done = Some(time),
            EventKind::OrderAck => rec.order_ack = Some(time),
            EventKind::Verdict => {
                rec.verdict.get_or_insert(time);
            }
            EventKind::Notify(status) => {
                if rec.status.is_some() {
                    self.protocol_bugs += 1;
                    return Err(MetricsError::DuplicateTerminal(tx_id));
                }
                rec.status = Some(status);
                rec.notify = Some(time);
            }
        }
        Ok(())
    }

    pub fn record_endorsement(&mut self, tx_id: TxId, start: SimTime, done: SimTime) -> Result<(), MetricsError> {
        let rec = self.records.get_mut(&tx_id).ok_or(MetricsError::UnknownTx(tx_id))?;
        let d = done - start;
        rec.exec_time = rec.exec_time + d;
        self.endorsements.push((tx_id, d));
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &TxRecord> {
        self.records.values()
    }

    pub fn get(&self, tx_id: TxId) -> Option<&TxRecord> {
        self.records.get(&tx_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn endorsements(&self) -> &[(TxId, SimTime)] {
        &self.endorsements
    }
}

/// Mean, sample standard deviation and count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Stat { mean, stddev, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByClass<T> {
    pub all: T,
    pub valid: T,
    pub invalid: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub per_sec: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub submitted: usize,
    pub committed: usize,
    pub invalid_mvcc: usize,
    pub invalid_vscc: usize,
    pub rejected: usize,
    pub in_flight: usize,
}

impl Counts {
    pub fn invalid(&self) -> usize {
        self.invalid_mvcc + self.invalid_vscc + self.rejected
    }

    pub fn terminal(&self) -> usize {
        self.committed + self.invalid()
    }

    /// submitted = committed + invalidated + rejected + in flight.
    pub fn conserved(&self) -> bool {
        self.submitted == self.terminal() + self.in_flight
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub conflict_rate: f64,
    pub seed: u64,
    pub window_start_ms: f64,
    pub window_end_ms: f64,
    pub latency_ms: ByClass<Option<Stat>>,
    pub exec_duration_ms: Option<Stat>,
    pub throughput: ByClass<Throughput>,
    /// Counts over every transaction in the run, warm-up included.
    pub counts: Counts,
    /// Counts over the measured (post-warm-up) transactions.
    pub measured: Counts,
}

impl RunSummary {
    pub fn window_secs(&self) -> f64 {
        (self.window_end_ms - self.window_start_ms) / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub warmup_fraction: f64,
    /// Explicit window; derived from the records when `None`.
    pub window: Option<(SimTime, SimTime)>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { warmup_fraction: 0.1, window: None }
    }
}

fn count_statuses<'a>(records: impl Iterator<Item = &'a TxRecord>) -> Counts {
    let mut c = Counts::default();
    for r in records {
        c.submitted += 1;
        match r.status {
            Some(TxStatus::Committed) => c.committed += 1,
            Some(TxStatus::InvalidMvcc) => c.invalid_mvcc += 1,
            Some(TxStatus::InvalidVscc) => c.invalid_vscc += 1,
            Some(TxStatus::Rejected) => c.rejected += 1,
            None => c.in_flight += 1,
        }
    }
    c
}

/// Measured transactions: everything after the first `warmup_fraction` by submission order.
pub fn measured_records(collector: &MetricsCollector, warmup_fraction: f64) -> Vec<&TxRecord> {
    let mut by_submit: Vec<&TxRecord> = collector.records().collect();
    by_submit.sort_by_key(|r| (r.submit, r.tx_id));
    let skip = ((by_submit.len() as f64) * warmup_fraction.clamp(0.0, 1.0)).floor() as usize;
    by_submit.split_off(skip.min(by_submit.len()))
}

/// Measurement window: (first post-warm-up submission, last submission).
pub fn measurement_window(collector: &MetricsCollector, warmup_fraction: f64) -> Option<(SimTime, SimTime)> {
    let measured = measured_records(collector, warmup_fraction);
    let start = measured.first()?.submit;
    let end = measured.last()?.submit;
    Some((start, end))
}

pub fn summarize(
    collector: &MetricsCollector,
    mode: Mode,
    conflict_rate: f64,
    seed: u64,
    opts: &SummaryOptions,
) -> Result<RunSummary, MetricsError> {
    let measured = measured_records(collector, opts.warmup_fraction);
    let (start, end) = match opts.window {
        Some(w) => w,
        None => measurement_window(collector, opts.warmup_fraction).ok_or(MetricsError::EmptyWindow)?,
    };
    if end <= start {
        return Err(MetricsError::EmptyWindow);
    }

    let lat = |pred: &dyn Fn(TxStatus) -> bool| -> Option<Stat> {
        let v: Vec<f64> = measured
            .iter()
            .filter(|r| r.status.is_some_and(pred))
            .filter_map(|r| r.latency().map(SimTime::as_ms))
            .collect();
        Stat::of(&v)
    };
    let latency_ms = ByClass { all: lat(&|_| true), valid: lat(&|s| s.is_valid()), invalid: lat(&|s| !s.is_valid()) };

    let measured_ids: std::collections::BTreeSet<TxId> = measured.iter().map(|r| r.tx_id).collect();
    let exec: Vec<f64> =
        collector.endorsements().iter().filter(|(t, _)| measured_ids.contains(t)).map(|(_, d)| d.as_ms()).collect();

    let (start_ms, end_ms) = (start.as_ms(), end.as_ms());
    let secs = (end_ms - start_ms) / 1000.0;
    let in_window: Vec<&TxRecord> =
        collector.records().filter(|r| r.notify.is_some_and(|n| n >= start && n <= end)).collect();
    let tp = |pred: &dyn Fn(TxStatus) -> bool| {
        let count = in_window.iter().filter(|r| r.status.is_some_and(pred)).count();
        Throughput { per_sec: count as f64 / secs, count }
    };
    let throughput = ByClass { all: tp(&|_| true), valid: tp(&|s| s.is_valid()), invalid: tp(&|s| !s.is_valid()) };

    Ok(RunSummary {
        mode,
        conflict_rate,
        seed,
        window_start_ms: start_ms,
        window_end_ms: end_ms,
        latency_ms,
        exec_duration_ms: Stat::of(&exec),
        throughput,
        counts: count_statuses(collector.records()),
        measured: count_statuses(measured.iter().copied()),
    })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    mode: &'a str,
    conflict_rate: String,
    seed: u64,
    metric: &'static str,
    class: &'static str,
    mean: String,
    stddev: String,
    n: usize,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Rows of results.csv for one run, in a fixed metric/class order.
fn csv_rows(s: &RunSummary) -> Vec<CsvRow<'_>> {
    let mode = s.mode.as_str();
    let rate = format!("{:.2}", s.conflict_rate);
    let mut rows = Vec::new();
    let stat_row = |metric: &'static str, class: &'static str, st: &Option<Stat>| CsvRow {
        mode,
        conflict_rate: rate.clone(),
        seed: s.seed,
        metric,
        class,
        mean: fmt_opt(st.map(|x| x.mean)),
        stddev: fmt_opt(st.map(|x| x.stddev)),
        n: st.map_or(0, |x| x.n),
    };
    rows.push(stat_row("latency_ms", "all", &s.latency_ms.all));
    rows.push(stat_row("latency_ms", "valid", &s.latency_ms.valid));
    rows.push(stat_row("latency_ms", "invalid", &s.latency_ms.invalid));
    rows.push(stat_row("exec_duration_ms", "all", &s.exec_duration_ms));
    for (class, t) in [("all", &s.throughput.all), ("valid", &s.throughput.valid), ("invalid", &s.throughput.invalid)] {
        rows.push(CsvRow {
            mode,
            conflict_rate: rate.clone(),
            seed: s.seed,
            metric: "throughput_tps",
            class,
            mean: fmt_f(t.per_sec),
            stddev: String::new(),
            n: t.count,
        });
    }
    rows
}

pub fn to_csv(summaries: &[RunSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        for row in csv_rows(s) {
            w.serialize(row).expect("in-memory csv write");
        }
    }
    if summaries.is_empty() {
        w.write_record(["mode", "conflict_rate", "seed", "metric", "class", "mean", "stddev", "n"])
            .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Across-seed aggregate for one (mode, conflict rate) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub conflict_rate: f64,
    pub seeds: usize,
    pub exec_duration_ms: Option<Stat>,
    pub latency_ms: ByClass<Option<Stat>>,
    pub throughput_tps: ByClass<Option<Stat>>,
}

pub fn aggregate(summaries: &[RunSummary]) -> Vec<Aggregate> {
    let mut cells: BTreeMap<(Mode, u64), Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        cells.entry((s.mode, (s.conflict_rate * 1e6).round() as u64)).or_default().push(s);
    }
    cells
        .into_values()
        .map(|runs| {
            let over = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
                Stat::of(&runs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                mode: runs[0].mode,
                conflict_rate: runs[0].conflict_rate,
                seeds: runs.len(),
                exec_duration_ms: over(&|r| r.exec_duration_ms.map(|s| s.mean)),
                latency_ms: ByClass {
                    all: over(&|r| r.latency_ms.all.map(|s| s.mean)),
                    valid: over(&|r| r.latency_ms.valid.map(|s| s.mean)),
                    invalid: over(&|r| r.latency_ms.invalid.map(|s| s.mean)),
                },
                throughput_tps: ByClass {
                    all: over(&|r| Some(r.throughput.all.per_sec)),
                    valid: over(&|r| Some(r.throughput.valid.per_sec)),
                    invalid: over(&|r| Some(r.throughput.invalid.per_sec)),
                },
            }
        })
        .collect()
}

fn dat_cell(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.6} {:.6}", s.mean, s.stddev),
        None => "nan nan".to_string(),
    }
}

fn fig_dat(aggs: &[Aggregate], header: &str, cells: impl Fn(&Aggregate) -> Vec<Option<Stat>>) -> String {
    let mut out = format!("# {header}\n");
    for a in aggs {
        let cols: Vec<String> = cells(a).iter().map(dat_cell).collect();
        out.push_str(&format!("{} {:.2} {}\n", a.mode.as_str(), a.conflict_rate, cols.join(" ")));
    }
    out
}

/// Plot data: (execution duration, latency, throughput), one row per (mode, rate).
pub fn fig_files(aggs: &[Aggregate]) -> [String; 3] {
    [
        fig_dat(aggs, "mode conflict_rate exec_ms_mean exec_ms_std", |a| vec![a.exec_duration_ms]),
        fig_dat(
            aggs,
            "mode conflict_rate all_ms_mean all_ms_std valid_ms_mean valid_ms_std invalid_ms_mean invalid_ms_std",
            |a| vec![a.latency_ms.all, a.latency_ms.valid, a.latency_ms.invalid],
        ),
        fig_dat(
            aggs,
            "mode conflict_rate all_tps_mean all_tps_std valid_tps_mean valid_tps_std invalid_tps_mean invalid_tps_std",
            |a| vec![a.throughput_tps.all, a.throughput_tps.valid, a.throughput_tps.invalid],
        ),
    ]
}

#[derive(Debug, Serialize)]
struct JsonReport<'a> {
    header: ReportHeader,
    config: &'a serde_json::Value,
    runs: &'a [RunSummary],
    aggregates: Vec<Aggregate>,
}

#[derive(Debug, Serialize)]
struct ReportHeader {
    warmup_fraction: f64,
    window: &'static str,
    latency: &'static str,
    exec_duration: &'static str,
    stddev: &'static str,
}

#[derive(Debug, Clone)]
pub struct ExportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub figs: [PathBuf; 3],
}

/// Writes results.csv, results.json and fig4/5/6.dat into `dir`.
pub fn export(
    summaries: &[RunSummary],
    config: &serde_json::Value,
    warmup_fraction: f64,
    dir: &Path,
) -> io::Result<ExportPaths> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("results.csv");
    fs::write(&csv, to_csv(summaries))?;

    let aggs = aggregate(summaries);
    let report = JsonReport {
        header: ReportHeader {
            warmup_fraction,
            window: "first post-warm-up submission to last submission; notifications inside it are counted",
            latency: "client submission to terminal notification, post-warm-up transactions",
            exec_duration: "service time per endorsement reply; skipped simulations count as 0",
            stddev: "sample stddev within a run (results.csv) and across seeds (aggregates, fig*.dat)",
        },
        config,
        runs: summaries,
        aggregates: aggs.clone(),
    };
    let json = dir.join("results.json");
    let mut body = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
    body.push('\n');
    fs::write(&json, body)?;

    let [f4, f5, f6] = fig_files(&aggs);
    let figs = [dir.join("fig4.dat"), dir.join("fig5.dat"), dir.join("fig6.dat")];
    for (path, body) in figs.iter().zip([f4, f5, f6]) {
        fs::write(path, body)?;
    }
    Ok(ExportPaths { csv, json, figs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: f64) -> SimTime {
        SimTime::from_ms(v)
    }

    #[test]
    fn latency_is_notify_minus_submit() {
        let mut m = MetricsCollector::new();
        m.register(TxId(1), ClientId(0), false, ms(10.0));
        m.record(EventKind::Notify(TxStatus::Committed), TxId(1), ms(35.0)).unwrap();
        assert_eq!(m.get(TxId(1)).unwrap().latency(), Some(ms(25.0)));
    }

    #[test]
    fn second_terminal_is_rejected() {
        let mut m = MetricsCollector::new();
        m.register(TxId(1), ClientId(0), false, ms(0.0));
        m.record(EventKind::Notify(TxStatus::InvalidMvcc), TxId(1), ms(1.0)).unwrap();
        assert_eq!(
            m.record(EventKind::Notify(TxStatus::Committed), TxId(1), ms(2.0)),
            Err(MetricsError::DuplicateTerminal(TxId(1)))
        );
        assert_eq!(m.protocol_bugs, 1);
        assert_eq!(m.get(TxId(1)).unwrap().status, Some(TxStatus::InvalidMvcc));
    }

    #[test]
    fn unknown_tx() {
        let mut m = MetricsCollector::new();
        assert_eq!(m.record(EventKind::OrderAck, TxId(5), ms(0.0)), Err(MetricsError::UnknownTx(TxId(5))));
    }

    #[test]
    fn execution_duration_averages_endorsements() {
        let mut m = MetricsCollector::new();
        m.register(TxId(1), ClientId(0), true, ms(0.0));
        m.record_endorsement(TxId(1), ms(1.0), ms(6.0)).unwrap();
        m.record_endorsement(TxId(1), ms(1.0), ms(1.0)).unwrap();
        m.record(EventKind::Notify(TxStatus::InvalidMvcc), TxId(1), ms(9.0)).unwrap();
        let s = summarize(
            &m,
            Mode::Ea,
            0.5,
            1,
            &SummaryOptions { warmup_fraction: 0.0, window: Some((ms(0.0), ms(10.0))) },
        )
        .unwrap();
        let e = s.exec_duration_ms.unwrap();
        assert_eq!(e.n, 2);
        assert!((e.mean - 2.5).abs() < 1e-12);
        assert_eq!(m.get(TxId(1)).unwrap().exec_time, ms(5.0));
    }

    #[test]
    fn throughput_arithmetic() {
        let mut m = MetricsCollector::new();
        for i in 0..100 {
            m.register(TxId(i), ClientId(0), false, ms(i as f64));
            m.record(EventKind::Notify(TxStatus::Committed), TxId(i), ms(100.0 + i as f64 * 50.0)).unwrap();
        }
        let opts = SummaryOptions { warmup_fraction: 0.0, window: Some((ms(0.0), ms(10_000.0))) };
        let s = summarize(&m, Mode::Og, 0.2, 1, &opts).unwrap();
        assert!((s.throughput.valid.per_sec - 10.0).abs() < 1e-12);
        assert_eq!(s.throughput.invalid.count, 0);
        assert_eq!(s.throughput.invalid.per_sec, 0.0);
        assert!(s.latency_ms.invalid.is_none(), "absent, not zero");
        assert!(s.counts.conserved());
    }

    #[test]
    fn empty_window() {
        let m = MetricsCollector::new();
        assert_eq!(summarize(&m, Mode::Og, 0.2, 1, &SummaryOptions::default()), Err(MetricsError::EmptyWindow));
    }

    #[test]
    fn warmup_excludes_prefix() {
        let mut m = MetricsCollector::new();
        for i in 0..10 {
            m.register(TxId(i), ClientId(0), false, ms(i as f64 * 10.0));
            // the first transaction is slow
            let lat = if i == 0 { 500.0 } else { 5.0 };
            m.record(EventKind::Notify(TxStatus::Committed), TxId(i), ms(i as f64 * 10.0 + lat)).unwrap();
        }
        let s = summarize(&m, Mode::Og, 0.2, 1, &SummaryOptions { warmup_fraction: 0.1, window: None }).unwrap();
        let l = s.latency_ms.all.unwrap();
        assert_eq!(l.n, 9);
        assert!((l.mean - 5.0).abs() < 1e-9);
        assert_eq!(s.window_start_ms, 10.0);
        assert_eq!(s.window_end_ms, 90.0);
    }

    #[test]
    fn sample_stddev() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((s.mean - 5.0).abs() < 1e-12);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert!(Stat::of(&[]).is_none());
    }

    fn summary(mode: Mode, rate: f64, seed: u64) -> RunSummary {
        let mut m = MetricsCollector::new();
        for i in 0..20 {
            m.register(TxId(i), ClientId(0), i % 2 == 0, ms(i as f64));
            let st = if i % 3 == 0 { TxStatus::InvalidMvcc } else { TxStatus::Committed };
            m.record(EventKind::Notify(st), TxId(i), ms(i as f64 + 7.0 + seed as f64)).unwrap();
        }
        summarize(&m, mode, rate, seed, &SummaryOptions::default()).unwrap()
    }

    #[test]
    fn csv_row_counts_and_parse() {
        let mut all = Vec::new();
        for mode in [Mode::Og, Mode::Oemvcc, Mode::Ea] {
            for rate in [0.2, 0.5, 0.8] {
                for seed in 1..=5 {
                    all.push(summary(mode, rate, seed));
                }
            }
        }
        let text = to_csv(&all);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["mode", "conflict_rate", "seed", "metric", "class", "mean", "stddev", "n"]
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        let per_metric = rows.iter().filter(|r| &r[3] == "latency_ms" && &r[4] == "all").count();
        assert_eq!(per_metric, 45);
        assert_eq!(aggregate(&all).len(), 9);
    }

    #[test]
    fn export_is_byte_stable() {
        let runs = vec![summary(Mode::Og, 0.5, 1), summary(Mode::Ea, 0.5, 1)];
        let cfg = serde_json::json!({"mode": "all"});
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = export(&runs, &cfg, 0.1, a.path()).unwrap();
        let pb = export(&runs, &cfg, 0.1, b.path()).unwrap();
        assert_eq!(fs::read(&pa.csv).unwrap(), fs::read(&pb.csv).unwrap());
        assert_eq!(fs::read(&pa.json).unwrap(), fs::read(&pb.json).unwrap());
        for (x, y) in pa.figs.iter().zip(&pb.figs) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let fig5 = fs::read_to_string(&pa.figs[1]).unwrap();
        assert_eq!(fig5.lines().count(), 3);
    }
}
