//! CSV bundle and console summaries.
//!
//! Metrics are written with exactly four decimals so that bundles compare
//! byte-for-byte.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{
    persistence_crosstab, phase_end_histograms, AggregateRow, Batch, BatchSummary, Crosstab, HistogramRow, RunTrace,
};
use crate::metrics::{Metric, MetricsCheckpoint, RunLabel};
use crate::scalar::Scalar;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
pub const CROSSTAB_FILE: &str = "crosstab.csv";

pub fn trace_file(rep: usize) -> String {
    format!("trace_rep{rep}.csv")
}

/// Four-decimal formatting; negative zero prints as zero.
pub fn fmt4(v: f64) -> String {
    format!("{:.4}", v + 0.0).replace("-0.0000", "0.0000")
}

/// One line of the runs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub rep: usize,
    pub reward_tag: String,
    pub p1_reward: f64,
    pub p1_vocabulary: f64,
    pub p1_alignment: f64,
    pub p1_intent_met: f64,
    pub p1_suc_mis: f64,
    pub p1_label: RunLabel,
    pub p1_group_alignment: Option<f64>,
    pub p2_reward: f64,
    pub p2_vocabulary: f64,
    pub p2_alignment: f64,
    pub p2_intent_met: f64,
    pub p2_suc_mis: f64,
    pub p2_label: RunLabel,
}

const RUN_HEADER: [&str; 15] = [
    "rep",
    "reward_tag",
    "p1_reward",
    "p1_vocabulary",
    "p1_alignment",
    "p1_intent_met",
    "p1_suc_mis",
    "p1_label",
    "p1_group_alignment",
    "p2_reward",
    "p2_vocabulary",
    "p2_alignment",
    "p2_intent_met",
    "p2_suc_mis",
    "p2_label",
];

impl RunRow {
    pub fn from_run<T: Scalar>(run: &RunTrace<T>) -> Self {
        let [p1, p2] = [run.phases[0].end(), run.phases[1].end()];
        RunRow {
            rep: run.rep_index,
            reward_tag: run.reward_tag.clone(),
            p1_reward: p1.reward,
            p1_vocabulary: p1.vocabulary,
            p1_alignment: p1.alignment,
            p1_intent_met: p1.intent_met,
            p1_suc_mis: p1.suc_mis,
            p1_label: run.phases[0].label,
            p1_group_alignment: run.phase1_group_alignment,
            p2_reward: p2.reward,
            p2_vocabulary: p2.vocabulary,
            p2_alignment: p2.alignment,
            p2_intent_met: p2.intent_met,
            p2_suc_mis: p2.suc_mis,
            p2_label: run.phases[1].label,
        }
    }

    /// Phase-end checkpoints (episode numbers are not stored and read as 0).
    pub fn phase_ends(&self) -> [MetricsCheckpoint; 2] {
        [
            MetricsCheckpoint {
                episode: 0,
                reward: self.p1_reward,
                vocabulary: self.p1_vocabulary,
                alignment: self.p1_alignment,
                intent_met: self.p1_intent_met,
                suc_mis: self.p1_suc_mis,
            },
            MetricsCheckpoint {
                episode: 0,
                reward: self.p2_reward,
                vocabulary: self.p2_vocabulary,
                alignment: self.p2_alignment,
                intent_met: self.p2_intent_met,
                suc_mis: self.p2_suc_mis,
            },
        ]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.rep.to_string(),
            self.reward_tag.clone(),
            fmt4(self.p1_reward),
            fmt4(self.p1_vocabulary),
            fmt4(self.p1_alignment),
            fmt4(self.p1_intent_met),
            fmt4(self.p1_suc_mis),
            self.p1_label.name().to_string(),
            self.p1_group_alignment.map(fmt4).unwrap_or_default(),
            fmt4(self.p2_reward),
            fmt4(self.p2_vocabulary),
            fmt4(self.p2_alignment),
            fmt4(self.p2_intent_met),
            fmt4(self.p2_suc_mis),
            self.p2_label.name().to_string(),
        ]
    }
}

fn csv_bytes(header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Invariant(format!("csv buffer: {e}")))
}

pub fn aggregate_csv(name: &str, rows: &[AggregateRow]) -> Result<Vec<u8>> {
    let mut header = vec!["experiment", "phase", "episode"];
    let sd_names: Vec<String> = Metric::ALL.iter().map(|m| format!("{}_sd", m.name())).collect();
    header.extend(Metric::ALL.iter().map(|m| m.name()));
    header.extend(sd_names.iter().map(String::as_str));
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![name.to_string(), r.phase.to_string(), r.episode.to_string()];
            rec.extend(Metric::ALL.iter().map(|&m| fmt4(r.mean.get(m))));
            rec.extend(Metric::ALL.iter().map(|&m| fmt4(r.sd.get(m))));
            rec
        }),
    )
}

pub fn runs_csv(rows: &[RunRow]) -> Result<Vec<u8>> {
    csv_bytes(&RUN_HEADER, rows.iter().map(RunRow::record))
}

pub fn histogram_csv(rows: &[HistogramRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["phase", "metric", "bin_low", "bin_high", "count"],
        rows.iter().map(|h| {
            vec![
                h.phase.to_string(),
                h.metric.name().to_string(),
                fmt4(h.bin_low),
                fmt4(h.bin_high),
                h.count.to_string(),
            ]
        }),
    )
}

pub fn crosstab_csv(tab: &Crosstab) -> Result<Vec<u8>> {
    let mut records = Vec::new();
    for p1 in RunLabel::ALL {
        for p2 in RunLabel::ALL {
            records.push(vec![p1.name().to_string(), p2.name().to_string(), tab.get(p1, p2).to_string()]);
        }
    }
    csv_bytes(&["phase1_label", "phase2_label", "count"], records)
}

pub fn trace_csv<T: Scalar>(run: &RunTrace<T>) -> Result<Option<Vec<u8>>> {
    let Some(trace) = &run.trace else { return Ok(None) };
    let header =
        ["episode", "phase", "sender", "receiver", "state", "signal", "minted", "action", "reward", "intent_met"];
    csv_bytes(
        &header,
        trace.iter().map(|e| {
            let r = &e.record;
            vec![
                r.episode_index.to_string(),
                e.phase.to_string(),
                r.sender.0.to_string(),
                r.receiver.0.to_string(),
                r.state.0.to_string(),
                r.signal.to_string(),
                u8::from(r.minted).to_string(),
                r.action.0.to_string(),
                fmt4(r.reward.as_f64()),
                u8::from(r.intent_met).to_string(),
            ]
        }),
    )
    .map(Some)
}

/// Writes the bundle for a batch and returns the paths written.
pub fn write_bundle<T: Scalar>(batch: &Batch<T>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let s = &batch.summary;
    let runs: Vec<RunRow> = batch.runs.iter().map(RunRow::from_run).collect();
    let mut files = vec![
        (AGGREGATE_FILE.to_string(), aggregate_csv(&s.name, &s.rows)?),
        (RUNS_FILE.to_string(), runs_csv(&runs)?),
        (HISTOGRAM_FILE.to_string(), histogram_csv(&s.histograms)?),
        (CROSSTAB_FILE.to_string(), crosstab_csv(&s.crosstab)?),
    ];
    for run in &batch.runs {
        if let Some(bytes) = trace_csv(run)? {
            files.push((trace_file(run.rep_index), bytes));
        }
    }
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_runs(reader: impl Read) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(RUN_HEADER.iter().copied()) {
        return Err(Error::RunsFile(format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let rows = r
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::RunsFile(format!("row {}: {e}", i + 1))))
        .collect::<Result<Vec<RunRow>>>()?;
    if rows.is_empty() {
        return Err(Error::RunsFile("no runs".into()));
    }
    Ok(rows)
}

pub fn read_runs_file(path: &Path) -> Result<Vec<RunRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_runs(file).map_err(|e| match e {
        Error::RunsFile(m) => Error::RunsFile(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Histograms and persistence cross-tab recomputed from stored runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunsReport {
    pub histograms: Vec<HistogramRow>,
    pub crosstab: Crosstab,
}

pub fn report_from_runs(rows: &[RunRow]) -> Result<RunsReport> {
    let ends: Vec<[MetricsCheckpoint; 2]> = rows.iter().map(RunRow::phase_ends).collect();
    Ok(RunsReport {
        histograms: phase_end_histograms(&ends)?,
        crosstab: persistence_crosstab(rows.iter().map(|r| (r.p1_label, r.p2_label))),
    })
}

pub fn write_runs_report(report: &RunsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in
        [(HISTOGRAM_FILE, histogram_csv(&report.histograms)?), (CROSSTAB_FILE, crosstab_csv(&report.crosstab)?)]
    {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Checkpoint table with one "mean (SD)" cell per metric, per phase.
pub fn format_summary(summary: &BatchSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", summary.name);
    for phase in [1u8, 2] {
        let _ = writeln!(out, "\nPhase {phase}");
        let _ = write!(out, "{:>8}", "Episode");
        for m in Metric::ALL {
            let _ = write!(out, " {:>17}", m.title());
        }
        out.push('\n');
        for row in summary.rows.iter().filter(|r| r.phase == phase) {
            let _ = write!(out, "{:>8}", row.episode);
            for m in Metric::ALL {
                let _ = write!(out, " {:>17}", format!("{} ({})", fmt4(row.mean.get(m)), fmt4(row.sd.get(m))));
            }
            out.push('\n');
        }
    }
    out
}

pub fn format_runs_report(report: &RunsReport) -> String {
    let mut out = String::new();
    for phase in [1u8, 2] {
        let _ = writeln!(out, "Phase {phase} end distributions");
        for h in report.histograms.iter().filter(|h| h.phase == phase) {
            let _ = writeln!(out, "  {:<10} [{}, {}] {}", h.metric.name(), fmt4(h.bin_low), fmt4(h.bin_high), h.count);
        }
    }
    let _ = writeln!(out, "Label persistence (phase 1 -> phase 2)");
    let tab = &report.crosstab;
    for p1 in RunLabel::ALL {
        for p2 in RunLabel::ALL {
            let _ = writeln!(out, "  {:<28} -> {:<28} {}", p1.name(), p2.name(), tab.get(p1, p2));
        }
    }
    out
}

pub fn print(out: &mut impl Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::experiment::run_batch;

    fn tiny_batch() -> Batch {
        let mut cfg = ExperimentConfig::preset("exp1_2agents").unwrap();
        cfg.repetitions = 4;
        cfg.phase1.episodes = 300;
        cfg.phase2.episodes = 300;
        cfg.checkpoints = vec![100];
        run_batch(&cfg, 2, Some(1)).unwrap()
    }

    #[test]
    fn four_decimals() {
        assert_eq!(fmt4(0.5), "0.5000");
        assert_eq!(fmt4(-0.0), "0.0000");
        assert_eq!(fmt4(-1e-9), "0.0000");
        assert_eq!(fmt4(2.0 / 3.0), "0.6667");
    }

    #[test]
    fn runs_round_trip() {
        let batch = tiny_batch();
        let rows: Vec<RunRow> = batch.runs.iter().map(RunRow::from_run).collect();
        let bytes = runs_csv(&rows).unwrap();
        let back = read_runs(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.p1_label, b.p1_label);
            assert!((a.p2_reward - b.p2_reward).abs() <= 5e-5);
            assert_eq!(a.p1_group_alignment.is_none(), b.p1_group_alignment.is_none());
        }
        assert_eq!(runs_csv(&back).unwrap(), bytes);
    }

    #[test]
    fn report_matches_batch_histograms() {
        let batch = tiny_batch();
        let rows: Vec<RunRow> = batch.runs.iter().map(RunRow::from_run).collect();
        let back = read_runs(runs_csv(&rows).unwrap().as_slice()).unwrap();
        let report = report_from_runs(&back).unwrap();
        assert_eq!(report.crosstab, batch.summary.crosstab);
        assert_eq!(histogram_csv(&report.histograms).unwrap(), histogram_csv(&batch.summary.histograms).unwrap());
    }

    #[test]
    fn empty_or_malformed_runs_file() {
        let header = RUN_HEADER.join(",") + "\n";
        assert!(matches!(read_runs(header.as_bytes()), Err(Error::RunsFile(_))));
        assert!(matches!(read_runs("".as_bytes()), Err(Error::RunsFile(_))));
        assert!(matches!(read_runs("a,b\n1,2\n".as_bytes()), Err(Error::RunsFile(_))));
        let bad = format!("{header}0,R1,x,2,0.5,0.5,0.5,aligned,,1,2,0.5,0.5,0.5,aligned\n");
        assert!(matches!(read_runs(bad.as_bytes()), Err(Error::RunsFile(_))));
    }

    #[test]
    fn summary_numbers_come_from_aggregate() {
        let batch = tiny_batch();
        let csv = String::from_utf8(aggregate_csv(&batch.summary.name, &batch.summary.rows).unwrap()).unwrap();
        let text = format_summary(&batch.summary);
        let cells: std::collections::BTreeSet<&str> = csv.lines().skip(1).flat_map(|l| l.split(',')).collect();
        let printed =
            text.split(|c: char| c.is_whitespace() || c == '(' || c == ')').filter(|t| t.parse::<f64>().is_ok());
        for n in printed {
            assert!(cells.contains(n), "{n} printed but not in the aggregate CSV");
        }
    }

    #[test]
    fn trace_has_every_episode() {
        let batch = tiny_batch();
        let bytes = trace_csv(&batch.runs[1]).unwrap().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 601);
        assert!(text.starts_with("episode,phase,sender,receiver,state,signal,minted,action,reward,intent_met\n"));
        assert!(trace_csv(&batch.runs[0]).unwrap().is_none());
    }
}
