//! Per-step episode logs and the summary statistics computed from them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::EpisodeMeta;
use crate::sim::{Arm, PhaseKind};
use crate::traffic::Scenario;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("episode log is empty")]
    EmptyLog,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("bad phase descriptor '{0}'")]
    BadPhase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u32,
    pub total_queue: u32,
    /// Halted vehicles per arm, N, E, S, W.
    pub queues: [u32; 4],
    pub cum_wait: u64,
    pub phase: PhaseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn final_cumulative_wait(&self) -> u64 {
        self.records.last().map_or(0, |r| r.cum_wait)
    }

    pub fn total_queue_series(&self) -> impl Iterator<Item = u32> + '_ {
        self.records.iter().map(|r| r.total_queue)
    }
}

pub fn peak_queue(log: &EpisodeLog) -> Result<u32, MetricsError> {
    log.total_queue_series().max().ok_or(MetricsError::EmptyLog)
}

/// Share of steps whose total queue is strictly above half of the episode's
/// own peak. An episode that never queues scores 0.
pub fn fraction_above_half(log: &EpisodeLog) -> Result<f64, MetricsError> {
    let peak = peak_queue(log)?;
    if peak == 0 {
        return Ok(0.0);
    }
    let half = peak as f64 / 2.0;
    let above = log.total_queue_series().filter(|&q| q as f64 > half).count();
    Ok(above as f64 / log.records.len() as f64)
}

pub fn total_wait(log: &EpisodeLog) -> Result<u64, MetricsError> {
    log.records.last().map(|r| r.cum_wait).ok_or(MetricsError::EmptyLog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: String,
    pub scenario: u8,
    pub peak_queue: f64,
    pub fraction_above_half: f64,
    pub total_wait: f64,
}

/// One row per (controller, scenario), averaging over every log that shares
/// the pair. Rows follow the order in which pairs first appear.
pub fn summarize(logs: &[EpisodeLog]) -> Result<Vec<SummaryRow>, MetricsError> {
    let mut order = Vec::new();
    let mut acc: BTreeMap<(String, Scenario), (f64, f64, f64, usize)> = BTreeMap::new();
    for log in logs {
        let key = (log.meta.controller.clone(), log.meta.scenario);
        let entry = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0.0, 0.0, 0)
        });
        entry.0 += peak_queue(log)? as f64;
        entry.1 += fraction_above_half(log)?;
        entry.2 += total_wait(log)? as f64;
        entry.3 += 1;
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let (peak, frac, wait, n) = acc[&key];
            let n = n as f64;
            SummaryRow {
                controller: key.0,
                scenario: key.1.number(),
                peak_queue: peak / n,
                fraction_above_half: frac / n,
                total_wait: wait / n,
            }
        })
        .collect())
}

impl FromStr for PhaseKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let (kind, arm) = (chars.next(), chars.next().and_then(Arm::from_letter));
        match (kind, arm, chars.next()) {
            (Some('G'), Some(a), None) => Ok(PhaseKind::Green(a)),
            (Some('Y'), Some(a), None) => Ok(PhaseKind::Yellow(a)),
            _ => Err(MetricsError::BadPhase(s.to_string())),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRow {
    step: u32,
    total_queue: u32,
    #[serde(rename = "queue_N")]
    queue_n: u32,
    #[serde(rename = "queue_E")]
    queue_e: u32,
    #[serde(rename = "queue_S")]
    queue_s: u32,
    #[serde(rename = "queue_W")]
    queue_w: u32,
    cum_wait: u64,
    phase: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> MetricsError + '_ {
    move |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_step_csv<W: Write>(log: &EpisodeLog, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &log.records {
        w.serialize(StepRow {
            step: r.step,
            total_queue: r.total_queue,
            queue_n: r.queues[0],
            queue_e: r.queues[1],
            queue_s: r.queues[2],
            queue_w: r.queues[3],
            cum_wait: r.cum_wait,
            phase: r.phase.to_string(),
        })?;
    }
    if log.records.is_empty() {
        w.write_record(["step", "total_queue", "queue_N", "queue_E", "queue_S", "queue_W", "cum_wait", "phase"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_step_csv(log: &EpisodeLog, path: &Path) -> Result<(), MetricsError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_step_csv(log, BufWriter::new(f)).map_err(csv_err(path))
}

/// Reads step records back; the metadata is not stored in the file.
pub fn read_step_csv<R: io::Read>(reader: R, meta: EpisodeMeta) -> Result<EpisodeLog, MetricsError> {
    let path = Path::new("<reader>");
    let mut records = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: StepRow = row.map_err(csv_err(path))?;
        records.push(StepRecord {
            step: row.step,
            total_queue: row.total_queue,
            queues: [row.queue_n, row.queue_e, row.queue_s, row.queue_w],
            cum_wait: row.cum_wait,
            phase: row.phase.parse()?,
        });
    }
    Ok(EpisodeLog { meta, records })
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["controller", "scenario", "peak_queue", "fraction_above_half", "total_wait"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), MetricsError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_summary_csv(rows, BufWriter::new(f)).map_err(csv_err(path))
}

pub fn read_summary_csv<R: io::Read>(reader: R) -> Result<Vec<SummaryRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
