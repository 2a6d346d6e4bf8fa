//! Output files: `spaces.json`, `spaces.csv`, `history.csv`, `best.json`,
//! checkpoints, and the summary tables derived from a history.

use crate::evolution::{Checkpoint, HistoryRow, Member};
use crate::lengthsearch::{LengthSearchReport, LengthSpace};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed history: {0}")]
    MalformedHistory(String),
}

pub const HISTORY_HEADER: [&str; 9] = [
    "generation",
    "individual_id",
    "parent_ids",
    "operator",
    "effective_length",
    "num_params",
    "fitness",
    "loss",
    "eval_seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn write_spaces_json(path: &Path, report: &LengthSearchReport) -> Result<(), ReportError> {
    write_json(path, report)
}

/// One row per (space, repeat).
pub fn write_spaces_csv(path: &Path, report: &LengthSearchReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["space", "min", "max", "repeat", "fitness", "loss", "params"])?;
    for r in &report.results {
        for (repeat, rec) in r.records.iter().enumerate() {
            w.write_record([
                r.space.to_string(),
                r.space.min.to_string(),
                r.space.max.to_string(),
                repeat.to_string(),
                rec.fitness.to_string(),
                opt(rec.loss),
                rec.num_params.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Appends history rows; writes the header first when the file is new or
/// empty.
pub fn append_history(path: &Path, rows: &[HistoryRow]) -> Result<(), ReportError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(HISTORY_HEADER)?;
    }
    for row in rows {
        let parents: Vec<String> = row.parent_ids.iter().map(u64::to_string).collect();
        w.write_record([
            row.generation.to_string(),
            row.individual_id.to_string(),
            parents.join(";"),
            row.operator.clone(),
            row.effective_length.to_string(),
            row.num_params.to_string(),
            row.fitness.to_string(),
            opt(row.loss),
            row.eval_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T, ReportError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| ReportError::MalformedHistory(format!("line {line}: bad {} value `{raw}`", HISTORY_HEADER[i])))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HISTORY_HEADER {
        return Err(ReportError::MalformedHistory(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ReportError::MalformedHistory(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parents = rec.get(2).unwrap_or("");
        let parent_ids = if parents.is_empty() {
            Vec::new()
        } else {
            parents
                .split(';')
                .map(|p| {
                    p.parse()
                        .map_err(|_| ReportError::MalformedHistory(format!("line {line}: bad parent id `{p}`")))
                })
                .collect::<Result<_, _>>()?
        };
        let loss = match rec.get(7).unwrap_or("") {
            "" => None,
            _ => Some(field(&rec, 7, line)?),
        };
        rows.push(HistoryRow {
            generation: field(&rec, 0, line)?,
            individual_id: field(&rec, 1, line)?,
            parent_ids,
            operator: rec.get(3).unwrap_or("").to_string(),
            effective_length: field(&rec, 4, line)?,
            num_params: field(&rec, 5, line)?,
            fitness: field(&rec, 6, line)?,
            loss,
            eval_seconds: field(&rec, 8, line)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

pub fn generation_summary(rows: &[HistoryRow]) -> Vec<GenerationSummary> {
    let mut by_gen: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in rows {
        by_gen.entry(row.generation).or_default().push(row.fitness);
    }
    by_gen
        .into_iter()
        .map(|(generation, f)| GenerationSummary {
            generation,
            best: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: f.iter().sum::<f64>() / f.len() as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceSummary {
    pub space: LengthSpace,
    pub count: usize,
    pub best: f64,
    pub mean: f64,
}

/// Groups history rows by the length space of their effective length.
/// Length 0 maps to the `[0-0]` sentinel; length `L > 0` to space
/// `ceil(L / width)`.
pub fn space_summary(rows: &[HistoryRow], width: usize) -> Vec<SpaceSummary> {
    let mut by_space: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in rows {
        by_space
            .entry(row.effective_length.div_ceil(width.max(1)))
            .or_default()
            .push(row.fitness);
    }
    by_space
        .into_iter()
        .map(|(i, f)| SpaceSummary {
            space: if i == 0 {
                LengthSpace::ZERO
            } else {
                LengthSpace::nth(i, width)
            },
            count: f.len(),
            best: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: f.iter().sum::<f64>() / f.len() as f64,
        })
        .collect()
}

pub fn write_generation_summary(path: &Path, rows: &[GenerationSummary]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["generation", "best", "mean"])?;
    for r in rows {
        w.write_record([r.generation.to_string(), r.best.to_string(), r.mean.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_space_summary(path: &Path, rows: &[SpaceSummary]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["space", "min", "max", "count", "best", "mean"])?;
    for r in rows {
        w.write_record([
            r.space.to_string(),
            r.space.min.to_string(),
            r.space.max.to_string(),
            r.count.to_string(),
            r.best.to_string(),
            r.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of `best.json`.
#[derive(Debug, Serialize)]
pub struct BestReport<'a> {
    pub id: u64,
    pub effective_length: usize,
    pub genome: &'a crate::genome::Genome,
    pub lineage: &'a crate::evolution::Lineage,
    pub record: &'a crate::fitness::FitnessRecord,
}

pub fn write_best(path: &Path, best: &Member) -> Result<(), ReportError> {
    write_json(
        path,
        &BestReport {
            id: best.individual.id,
            effective_length: best.individual.genome.effective_length(),
            genome: &best.individual.genome,
            lineage: &best.individual.lineage,
            record: &best.record,
        },
    )
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ReportError> {
    write_json(path, ckpt)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ReportError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_spaces_json(path: &Path) -> Result<LengthSearchReport, ReportError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
