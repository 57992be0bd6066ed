//! On-disk formats.
//!
//! Traces are newline-delimited JSON records `{"id", "member", "losses"}` with
//! losses stored as 32-bit floats, next to a `manifest.json` sidecar. Scores
//! are `id,score` CSV files; everything else is pretty-printed JSON.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use losstrace::{DpSettings, RunManifest, ScoreVector, TraceSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const TRACES_FILE: &str = "traces.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    member: bool,
    losses: Vec<f32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    member: bool,
    losses: Vec<f32>,
}

/// Manifest sidecar as stored next to a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub run_id: String,
    pub seed: u64,
    pub epochs: usize,
    pub config_digest: String,
    pub dp: Option<DpSettings>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_traces(path: &Path, traces: &TraceSet) -> Result<()> {
    let mut w = create(path)?;
    for (i, id) in traces.sample_ids().iter().enumerate() {
        let record = RecordOut {
            id,
            member: traces.membership()[i],
            losses: traces.row(i).iter().map(|&l| l as f32).collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

/// Reads a trace file; errors name the offending line (1-based).
pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut ids = Vec::new();
    let mut membership = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let bad = |line: usize, msg: String| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| bad(lineno, format!("malformed record: {e}")))?;
        match width {
            None if rec.losses.is_empty() => return Err(bad(lineno, "record has no losses".into())),
            None => width = Some(rec.losses.len()),
            Some(w) if w != rec.losses.len() => {
                return Err(bad(lineno, format!("ragged losses: {} values, expected {w}", rec.losses.len())))
            }
            Some(_) => {}
        }
        if let Some(l) = rec.losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(bad(lineno, format!("loss {l} is not a finite non-negative value")));
        }
        if let Some(first) = seen.insert(rec.id.clone(), lineno) {
            return Err(bad(lineno, format!("duplicate id {:?} (first seen on line {first})", rec.id)));
        }
        losses.extend(rec.losses.iter().map(|&l| l as f64));
        ids.push(rec.id);
        membership.push(rec.member);
    }
    let width = width.ok_or_else(|| CliError::Data(format!("{}: no trace records", path.display())))?;
    Ok(TraceSet::from_flat(ids, losses, membership, width - 1)?)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let file = ManifestFile {
        run_id: manifest.run_id.clone(),
        seed: manifest.seed,
        epochs: manifest.epoch_count,
        config_digest: manifest.config_digest.clone(),
        dp: manifest.dp,
    };
    write_json(path, &file)
}

/// Persists a run as `traces.jsonl` plus `manifest.json` in `dir`.
pub fn write_run(dir: &Path, manifest: &RunManifest, traces: &TraceSet) -> Result<()> {
    write_traces(&dir.join(TRACES_FILE), traces)?;
    write_manifest(&dir.join(MANIFEST_FILE), manifest)
}

/// Loads a run directory; the manifest sidecar is mandatory.
pub fn read_run(dir: &Path) -> Result<(RunManifest, TraceSet)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::Data(format!("missing manifest {}", manifest_path.display())));
    }
    let file: ManifestFile = read_json(&manifest_path)?;
    let traces = read_traces(&dir.join(TRACES_FILE))?;
    if traces.epoch_count() != file.epochs {
        return Err(CliError::Data(format!(
            "{}: manifest declares {} epochs but traces hold {}",
            dir.display(),
            file.epochs,
            traces.epoch_count()
        )));
    }
    let manifest = RunManifest {
        run_id: file.run_id,
        seed: file.seed,
        config_digest: file.config_digest,
        member_mask: traces.membership().to_vec(),
        epoch_count: file.epochs,
        dp: file.dp,
    };
    Ok((manifest, traces))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes rows of already formatted cells under a header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let w = create(path)?;
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    out.write_record(header).map_err(err)?;
    for row in rows {
        out.write_record(row).map_err(err)?;
    }
    let w = out.into_inner().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    finish(path, w)
}

pub fn write_scores(path: &Path, scores: &ScoreVector) -> Result<()> {
    let rows: Vec<Vec<String>> =
        scores.sample_ids.iter().zip(&scores.scores).map(|(id, s)| vec![id.clone(), fmt_f64(*s)]).collect();
    write_csv(path, &["id", "score"], &rows)
}

/// Reads an `id,score` file; scores are taken as higher-is-riskier.
pub fn read_scores(path: &Path, predictor_name: &str) -> Result<ScoreVector> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| CliError::Data(format!("{}:{line}: {e}", path.display())))?;
        if record.len() != 2 {
            return Err(CliError::Data(format!("{}:{line}: expected 2 columns", path.display())));
        }
        let score: f64 = parse_f64(&record[1])
            .map_err(|e| CliError::Data(format!("{}:{line}: bad score {:?}: {e}", path.display(), &record[1])))?;
        ids.push(record[0].to_string());
        scores.push(score);
    }
    Ok(ScoreVector::new(predictor_name, ids, scores, true)?)
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:?}")
    }
}

pub fn parse_f64(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    s.trim().parse()
}

pub fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, -0.0, 1.0, 0.1, 1e-300, 123456.789, f64::INFINITY, f64::NEG_INFINITY, f64::MIN_POSITIVE] {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }
}
