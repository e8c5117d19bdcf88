//! Files written by a run and read back by `report`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{MetricsReport, ScenarioOutput};
use crate::error::{Error, Result};
use crate::reconfig::CommitteeRow;

pub const COMMITTEE_CSV: &str = "committee.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const EVENTS_JSONL: &str = "events.jsonl";

const COMMITTEE_HEADER: [&str; 4] = ["epoch", "f_t", "admitted", "evicted"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Committee trajectory; the header is written even with no rows.
pub fn write_committee_csv<W: Write>(rows: &[CommitteeRow], w: W) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(COMMITTEE_HEADER)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn committee_csv(rows: &[CommitteeRow]) -> String {
    let mut buf = Vec::new();
    write_committee_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn metrics_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("metrics serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `committee.csv`, `metrics.json` and `events.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, out: &ScenarioOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(
        &dir.join(COMMITTEE_CSV),
        committee_csv(&out.committee).as_bytes(),
    )?;
    write_file(
        &dir.join(METRICS_JSON),
        metrics_json(&out.report).as_bytes(),
    )?;
    write_file(&dir.join(EVENTS_JSONL), out.log.to_jsonl().as_bytes())
}

pub fn read_metrics(dir: &Path) -> Result<MetricsReport> {
    let path = dir.join(METRICS_JSON);
    let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&s).map_err(|source| Error::Json { path, source })
}

pub fn read_committee_csv(dir: &Path) -> Result<Vec<CommitteeRow>> {
    let path = dir.join(COMMITTEE_CSV);
    let mut rdr = csv::Reader::from_path(&path).map_err(|source| Error::Csv {
        path: path.clone(),
        source,
    })?;
    rdr.deserialize()
        .collect::<Result<Vec<CommitteeRow>, _>>()
        .map_err(|source| Error::Csv { path, source })
}

/// Re-reads a run directory and renders it: a `metric,value` table for CSV,
/// metrics plus the committee trajectory for JSON.
pub fn render_report(dir: &Path, format: Format) -> Result<String> {
    let metrics = read_metrics(dir)?;
    let committee = read_committee_csv(dir)?;
    match format {
        Format::Json => {
            let v = serde_json::json!({ "metrics": metrics, "committee": committee });
            let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let v = serde_json::to_value(&metrics).expect("metrics serialize");
            let mut rows = Vec::new();
            flatten("", &v, &mut rows);
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["metric", "value"])
                .expect("in-memory write");
            for (k, v) in rows {
                wtr.write_record([k, v]).expect("in-memory write");
            }
            Ok(String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8"))
        }
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        // long series belong to the committee table
        Value::Array(a) => out.push((format!("{prefix}.len"), a.len().to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_scenario, ScenarioConfig};

    #[test]
    fn empty_run_writes_header_only() {
        assert_eq!(committee_csv(&[]), "epoch,f_t,admitted,evicted\n");
        let out = run_scenario(&ScenarioConfig::new(4, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &out).unwrap();
        let csv = fs::read_to_string(dir.path().join(COMMITTEE_CSV)).unwrap();
        assert_eq!(csv, "epoch,f_t,admitted,evicted\n");
        assert!(read_committee_csv(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn round_trip_and_byte_identical() {
        let mut cfg = ScenarioConfig::new(4, 6);
        cfg.tau_reconfig = 3;
        cfg.t_prime = 2;
        cfg.dlog_bits = 16;
        cfg.participants = vec![crate::reconfig::ParticipantSpec {
            id: 1,
            devices: vec![2],
        }];
        let out = run_scenario(&cfg).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_outputs(a.path(), &out).unwrap();
        write_outputs(b.path(), &out).unwrap();
        for f in [COMMITTEE_CSV, METRICS_JSON, EVENTS_JSONL] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
        assert_eq!(read_metrics(a.path()).unwrap(), out.report);
        assert_eq!(read_committee_csv(a.path()).unwrap(), out.committee);
        let csv = render_report(a.path(), Format::Csv).unwrap();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("spam.submitted,"));
        let json: serde_json::Value =
            serde_json::from_str(&render_report(a.path(), Format::Json).unwrap()).unwrap();
        assert_eq!(json["committee"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn missing_dir_names_path() {
        let err = read_metrics(Path::new("/nonexistent/run")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run/metrics.json"));
    }
}
