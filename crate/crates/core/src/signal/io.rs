use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{MultichannelRecord, TimeSeries, MAX_STAGE};
use crate::error::{Error, Result};

/// Reads a CSV record: header row of channel labels, one column per
/// channel, one row per sample.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn load_record(path: impl AsRef<Path>, rate_hz: f64) -> Result<MultichannelRecord> {
    let path = path.as_ref();
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if labels.is_empty() || labels.iter().all(String::is_empty) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "empty file or missing header row".into(),
        });
    }
    if let Some(c) = labels.iter().position(String::is_empty) {
        return Err(parse_err(1, c + 1, "empty channel label".into()));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for result in reader.records() {
        let record = result.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != labels.len() {
            return Err(parse_err(
                line,
                record.len().min(labels.len()) + 1,
                format!("expected {} fields, found {}", labels.len(), record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("non-numeric value `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, c + 1, format!("non-finite value `{field}`")));
            }
            columns[c].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no sample rows after header".into(),
        });
    }

    let channels = labels
        .into_iter()
        .zip(columns)
        .map(|(label, samples)| TimeSeries::new(samples, rate_hz, label))
        .collect::<Result<Vec<_>>>()?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MultichannelRecord::new(channels, subject, "", None)
}

/// Writes a record in the format read by [`load_record`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_record(record: &MultichannelRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "{}", record.labels().join(","))?;
    let mut line = String::new();
    for k in 0..record.len() {
        line.clear();
        for (c, ch) in record.channels().iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&ch.samples()[k].to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, column) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row,
            column,
            message: format!("{other:?}"),
        },
    }
}

/// One line of a record manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject_id: String,
    pub institution: String,
    pub stage: Option<u8>,
}

/// Parses a manifest: a JSON array of `{path, subject_id, institution, stage}`.
/// `stage` may be `null` for unlabeled records but the key must be present.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    let items = value.as_array().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "manifest must be a JSON array".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let context = format!("{} entry {i}", path.display());
            let field = |name: &str| {
                item.get(name).ok_or_else(|| Error::MissingField {
                    field: name.into(),
                    context: context.clone(),
                })
            };
            let text_field = |name: &str| -> Result<String> {
                field(name)?.as_str().map(str::to_owned).ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    message: format!("entry {i}: `{name}` must be a string"),
                })
            };
            let stage = match field("stage")? {
                Value::Null => None,
                v => {
                    let s = v.as_u64().filter(|&s| s <= u64::from(MAX_STAGE));
                    Some(s.ok_or_else(|| Error::Format {
                        path: path.to_path_buf(),
                        message: format!("entry {i}: `stage` must be null or an integer 0..={MAX_STAGE}"),
                    })? as u8)
                }
            };
            Ok(ManifestEntry {
                path: PathBuf::from(text_field("path")?),
                subject_id: text_field("subject_id")?,
                institution: text_field("institution")?,
                stage,
            })
        })
        .collect()
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, entries)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Loads every record named in a manifest. Relative paths resolve against
/// the manifest's directory.
pub fn load_manifest_records(manifest: impl AsRef<Path>, rate_hz: f64) -> Result<Vec<MultichannelRecord>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    load_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let p = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            let mut rec = load_record(&p, rate_hz)?.with_stage(e.stage)?;
            rec.subject_id = e.subject_id;
            rec.institution = e.institution;
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_columns_in_header_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("a,b,c\n");
        for k in 0..10 {
            text.push_str(&format!("{k},{},{}\n", k * 2, -k));
        }
        let p = write(dir.path(), "r.csv", &text);
        let rec = load_record(&p, 10.0).unwrap();
        assert_eq!(rec.n_channels(), 3);
        assert_eq!(rec.len(), 10);
        assert_eq!(rec.labels(), vec!["a", "b", "c"]);
        assert_eq!(rec.channel(1).samples()[4], 8.0);
        assert_eq!(rec.rate_hz(), 10.0);
    }

    #[test]
    fn ragged_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        // header is line 1, so the sixth data row sits on line 7
        let p = write(dir.path(), "r.csv", "a,b\n1,2\n1,2\n1,2\n1,2\n1,2\n1\n1,2\n");
        match load_record(&p, 1.0) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_names_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,b\n1,2\n3,x\n");
        match load_record(&p, 1.0) {
            Err(e @ Error::Parse { row: 3, column: 2, .. }) => assert!(e.to_string().contains("`x`")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_record(write(dir.path(), "e.csv", ""), 1.0).is_err());
        assert!(load_record(write(dir.path(), "h.csv", "a,b\n"), 1.0).is_err());
    }

    #[test]
    fn record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = MultichannelRecord::from_columns(
            vec![vec![0.1, 1e-300, -3.25], vec![std::f64::consts::PI, 2.0 / 3.0, 1e17]],
            4.0,
        )
        .unwrap();
        let p = dir.path().join("rt.csv");
        write_record(&rec, &p).unwrap();
        let back = load_record(&p, 4.0).unwrap();
        for (a, b) in rec.channels().iter().zip(back.channels()) {
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn manifest_missing_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.json",
            r#"[{"path": "a.csv", "subject_id": "s", "stage": 1}]"#,
        );
        match load_manifest(&p) {
            Err(Error::MissingField { field, .. }) => assert_eq!(field, "institution"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_records_resolve_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,2\n3,4\n");
        let entries = vec![ManifestEntry {
            path: "a.csv".into(),
            subject_id: "s1".into(),
            institution: "MD1".into(),
            stage: Some(3),
        }];
        let m = dir.path().join("manifest.json");
        write_manifest(&entries, &m).unwrap();
        assert_eq!(load_manifest(&m).unwrap(), entries);
        let recs = load_manifest_records(&m, 2.0).unwrap();
        assert_eq!(recs[0].stage(), Some(3));
        assert_eq!(recs[0].institution, "MD1");
        assert_eq!(recs[0].subject_id, "s1");
    }
}
