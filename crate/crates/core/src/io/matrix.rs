//! Delimited prediction-matrix files.
//!
//! ```text
//! sample_id,label,fold[,repeat],<config id>...
//! s1,1,1,0.83,NA
//! ```
//!
//! One row per (sample, repeat); fold and repeat ids are 1-based; `NA` marks
//! a missing prediction. Survival labels are written `time/event` with event
//! 0 or 1.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::metrics::Labels;
use crate::store::PredictionStore;

use super::IoError;

/// Missing-cell token.
pub const MISSING: &str = "NA";

/// A store plus the sample identifiers of its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    pub sample_ids: Vec<String>,
    pub store: PredictionStore,
    /// Whether the file carries a repeat column.
    pub repeat_column: bool,
}

impl PredictionMatrix {
    pub fn new(store: PredictionStore) -> Self {
        PredictionMatrix {
            sample_ids: (0..store.n_samples()).map(|i| i.to_string()).collect(),
            repeat_column: store.n_repeats() > 1,
            store,
        }
    }
}

enum Label {
    Plain(f64),
    Survival(f64, bool),
}

fn parse_label(text: &str) -> Option<Label> {
    match text.split_once('/') {
        Some((t, e)) => {
            let t: f64 = t.trim().parse().ok().filter(|v: &f64| v.is_finite())?;
            match e.trim() {
                "1" => Some(Label::Survival(t, true)),
                "0" => Some(Label::Survival(t, false)),
                _ => None,
            }
        }
        None => text
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .map(Label::Plain),
    }
}

fn parse_id(text: &str, what: &str, row: usize) -> Result<usize, IoError> {
    match text.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(IoError::Row {
            row,
            message: format!("{what} id '{text}' is not a positive integer"),
        }),
    }
}

pub fn read_prediction_matrix(path: &Path) -> Result<PredictionMatrix, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_prediction_matrix(file)
}

/// Parses and validates a prediction matrix. Row numbers in errors are
/// 1-based file lines (the header is line 1).
pub fn parse_prediction_matrix<R: Read>(reader: R) -> Result<PredictionMatrix, IoError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 4 || header[0] != "sample_id" || header[1] != "label" || header[2] != "fold" {
        return Err(IoError::Header(
            "expected sample_id,label,fold[,repeat] followed by configuration columns".into(),
        ));
    }
    let repeat_column = header[3] == "repeat";
    let first_config = if repeat_column { 4 } else { 3 };
    let config_ids: Vec<String> = header[first_config..].to_vec();
    if config_ids.is_empty() {
        return Err(IoError::Header("no configuration columns".into()));
    }

    struct Row {
        sample: usize,
        repeat: usize,
        fold: usize,
        cells: Vec<Option<f64>>,
    }
    let mut sample_ids: Vec<String> = Vec::new();
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<Label> = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (r, record) in csv.records().enumerate() {
        let line = r + 2;
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let id = field(0).to_string();
        let label = parse_label(field(1)).ok_or_else(|| IoError::Row {
            row: line,
            message: format!("label '{}' is not a finite number", field(1)),
        })?;
        let fold = parse_id(field(2), "fold", line)?;
        let repeat = if repeat_column {
            parse_id(field(3), "repeat", line)?
        } else {
            1
        };
        let sample = match sample_index.get(&id) {
            Some(&s) => {
                let same = match (&labels[s], &label) {
                    (Label::Plain(a), Label::Plain(b)) => a == b,
                    (Label::Survival(a, e), Label::Survival(b, f)) => a == b && e == f,
                    _ => false,
                };
                if !same {
                    return Err(IoError::Row {
                        row: line,
                        message: format!("sample '{id}' has conflicting labels"),
                    });
                }
                s
            }
            None => {
                sample_index.insert(id.clone(), sample_ids.len());
                sample_ids.push(id.clone());
                labels.push(label);
                sample_ids.len() - 1
            }
        };
        if let Some(prev) = seen.insert((sample, repeat), line) {
            return Err(IoError::Row {
                row: line,
                message: format!("sample '{id}' repeat {repeat} already appears on row {prev}"),
            });
        }
        let mut cells = Vec::with_capacity(config_ids.len());
        for (c, config_id) in config_ids.iter().enumerate() {
            let text = field(first_config + c);
            if text == MISSING {
                cells.push(None);
            } else {
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => cells.push(Some(v)),
                    _ => {
                        return Err(IoError::Row {
                            row: line,
                            message: format!("prediction '{text}' for '{config_id}' is not finite"),
                        })
                    }
                }
            }
        }
        rows.push(Row {
            sample,
            repeat,
            fold,
            cells,
        });
    }
    if rows.is_empty() {
        return Err(IoError::Header("no data rows".into()));
    }
    let n = sample_ids.len();
    let repeats = rows.iter().map(|r| r.repeat).max().unwrap_or(1);
    if seen.len() != n * repeats {
        let missing = (0..n)
            .flat_map(|s| (1..=repeats).map(move |r| (s, r)))
            .find(|key| !seen.contains_key(key))
            .expect("some pair is missing");
        return Err(IoError::Header(format!(
            "sample '{}' has no row for repeat {}",
            sample_ids[missing.0], missing.1
        )));
    }
    let k = rows.iter().map(|r| r.fold).max().unwrap_or(1);
    let labels = if labels.iter().all(|l| matches!(l, Label::Plain(_))) {
        Labels::new(
            labels
                .iter()
                .map(|l| match l {
                    Label::Plain(v) => *v,
                    Label::Survival(..) => unreachable!(),
                })
                .collect(),
        )
    } else if labels.iter().all(|l| matches!(l, Label::Survival(..))) {
        let (times, events) = labels
            .iter()
            .map(|l| match l {
                Label::Survival(t, e) => (*t, *e),
                Label::Plain(_) => unreachable!(),
            })
            .unzip();
        Labels::survival(times, events)
    } else {
        return Err(IoError::Header("labels mix plain and time/event values".into()));
    }
    .map_err(|e| IoError::Header(e.to_string()))?;

    let mut fold_of = vec![0usize; n * repeats];
    for row in &rows {
        fold_of[(row.repeat - 1) * n + row.sample] = row.fold - 1;
    }
    let mut store = PredictionStore::new(labels, config_ids, repeats, k, fold_of)?;
    for row in &rows {
        for (j, cell) in row.cells.iter().enumerate() {
            if let Some(v) = cell {
                store.set(row.sample, j, row.repeat - 1, *v)?;
            }
        }
    }
    Ok(PredictionMatrix {
        sample_ids,
        store,
        repeat_column,
    })
}

fn format_label(labels: &Labels, i: usize) -> String {
    let v = labels.values()[i];
    match labels.events() {
        Some(e) => format!("{v}/{}", e[i] as u8),
        None => format!("{v}"),
    }
}

/// Writes rows repeat-major, samples in store order. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_prediction_matrix<W: Write>(matrix: &PredictionMatrix, writer: W) -> Result<(), IoError> {
    let store = &matrix.store;
    let repeat_column = matrix.repeat_column || store.n_repeats() > 1;
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_id".to_string(), "label".into(), "fold".into()];
    if repeat_column {
        header.push("repeat".into());
    }
    header.extend(store.config_ids().iter().cloned());
    csv.write_record(&header)?;
    for r in 0..store.n_repeats() {
        for i in 0..store.n_samples() {
            let mut record = vec![
                matrix.sample_ids[i].clone(),
                format_label(store.labels(), i),
                (store.fold_of(i, r) + 1).to_string(),
            ];
            if repeat_column {
                record.push((r + 1).to_string());
            }
            for j in 0..store.n_configs() {
                record.push(match store.get(i, j, r) {
                    Some(v) => format!("{v}"),
                    None => MISSING.to_string(),
                });
            }
            csv.write_record(&record)?;
        }
    }
    csv.flush().map_err(|source| IoError::File {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
