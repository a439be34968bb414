//! Delimited datasets: a header row, one numeric column per feature, a label
//! column and, for survival data, an event column.

use std::io::Read;

use crate::learners::Dataset;
use crate::metrics::Labels;

use super::IoError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetOptions {
    pub label_column: String,
    /// Event indicator (0/1) column; makes the labels survival times.
    pub event_column: Option<String>,
    /// Column holding sample identifiers, excluded from the features.
    pub id_column: Option<String>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            label_column: "label".into(),
            event_column: None,
            id_column: None,
        }
    }
}

/// Reads a dataset; returns it with one identifier per row (the id column,
/// or the 0-based row index).
pub fn read_dataset<R: Read>(reader: R, options: &DatasetOptions) -> Result<(Dataset, Vec<String>), IoError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::Header(format!("no column named '{name}'")))
    };
    let label_at = find(&options.label_column)?;
    let event_at = options.event_column.as_deref().map(find).transpose()?;
    let id_at = options.id_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != label_at && Some(c) != event_at && Some(c) != id_at)
        .collect();

    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut events = Vec::new();
    let mut ids = Vec::new();
    for (r, record) in csv.records().enumerate() {
        let line = r + 2;
        let record = record?;
        let number = |c: usize| -> Result<f64, IoError> {
            let text = record.get(c).unwrap_or("").trim();
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IoError::Row {
                    row: line,
                    message: format!("column '{}' value '{text}' is not a finite number", header[c]),
                })
        };
        values.push(number(label_at)?);
        if let Some(e) = event_at {
            match record.get(e).map(str::trim) {
                Some("1") => events.push(true),
                Some("0") => events.push(false),
                other => {
                    return Err(IoError::Row {
                        row: line,
                        message: format!("event value {other:?} is not 0 or 1"),
                    })
                }
            }
        }
        ids.push(match id_at {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => r.to_string(),
        });
        rows.push(
            feature_cols
                .iter()
                .map(|&c| number(c))
                .collect::<Result<Vec<f64>, _>>()?,
        );
    }
    if rows.is_empty() {
        return Err(IoError::Header("dataset has no rows".into()));
    }
    let labels = match event_at {
        Some(_) => Labels::survival(values, events),
        None => Labels::new(values),
    }
    .map_err(|e| IoError::Header(e.to_string()))?;
    Ok((Dataset::new(rows, labels)?, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_features_and_labels() {
        let text = "x1,label,x2\n0.5,1,2\n1.5,0,3\n";
        let (d, ids) = read_dataset(text.as_bytes(), &DatasetOptions::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[1.5, 3.0]);
        assert_eq!(d.labels().values(), &[1.0, 0.0]);
        assert_eq!(ids, vec!["0", "1"]);
    }

    #[test]
    fn survival_and_ids() {
        let text = "id,time,dead,x\na,5,1,0.1\nb,7,0,0.2\n";
        let options = DatasetOptions {
            label_column: "time".into(),
            event_column: Some("dead".into()),
            id_column: Some("id".into()),
        };
        let (d, ids) = read_dataset(text.as_bytes(), &options).unwrap();
        assert_eq!(d.n_features(), 1);
        assert_eq!(d.labels().events(), Some(&[true, false][..]));
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn bad_values_name_the_row() {
        let text = "x,label\n1,0\nfoo,1\n";
        assert!(matches!(
            read_dataset(text.as_bytes(), &DatasetOptions::default()),
            Err(IoError::Row { row: 3, .. })
        ));
        assert!(matches!(
            read_dataset("x,y\n1,2\n".as_bytes(), &DatasetOptions::default()),
            Err(IoError::Header(_))
        ));
    }
}
