//! JSON report documents.
//!
//! Floats are written with 17 significant digits in exponent form, which
//! round-trips every `f64` exactly.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::metrics::Metric;
use crate::protocols::ProtocolReport;
use crate::simulation::{StudyConfig, StudyRow};

use super::IoError;

pub const TOOL_NAME: &str = "cvboot";

/// Output of `correct` and `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub metric: Metric,
    pub seed: u64,
    /// Every effective option, echoed.
    pub parameters: BTreeMap<String, Value>,
    pub results: Vec<ProtocolReport>,
}

impl ReportDocument {
    pub fn new(command: &str, metric: Metric, seed: u64, parameters: BTreeMap<String, Value>) -> Self {
        ReportDocument {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            metric,
            seed,
            parameters,
            results: Vec::new(),
        }
    }
}

/// Output of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyDocument {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
}

impl StudyDocument {
    pub fn new(seed: u64, config: StudyConfig, rows: Vec<StudyRow>) -> Self {
        StudyDocument {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: "simulate".into(),
            seed,
            config,
            rows,
        }
    }

    /// Flat table, one line per (setting, protocol).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IoError> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "n",
            "c",
            "beta_a",
            "beta_b",
            "mu",
            "replicates",
            "protocol",
            "mean_bias",
            "se_bias",
            "mean_estimate",
            "mean_true_perf",
            "mean_models_trained",
            "coverage",
        ])?;
        for row in &self.rows {
            let s = &row.setting;
            csv.write_record([
                s.n.to_string(),
                s.c.to_string(),
                s.beta_a.to_string(),
                s.beta_b.to_string(),
                s.mu().to_string(),
                row.replicates.to_string(),
                row.protocol.name().to_string(),
                row.mean_bias.to_string(),
                row.se_bias.to_string(),
                row.mean_estimate.to_string(),
                row.mean_true_perf.to_string(),
                row.mean_models_trained.to_string(),
                row.coverage
                    .map_or_else(|| super::MISSING.to_string(), |c| c.to_string()),
            ])?;
        }
        csv.flush().map_err(|source| IoError::File {
            path: "<output>".into(),
            source,
        })?;
        Ok(())
    }
}

struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Pretty JSON with full-precision floats and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, IoError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{DropEvent, ProtocolKind};
    use crate::selection::SelectionMode;
    use proptest::prelude::*;

    fn report(estimate: f64, losses: Vec<f64>) -> ProtocolReport {
        ProtocolReport {
            protocol: ProtocolKind::Bced,
            metric: Metric::Auc,
            selection_mode: SelectionMode::Pooled,
            estimate,
            loss: 1.0 - estimate,
            ci: Some([estimate - 0.1, estimate + 0.1]),
            selected_config: 2,
            selected_config_id: "knn(k=3)".into(),
            models_trained: 12,
            per_bootstrap_losses: Some(losses),
            drop_trace: Some(vec![DropEvent {
                fold: 1,
                config: 0,
                config_id: "majority".into(),
                p_hat: 1.0,
            }]),
            failed_configs: Vec::new(),
            cvt_estimate: Some(0.9),
            tt_bias: None,
        }
    }

    #[test]
    fn seventeen_digits() {
        let text = to_json(&0.1f64).unwrap();
        assert_eq!(text, "1.0000000000000001e-1\n");
        assert_eq!(text.trim().parse::<f64>().unwrap(), 0.1);
    }

    proptest! {
        #[test]
        fn documents_round_trip(estimate in -1e6f64..1e6, losses in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..20)) {
            let mut doc = ReportDocument::new("run", Metric::Auc, 42, BTreeMap::new());
            doc.parameters.insert("alpha".into(), serde_json::json!(0.05));
            doc.results.push(report(estimate, losses));
            let text = to_json(&doc).unwrap();
            let back: ReportDocument = from_json(&text).unwrap();
            prop_assert_eq!(&back, &doc);
            prop_assert_eq!(to_json(&back).unwrap(), text);
        }
    }
}
