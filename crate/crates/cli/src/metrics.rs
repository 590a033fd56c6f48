//! The metrics document written by every run: metadata, the filter report,
//! per-epoch losses, retrieval metrics for the self and cross tests, and the
//! criterion report. Timestamps live in exactly one field so byte-level
//! comparisons can mask them.

use serde::{Deserialize, Serialize};

use nccl_core::eval::{CriterionReport, RetrievalMetrics};
use nccl_core::filter::FilterReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// Counters proving what the new-model path never touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentationReport {
    /// Reads of the old classifier after old-model training finished.
    pub old_classifier_reads: u64,
    /// Non-credible bank entries observed in any P(i)/A(i) during training.
    pub non_credible_bank_touches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub l_new: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub skipped_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub run_name: String,
    pub status: String,
    pub config_hash: String,
    pub seed: u64,
    pub timestamps: Timestamps,
    pub filter_report: FilterReport,
    pub loss_history_old: Vec<EpochRecord>,
    pub loss_history_new: Vec<EpochRecord>,
    pub self_test_old: RetrievalMetrics,
    pub self_test_new: RetrievalMetrics,
    pub cross_test_new_old: RetrievalMetrics,
    pub criterion_report: CriterionReport,
    pub instrumentation: InstrumentationReport,
}

/// Written instead of a [`MetricsDocument`] when a run aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncompleteDocument {
    pub run_name: String,
    pub status: String,
    pub config_hash: String,
    pub error: String,
}

impl MetricsDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialization cannot fail")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// The document with timestamps masked, for byte-level rerun comparison.
    pub fn comparable_json(&self) -> String {
        let mut doc = self.clone();
        doc.timestamps = Timestamps {
            started_unix_ms: 0,
            finished_unix_ms: 0,
        };
        doc.to_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_fails_schema() {
        let text = r#"{"run_name": "x", "status": "complete"}"#;
        assert!(MetricsDocument::from_json(text).is_err());
    }

    #[test]
    fn unknown_field_fails_schema() {
        let mut v: serde_json::Value = serde_json::json!({
            "run_name": "x", "status": "complete", "config_hash": "h", "seed": 1,
            "timestamps": {"started_unix_ms": 0, "finished_unix_ms": 0},
        });
        v["extra"] = serde_json::json!(true);
        assert!(serde_json::from_value::<MetricsDocument>(v).is_err());
    }
}
