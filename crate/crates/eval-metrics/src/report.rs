//! Metric result records, serializable into run manifests.

use serde::{Deserialize, Serialize};

/// One measured value with enough context to reproduce it: the metric
/// name, the sample count it covered, and the config hash and seed of
/// the run that produced it. Recomputing under identical inputs must
/// reproduce `value` bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub sample_count: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        sample_count: usize,
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Self {
        MetricReport {
            name: name.into(),
            value,
            sample_count,
            config_hash: config_hash.into(),
            seed,
        }
    }
}
