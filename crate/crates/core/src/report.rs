//! Machine-readable verification reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Outcome of one verification suite. Maps are ordered so the JSON form is
/// byte-stable for fixed inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lemma: String,
    pub measured_constants: BTreeMap<String, f64>,
    pub worst_witness: serde_json::Value,
    pub pass: bool,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl VerificationReport {
    pub fn new(
        lemma: &str,
        measured_constants: BTreeMap<String, f64>,
        worst_witness: serde_json::Value,
        pass: bool,
        tolerances: BTreeMap<String, f64>,
    ) -> Self {
        VerificationReport {
            lemma: lemma.to_string(),
            measured_constants,
            worst_witness,
            pass,
            tolerances,
            config_hash: None,
            seed: None,
        }
    }

    pub fn with_provenance(mut self, config_hash: &str, seed: u64) -> Self {
        self.config_hash = Some(config_hash.to_string());
        self.seed = Some(seed);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hex SHA-256 of a serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Small helper for building constant maps.
pub fn constants<const K: usize>(pairs: [(&str, f64); K]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
