//! Feature-schema manifest.
//!
//! A schema names every feature in the per-relay vector, tags each with a
//! unit and a kind (continuous or binary flag), and marks the subset of
//! clean, low-missingness features consumed by the geometric observer.
//! The manifest is versioned and content-hashed; models record the hash of
//! the schema they were trained under, and the pipeline refuses to mix
//! frames and models with different hashes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

/// Width of the full feature vector.
pub const N_FEATURES: usize = 191;
/// Number of clean features consumed by the geometric observer.
pub const N_CLEAN: usize = 17;

/// Positions of the clean features inside the full vector.
pub const DEFAULT_CLEAN_INDICES: [usize; N_CLEAN] = [
    1, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 28, 29, 30, 31, 32,
];

/// Named positions for features referenced directly by the pipeline.
pub mod feat {
    pub const OBSERVED_BANDWIDTH: usize = 1;
    pub const BANDWIDTH_RATE: usize = 3;
    pub const BANDWIDTH_BURST: usize = 4;
    pub const ADVERTISED_BANDWIDTH: usize = 5;
    pub const BANDWIDTH_DIFFERENCE: usize = 6;
    pub const BANDWIDTH_RATIO: usize = 7;
    pub const BURST_TO_RATE_RATIO: usize = 8;
    pub const MIDDLE_PROBABILITY: usize = 9;
    pub const GUARD_PROBABILITY: usize = 10;
    pub const EXIT_PROBABILITY: usize = 11;
    pub const CONSENSUS_WEIGHT: usize = 13;
    pub const CONSENSUS_WEIGHT_FRACTION: usize = 14;
    pub const LATITUDE: usize = 28;
    pub const LONGITUDE: usize = 29;
    pub const RELAY_LIFESPAN_DAYS: usize = 30;
    pub const DAYS_SINCE_RESTART: usize = 31;
    pub const OVERLOAD_GENERAL_TIMESTAMP: usize = 32;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub clean_indices: Vec<usize>,
}

impl FeatureSchema {
    /// The documented default manifest: 191 features derived from relay
    /// detail documents, with the 17 clean features at their fixed positions.
    pub fn default_manifest() -> Self {
        let mut names = vec![String::new(); N_FEATURES];
        let mut units = vec!["dimensionless".to_string(); N_FEATURES];
        let mut kinds = vec![FeatureKind::Continuous; N_FEATURES];

        let mut set = |i: usize, name: &str, unit: &str, kind: FeatureKind| {
            names[i] = name.to_string();
            units[i] = unit.to_string();
            kinds[i] = kind;
        };

        use FeatureKind::{Continuous, Flag};
        set(0, "flag_running", "dimensionless", Flag);
        set(1, "observed_bandwidth", "bytes_per_second", Continuous);
        set(2, "flag_fast", "dimensionless", Flag);
        set(3, "bandwidth_rate", "bytes_per_second", Continuous);
        set(4, "bandwidth_burst", "bytes_per_second", Continuous);
        set(5, "advertised_bandwidth", "bytes_per_second", Continuous);
        set(6, "bandwidth_difference", "bytes_per_second", Continuous);
        set(7, "bandwidth_ratio", "dimensionless", Continuous);
        set(8, "burst_to_rate_ratio", "dimensionless", Continuous);
        set(9, "middle_probability", "probability", Continuous);
        set(10, "guard_probability", "probability", Continuous);
        set(11, "exit_probability", "probability", Continuous);
        set(12, "flag_stable", "dimensionless", Flag);
        set(13, "consensus_weight", "dimensionless", Continuous);
        set(14, "consensus_weight_fraction", "dimensionless", Continuous);
        set(15, "flag_valid", "dimensionless", Flag);
        set(16, "flag_guard", "dimensionless", Flag);
        set(17, "flag_exit", "dimensionless", Flag);
        set(18, "flag_hsdir", "dimensionless", Flag);
        set(19, "flag_v2dir", "dimensionless", Flag);
        set(20, "flag_authority", "dimensionless", Flag);
        set(21, "flag_bad_exit", "dimensionless", Flag);
        set(22, "flag_exit_policy_web", "dimensionless", Flag);
        set(23, "flag_reachable_ipv6", "dimensionless", Flag);
        set(24, "flag_unmeasured", "dimensionless", Flag);
        set(25, "flag_hibernating", "dimensionless", Flag);
        set(26, "flag_overload_ratelimits", "dimensionless", Flag);
        set(27, "flag_overload_fd_exhausted", "dimensionless", Flag);
        set(28, "latitude", "degrees", Continuous);
        set(29, "longitude", "degrees", Continuous);
        set(30, "relay_lifespan_days", "days", Continuous);
        set(31, "days_since_restart", "days", Continuous);
        set(32, "overload_general_timestamp", "unix_seconds", Continuous);
        set(33, "first_seen_timestamp", "unix_seconds", Continuous);
        set(34, "last_seen_timestamp", "unix_seconds", Continuous);
        set(35, "last_changed_address_timestamp", "unix_seconds", Continuous);
        set(36, "as_number", "dimensionless", Continuous);
        set(37, "platform_linux", "dimensionless", Flag);
        set(38, "platform_bsd", "dimensionless", Flag);
        set(39, "platform_windows", "dimensionless", Flag);
        set(40, "platform_other", "dimensionless", Flag);
        set(41, "version_major", "dimensionless", Continuous);
        set(42, "version_minor", "dimensionless", Continuous);
        set(43, "version_patch", "dimensionless", Continuous);
        set(44, "version_recommended", "dimensionless", Flag);
        set(45, "exit_policy_port_count", "dimensionless", Continuous);
        set(46, "exit_policy_accepts_443", "dimensionless", Flag);
        set(47, "or_port", "dimensionless", Continuous);
        set(48, "dir_port_open", "dimensionless", Flag);
        set(49, "ipv6_orport_open", "dimensionless", Flag);
        for j in 0..50 {
            set(50 + j, &format!("country_{j:02}"), "dimensionless", Flag);
        }
        for j in 0..50 {
            set(
                100 + j,
                &format!("bw_read_bin_{j:02}"),
                "bytes_per_second",
                Continuous,
            );
        }
        for j in 0..41 {
            set(
                150 + j,
                &format!("bw_write_bin_{j:02}"),
                "bytes_per_second",
                Continuous,
            );
        }

        let schema = FeatureSchema {
            version: 1,
            names,
            units,
            kinds,
            clean_indices: DEFAULT_CLEAN_INDICES.to_vec(),
        };
        schema.validate().expect("default manifest is valid");
        schema
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != N_FEATURES {
            return Err(Error::data(format!(
                "schema must name {} features, got {}",
                N_FEATURES,
                self.names.len()
            )));
        }
        if self.units.len() != self.names.len() || self.kinds.len() != self.names.len() {
            return Err(Error::data(
                "schema names, units and kinds must have equal length",
            ));
        }
        if self.clean_indices.len() != N_CLEAN {
            return Err(Error::data(format!(
                "schema must mark {} clean features, got {}",
                N_CLEAN,
                self.clean_indices.len()
            )));
        }
        let mut prev: Option<usize> = None;
        for &ix in &self.clean_indices {
            if ix >= self.names.len() {
                return Err(Error::data(format!("clean index {ix} out of range")));
            }
            if let Some(p) = prev {
                if ix <= p {
                    return Err(Error::data(
                        "clean indices must be strictly increasing",
                    ));
                }
            }
            if self.kinds[ix] != FeatureKind::Continuous {
                return Err(Error::data(format!(
                    "clean feature {} must be continuous",
                    self.names[ix]
                )));
            }
            prev = Some(ix);
        }
        Ok(())
    }

    /// Content hash over the canonical serialization of the manifest.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.version.to_le_bytes());
        for (name, (unit, kind)) in self
            .names
            .iter()
            .zip(self.units.iter().zip(self.kinds.iter()))
        {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(unit.as_bytes());
            hasher.update([0u8]);
            hasher.update(match kind {
                FeatureKind::Continuous => [1u8],
                FeatureKind::Flag => [2u8],
            });
        }
        for &ix in &self.clean_indices {
            hasher.update((ix as u64).to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }

    pub fn clean_names(&self) -> Vec<&str> {
        self.clean_indices
            .iter()
            .map(|&i| self.names[i].as_str())
            .collect()
    }

    /// Position of a full-vector index inside the clean subvector, if clean.
    pub fn clean_position(&self, feature_index: usize) -> Option<usize> {
        self.clean_indices.iter().position(|&i| i == feature_index)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: FeatureSchema =
            toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
