//! Electrode-to-brain-region mapping and regional view splitting.
//!
//! The default partition assigns each of the 105 canonical scalp electrodes
//! to one of ten functional areas (prefrontal, premotor, Broca's, auditory
//! association, primary motor, primary sensory, somatic sensory, auditory,
//! Wernicke's, visual). Region order is fixed and is part of the model
//! contract: regional encoder k always sees region k, and checkpoints rely
//! on that ordering.
//!
//! Custom partitions (including the degenerate 1-group case) are first-class
//! inputs; they are validated structurally rather than against anatomy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::EEGRecording;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("recording {rec:?} has no channel {label:?}")]
    UnknownChannel { rec: String, label: String },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("partition file {path}: {details}")]
    Parse { path: String, details: String },
}

/// One named electrode group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGroup {
    pub region: String,
    pub channels: Vec<String>,
}

/// An ordered list of electrode groups. Serializes as a JSON array of
/// `{region, channels}` objects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelPartition {
    pub groups: Vec<RegionGroup>,
}

const DEFAULT_GROUPS: [(&str, &[&str]); 10] = [
    (
        "Prefrontal Cortex",
        &[
            "E6", "E12", "E5", "E11", "E16", "E15", "E20", "E118", "E24", "E124", "E26", "E2",
            "E27", "E123", "E3", "E4", "E23", "E19", "E22", "E9", "E10", "E18", "E28", "E33",
            "E117", "E122",
        ],
    ),
    (
        "Premotor Cortex",
        &[
            "CZ", "E7", "E106", "E105", "E104", "E115", "E114", "E120", "E110", "E116", "E121",
            "E111", "E112", "E109", "E13", "E30",
        ],
    ),
    ("Broca's Area", &["E29", "E36", "E35", "E34"]),
    (
        "Auditory Association Area",
        &["E40", "E38", "E39", "E43", "E44", "E46", "E57", "E58", "E64"],
    ),
    (
        "Primary Motor Cortex",
        &["E31", "E80", "E55", "E37", "E87", "E93", "E103", "E102", "E108"],
    ),
    (
        "Primary Sensory Cortex",
        &["E54", "E79", "E61", "E78", "E62", "E53", "E86", "E92", "E98", "E100", "E101"],
    ),
    (
        "Somatic Sensory Cortex",
        &["E67", "E77", "E71", "E72", "E76", "E66", "E84", "E60", "E85"],
    ),
    ("Auditory Cortex", &["E59", "E91", "E97", "E51"]),
    ("Wernicke's Area", &["E41", "E42", "E52", "E47", "E45", "E50"]),
    (
        "Visual Area",
        &["E65", "E69", "E70", "E74", "E75", "E82", "E83", "E89", "E90", "E95", "E96"],
    ),
];

/// The fixed ten-region electrode mapping. Constant: every call returns an
/// equal value.
pub fn default_partition() -> ChannelPartition {
    ChannelPartition {
        groups: DEFAULT_GROUPS
            .iter()
            .map(|(region, channels)| RegionGroup {
                region: (*region).to_string(),
                channels: channels.iter().map(|c| (*c).to_string()).collect(),
            })
            .collect(),
    }
}

/// The canonical 105-electrode label set, in default-partition order
/// (group by group). This is the channel layout checkpoints are trained
/// against.
pub fn canonical_channel_labels() -> Vec<String> {
    default_partition()
        .groups
        .into_iter()
        .flat_map(|g| g.channels)
        .collect()
}

impl ChannelPartition {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total channel count across groups (with duplicates, if any).
    pub fn n_channels(&self) -> usize {
        self.groups.iter().map(|g| g.channels.len()).sum()
    }

    /// All labels in group-major order.
    pub fn flat_labels(&self) -> Vec<&str> {
        self.groups
            .iter()
            .flat_map(|g| g.channels.iter().map(String::as_str))
            .collect()
    }

    pub fn to_json(&self) -> String {
        // serialization of plain strings cannot fail
        let mut s = serde_json::to_string_pretty(self).expect("partition serializes");
        s.push('\n');
        s
    }

    pub fn from_json(path_for_errors: &str, json: &str) -> Result<Self, RegionError> {
        let part: ChannelPartition = serde_json::from_str(json).map_err(|e| RegionError::Parse {
            path: path_for_errors.to_string(),
            details: e.to_string(),
        })?;
        let violations = validate_partition(&part, None);
        if violations.is_empty() {
            Ok(part)
        } else {
            Err(RegionError::InvalidPartition(violations.join("; ")))
        }
    }
}

/// Structural checks on a partition. Returns human-readable violations,
/// empty iff the partition is acceptable. When `expected_labels` is given
/// (e.g. the canonical 105), the groups must also cover exactly that set.
pub fn validate_partition(
    part: &ChannelPartition,
    expected_labels: Option<&[String]>,
) -> Vec<String> {
    let mut violations = Vec::new();
    if part.groups.is_empty() {
        violations.push("partition has no groups".to_string());
    }
    let mut seen_regions: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seen_labels: BTreeMap<&str, usize> = BTreeMap::new();
    for g in &part.groups {
        *seen_regions.entry(g.region.as_str()).or_insert(0) += 1;
        if g.channels.is_empty() {
            violations.push(format!("group {:?} has no channels", g.region));
        }
        for c in &g.channels {
            *seen_labels.entry(c.as_str()).or_insert(0) += 1;
        }
    }
    for (region, n) in &seen_regions {
        if *n > 1 {
            violations.push(format!("region name {region:?} used by {n} groups"));
        }
    }
    for (label, n) in &seen_labels {
        if *n > 1 {
            violations.push(format!("channel {label:?} appears in {n} groups"));
        }
    }
    if let Some(expected) = expected_labels {
        for want in expected {
            if !seen_labels.contains_key(want.as_str()) {
                violations.push(format!("expected channel {want:?} missing from partition"));
            }
        }
        for have in seen_labels.keys() {
            if !expected.iter().any(|e| e == have) {
                violations.push(format!("channel {have:?} not in the expected label set"));
            }
        }
    }
    violations
}

/// Splits a recording into one view per group, channels in group order, time
/// axis untouched. Views keep the recording's id and sample_rate.
pub fn split_by_region(
    rec: &EEGRecording,
    part: &ChannelPartition,
) -> Result<Vec<EEGRecording>, RegionError> {
    let index: BTreeMap<&str, usize> = rec
        .channel_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let t = rec.n_timesteps();
    let mut views = Vec::with_capacity(part.groups.len());
    for g in &part.groups {
        let mut data = Vec::with_capacity(g.channels.len() * t);
        for label in &g.channels {
            let row = *index.get(label.as_str()).ok_or_else(|| RegionError::UnknownChannel {
                rec: rec.id.clone(),
                label: label.clone(),
            })?;
            data.extend_from_slice(&rec.samples.data()[row * t..(row + 1) * t]);
        }
        let samples = Tensor::new(vec![g.channels.len(), t], data)
            .expect("view buffer sized by construction");
        views.push(
            EEGRecording::new(rec.id.clone(), g.channels.clone(), rec.sample_rate, samples)
                .map_err(|e| RegionError::InvalidPartition(e.to_string()))?,
        );
    }
    Ok(views)
}
