//! Class-merging correction.
//!
//! Ground truth and predictions are both relabelled to their merge group
//! (e.g. `bus` and `car` both become `car-bus-truck`), matching is re-run on
//! the merged labels, and each resulting IoU is reported under the ground
//! truth's original class. The result is the corrected IoU: a bus found at
//! IoU 0.6 but classified as a car scores 0 in the plain run and 0.6 here.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ImageCatalog, InstanceRecord, LabelPolicy, PredictionRecord};
use crate::matching::{
    evaluate_with_labels, match_image, DatasetMatches, MatchError, MatchOptions, MatchResult,
};

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("label {0:?} appears in more than one merge group")]
    Overlap(String),
    #[error("merge group member {0:?} is not a whitelisted class")]
    NotWhitelisted(String),
    #[error("merge group name {0:?} collides with an existing class")]
    NameCollision(String),
    #[error("empty merge group")]
    EmptyGroup,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    pub groups: Vec<Vec<String>>,
}

impl MergePolicy {
    /// `car-bus-truck`, `motorcycle-bicycle`, `person-rider`.
    pub fn default_groups() -> Self {
        let g = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            groups: vec![
                g(&["car", "bus", "truck"]),
                g(&["motorcycle", "bicycle"]),
                g(&["person", "rider"]),
            ],
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn group_name(group: &[String]) -> String {
        group.join("-")
    }

    pub fn validate(&self, labels: &LabelPolicy) -> Result<(), MergeError> {
        let mut seen = BTreeSet::new();
        for group in &self.groups {
            if group.is_empty() {
                return Err(MergeError::EmptyGroup);
            }
            for label in group {
                if !labels.is_whitelisted(label) {
                    return Err(MergeError::NotWhitelisted(label.clone()));
                }
                if !seen.insert(label.as_str()) {
                    return Err(MergeError::Overlap(label.clone()));
                }
            }
        }
        for group in &self.groups {
            let name = Self::group_name(group);
            if group.len() > 1 && labels.is_whitelisted(&name) {
                return Err(MergeError::NameCollision(name));
            }
        }
        Ok(())
    }

    /// Label to group-name lookup; ungrouped labels map to themselves.
    pub fn labeler(&self) -> MergedLabels {
        let mut map = HashMap::new();
        for group in &self.groups {
            let name = Self::group_name(group);
            for label in group {
                map.insert(label.clone(), name.clone());
            }
        }
        MergedLabels { map }
    }
}

#[derive(Debug, Clone)]
pub struct MergedLabels {
    map: HashMap<String, String>,
}

impl MergedLabels {
    pub fn get(&self, label: &str) -> String {
        self.map
            .get(label)
            .cloned()
            .unwrap_or_else(|| label.to_owned())
    }
}

/// Group name of `label`, or the label itself when ungrouped.
pub fn merged_label(
    label: &str,
    policy: &MergePolicy,
    labels: &LabelPolicy,
) -> Result<String, MergeError> {
    if !labels.is_whitelisted(label) {
        return Err(MergeError::UnknownLabel(label.to_owned()));
    }
    Ok(policy
        .groups
        .iter()
        .find(|g| g.iter().any(|l| l == label))
        .map_or_else(|| label.to_owned(), |g| MergePolicy::group_name(g)))
}

/// Corrected matching for one image.
pub fn corrected_match(
    gts: &[InstanceRecord],
    preds: &[PredictionRecord],
    policy: &MergePolicy,
    opts: MatchOptions,
) -> Result<Vec<MatchResult>, MatchError> {
    let labeler = policy.labeler();
    let gts: Vec<_> = gts.iter().collect();
    let preds: Vec<_> = preds.iter().collect();
    match_image(&gts, &preds, opts, &|l| labeler.get(l))
}

/// Corrected matching over a whole dataset; see [`crate::matching::evaluate_dataset`].
pub fn corrected_dataset(
    catalog: &ImageCatalog,
    gts: &[InstanceRecord],
    preds: &[PredictionRecord],
    policy: &MergePolicy,
    opts: MatchOptions,
) -> Result<DatasetMatches, MatchError> {
    let labeler = policy.labeler();
    evaluate_with_labels(catalog, gts, preds, opts, &|l| labeler.get(l))
}
