//! Aggregation of per-instance IoUs into continent-level statistics.
//!
//! * continent-IoU: mean per-instance IoU of one class within one continent,
//!   misses counted as 0.
//! * geo-disparity: population standard deviation of the six continent-IoUs
//!   divided by their mean.
//! * percentage change: `(after - before) / before * 100` between the plain
//!   and class-merged disparities.
//! * box-plot summary: min, type-7 quartiles and max of the six values.
//!
//! Cells with no instances are carried as absent, never as zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Continent, GeoIndex};
use crate::ingest::{IngestReport, PointLikeReport};
use crate::matching::{Criterion, DatasetMatches, MatchResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("disparity needs all six continents; missing {0:?}")]
    MissingContinents(Vec<Continent>),
    #[error("disparity is undefined for a zero mean")]
    ZeroMean,
    #[error("expected 6 continent values, got {0}")]
    WrongCount(usize),
    #[error("percentage change is undefined for a baseline disparity of {0}")]
    UndefinedBaseline(f64),
    #[error("image {0:?} has a match result but no continent")]
    UntaggedImage(String),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add(v));
    s.value() / values.len() as f64
}

/// A match result joined with its image's continent, in
/// `(image_id, instance_index)` order.
pub type TaggedResults = Vec<(Continent, MatchResult)>;

pub fn tag_results(
    matches: &DatasetMatches,
    geo: &GeoIndex,
) -> Result<TaggedResults, MetricsError> {
    let mut out = Vec::with_capacity(matches.values().map(Vec::len).sum());
    for (image_id, results) in matches {
        let continent = geo
            .continent_of(image_id)
            .ok_or_else(|| MetricsError::UntaggedImage(image_id.clone()))?;
        out.extend(results.iter().cloned().map(|r| (continent, r)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinentIoU {
    pub model_id: String,
    pub class_label: String,
    pub continent: Continent,
    pub mean_iou: f64,
    pub n_instances: usize,
    pub criterion: Criterion,
    pub corrected: bool,
}

/// Mean criterion IoU over the class's instances in one continent; `None`
/// when the cell has no instances.
pub fn continent_iou(
    results: &[(Continent, MatchResult)],
    class_label: &str,
    continent: Continent,
    criterion: Criterion,
) -> Option<(f64, usize)> {
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for (c, r) in results {
        if *c == continent && r.class_label == class_label {
            sum.add(r.iou(criterion));
            n += 1;
        }
    }
    (n > 0).then(|| (sum.value() / n as f64, n))
}

/// All (class, continent) cells in one pass.
pub fn continent_table(
    results: &[(Continent, MatchResult)],
    criterion: Criterion,
) -> BTreeMap<String, BTreeMap<Continent, ContinentCell>> {
    let mut acc: BTreeMap<&str, BTreeMap<Continent, (CompensatedSum, usize)>> = BTreeMap::new();
    for (c, r) in results {
        let cell = acc
            .entry(&r.class_label)
            .or_default()
            .entry(*c)
            .or_default();
        cell.0.add(r.iou(criterion));
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(class, cells)| {
            let mut row: BTreeMap<Continent, ContinentCell> = Continent::ALL
                .iter()
                .map(|&c| (c, ContinentCell::absent()))
                .collect();
            for (c, (sum, n)) in cells {
                row.insert(
                    c,
                    ContinentCell {
                        mean_iou: Some(sum.value() / n as f64),
                        n_instances: n,
                    },
                );
            }
            (class.to_owned(), row)
        })
        .collect()
}

/// Population standard deviation over mean of exactly six values.
pub fn geo_disparity(means: &[f64]) -> Result<f64, MetricsError> {
    if means.len() != 6 {
        return Err(MetricsError::WrongCount(means.len()));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mu = compensated_mean(means);
    if mu == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    if means.iter().all(|&m| m == means[0]) {
        return Ok(0.0);
    }
    let mut ss = CompensatedSum::default();
    for &m in means {
        ss.add((m - mu) * (m - mu));
    }
    Ok((ss.value() / means.len() as f64).sqrt() / mu)
}

/// Disparity over a continent row, naming any gaps.
pub fn row_disparity(row: &BTreeMap<Continent, ContinentCell>) -> Result<f64, MetricsError> {
    geo_disparity(&complete_row(row)?)
}

fn complete_row(row: &BTreeMap<Continent, ContinentCell>) -> Result<Vec<f64>, MetricsError> {
    let missing: Vec<Continent> = Continent::ALL
        .iter()
        .copied()
        .filter(|c| row.get(c).and_then(|cell| cell.mean_iou).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingContinents(missing));
    }
    Ok(Continent::ALL
        .iter()
        .map(|c| row[c].mean_iou.expect("checked above"))
        .collect())
}

pub fn pct_change_disparity(before: f64, after: f64) -> Result<f64, MetricsError> {
    if before.is_nan() || before <= 0.0 || before.is_infinite() || !after.is_finite() {
        return Err(MetricsError::UndefinedBaseline(before));
    }
    Ok((after - before) / before * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
}

/// Type-7 sample quantile: linear interpolation at position `(n - 1) * p`
/// of the sorted values.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_plot_summary(means: &[f64]) -> Result<Quartiles, MetricsError> {
    if means.len() != 6 {
        return Err(MetricsError::WrongCount(means.len()));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut v = means.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_type7(&v, 0.25);
    let q3 = quantile_type7(&v, 0.75);
    Ok(Quartiles {
        min: v[0],
        q1,
        median: quantile_type7(&v, 0.5),
        q3,
        max: v[5],
        iqr: q3 - q1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinentCell {
    pub mean_iou: Option<f64>,
    pub n_instances: usize,
}

impl ContinentCell {
    pub fn absent() -> Self {
        Self {
            mean_iou: None,
            n_instances: 0,
        }
    }
}

/// Statistics of one evaluation variant (plain or class-merged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub continents: BTreeMap<Continent, ContinentCell>,
    pub disp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disp_note: Option<String>,
    pub box_plot: Option<Quartiles>,
}

impl VariantMetrics {
    pub fn from_row(continents: BTreeMap<Continent, ContinentCell>) -> Self {
        let (disp, disp_note) = match row_disparity(&continents) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let box_plot = complete_row(&continents)
            .ok()
            .and_then(|v| box_plot_summary(&v).ok());
        Self {
            continents,
            disp,
            disp_note,
            box_plot,
        }
    }

    pub fn mean(&self, continent: Continent) -> Option<f64> {
        self.continents.get(&continent).and_then(|c| c.mean_iou)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionMetrics {
    pub plain: VariantMetrics,
    pub corrected: VariantMetrics,
    /// Percentage change from plain to corrected disparity.
    pub pct_change: Option<f64>,
}

impl CriterionMetrics {
    pub fn new(plain: VariantMetrics, corrected: VariantMetrics) -> Self {
        let pct_change = match (plain.disp, corrected.disp) {
            (Some(b), Some(a)) => pct_change_disparity(b, a).ok(),
            _ => None,
        };
        Self {
            plain,
            corrected,
            pct_change,
        }
    }

    pub fn variant(&self, corrected: bool) -> &VariantMetrics {
        if corrected {
            &self.corrected
        } else {
            &self.plain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_label: String,
    pub by_criterion: BTreeMap<Criterion, CriterionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model_id: String,
    pub classes: Vec<ClassMetrics>,
}

impl ModelMetrics {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class_label == label)
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let mut out: Vec<Criterion> = self
            .classes
            .iter()
            .flat_map(|c| c.by_criterion.keys().copied())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Inputs and counters of an audit run, echoed alongside the metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub region_table: String,
    /// SHA-256 of each input file, keyed by role (`gt`, `image_meta`, `geo`, `pred:<model>`).
    pub input_digests: BTreeMap<String, String>,
    pub counters: RunCounters,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub images_total: usize,
    pub images_per_continent: BTreeMap<Continent, usize>,
    /// Images with no row in the geo file.
    pub images_without_geo: usize,
    /// Images whose geo row resolved to no continent.
    pub images_unresolved: usize,
    pub ground_truth: IngestReport,
    pub point_like: PointLikeReport,
    /// Ground-truth instances on images excluded for lack of a continent.
    pub gt_excluded_no_continent: usize,
    pub instances_per_class: BTreeMap<String, BTreeMap<Continent, usize>>,
    pub predictions: BTreeMap<String, IngestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
    pub models: Vec<ModelMetrics>,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRow {
    pub model_id: String,
    pub class_label: String,
    pub criterion: Criterion,
    pub disp: Option<f64>,
    pub disp_corrected: Option<f64>,
    pub pct_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotSummary {
    pub model_id: String,
    pub class_label: String,
    pub criterion: Criterion,
    pub corrected: bool,
    pub quartiles: Quartiles,
}

impl MetricsDocument {
    pub fn model(&self, model_id: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn continent_ious(&self) -> Vec<ContinentIoU> {
        let mut out = Vec::new();
        for m in &self.models {
            for c in &m.classes {
                for (&criterion, cm) in &c.by_criterion {
                    for corrected in [false, true] {
                        for (&continent, cell) in &cm.variant(corrected).continents {
                            if let Some(mean) = cell.mean_iou {
                                out.push(ContinentIoU {
                                    model_id: m.model_id.clone(),
                                    class_label: c.class_label.clone(),
                                    continent,
                                    mean_iou: mean,
                                    n_instances: cell.n_instances,
                                    criterion,
                                    corrected,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn disparity_rows(&self, model_id: &str) -> Vec<DisparityRow> {
        let Some(m) = self.model(model_id) else {
            return Vec::new();
        };
        m.classes
            .iter()
            .flat_map(|c| {
                c.by_criterion
                    .iter()
                    .map(move |(&criterion, cm)| DisparityRow {
                        model_id: m.model_id.clone(),
                        class_label: c.class_label.clone(),
                        criterion,
                        disp: cm.plain.disp,
                        disp_corrected: cm.corrected.disp,
                        pct_change: cm.pct_change,
                    })
            })
            .collect()
    }

    /// Summaries grouped by class (in first-seen order), then by model.
    pub fn box_plot_summaries(&self, criterion: Criterion, corrected: bool) -> Vec<BoxPlotSummary> {
        let mut classes: Vec<&str> = Vec::new();
        for m in &self.models {
            for c in &m.classes {
                if !classes.contains(&c.class_label.as_str()) {
                    classes.push(&c.class_label);
                }
            }
        }
        let mut out = Vec::new();
        for class in classes {
            for m in &self.models {
                let q = m
                    .class(class)
                    .and_then(|c| c.by_criterion.get(&criterion))
                    .and_then(|cm| cm.variant(corrected).box_plot);
                if let Some(quartiles) = q {
                    out.push(BoxPlotSummary {
                        model_id: m.model_id.clone(),
                        class_label: class.to_owned(),
                        criterion,
                        corrected,
                        quartiles,
                    });
                }
            }
        }
        out
    }
}

/// Builds per-class metrics for one model and criterion from plain and
/// corrected results. Classes follow `class_order`; classes with no
/// ground truth are omitted.
pub fn build_criterion_metrics(
    class_order: &[String],
    plain: &[(Continent, MatchResult)],
    corrected: &[(Continent, MatchResult)],
    criterion: Criterion,
) -> Vec<(String, CriterionMetrics)> {
    let mut plain_t = continent_table(plain, criterion);
    let mut corr_t = continent_table(corrected, criterion);
    class_order
        .iter()
        .filter_map(|class| {
            let p = plain_t.remove(class)?;
            let c = corr_t.remove(class).unwrap_or_else(|| {
                Continent::ALL
                    .iter()
                    .map(|&c| (c, ContinentCell::absent()))
                    .collect()
            });
            Some((
                class.clone(),
                CriterionMetrics::new(VariantMetrics::from_row(p), VariantMetrics::from_row(c)),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn result(image: &str, idx: usize, class: &str, iou: f64) -> MatchResult {
        MatchResult {
            image_id: image.into(),
            instance_index: idx,
            class_label: class.into(),
            effective_class: class.into(),
            matched_pred: (iou > 0.0).then_some(0),
            box_iou: iou,
            mask_iou: iou,
        }
    }

    #[test]
    fn two_point_mean_and_misses() {
        let rs = vec![
            (Continent::Africa, result("a", 0, "bus", 0.4)),
            (Continent::Africa, result("a", 1, "bus", 0.6)),
            (Continent::Asia, result("b", 0, "bus", 0.0)),
        ];
        let (m, n) = continent_iou(&rs, "bus", Continent::Africa, Criterion::Mask).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert_eq!(n, 2);
        assert_eq!(
            continent_iou(&rs, "bus", Continent::Asia, Criterion::Mask),
            Some((0.0, 1))
        );
        assert_eq!(
            continent_iou(&rs, "bus", Continent::Europe, Criterion::Mask),
            None
        );
        let t = continent_table(&rs, Criterion::Box);
        assert_eq!(t["bus"][&Continent::Europe], ContinentCell::absent());
        assert_eq!(t["bus"][&Continent::Africa].n_instances, 2);
    }

    #[test]
    fn disparity_examples() {
        assert_eq!(geo_disparity(&[0.5; 6]).unwrap(), 0.0);
        // population sigma of {0.4 x5, 0.6}: mean 13/30, var = (5*(1/30)^2 + (1/6)^2)/6
        let v = [0.4, 0.4, 0.4, 0.4, 0.4, 0.6];
        let mu: f64 = 13.0 / 30.0;
        let var: f64 = (5.0 * (1.0f64 / 30.0).powi(2) + (1.0f64 / 6.0).powi(2)) / 6.0;
        let expect = var.sqrt() / mu;
        let d = geo_disparity(&v).unwrap();
        assert!((d - expect).abs() < 1e-14);
        assert!((var.sqrt() - 0.074_535_599_249_993).abs() < 1e-12);
        assert!((d - 0.172_005_229_038_445).abs() < 1e-12, "{d}");
        assert_eq!(geo_disparity(&[0.0; 6]), Err(MetricsError::ZeroMean));
        assert_eq!(geo_disparity(&[0.1; 5]), Err(MetricsError::WrongCount(5)));
    }

    #[test]
    fn disparity_names_missing_continents() {
        let mut row: BTreeMap<_, _> = Continent::ALL
            .iter()
            .map(|&c| {
                (
                    c,
                    ContinentCell {
                        mean_iou: Some(0.5),
                        n_instances: 3,
                    },
                )
            })
            .collect();
        row.insert(Continent::Oceania, ContinentCell::absent());
        assert_eq!(
            row_disparity(&row),
            Err(MetricsError::MissingContinents(vec![Continent::Oceania]))
        );
        let vm = VariantMetrics::from_row(row);
        assert!(vm.disp.is_none() && vm.box_plot.is_none());
        assert!(vm.disp_note.unwrap().contains("Oceania"));
    }

    #[test]
    fn pct_change_examples() {
        assert_eq!(pct_change_disparity(0.3, 0.3).unwrap(), 0.0);
        assert!((pct_change_disparity(0.2, 0.1).unwrap() + 50.0).abs() < 1e-12);
        assert!(pct_change_disparity(0.2, 0.3).unwrap() > 0.0);
        assert!(pct_change_disparity(0.0, 0.1).is_err());
        assert!(pct_change_disparity(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn quartiles_of_one_to_six() {
        // positions 1.25, 2.5, 3.75 on the sorted values 1..6
        let q = box_plot_summary(&[6.0, 2.0, 4.0, 1.0, 5.0, 3.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.25, 3.5, 4.75, 6.0)
        );
        assert_eq!(q.iqr, 2.5);
        assert_eq!(box_plot_summary(&[0.3; 6]).unwrap().iqr, 0.0);
        assert!(box_plot_summary(&[1.0; 5]).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        assert!((s.value() - (1.0 + 1e-15)).abs() < 1e-17);
    }

    /// Sorted-interpolation oracle written independently of `quantile_type7`.
    fn oracle_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = p * (v.len() as f64 - 1.0);
        let below = pos.floor();
        let frac = pos - below;
        let i = below as usize;
        if frac == 0.0 {
            v[i]
        } else {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        }
    }

    proptest! {
        #[test]
        fn quartiles_match_oracle(v in proptest::collection::vec(0.0f64..1.0, 6)) {
            let q = box_plot_summary(&v).unwrap();
            prop_assert!((q.q1 - oracle_quantile(&v, 0.25)).abs() < 1e-12);
            prop_assert!((q.median - oracle_quantile(&v, 0.5)).abs() < 1e-12);
            prop_assert!((q.q3 - oracle_quantile(&v, 0.75)).abs() < 1e-12);
            prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
            prop_assert!(q.iqr >= 0.0);
        }

        #[test]
        fn disparity_is_scale_invariant(v in proptest::collection::vec(0.01f64..1.0, 6), c in 0.05f64..20.0) {
            let d = geo_disparity(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((geo_disparity(&scaled).unwrap() - d).abs() < 1e-12);
            prop_assert!(d >= 0.0);
        }
    }
}
