//! Best-IoU association of ground truth to predictions.
//!
//! Each ground-truth instance independently picks, among same-class
//! predictions on its image, the one with the highest IoU under the chosen
//! criterion. A prediction may serve several ground-truth instances and
//! predictions nobody picks are ignored. When no candidate overlaps, the
//! instance scores 0 on both IoUs.
//!
//! Ties on the criterion IoU go to the higher score, then to the lower
//! prediction index.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_iou, mask_iou, GeometryError};
use crate::ingest::{ImageCatalog, InstanceRecord, PredictionRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("records span several images ({0:?} and {1:?})")]
    MixedImages(String, String),
    #[error("prediction {pred_index} references unknown image {image_id:?}")]
    UnknownImage { image_id: String, pred_index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Mask,
    Box,
}

impl Criterion {
    pub const BOTH: [Criterion; 2] = [Criterion::Mask, Criterion::Box];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Mask => "mask",
            Criterion::Box => "box",
        }
    }

    /// Table wording: detection for boxes, segmentation for masks.
    pub fn task(self) -> &'static str {
        match self {
            Criterion::Mask => "seg",
            Criterion::Box => "det",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask" | "seg" | "segm" => Ok(Criterion::Mask),
            "box" | "bbox" | "det" => Ok(Criterion::Box),
            other => Err(format!("unknown criterion {other:?} (expected mask|box)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub criterion: Criterion,
    /// Predictions scoring below this are not candidates.
    pub score_threshold: f64,
}

impl MatchOptions {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            score_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: String,
    pub instance_index: usize,
    /// Ground-truth class as loaded.
    pub class_label: String,
    /// Label under which matching ran (the class itself, or its merge group).
    pub effective_class: String,
    pub matched_pred: Option<usize>,
    pub box_iou: f64,
    pub mask_iou: f64,
}

impl MatchResult {
    pub fn iou(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Mask => self.mask_iou,
            Criterion::Box => self.box_iou,
        }
    }
}

/// Plain matching: effective class is the record's own class.
pub fn match_instances(
    gts: &[InstanceRecord],
    preds: &[PredictionRecord],
    opts: MatchOptions,
) -> Result<Vec<MatchResult>, MatchError> {
    let gts: Vec<_> = gts.iter().collect();
    let preds: Vec<_> = preds.iter().collect();
    match_image(&gts, &preds, opts, &|l| l.to_owned())
}

/// Matching within one image with a caller-supplied relabelling.
pub(crate) fn match_image(
    gts: &[&InstanceRecord],
    preds: &[&PredictionRecord],
    opts: MatchOptions,
    label_of: &(dyn Fn(&str) -> String + Sync),
) -> Result<Vec<MatchResult>, MatchError> {
    if let Some(first) = gts
        .first()
        .map(|g| &g.image_id)
        .or(preds.first().map(|p| &p.image_id))
    {
        let other = gts
            .iter()
            .map(|g| &g.image_id)
            .chain(preds.iter().map(|p| &p.image_id))
            .find(|id| *id != first);
        if let Some(other) = other {
            return Err(MatchError::MixedImages(first.clone(), other.clone()));
        }
    }
    let pred_labels: Vec<String> = preds.iter().map(|p| label_of(&p.class_label)).collect();
    let mut out = Vec::with_capacity(gts.len());
    for gt in gts {
        let effective = label_of(&gt.class_label);
        // (criterion iou, score, pred_index, slot)
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for (slot, (pred, plabel)) in preds.iter().zip(&pred_labels).enumerate() {
            if *plabel != effective || pred.score < opts.score_threshold {
                continue;
            }
            let iou = match opts.criterion {
                Criterion::Mask => mask_iou(&gt.mask, &pred.mask)?,
                Criterion::Box => box_iou(&gt.bbox, &pred.bbox),
            };
            if iou <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((biou, bscore, bidx, _)) => {
                    iou > biou
                        || (iou == biou
                            && (pred.score > bscore
                                || (pred.score == bscore && pred.pred_index < bidx)))
                }
            };
            if better {
                best = Some((iou, pred.score, pred.pred_index, slot));
            }
        }
        let result = match best {
            None => MatchResult {
                image_id: gt.image_id.clone(),
                instance_index: gt.instance_index,
                class_label: gt.class_label.clone(),
                effective_class: effective,
                matched_pred: None,
                box_iou: 0.0,
                mask_iou: 0.0,
            },
            Some((_, _, pred_index, slot)) => {
                let pred = preds[slot];
                MatchResult {
                    image_id: gt.image_id.clone(),
                    instance_index: gt.instance_index,
                    class_label: gt.class_label.clone(),
                    effective_class: effective,
                    matched_pred: Some(pred_index),
                    box_iou: box_iou(&gt.bbox, &pred.bbox),
                    mask_iou: mask_iou(&gt.mask, &pred.mask)?,
                }
            }
        };
        out.push(result);
    }
    out.sort_by_key(|r| r.instance_index);
    Ok(out)
}

/// Per-image results keyed and ordered by `image_id`; within an image,
/// ordered by `instance_index`. Runs on the current rayon pool.
pub type DatasetMatches = BTreeMap<String, Vec<MatchResult>>;

pub fn evaluate_dataset(
    catalog: &ImageCatalog,
    gts: &[InstanceRecord],
    preds: &[PredictionRecord],
    opts: MatchOptions,
) -> Result<DatasetMatches, MatchError> {
    evaluate_with_labels(catalog, gts, preds, opts, &|l| l.to_owned())
}

pub(crate) fn evaluate_with_labels(
    catalog: &ImageCatalog,
    gts: &[InstanceRecord],
    preds: &[PredictionRecord],
    opts: MatchOptions,
    label_of: &(dyn Fn(&str) -> String + Sync),
) -> Result<DatasetMatches, MatchError> {
    let mut by_image: BTreeMap<&str, (Vec<&InstanceRecord>, Vec<&PredictionRecord>)> =
        BTreeMap::new();
    for gt in gts {
        by_image.entry(&gt.image_id).or_default().0.push(gt);
    }
    for p in preds {
        if catalog.get(&p.image_id).is_none() {
            return Err(MatchError::UnknownImage {
                image_id: p.image_id.clone(),
                pred_index: p.pred_index,
            });
        }
        // predictions on images without ground truth can never be selected
        if let Some(slot) = by_image.get_mut(p.image_id.as_str()) {
            slot.1.push(p);
        }
    }
    let work: Vec<_> = by_image.into_iter().collect();
    let results: Vec<(String, Vec<MatchResult>)> = work
        .par_iter()
        .map(|(image_id, (g, p))| {
            match_image(g, p, opts, label_of).map(|r| (image_id.to_string(), r))
        })
        .collect::<Result<_, _>>()?;
    Ok(results.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{tight_box, RleMask};

    pub(crate) fn rect(col: u32, w: u32) -> RleMask {
        RleMask::rectangle(10, 20, col, 0, w, 10).unwrap()
    }

    pub(crate) fn gt(idx: usize, class: &str, mask: RleMask) -> InstanceRecord {
        InstanceRecord {
            image_id: "img".into(),
            class_label: class.into(),
            bbox: tight_box(&mask).unwrap(),
            mask,
            instance_index: idx,
        }
    }

    pub(crate) fn pred(idx: usize, class: &str, mask: RleMask, score: f64) -> PredictionRecord {
        PredictionRecord {
            image_id: "img".into(),
            class_label: class.into(),
            bbox: tight_box(&mask).unwrap(),
            mask,
            score,
            pred_index: idx,
        }
    }

    #[test]
    fn picks_highest_iou_and_ignores_duplicates() {
        // gt covers cols 0..10; shifts give IoU 0.3 and 0.6-ish
        let g = gt(0, "bus", rect(0, 10));
        let p_low = pred(0, "bus", rect(5, 10), 0.9); // 5/15
        let p_high = pred(1, "bus", rect(2, 10), 0.1); // 8/12
        let r =
            match_instances(&[g], &[p_low, p_high], MatchOptions::new(Criterion::Mask)).unwrap();
        assert_eq!(r[0].matched_pred, Some(1));
        assert!((r[0].mask_iou - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(r[0].mask_iou, r[0].box_iou);
    }

    #[test]
    fn class_mismatch_scores_zero() {
        let g = gt(0, "bus", rect(0, 10));
        let p = pred(0, "car", rect(0, 10), 0.9);
        let r = match_instances(&[g], &[p], MatchOptions::new(Criterion::Mask)).unwrap();
        assert_eq!(r[0].matched_pred, None);
        assert_eq!((r[0].mask_iou, r[0].box_iou), (0.0, 0.0));
    }

    #[test]
    fn perfect_model() {
        let gts = vec![gt(0, "bus", rect(0, 5)), gt(1, "car", rect(8, 6))];
        let preds: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| pred(i, &g.class_label, g.mask.clone(), 1.0))
            .collect();
        for c in Criterion::BOTH {
            let r = match_instances(&gts, &preds, MatchOptions::new(c)).unwrap();
            assert!(r.iter().all(|m| m.mask_iou == 1.0 && m.box_iou == 1.0));
        }
    }

    #[test]
    fn ties_break_on_score_then_index() {
        let g = gt(0, "bus", rect(0, 10));
        let a = pred(0, "bus", rect(2, 10), 0.5);
        let b = pred(1, "bus", rect(2, 10), 0.7);
        let c = pred(2, "bus", rect(2, 10), 0.7);
        let r = match_instances(
            std::slice::from_ref(&g),
            &[a.clone(), b, c],
            MatchOptions::new(Criterion::Box),
        )
        .unwrap();
        assert_eq!(r[0].matched_pred, Some(1));
        let a2 = pred(3, "bus", rect(2, 10), 0.5);
        let r = match_instances(&[g], &[a2, a], MatchOptions::new(Criterion::Box)).unwrap();
        assert_eq!(r[0].matched_pred, Some(0));
    }

    #[test]
    fn one_prediction_serves_many() {
        let gts = vec![gt(0, "car", rect(0, 10)), gt(1, "car", rect(0, 10))];
        let p = pred(0, "car", rect(0, 10), 0.9);
        let r = match_instances(&gts, &[p], MatchOptions::new(Criterion::Mask)).unwrap();
        assert!(r.iter().all(|m| m.matched_pred == Some(0)));
    }

    #[test]
    fn score_threshold_filters_candidates() {
        let g = gt(0, "bus", rect(0, 10));
        let p = pred(0, "bus", rect(0, 10), 0.2);
        let opts = MatchOptions {
            criterion: Criterion::Mask,
            score_threshold: 0.5,
        };
        let r = match_instances(&[g], &[p], opts).unwrap();
        assert_eq!(r[0].matched_pred, None);
    }

    #[test]
    fn box_criterion_can_leave_mask_iou_zero() {
        // diagonal corners vs. the bottom-left pixel: disjoint masks, nested boxes
        let a = RleMask::new(4, 4, vec![0, 1, 14, 1]).unwrap();
        let b = RleMask::new(4, 4, vec![3, 1, 12]).unwrap();
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let g = gt(0, "car", a);
        let p = pred(0, "car", b, 0.5);
        let r = match_instances(
            std::slice::from_ref(&g),
            std::slice::from_ref(&p),
            MatchOptions::new(Criterion::Box),
        )
        .unwrap();
        assert_eq!(r[0].matched_pred, Some(0));
        assert!(r[0].box_iou > 0.0 && r[0].mask_iou == 0.0);
        let r = match_instances(&[g], &[p], MatchOptions::new(Criterion::Mask)).unwrap();
        assert_eq!(r[0].matched_pred, None);
    }

    #[test]
    fn mixed_images_rejected() {
        let g = gt(0, "bus", rect(0, 10));
        let mut p = pred(0, "bus", rect(0, 10), 0.5);
        p.image_id = "other".into();
        assert!(matches!(
            match_instances(&[g], &[p], MatchOptions::new(Criterion::Mask)),
            Err(MatchError::MixedImages(..))
        ));
    }

    fn catalog(ids: &[&str]) -> ImageCatalog {
        ImageCatalog::from_images(ids.iter().map(|id| crate::ingest::ImageMeta {
            image_id: id.to_string(),
            width: 20,
            height: 10,
        }))
        .unwrap()
    }

    #[test]
    fn dataset_with_no_predictions_scores_zero() {
        let gts = vec![gt(0, "bus", rect(0, 10)), gt(1, "car", rect(10, 5))];
        let r = evaluate_dataset(
            &catalog(&["img"]),
            &gts,
            &[],
            MatchOptions::new(Criterion::Mask),
        )
        .unwrap();
        assert!(r["img"]
            .iter()
            .all(|m| m.mask_iou == 0.0 && m.matched_pred.is_none()));
    }

    #[test]
    fn dataset_split_over_images_is_order_independent() {
        let mut g2 = gt(1, "bus", rect(0, 10));
        g2.image_id = "b".into();
        let mut p2 = pred(1, "bus", rect(1, 10), 0.5);
        p2.image_id = "b".into();
        let mut g1 = gt(0, "bus", rect(0, 10));
        g1.image_id = "a".into();
        let mut p1 = pred(0, "bus", rect(3, 10), 0.5);
        p1.image_id = "a".into();
        let cat = catalog(&["a", "b"]);
        let opts = MatchOptions::new(Criterion::Mask);
        let fwd = evaluate_dataset(
            &cat,
            &[g1.clone(), g2.clone()],
            &[p1.clone(), p2.clone()],
            opts,
        )
        .unwrap();
        let rev = evaluate_dataset(&cat, &[g2, g1], &[p2, p1], opts).unwrap();
        assert_eq!(fwd, rev);
        assert_eq!(fwd.keys().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn dataset_unknown_prediction_image() {
        let mut p = pred(0, "bus", rect(0, 10), 0.5);
        p.image_id = "nowhere".into();
        assert!(matches!(
            evaluate_dataset(
                &catalog(&["img"]),
                &[],
                &[p],
                MatchOptions::new(Criterion::Mask)
            ),
            Err(MatchError::UnknownImage { .. })
        ));
    }
}
