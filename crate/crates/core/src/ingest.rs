//! Loading and validation of ground truth, predictions and image metadata.
//!
//! Instances files are line-delimited JSON, one object per line:
//!
//! ```text
//! {"image_id": "img1", "class": "bus", "bbox": [x, y, w, h],
//!  "mask": {"size": [h, w], "counts": [..]}, "score": 0.93}
//! ```
//!
//! `bbox` is optional (derived from the mask when missing) and `score` is
//! required for predictions only. Blank lines are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{tight_box, Box2D, GeometryError, RleMask};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: mask size {mask_h}x{mask_w} does not match image {image_id} ({height}x{width})")]
    MaskSizeMismatch {
        path: PathBuf,
        line: usize,
        image_id: String,
        mask_h: u32,
        mask_w: u32,
        height: u32,
        width: u32,
    },
    #[error("{path}:{line}: prediction has no score")]
    MissingScore { path: PathBuf, line: usize },
    #[error("{path}:{line}: score {score} outside [0, 1]")]
    ScoreOutOfRange {
        path: PathBuf,
        line: usize,
        score: f64,
    },
    #[error("{path}:{line}: unknown image_id {image_id:?}")]
    UnknownImage {
        path: PathBuf,
        line: usize,
        image_id: String,
    },
    #[error("{path}:{line}: {source}")]
    Geometry {
        path: PathBuf,
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("{path}:{line}: bbox {bbox:?} exceeds image bounds {width}x{height}")]
    BoxOutOfBounds {
        path: PathBuf,
        line: usize,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("{path}: duplicate image_id {image_id:?}")]
    DuplicateImage { path: PathBuf, image_id: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("invalid label policy: {0}")]
    Policy(String),
    #[error("point-like threshold must lie in [0, 1), got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

impl ImageMeta {
    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// Image metadata keyed by `image_id`.
#[derive(Debug, Clone, Default)]
pub struct ImageCatalog {
    images: BTreeMap<String, ImageMeta>,
}

impl ImageCatalog {
    pub fn from_images(images: impl IntoIterator<Item = ImageMeta>) -> Result<Self, IngestError> {
        let mut map = BTreeMap::new();
        for img in images {
            if img.width == 0 || img.height == 0 {
                return Err(IngestError::Csv {
                    path: PathBuf::new(),
                    message: format!("image {:?} has zero width or height", img.image_id),
                });
            }
            if map.contains_key(&img.image_id) {
                return Err(IngestError::DuplicateImage {
                    path: PathBuf::new(),
                    image_id: img.image_id,
                });
            }
            map.insert(img.image_id.clone(), img);
        }
        Ok(Self { images: map })
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageMeta> {
        self.images.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageMeta> {
        self.images.values()
    }
}

/// Reads a `image_id,width,height` CSV.
pub fn load_image_meta(path: &Path) -> Result<ImageCatalog, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| IngestError::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["image_id", "width", "height"] {
        return Err(IngestError::Csv {
            path: path.to_owned(),
            message: format!("expected header image_id,width,height, got {:?}", headers),
        });
    }
    let mut images = Vec::new();
    for row in reader.deserialize::<ImageMeta>() {
        images.push(row.map_err(|e| IngestError::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?);
    }
    ImageCatalog::from_images(images).map_err(|e| match e {
        IngestError::DuplicateImage { image_id, .. } => IngestError::DuplicateImage {
            path: path.to_owned(),
            image_id,
        },
        IngestError::Csv { message, .. } => IngestError::Csv {
            path: path.to_owned(),
            message,
        },
        other => other,
    })
}

pub fn write_image_meta<W: Write>(out: W, images: &[ImageMeta]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for img in images {
        w.serialize(img)?;
    }
    w.flush()
}

/// Class whitelist plus direct aliases applied before filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPolicy {
    pub class_whitelist: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl Default for LabelPolicy {
    /// The seven classes shared by Cityscapes and Vistas, with the two Vistas
    /// rider sub-classes folded into `rider`.
    fn default() -> Self {
        let whitelist = [
            "person",
            "car",
            "bus",
            "truck",
            "bicycle",
            "motorcycle",
            "rider",
        ];
        Self {
            class_whitelist: whitelist.iter().map(|s| s.to_string()).collect(),
            aliases: [("bicyclist", "rider"), ("motorcyclist", "rider")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl LabelPolicy {
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = BTreeSet::new();
        for c in &self.class_whitelist {
            if !seen.insert(c.as_str()) {
                return Err(IngestError::Policy(format!(
                    "duplicate whitelist entry {c:?}"
                )));
            }
        }
        for (from, to) in &self.aliases {
            if !seen.contains(to.as_str()) {
                return Err(IngestError::Policy(format!(
                    "alias {from:?} -> {to:?} targets a class outside the whitelist"
                )));
            }
            if seen.contains(from.as_str()) {
                return Err(IngestError::Policy(format!(
                    "alias source {from:?} is itself a whitelisted class"
                )));
            }
        }
        Ok(())
    }

    /// Alias then whitelist; `None` means the record is dropped.
    pub fn resolve<'a>(&'a self, label: &'a str) -> Option<&'a str> {
        let label = self.aliases.get(label).map_or(label, |s| s.as_str());
        self.is_whitelisted(label).then_some(label)
    }

    pub fn is_whitelisted(&self, label: &str) -> bool {
        self.class_whitelist.iter().any(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image_id: String,
    pub class_label: String,
    pub mask: RleMask,
    pub bbox: Box2D,
    /// Ordinal of the record in its source file (blank lines excluded).
    pub instance_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub class_label: String,
    pub mask: RleMask,
    pub bbox: Box2D,
    pub score: f64,
    /// Ordinal of the record in its source file; the final tie-breaker in matching.
    pub pred_index: usize,
}

/// Line shape shared by both files.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    image_id: String,
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Box2D>,
    mask: RleMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    GroundTruth,
    Prediction,
}

/// Counters echoed into the run report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub records_kept: usize,
    /// Records whose class was rewritten by an alias, keyed by source label.
    pub aliased: BTreeMap<String, usize>,
    /// Records dropped because their class is not whitelisted, keyed by label.
    pub dropped_not_whitelisted: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped_not_whitelisted.values().sum()
    }
}

/// A parsed record before it is split into ground truth or prediction.
struct Parsed {
    image_id: String,
    class_label: String,
    mask: RleMask,
    bbox: Box2D,
    score: Option<f64>,
    ordinal: usize,
}

fn parse_file(
    path: &Path,
    catalog: &ImageCatalog,
    policy: &LabelPolicy,
    kind: RecordKind,
) -> Result<(Vec<Parsed>, IngestReport), IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut ordinal = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            path: path.to_owned(),
            line: lineno,
            message: e.to_string(),
        })?;
        let this_ordinal = ordinal;
        ordinal += 1;
        report.records_read += 1;

        let Some(label) = policy.resolve(&wire.class) else {
            *report
                .dropped_not_whitelisted
                .entry(wire.class.clone())
                .or_default() += 1;
            continue;
        };
        if label != wire.class {
            *report.aliased.entry(wire.class.clone()).or_default() += 1;
        }
        let label = label.to_owned();

        let meta = catalog
            .get(&wire.image_id)
            .ok_or_else(|| IngestError::UnknownImage {
                path: path.to_owned(),
                line: lineno,
                image_id: wire.image_id.clone(),
            })?;
        if wire.mask.height() != meta.height || wire.mask.width() != meta.width {
            return Err(IngestError::MaskSizeMismatch {
                path: path.to_owned(),
                line: lineno,
                image_id: wire.image_id,
                mask_h: wire.mask.height(),
                mask_w: wire.mask.width(),
                height: meta.height,
                width: meta.width,
            });
        }
        let geometry_err = |source| IngestError::Geometry {
            path: path.to_owned(),
            line: lineno,
            source,
        };
        if wire.mask.area() == 0 {
            return Err(geometry_err(GeometryError::EmptyMask));
        }
        let bbox = match wire.bbox {
            Some(b) => b,
            None => tight_box(&wire.mask).map_err(geometry_err)?,
        };
        if !bbox.fits(meta.width, meta.height) {
            return Err(IngestError::BoxOutOfBounds {
                path: path.to_owned(),
                line: lineno,
                bbox: bbox.into(),
                width: meta.width,
                height: meta.height,
            });
        }
        let score = match (kind, wire.score) {
            (RecordKind::Prediction, None) => {
                return Err(IngestError::MissingScore {
                    path: path.to_owned(),
                    line: lineno,
                })
            }
            (RecordKind::Prediction, Some(s)) if !(0.0..=1.0).contains(&s) => {
                return Err(IngestError::ScoreOutOfRange {
                    path: path.to_owned(),
                    line: lineno,
                    score: s,
                })
            }
            (_, s) => s,
        };
        report.records_kept += 1;
        out.push(Parsed {
            image_id: wire.image_id,
            class_label: label,
            mask: wire.mask,
            bbox,
            score,
            ordinal: this_ordinal,
        });
    }
    Ok((out, report))
}

pub fn load_ground_truth(
    path: &Path,
    catalog: &ImageCatalog,
    policy: &LabelPolicy,
) -> Result<(Vec<InstanceRecord>, IngestReport), IngestError> {
    let (parsed, report) = parse_file(path, catalog, policy, RecordKind::GroundTruth)?;
    let records = parsed
        .into_iter()
        .map(|p| InstanceRecord {
            image_id: p.image_id,
            class_label: p.class_label,
            mask: p.mask,
            bbox: p.bbox,
            instance_index: p.ordinal,
        })
        .collect();
    Ok((records, report))
}

pub fn load_predictions(
    path: &Path,
    catalog: &ImageCatalog,
    policy: &LabelPolicy,
) -> Result<(Vec<PredictionRecord>, IngestReport), IngestError> {
    let (parsed, report) = parse_file(path, catalog, policy, RecordKind::Prediction)?;
    let records = parsed
        .into_iter()
        .map(|p| PredictionRecord {
            image_id: p.image_id,
            class_label: p.class_label,
            mask: p.mask,
            bbox: p.bbox,
            score: p.score.expect("validated above"),
            pred_index: p.ordinal,
        })
        .collect();
    Ok((records, report))
}

fn write_line<W: Write>(out: &mut W, rec: &WireRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")
}

pub fn write_ground_truth<W: Write>(mut out: W, records: &[InstanceRecord]) -> std::io::Result<()> {
    for r in records {
        write_line(
            &mut out,
            &WireRecord {
                image_id: r.image_id.clone(),
                class: r.class_label.clone(),
                bbox: Some(r.bbox),
                mask: r.mask.clone(),
                score: None,
            },
        )?;
    }
    out.flush()
}

pub fn write_predictions<W: Write>(
    mut out: W,
    records: &[PredictionRecord],
) -> std::io::Result<()> {
    for r in records {
        write_line(
            &mut out,
            &WireRecord {
                image_id: r.image_id.clone(),
                class: r.class_label.clone(),
                bbox: Some(r.bbox),
                mask: r.mask.clone(),
                score: Some(r.score),
            },
        )?;
    }
    out.flush()
}

/// Ground-truth instances removed as point-like, keyed by class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLikeReport {
    pub excluded: BTreeMap<String, usize>,
}

impl PointLikeReport {
    pub fn total(&self) -> usize {
        self.excluded.values().sum()
    }
}

/// Drops ground-truth instances whose foreground covers strictly less than
/// `threshold` of their image. Predictions are never passed through here.
pub fn apply_point_like_filter(
    records: Vec<InstanceRecord>,
    catalog: &ImageCatalog,
    threshold: f64,
) -> Result<(Vec<InstanceRecord>, PointLikeReport), IngestError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(IngestError::Threshold(threshold));
    }
    let mut report = PointLikeReport::default();
    let mut pixels: HashMap<&str, u64> = HashMap::new();
    for img in catalog.iter() {
        pixels.insert(&img.image_id, img.pixel_count());
    }
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let total = pixels
            .get(r.image_id.as_str())
            .copied()
            .unwrap_or_else(|| r.mask.pixel_count());
        let fraction = r.mask.area() as f64 / total as f64;
        if fraction < threshold {
            *report.excluded.entry(r.class_label.clone()).or_default() += 1;
        } else {
            kept.push(r);
        }
    }
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ImageCatalog {
        ImageCatalog::from_images([
            ImageMeta {
                image_id: "a".into(),
                width: 4,
                height: 3,
            },
            ImageMeta {
                image_id: "big".into(),
                width: 1000,
                height: 1000,
            },
        ])
        .unwrap()
    }

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const FULL_A: &str = r#"{"size":[3,4],"counts":[0,12]}"#;

    fn gt_line(class: &str) -> String {
        format!(r#"{{"image_id":"a","class":"{class}","mask":{FULL_A}}}"#)
    }

    #[test]
    fn aliases_and_whitelist() {
        let f = write_tmp(&[&gt_line("bicyclist"), &gt_line("building"), &gt_line("car")]);
        let (recs, report) =
            load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].class_label, "rider");
        assert_eq!(recs[1].class_label, "car");
        assert_eq!(recs[1].instance_index, 2);
        assert_eq!(report.dropped_not_whitelisted["building"], 1);
        assert_eq!(report.aliased["bicyclist"], 1);
        assert_eq!(report.records_read, 3);
    }

    #[test]
    fn preserves_order_and_derives_bbox() {
        let f = write_tmp(&[&gt_line("car"), "", &gt_line("bus"), &gt_line("person")]);
        let (recs, _) = load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()).unwrap();
        let idx: Vec<_> = recs.iter().map(|r| r.instance_index).collect();
        assert_eq!(idx, [0, 1, 2]);
        assert_eq!(recs[0].bbox, Box2D::new(0.0, 0.0, 4.0, 3.0).unwrap());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp(&[&gt_line("car"), "{not json"]);
        let err = load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()).unwrap_err();
        assert!(
            matches!(err, IngestError::Malformed { line: 2, .. }),
            "{err}"
        );
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn mask_size_mismatch() {
        let line = r#"{"image_id":"a","class":"car","mask":{"size":[4,3],"counts":[0,12]}}"#;
        let f = write_tmp(&[line]);
        let err = load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()).unwrap_err();
        assert!(matches!(err, IngestError::MaskSizeMismatch { .. }));
    }

    #[test]
    fn prediction_requires_score() {
        let f = write_tmp(&[&gt_line("car")]);
        let err = load_predictions(f.path(), &catalog(), &LabelPolicy::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingScore { line: 1, .. }));
        let line = format!(r#"{{"image_id":"a","class":"car","mask":{FULL_A},"score":1.5}}"#);
        let f = write_tmp(&[&line]);
        assert!(matches!(
            load_predictions(f.path(), &catalog(), &LabelPolicy::default()),
            Err(IngestError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_image_and_empty_mask() {
        let line = format!(r#"{{"image_id":"zz","class":"car","mask":{FULL_A}}}"#);
        let f = write_tmp(&[&line]);
        assert!(matches!(
            load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()),
            Err(IngestError::UnknownImage { .. })
        ));
        let line = r#"{"image_id":"a","class":"car","mask":{"size":[3,4],"counts":[12]}}"#;
        let f = write_tmp(&[line]);
        assert!(matches!(
            load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()),
            Err(IngestError::Geometry { .. })
        ));
    }

    #[test]
    fn bbox_out_of_bounds() {
        let line = format!(r#"{{"image_id":"a","class":"car","bbox":[1,0,4,3],"mask":{FULL_A}}}"#);
        let f = write_tmp(&[&line]);
        assert!(matches!(
            load_ground_truth(f.path(), &catalog(), &LabelPolicy::default()),
            Err(IngestError::BoxOutOfBounds { .. })
        ));
    }

    #[test]
    fn policy_validation() {
        assert!(LabelPolicy::default().validate().is_ok());
        let mut p = LabelPolicy::default();
        p.aliases.insert("van".into(), "lorry".into());
        assert!(p.validate().is_err());
        let mut p = LabelPolicy::default();
        p.class_whitelist.push("car".into());
        assert!(p.validate().is_err());
        let mut p = LabelPolicy::default();
        p.aliases.insert("car".into(), "bus".into());
        assert!(p.validate().is_err());
    }

    fn big_instance(pixels: u32) -> InstanceRecord {
        // a single column strip of `pixels` foreground pixels
        let mask = RleMask::from_runs(1000, 1000, vec![0, pixels, 1_000_000 - pixels]).unwrap();
        InstanceRecord {
            image_id: "big".into(),
            class_label: "person".into(),
            bbox: tight_box(&mask).unwrap(),
            mask,
            instance_index: 0,
        }
    }

    #[test]
    fn point_like_filter_boundary() {
        let cat = catalog();
        let (kept, rep) = apply_point_like_filter(vec![big_instance(5)], &cat, 1e-4).unwrap();
        assert!(kept.is_empty());
        assert_eq!(rep.excluded["person"], 1);
        // exactly 0.01% is not strictly less
        let (kept, rep) = apply_point_like_filter(vec![big_instance(100)], &cat, 1e-4).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(rep.total(), 0);
        let (kept, _) = apply_point_like_filter(vec![big_instance(1)], &cat, 0.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert!(apply_point_like_filter(vec![], &cat, 1.0).is_err());
    }

    #[test]
    fn point_like_filter_is_idempotent() {
        let cat = catalog();
        let recs: Vec<_> = [3, 99, 100, 101, 5000]
            .iter()
            .map(|&p| big_instance(p))
            .collect();
        let (once, _) = apply_point_like_filter(recs, &cat, 1e-4).unwrap();
        let (twice, rep) = apply_point_like_filter(once.clone(), &cat, 1e-4).unwrap();
        assert_eq!(once, twice);
        assert_eq!(rep.total(), 0);
    }

    #[test]
    fn image_meta_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "image_id,width,height\nx,10,20\ny,3,4\n").unwrap();
        let cat = load_image_meta(f.path()).unwrap();
        assert_eq!(cat.get("x").unwrap().height, 20);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "image_id,width,height\nx,10,20\nx,3,4\n").unwrap();
        assert!(matches!(
            load_image_meta(f.path()),
            Err(IngestError::DuplicateImage { .. })
        ));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "id,w,h\nx,10,20\n").unwrap();
        assert!(load_image_meta(f.path()).is_err());
    }

    mod roundtrip {
        use super::*;
        use crate::geometry::encode;
        use crate::geometry::BinaryGrid;
        use proptest::prelude::*;

        fn arb_record() -> impl Strategy<Value = (Vec<bool>, usize, Option<f64>)> {
            (
                proptest::collection::vec(any::<bool>(), 12),
                0usize..7,
                proptest::option::of(0.0f64..=1.0),
            )
        }

        proptest! {
            #[test]
            fn load_inverts_write(raw in proptest::collection::vec(arb_record(), 1..6)) {
                let policy = LabelPolicy::default();
                let mut preds = Vec::new();
                for (i, (cells, cls, score)) in raw.into_iter().enumerate() {
                    let mut g = BinaryGrid::zeros(3, 4);
                    for (k, v) in cells.into_iter().enumerate() {
                        g.set((k / 4) as u32, (k % 4) as u32, v);
                    }
                    g.set(0, 0, true);
                    let mask = encode(&g);
                    preds.push(PredictionRecord {
                        image_id: "a".into(),
                        class_label: policy.class_whitelist[cls].clone(),
                        bbox: tight_box(&mask).unwrap(),
                        mask,
                        score: score.unwrap_or(0.5),
                        pred_index: i,
                    });
                }
                let mut buf = Vec::new();
                write_predictions(&mut buf, &preds).unwrap();
                let mut f = tempfile::NamedTempFile::new().unwrap();
                f.write_all(&buf).unwrap();
                let (back, _) = load_predictions(f.path(), &catalog(), &policy).unwrap();
                prop_assert_eq!(back, preds);
            }
        }
    }
}
