//! Synthetic fixtures with controlled misclassification and localization
//! error, and the closed-form expectations of their metrics.
//!
//! Every instance sits in its own square tile, so a prediction can only
//! overlap the ground truth it was generated for. A prediction is the
//! ground-truth rectangle shifted right by `dx` columns with its height cut
//! to `h'` rows, which gives
//!
//! ```text
//! IoU = (w - dx) h' / (w h + dx h')
//! ```
//!
//! The generator picks the `(dx, h')` whose IoU is closest to the drawn target.
//!
//! Random draws come from one ChaCha8 stream seeded with `seed`. For each
//! continent (in [`Continent::ALL`] order, restricted to the spec),
//! each class (spec order) and each instance, four `f64` values are drawn
//! in `[0, 1)`:
//!
//! 1. miss: the ground truth gets no prediction if the draw is `< miss_rate`
//! 2. predicted class: inverse CDF over the confusion row, keys in sorted order
//! 3. IoU target: `base_iou + jitter * (2u - 1)`
//! 4. score: `0.5 + u / 2`
//!
//! All four are drawn even for a miss.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Continent, GeoMode};
use crate::geometry::{tight_box, RleMask};
use crate::ingest::{
    write_ground_truth, write_image_meta, write_predictions, ImageMeta, InstanceRecord,
    LabelPolicy, PredictionRecord,
};
use crate::merging::MergePolicy;
use crate::metrics::{geo_disparity, pct_change_disparity};
use crate::pipeline::{ModelInput, RunConfig};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("IoU target {target:.4} is not reachable within 0.02 on a {size}x{size} object")]
    Infeasible { target: f64, size: u32 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Achieved IoU is within this distance of the drawn target.
pub const IOU_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Localization {
    pub base_iou: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl Default for Localization {
    fn default() -> Self {
        Self {
            base_iou: 1.0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionRow {
    /// Applies to every continent when absent; a continent-specific row
    /// takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continent: Option<Continent>,
    pub true_class: String,
    pub predicted: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationOverride {
    pub continent: Continent,
    pub class: String,
    pub base_iou: f64,
    #[serde(default)]
    pub jitter: f64,
}

fn all_continents() -> Vec<Continent> {
    Continent::ALL.to_vec()
}
fn default_object_size() -> u32 {
    32
}
fn default_per_image() -> usize {
    8
}
fn default_model() -> String {
    "synth".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "all_continents")]
    pub continents: Vec<Continent>,
    pub classes: Vec<String>,
    /// Instances per (class, continent) unless overridden in `counts`.
    pub instances_per_cell: usize,
    #[serde(default)]
    pub counts: BTreeMap<String, BTreeMap<Continent, usize>>,
    #[serde(default)]
    pub confusion: Vec<ConfusionRow>,
    #[serde(default)]
    pub localization: BTreeMap<String, Localization>,
    #[serde(default)]
    pub localization_overrides: Vec<LocalizationOverride>,
    #[serde(default)]
    pub default_localization: Localization,
    #[serde(default)]
    pub miss_rate: f64,
    /// Side of the square ground-truth object in pixels. Near IoU 1 the
    /// reachable values are `1/size` apart, so sizes below 25 cannot honour
    /// the 0.02 tolerance for every target.
    #[serde(default = "default_object_size")]
    pub object_size: u32,
    #[serde(default = "default_per_image")]
    pub instances_per_image: usize,
    #[serde(default = "MergePolicy::default_groups")]
    pub merge_policy: MergePolicy,
    #[serde(default)]
    pub geo_mode: GeoMode,
    #[serde(default = "default_model")]
    pub model_id: String,
}

impl SynthSpec {
    /// Identity confusion, perfect localization, all six continents.
    pub fn new(seed: u64, classes: &[&str], instances_per_cell: usize) -> Self {
        Self {
            seed,
            continents: all_continents(),
            classes: classes.iter().map(|s| s.to_string()).collect(),
            instances_per_cell,
            counts: BTreeMap::new(),
            confusion: Vec::new(),
            localization: BTreeMap::new(),
            localization_overrides: Vec::new(),
            default_localization: Localization::default(),
            miss_rate: 0.0,
            object_size: default_object_size(),
            instances_per_image: default_per_image(),
            merge_policy: MergePolicy::default_groups(),
            geo_mode: GeoMode::Explicit,
            model_id: default_model(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Spec(e.to_string()))
    }

    fn continents_sorted(&self) -> Vec<Continent> {
        Continent::ALL
            .iter()
            .copied()
            .filter(|c| self.continents.contains(c))
            .collect()
    }

    pub fn count(&self, class: &str, continent: Continent) -> usize {
        self.counts
            .get(class)
            .and_then(|m| m.get(&continent))
            .copied()
            .unwrap_or(self.instances_per_cell)
    }

    /// Predicted-class distribution for a true class in a continent.
    pub fn confusion_row(&self, class: &str, continent: Continent) -> BTreeMap<String, f64> {
        let specific = self
            .confusion
            .iter()
            .find(|r| r.true_class == class && r.continent == Some(continent));
        let general = || {
            self.confusion
                .iter()
                .find(|r| r.true_class == class && r.continent.is_none())
        };
        match specific.or_else(general) {
            Some(r) => r.predicted.clone(),
            None => BTreeMap::from([(class.to_owned(), 1.0)]),
        }
    }

    pub fn localization_for(&self, class: &str, continent: Continent) -> Localization {
        if let Some(o) = self
            .localization_overrides
            .iter()
            .find(|o| o.class == class && o.continent == continent)
        {
            return Localization {
                base_iou: o.base_iou,
                jitter: o.jitter,
            };
        }
        self.localization
            .get(class)
            .copied()
            .unwrap_or(self.default_localization)
    }

    /// Every label used, ground truth first, then predicted-only labels.
    pub fn labels(&self) -> Vec<String> {
        let mut out = self.classes.clone();
        for r in &self.confusion {
            for k in r.predicted.keys() {
                if !out.contains(k) {
                    out.push(k.clone());
                }
            }
        }
        out
    }

    /// The default whitelist extended with any extra labels of this spec.
    pub fn label_policy(&self) -> LabelPolicy {
        let mut p = LabelPolicy::default();
        for l in self.labels() {
            if !p.class_whitelist.contains(&l) {
                p.class_whitelist.push(l);
            }
        }
        p.aliases.retain(|k, _| !p.class_whitelist.contains(k));
        p
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.classes.is_empty() {
            return bad("classes is empty".into());
        }
        let unique: BTreeSet<_> = self.classes.iter().collect();
        if unique.len() != self.classes.len() {
            return bad("duplicate class".into());
        }
        if self.continents.is_empty() || self.continents.contains(&Continent::Unknown) {
            return bad("continents must be a non-empty subset of the six continents".into());
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return bad(format!("miss_rate {} outside [0, 1]", self.miss_rate));
        }
        if self.instances_per_image == 0 || self.instances_per_image > 256 {
            return bad("instances_per_image must be in 1..=256".into());
        }
        if self.object_size < 25 || self.object_size > 512 {
            return bad("object_size must be in 25..=512".into());
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty".into());
        }
        for class in &self.classes {
            for &c in &self.continents {
                if self.count(class, c) == 0 {
                    return bad(format!("count for {class}/{c} must be >= 1"));
                }
                let loc = self.localization_for(class, c);
                let (lo, hi) = (loc.base_iou - loc.jitter, loc.base_iou + loc.jitter);
                if !(loc.base_iou > 0.0
                    && loc.base_iou <= 1.0
                    && loc.jitter >= 0.0
                    && lo >= 0.0
                    && hi <= 1.0)
                {
                    return bad(format!(
                        "localization for {class}/{c}: base {} jitter {} leaves [0, 1]",
                        loc.base_iou, loc.jitter
                    ));
                }
            }
        }
        for r in &self.confusion {
            if !self.classes.contains(&r.true_class) {
                return bad(format!(
                    "confusion row for unknown class {:?}",
                    r.true_class
                ));
            }
            let sum: f64 = r.predicted.values().sum();
            if (sum - 1.0).abs() > 1e-9 || r.predicted.values().any(|&p| !(0.0..=1.0).contains(&p))
            {
                return bad(format!(
                    "confusion row for {:?} does not sum to 1",
                    r.true_class
                ));
            }
        }
        self.label_policy()
            .validate()
            .map_err(|e| SynthError::Spec(e.to_string()))?;
        self.merge_policy
            .validate(&self.label_policy())
            .map_err(|e| SynthError::Spec(e.to_string()))?;
        Ok(())
    }

    fn tile(&self) -> u32 {
        2 * self.object_size + 4
    }
}

/// Reachable (dx, h', IoU) shapes for an `s`-by-`s` object, sorted by IoU.
struct ShapeTable {
    size: u32,
    shapes: Vec<(f64, u32, u32)>,
}

impl ShapeTable {
    fn new(size: u32) -> Self {
        let s = size as u64;
        let mut shapes = Vec::new();
        for dx in 0..size {
            for h in 1..=size {
                let inter = (s - dx as u64) * h as u64;
                let union = s * s + dx as u64 * h as u64;
                shapes.push((inter as f64 / union as f64, dx, h));
            }
        }
        shapes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Self { size, shapes }
    }

    /// The shape closest to `target`; ties go to the smaller IoU.
    fn closest(&self, target: f64) -> Result<(f64, u32, u32), SynthError> {
        let i = self.shapes.partition_point(|s| s.0 < target);
        let mut best = None::<(f64, u32, u32)>;
        for j in [i.wrapping_sub(1), i] {
            if let Some(&s) = self.shapes.get(j) {
                if best.is_none_or(|b| (s.0 - target).abs() < (b.0 - target).abs()) {
                    best = Some(s);
                }
            }
        }
        match best {
            Some(b) if (b.0 - target).abs() <= IOU_TOLERANCE => Ok(b),
            _ => Err(SynthError::Infeasible {
                target,
                size: self.size,
            }),
        }
    }
}

/// One generated instance, with the ground truth of what was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub continent: Continent,
    pub true_class: String,
    pub predicted_class: Option<String>,
    pub target_iou: f64,
    pub achieved_iou: f64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub ground_truth: Vec<InstanceRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub images: Vec<ImageMeta>,
    pub geo: Vec<(String, Continent)>,
    pub instances: Vec<SynthInstance>,
}

/// A point inside each continent of the built-in region table.
pub fn representative_location(c: Continent) -> (f64, f64) {
    match c {
        Continent::Europe => (48.85, 2.35),
        Continent::Africa => (-1.29, 36.82),
        Continent::NorthAmerica => (40.71, -74.0),
        Continent::SouthAmerica => (-23.55, -46.63),
        Continent::Asia => (35.68, 139.69),
        Continent::Oceania => (-33.87, 151.21),
        Continent::Unknown => (0.0, -140.0),
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Fixture, SynthError> {
    spec.validate()?;
    let shapes = ShapeTable::new(spec.object_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tile = spec.tile();
    let s = spec.object_size;
    let per_image = spec.instances_per_image;

    let mut fx = Fixture {
        ground_truth: Vec::new(),
        predictions: Vec::new(),
        images: Vec::new(),
        geo: Vec::new(),
        instances: Vec::new(),
    };
    for continent in spec.continents_sorted() {
        let mut slot = 0usize;
        for class in &spec.classes {
            let row = spec.confusion_row(class, continent);
            let loc = spec.localization_for(class, continent);
            for _ in 0..spec.count(class, continent) {
                let u_miss: f64 = rng.random();
                let u_class: f64 = rng.random();
                let u_iou: f64 = rng.random();
                let u_score: f64 = rng.random();

                let image_no = slot / per_image;
                let k = (slot % per_image) as u32;
                slot += 1;
                let image_id = format!("syn-{}-{image_no:06}", continent.name());
                if k == 0 {
                    fx.images.push(ImageMeta {
                        image_id: image_id.clone(),
                        width: tile * per_image as u32,
                        height: tile,
                    });
                    fx.geo.push((image_id.clone(), continent));
                }
                let width = tile * per_image as u32;
                let col0 = k * tile + 2;
                let gt_mask = RleMask::rectangle(tile, width, col0, 2, s, s).expect("tile fits");
                fx.ground_truth.push(InstanceRecord {
                    image_id: image_id.clone(),
                    class_label: class.clone(),
                    bbox: tight_box(&gt_mask).expect("non-empty"),
                    mask: gt_mask,
                    instance_index: fx.ground_truth.len(),
                });

                let target = loc.base_iou + loc.jitter * (2.0 * u_iou - 1.0);
                let (achieved, dx, h) = shapes.closest(target)?;
                let missed = u_miss < spec.miss_rate;
                let predicted = (!missed).then(|| pick(&row, u_class));
                if let Some(label) = &predicted {
                    let mask =
                        RleMask::rectangle(tile, width, col0 + dx, 2, s, h).expect("tile fits");
                    fx.predictions.push(PredictionRecord {
                        image_id,
                        class_label: label.clone(),
                        bbox: tight_box(&mask).expect("non-empty"),
                        mask,
                        score: 0.5 + u_score / 2.0,
                        pred_index: fx.predictions.len(),
                    });
                }
                fx.instances.push(SynthInstance {
                    continent,
                    true_class: class.clone(),
                    predicted_class: predicted,
                    target_iou: target,
                    achieved_iou: achieved,
                });
            }
        }
    }
    Ok(fx)
}

fn pick(row: &BTreeMap<String, f64>, u: f64) -> String {
    let mut acc = 0.0;
    for (label, p) in row {
        acc += p;
        if u < acc {
            return label.clone();
        }
    }
    // rounding left u above the last cumulative value
    row.iter()
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(l, _)| l.clone())
        .expect("row sums to 1")
}

/// Writes `gt.jsonl`, `pred.jsonl`, `images.csv`, `geo.csv` and a ready
/// `audit.json` (reporting to `report/`) into `dir`.
pub fn write_fixture(spec: &SynthSpec, fx: &Fixture, dir: &Path) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let create = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p)
            .map(std::io::BufWriter::new)
            .map_err(io(&p))
    };
    write_ground_truth(create("gt.jsonl")?, &fx.ground_truth).map_err(io(&dir.join("gt.jsonl")))?;
    write_predictions(create("pred.jsonl")?, &fx.predictions)
        .map_err(io(&dir.join("pred.jsonl")))?;
    write_image_meta(create("images.csv")?, &fx.images).map_err(io(&dir.join("images.csv")))?;

    let mut geo = String::new();
    match spec.geo_mode {
        GeoMode::Explicit => {
            geo.push_str("image_id,continent\n");
            for (id, c) in &fx.geo {
                geo.push_str(&format!("{id},{}\n", c.name()));
            }
        }
        GeoMode::Latlon => {
            geo.push_str("image_id,latitude,longitude\n");
            for (id, c) in &fx.geo {
                let (lat, lon) = representative_location(*c);
                geo.push_str(&format!("{id},{lat},{lon}\n"));
            }
        }
    }
    fs::write(dir.join("geo.csv"), geo).map_err(io(&dir.join("geo.csv")))?;

    let mut cfg = RunConfig::new(
        "gt.jsonl".into(),
        vec![ModelInput {
            model_id: spec.model_id.clone(),
            path: "pred.jsonl".into(),
        }],
        "images.csv".into(),
        "geo.csv".into(),
        "report".into(),
    );
    cfg.geo_mode = spec.geo_mode;
    cfg.label_policy = spec.label_policy();
    cfg.merge_policy = spec.merge_policy.clone();
    let mut json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    json.push('\n');
    fs::write(dir.join("audit.json"), json).map_err(io(&dir.join("audit.json")))?;
    Ok(())
}

/// Expected continent-IoU of one cell, with the standard error of its
/// sample mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub n: usize,
    pub plain_mean: f64,
    pub plain_se: f64,
    pub corrected_mean: f64,
    pub corrected_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleClass {
    pub cells: BTreeMap<Continent, OracleCell>,
    pub disp: Option<f64>,
    pub disp_se: Option<f64>,
    pub disp_corrected: Option<f64>,
    pub disp_corrected_se: Option<f64>,
    pub pct_change: Option<f64>,
    pub pct_change_se: Option<f64>,
}

impl OracleClass {
    /// Acceptance window for a measured cell mean: four standard errors
    /// plus the rectangle quantization allowance.
    pub fn tolerance(se: f64) -> f64 {
        4.0 * se + 0.005
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub classes: BTreeMap<String, OracleClass>,
}

/// Mean and variance of `X = 1[hit] * IoU` with `P(hit) = p` and IoU
/// uniform on `[b - j, b + j]`.
fn hit_moments(p: f64, loc: Localization) -> (f64, f64) {
    let b = loc.base_iou;
    let e2 = b * b + loc.jitter * loc.jitter / 3.0;
    let mean = p * b;
    (mean, p * e2 - mean * mean)
}

/// First-order standard error of a function of independent means.
fn propagate(f: &dyn Fn(&[f64]) -> Option<f64>, x: &[f64], se: &[f64]) -> Option<f64> {
    let f0 = f(x)?;
    let mut var = 0.0;
    for i in 0..x.len() {
        if se[i] == 0.0 {
            continue;
        }
        let h = (se[i] * 1e-3).max(1e-9);
        let mut xp = x.to_vec();
        xp[i] += h;
        let d = (f(&xp)? - f0) / h;
        var += d * d * se[i] * se[i];
    }
    Some(var.sqrt())
}

pub fn oracle_metrics(spec: &SynthSpec) -> Result<OracleMetrics, SynthError> {
    spec.validate()?;
    let labeler = spec.merge_policy.labeler();
    let mut classes = BTreeMap::new();
    for class in &spec.classes {
        let group = labeler.get(class);
        let mut cells = BTreeMap::new();
        for c in spec.continents_sorted() {
            let row = spec.confusion_row(class, c);
            let loc = spec.localization_for(class, c);
            let hit = 1.0 - spec.miss_rate;
            let p_plain = hit * row.get(class).copied().unwrap_or(0.0);
            let p_corr = hit
                * row
                    .iter()
                    .filter(|(l, _)| labeler.get(l) == group)
                    .map(|(_, p)| p)
                    .sum::<f64>();
            let n = spec.count(class, c);
            let (pm, pv) = hit_moments(p_plain, loc);
            let (cm, cv) = hit_moments(p_corr, loc);
            cells.insert(
                c,
                OracleCell {
                    n,
                    plain_mean: pm,
                    plain_se: (pv.max(0.0) / n as f64).sqrt(),
                    corrected_mean: cm,
                    corrected_se: (cv.max(0.0) / n as f64).sqrt(),
                },
            );
        }
        let complete = cells.len() == 6;
        let disp_of = |v: &[f64]| geo_disparity(v).ok();
        let plain: Vec<f64> = cells.values().map(|c| c.plain_mean).collect();
        let plain_se: Vec<f64> = cells.values().map(|c| c.plain_se).collect();
        let corr: Vec<f64> = cells.values().map(|c| c.corrected_mean).collect();
        let corr_se: Vec<f64> = cells.values().map(|c| c.corrected_se).collect();
        let (disp, disp_se, disp_corrected, disp_corrected_se, pct_change, pct_change_se) =
            if complete {
                let d = disp_of(&plain);
                let dc = disp_of(&corr);
                let pct = |v: &[f64]| {
                    let (a, b) = v.split_at(6);
                    pct_change_disparity(disp_of(a)?, disp_of(b)?).ok()
                };
                let both: Vec<f64> = plain.iter().chain(&corr).copied().collect();
                let both_se: Vec<f64> = plain_se.iter().chain(&corr_se).copied().collect();
                (
                    d,
                    propagate(&disp_of, &plain, &plain_se),
                    dc,
                    propagate(&disp_of, &corr, &corr_se),
                    pct(&both),
                    propagate(&pct, &both, &both_se),
                )
            } else {
                (None, None, None, None, None, None)
            };
        classes.insert(
            class.clone(),
            OracleClass {
                cells,
                disp,
                disp_se,
                disp_corrected,
                disp_corrected_se,
                pct_change,
                pct_change_se,
            },
        );
    }
    Ok(OracleMetrics { classes })
}
