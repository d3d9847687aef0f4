//! End-to-end driver: config → ingest → geo → matching → metrics → report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{load_geo, Continent, GeoError, GeoIndex, GeoMode, RegionTable};
use crate::ingest::{
    apply_point_like_filter, load_ground_truth, load_image_meta, load_predictions, ImageCatalog,
    IngestError, IngestReport, InstanceRecord, LabelPolicy, PredictionRecord,
};
use crate::matching::{evaluate_dataset, Criterion, MatchError, MatchOptions};
use crate::merging::{corrected_dataset, MergeError, MergePolicy};
use crate::metrics::{
    build_criterion_metrics, tag_results, ClassMetrics, MetricsDocument, MetricsError,
    ModelMetrics, RunCounters, RunInfo, TaggedResults, METRICS_SCHEMA_VERSION,
};
use crate::report::{render_all, ReportError};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "GEODISP_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("merge policy: {0}")]
    Merge(#[from] MergeError),
    #[error("matching: {0}")]
    Match(#[from] MatchError),
    #[error("internal: {0}")]
    Metrics(#[from] MetricsError),
    #[error("internal: {0}")]
    Report(#[from] ReportError),
    #[error("internal: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for bad input, 2 for a violated internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Match(MatchError::UnknownImage { .. }) => 1,
            PipelineError::Match(_)
            | PipelineError::Metrics(_)
            | PipelineError::Report(_)
            | PipelineError::Internal(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInput {
    pub model_id: String,
    pub path: PathBuf,
}

fn default_point_like() -> f64 {
    1e-4
}
fn default_highlight() -> f64 {
    crate::report::DEFAULT_HIGHLIGHT_THRESHOLD
}
fn default_criteria() -> Vec<Criterion> {
    Criterion::BOTH.to_vec()
}
fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub ground_truth: PathBuf,
    pub predictions: Vec<ModelInput>,
    pub image_meta: PathBuf,
    pub geo_file: PathBuf,
    #[serde(default)]
    pub geo_mode: GeoMode,
    /// GeoJSON region table; the built-in table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub label_policy: LabelPolicy,
    #[serde(default = "MergePolicy::default_groups")]
    pub merge_policy: MergePolicy,
    #[serde(default = "default_point_like")]
    pub point_like_threshold: f64,
    #[serde(default = "default_highlight")]
    pub highlight_threshold: f64,
    #[serde(default)]
    pub score_threshold: f64,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    /// Worker threads for matching; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Also write per-instance results.
    #[serde(default)]
    pub dump_instances: bool,
}

impl RunConfig {
    /// A config with default policies and thresholds.
    pub fn new(
        ground_truth: PathBuf,
        predictions: Vec<ModelInput>,
        image_meta: PathBuf,
        geo_file: PathBuf,
        output_dir: PathBuf,
    ) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            ground_truth,
            predictions,
            image_meta,
            geo_file,
            geo_mode: GeoMode::default(),
            region_file: None,
            output_dir,
            label_policy: LabelPolicy::default(),
            merge_policy: MergePolicy::default_groups(),
            point_like_threshold: default_point_like(),
            highlight_threshold: default_highlight(),
            score_threshold: 0.0,
            criteria: default_criteria(),
            threads: None,
            dump_instances: false,
        }
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.ground_truth);
        fix(&mut self.image_meta);
        fix(&mut self.geo_file);
        fix(&mut self.output_dir);
        if let Some(r) = &mut self.region_file {
            fix(r);
        }
        for m in &mut self.predictions {
            fix(&mut m.path);
        }
    }

    /// Field-level checks that need no file access beyond existence.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.predictions.is_empty() {
            return bad("no prediction files".into());
        }
        let mut ids = BTreeSet::new();
        for m in &self.predictions {
            let ok = !m.model_id.is_empty()
                && m.model_id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !ok {
                return bad(format!(
                    "model_id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                    m.model_id
                ));
            }
            if !ids.insert(&m.model_id) {
                return bad(format!("duplicate model_id {:?}", m.model_id));
            }
        }
        if self.criteria.is_empty() {
            return bad("criteria is empty".into());
        }
        if !(0.0..1.0).contains(&self.point_like_threshold) {
            return bad(format!(
                "point_like_threshold {} outside [0, 1)",
                self.point_like_threshold
            ));
        }
        if !(self.highlight_threshold.is_finite() && self.highlight_threshold >= 0.0) {
            return bad(format!(
                "highlight_threshold {} must be >= 0",
                self.highlight_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            ));
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        self.label_policy.validate()?;
        self.merge_policy.validate(&self.label_policy)?;
        let mut paths = vec![
            ("ground_truth", &self.ground_truth),
            ("image_meta", &self.image_meta),
            ("geo_file", &self.geo_file),
        ];
        if let Some(r) = &self.region_file {
            paths.push(("region_file", r));
        }
        for m in &self.predictions {
            paths.push(("predictions", &m.path));
        }
        for (field, p) in paths {
            if !p.is_file() {
                return bad(format!("{field}: {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    fn criteria_sorted(&self) -> Vec<Criterion> {
        let mut c = self.criteria.clone();
        c.sort();
        c.dedup();
        c
    }

    /// The config as echoed into `metrics.json`: without the thread count
    /// and output directory, which must not affect the metrics bytes.
    fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("threads");
            o.remove("output_dir");
        }
        v
    }
}

/// Thread count: explicit value, else the environment override, else all cores.
pub fn resolve_threads(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything loaded and filtered, ready for matching.
#[derive(Debug)]
pub struct Inputs {
    pub catalog: ImageCatalog,
    pub geo: GeoIndex,
    pub ground_truth: Vec<InstanceRecord>,
    pub predictions: Vec<(String, Vec<PredictionRecord>)>,
    pub counters: RunCounters,
    pub warnings: Vec<String>,
    pub region_table: String,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    cfg.check()?;
    let table = match &cfg.region_file {
        Some(p) => RegionTable::load(p)?,
        None => RegionTable::builtin(),
    };
    let catalog = load_image_meta(&cfg.image_meta)?;
    let (gt, gt_report) = load_ground_truth(&cfg.ground_truth, &catalog, &cfg.label_policy)?;
    let (gt, point_like) = apply_point_like_filter(gt, &catalog, cfg.point_like_threshold)?;
    let geo = load_geo(&cfg.geo_file, cfg.geo_mode, &table)?;

    let mut warnings = Vec::new();
    let mut counters = RunCounters {
        images_total: catalog.len(),
        ground_truth: gt_report,
        point_like,
        ..RunCounters::default()
    };
    let mut missing = Vec::new();
    for img in catalog.iter() {
        match geo.continent_of(&img.image_id) {
            Some(c) => *counters.images_per_continent.entry(c).or_default() += 1,
            None if geo.unresolved.contains(&img.image_id) => counters.images_unresolved += 1,
            None => missing.push(img.image_id.as_str()),
        }
    }
    counters.images_without_geo = missing.len();
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(5).collect();
        warnings.push(format!(
            "{} image(s) have no geo row and are excluded: {shown:?}{}",
            missing.len(),
            if missing.len() > 5 { " ..." } else { "" }
        ));
    }
    if counters.images_unresolved > 0 {
        warnings.push(format!(
            "{} image(s) fall outside every region and are excluded",
            counters.images_unresolved
        ));
    }
    let extra_geo = geo
        .tags()
        .filter(|t| catalog.get(&t.image_id).is_none())
        .count();
    if extra_geo > 0 {
        warnings.push(format!(
            "{extra_geo} geo row(s) name images not in the image metadata"
        ));
    }

    let before = gt.len();
    let gt: Vec<InstanceRecord> = gt
        .into_iter()
        .filter(|r| geo.continent_of(&r.image_id).is_some())
        .collect();
    counters.gt_excluded_no_continent = before - gt.len();
    for r in &gt {
        let c = geo.continent_of(&r.image_id).expect("filtered above");
        *counters
            .instances_per_class
            .entry(r.class_label.clone())
            .or_default()
            .entry(c)
            .or_default() += 1;
    }

    let mut predictions = Vec::new();
    for m in &cfg.predictions {
        let (p, rep): (Vec<PredictionRecord>, IngestReport) =
            load_predictions(&m.path, &catalog, &cfg.label_policy)?;
        counters.predictions.insert(m.model_id.clone(), rep);
        predictions.push((m.model_id.clone(), p));
    }

    Ok(Inputs {
        catalog,
        geo,
        ground_truth: gt,
        predictions,
        counters,
        warnings,
        region_table: table.id,
    })
}

/// Outcome of `validate`: counts and warnings, no metrics.
#[derive(Debug)]
pub struct ValidationReport {
    pub counters: RunCounters,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut s = crate::report::render_counters(&self.counters);
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

pub fn validate(cfg: &RunConfig) -> Result<ValidationReport, PipelineError> {
    let inputs = load_inputs(cfg)?;
    Ok(ValidationReport {
        counters: inputs.counters,
        warnings: inputs.warnings,
    })
}

/// Matching results for one model and criterion.
#[derive(Debug, Clone)]
pub struct CriterionRun {
    pub model_id: String,
    pub criterion: Criterion,
    pub plain: TaggedResults,
    pub corrected: TaggedResults,
}

/// Runs plain and corrected matching for every model and criterion on the
/// current rayon pool.
pub fn run_matching(cfg: &RunConfig, inputs: &Inputs) -> Result<Vec<CriterionRun>, PipelineError> {
    let mut runs = Vec::new();
    for (model_id, preds) in &inputs.predictions {
        for criterion in cfg.criteria_sorted() {
            let opts = MatchOptions {
                criterion,
                score_threshold: cfg.score_threshold,
            };
            let plain = evaluate_dataset(&inputs.catalog, &inputs.ground_truth, preds, opts)?;
            let corrected = corrected_dataset(
                &inputs.catalog,
                &inputs.ground_truth,
                preds,
                &cfg.merge_policy,
                opts,
            )?;
            runs.push(CriterionRun {
                model_id: model_id.clone(),
                criterion,
                plain: tag_results(&plain, &inputs.geo)?,
                corrected: tag_results(&corrected, &inputs.geo)?,
            });
        }
    }
    Ok(runs)
}

pub fn build_document(cfg: &RunConfig, inputs: &Inputs, runs: &[CriterionRun]) -> MetricsDocument {
    let classes = &cfg.label_policy.class_whitelist;
    let mut models = Vec::new();
    for (model_id, _) in &inputs.predictions {
        let mut per_class: BTreeMap<&str, ClassMetrics> = BTreeMap::new();
        for run in runs.iter().filter(|r| &r.model_id == model_id) {
            for (class, cm) in
                build_criterion_metrics(classes, &run.plain, &run.corrected, run.criterion)
            {
                let label = classes.iter().find(|c| **c == class).expect("whitelisted");
                per_class
                    .entry(label)
                    .or_insert_with(|| ClassMetrics {
                        class_label: class.clone(),
                        by_criterion: BTreeMap::new(),
                    })
                    .by_criterion
                    .insert(run.criterion, cm);
            }
        }
        let ordered = classes
            .iter()
            .filter_map(|c| per_class.remove(c.as_str()))
            .collect();
        models.push(ModelMetrics {
            model_id: model_id.clone(),
            classes: ordered,
        });
    }
    MetricsDocument {
        schema_version: METRICS_SCHEMA_VERSION,
        run: None,
        models,
    }
}

fn instance_dump(run: &[(Continent, crate::matching::MatchResult)]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "image_id",
        "instance_index",
        "class",
        "effective_class",
        "continent",
        "box_iou",
        "mask_iou",
        "matched",
    ])
    .expect("in-memory write");
    for (c, r) in run {
        w.write_record([
            r.image_id.as_str(),
            &r.instance_index.to_string(),
            &r.class_label,
            &r.effective_class,
            c.name(),
            &r.box_iou.to_string(),
            &r.mask_iou.to_string(),
            &r.matched_pred.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub output_dir: PathBuf,
    pub document: MetricsDocument,
    pub warnings: Vec<String>,
}

/// Full audit. The report directory appears complete or not at all.
pub fn audit(cfg: &RunConfig) -> Result<AuditOutcome, PipelineError> {
    let inputs = load_inputs(cfg)?;

    let mut digests = BTreeMap::new();
    digests.insert("gt".to_owned(), sha256_file(&cfg.ground_truth)?);
    digests.insert("image_meta".to_owned(), sha256_file(&cfg.image_meta)?);
    digests.insert("geo".to_owned(), sha256_file(&cfg.geo_file)?);
    if let Some(r) = &cfg.region_file {
        digests.insert("regions".to_owned(), sha256_file(r)?);
    }
    for m in &cfg.predictions {
        digests.insert(format!("pred:{}", m.model_id), sha256_file(&m.path)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(cfg.threads))
        .build()
        .map_err(|e| PipelineError::Internal(format!("thread pool: {e}")))?;
    let runs = pool.install(|| run_matching(cfg, &inputs))?;

    let mut doc = build_document(cfg, &inputs, &runs);
    doc.run = Some(RunInfo {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config: cfg.echo(),
        region_table: inputs.region_table.clone(),
        input_digests: digests,
        counters: inputs.counters.clone(),
    });

    let mut files = render_all(&doc, cfg.highlight_threshold)?;
    let mut json = serde_json::to_string_pretty(&doc)
        .map_err(|e| PipelineError::Internal(format!("metrics serialization: {e}")))?;
    json.push('\n');
    files.push(("metrics.json".to_owned(), json));
    if cfg.dump_instances {
        for run in &runs {
            for (tag, rows) in [("plain", &run.plain), ("corrected", &run.corrected)] {
                files.push((
                    format!(
                        "instances_{}_{}_{tag}.csv",
                        run.model_id,
                        run.criterion.name()
                    ),
                    instance_dump(rows),
                ));
            }
        }
    }
    write_atomically(&cfg.output_dir, &files)?;
    Ok(AuditOutcome {
        output_dir: cfg.output_dir.clone(),
        document: doc,
        warnings: inputs.warnings,
    })
}

/// Writes files into a sibling temp directory, then swaps it into place.
pub fn write_atomically(dir: &Path, files: &[(String, String)]) -> Result<(), PipelineError> {
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let name = dir
        .file_name()
        .ok_or_else(|| PipelineError::Config(format!("bad output_dir {}", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    let old = parent.join(format!(".{name}.old-{}", std::process::id()));

    let result = (|| {
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir(&tmp).map_err(io_err(&tmp))?;
        for (file, contents) in files {
            let p = tmp.join(file);
            let mut f = fs::File::create(&p).map_err(io_err(&p))?;
            f.write_all(contents.as_bytes()).map_err(io_err(&p))?;
            f.sync_all().map_err(io_err(&p))?;
        }
        if dir.exists() {
            fs::rename(dir, &old).map_err(io_err(dir))?;
        }
        fs::rename(&tmp, dir).map_err(io_err(dir))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(io_err(&old))?;
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
        if old.exists() && !dir.exists() {
            let _ = fs::rename(&old, dir);
        }
    }
    result
}
