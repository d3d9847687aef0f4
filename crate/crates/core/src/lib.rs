//! Geographic disparity audit for instance segmentation and detection.

pub mod geo;
pub mod geometry;
pub mod ingest;
pub mod matching;
pub mod merging;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use geo::{assign_continent, Continent, GeoIndex, GeoMode, GeoTag, RegionTable};
pub use geometry::{box_iou, decode, encode, mask_iou, tight_box, BinaryGrid, Box2D, RleMask};
pub use ingest::{ImageCatalog, ImageMeta, InstanceRecord, LabelPolicy, PredictionRecord};
pub use matching::{match_instances, Criterion, MatchOptions, MatchResult};
pub use merging::{corrected_match, merged_label, MergePolicy};
pub use metrics::{
    box_plot_summary, continent_iou, geo_disparity, pct_change_disparity, BoxPlotSummary,
    ContinentIoU, DisparityRow, MetricsDocument, Quartiles,
};
pub use pipeline::{audit, validate, ModelInput, PipelineError, RunConfig};
pub use report::{render_box_plots, render_disparity_table, render_iou_table};
pub use synth::{generate, oracle_metrics, SynthSpec};
