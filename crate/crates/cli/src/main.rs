use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geodisp_core::pipeline::{self, PipelineError, THREADS_ENV};
use geodisp_core::synth::{self, SynthSpec};
use geodisp_core::{Criterion, GeoMode, LabelPolicy, MergePolicy, ModelInput, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "geodisp",
    version,
    about = "Geographic disparity audit for instance segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and check all inputs; print image and instance counts
    Validate(RunArgs),
    /// Run the full audit and write the report directory
    Audit(RunArgs),
    /// Generate a synthetic fixture set from a spec
    Synth {
        /// SynthSpec JSON file
        #[arg(short, long)]
        spec: PathBuf,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Config file plus per-field overrides.
#[derive(Args, Debug)]
struct RunArgs {
    /// Run config JSON
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// MODEL_ID=PATH, repeatable; replaces the config's prediction list
    #[arg(long = "prediction", value_name = "MODEL_ID=PATH")]
    predictions: Vec<String>,
    #[arg(long)]
    image_meta: Option<PathBuf>,
    #[arg(long)]
    geo_file: Option<PathBuf>,
    /// explicit | latlon
    #[arg(long)]
    geo_mode: Option<GeoMode>,
    /// GeoJSON region table
    #[arg(long)]
    region_file: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// JSON file holding a label policy
    #[arg(long)]
    label_policy: Option<PathBuf>,
    /// JSON file holding a merge policy, or "none" for no merging
    #[arg(long)]
    merge_policy: Option<String>,
    #[arg(long)]
    point_like_threshold: Option<f64>,
    #[arg(long)]
    highlight_threshold: Option<f64>,
    #[arg(long)]
    score_threshold: Option<f64>,
    /// Comma-separated: mask, box
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<Criterion>>,
    /// Worker threads for matching
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Write per-instance result CSVs
    #[arg(long)]
    dump_instances: bool,
}

fn absolute(p: PathBuf) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p)
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(p) = self.ground_truth {
            cfg.ground_truth = absolute(p)?;
        }
        if !self.predictions.is_empty() {
            cfg.predictions = self
                .predictions
                .iter()
                .map(|s| {
                    let Some((id, path)) = s.split_once('=') else {
                        bail!("--prediction expects MODEL_ID=PATH, got {s:?}");
                    };
                    Ok(ModelInput {
                        model_id: id.to_owned(),
                        path: absolute(path.into())?,
                    })
                })
                .collect::<Result<_>>()?;
        }
        if let Some(p) = self.image_meta {
            cfg.image_meta = absolute(p)?;
        }
        if let Some(p) = self.geo_file {
            cfg.geo_file = absolute(p)?;
        }
        if let Some(m) = self.geo_mode {
            cfg.geo_mode = m;
        }
        if let Some(p) = self.region_file {
            cfg.region_file = Some(absolute(p)?);
        }
        if let Some(p) = self.output_dir {
            cfg.output_dir = absolute(p)?;
        }
        if let Some(p) = self.label_policy {
            cfg.label_policy = read_json::<LabelPolicy>(&p)?;
        }
        match self.merge_policy.as_deref() {
            Some("none") => cfg.merge_policy = MergePolicy::empty(),
            Some(p) => cfg.merge_policy = read_json::<MergePolicy>(Path::new(p))?,
            None => {}
        }
        if let Some(t) = self.point_like_threshold {
            cfg.point_like_threshold = t;
        }
        if let Some(t) = self.highlight_threshold {
            cfg.highlight_threshold = t;
        }
        if let Some(t) = self.score_threshold {
            cfg.score_threshold = t;
        }
        if let Some(c) = self.criteria {
            cfg.criteria = c;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.dump_instances {
            cfg.dump_instances = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(args) => {
            let cfg = args.into_config()?;
            let report = pipeline::validate(&cfg)?;
            print!("{}", report.render());
        }
        Command::Audit(args) => {
            let cfg = args.into_config()?;
            let outcome = pipeline::audit(&cfg)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("report written to {}", outcome.output_dir.display());
        }
        Command::Synth { spec, out } => {
            let spec = SynthSpec::load(&spec)?;
            let fixture = synth::generate(&spec)?;
            synth::write_fixture(&spec, &fixture, &out)?;
            println!(
                "wrote {} ground-truth instances, {} predictions, {} images to {}",
                fixture.ground_truth.len(),
                fixture.predictions.len(),
                fixture.images.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
