//! `letsne` command-line tool: synthesize data, segment cubes, train
//! embeddings, evaluate them and plot them.

pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use letsne::data::fmt_num;
use letsne::eval::{evaluate_split, SvmConfig};
use letsne::{
    load_cube, load_region_map, make_blobs, make_quadrant_cube, make_swiss_roll, merge_regions, pca_project,
    read_tabular, save_region_map, slic, stratified_split, train, write_cube, write_tabular, CubeDtype, Data,
    EmbedMode, Error, Image, RegionMap,
};
use serde::Serialize;

pub use config::{ColorBy, RunConfig, SynthKind};

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid invocation or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Failure while running a valid request (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Param(_) | Error::Mode(_) | Error::Schema(_) | Error::Shape(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "letsne", version, about = "Parametric neighbor embedding with compression-factor affinities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding network and project every sample.
    Embed(EmbedArgs),
    /// Superpixel segmentation of a hyperspectral cube.
    Segment(SegmentArgs),
    /// Linear SVM accuracy and kappa on a stratified split.
    Eval(EvalArgs),
    /// SVG scatter plot of an embeddings file.
    Plot(PlotArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<EmbedMode>,
    /// Compression factor (>= 1).
    #[arg(long, global = true)]
    pub cf: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub perplexity: Option<f64>,
    /// Neighbors per sample for the kNN graph.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    pub dims: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
}

fn parse_mode(s: &str) -> Result<EmbedMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset: `.hsc` cube or headed CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Region map CSV for region mode.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Standardize features before training (default true).
    #[arg(long)]
    pub standardize: Option<bool>,
    /// Train without the labels of the evaluation test split.
    #[arg(long)]
    pub hide_test_labels: Option<bool>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub target_regions: Option<usize>,
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Merge adjacent regions whose mean colors are closer than this.
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    /// Principal components used as color channels.
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    /// Evaluate a PCA projection of the standardized input instead.
    #[arg(long)]
    pub pca_dims: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub color_by: Option<ColorBy>,
    #[arg(long)]
    pub point_size: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub kind: Option<SynthKind>,
    /// Samples per class (blobs) or total samples (swissroll).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
}

impl CommonArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            out: self.out.clone(),
            mode: self.mode,
            cf: self.cf,
            lambda: self.lambda,
            perplexity: self.perplexity,
            k: self.k,
            dims: self.dims,
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..RunConfig::default()
        }
    }

    fn resolve(&self, specific: RunConfig) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(file.overlay(self.flags()).overlay(specific))
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Embed(a) => cmd_embed(&a.common.resolve(RunConfig {
            input: a.input.clone(),
            label_column: a.label_column.clone(),
            regions: a.regions.clone(),
            hidden: a.hidden.clone(),
            learning_rate: a.learning_rate,
            standardize: a.standardize,
            hide_test_labels: a.hide_test_labels,
            train_fraction: a.train_fraction,
            ..RunConfig::default()
        })?),
        Command::Segment(a) => cmd_segment(&a.common.resolve(RunConfig {
            input: a.input.clone(),
            target_regions: a.target_regions,
            compactness: a.compactness,
            iterations: a.iterations,
            merge_threshold: a.merge_threshold,
            channels: a.channels,
            ..RunConfig::default()
        })?),
        Command::Eval(a) => cmd_eval(&a.common.resolve(RunConfig {
            input: a.input.clone(),
            label_column: a.label_column.clone(),
            train_fraction: a.train_fraction,
            svm_c: a.svm_c,
            svm_epochs: a.svm_epochs,
            pca_dims: a.pca_dims,
            ..RunConfig::default()
        })?),
        Command::Plot(a) => cmd_plot(&a.common.resolve(RunConfig {
            input: a.input.clone(),
            label_column: a.label_column.clone(),
            regions: a.regions.clone(),
            color_by: a.color_by,
            point_size: a.point_size,
            ..RunConfig::default()
        })?),
        Command::Synth(a) => cmd_synth(&a.common.resolve(RunConfig {
            kind: a.kind,
            n: a.n,
            classes: a.classes,
            features: a.features,
            spread: a.spread,
            noise: a.noise,
            side: a.side,
            bands: a.bands,
            ..RunConfig::default()
        })?),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    samples: usize,
    features: usize,
    outputs: Vec<&'static str>,
}

fn write_manifest(dir: &Path, command: &'static str, config: &RunConfig, data: &Data, outputs: Vec<&'static str>) -> Result<(), CliError> {
    let m = Manifest {
        tool: "letsne",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        samples: data.n(),
        features: data.d(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn prepare_out(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Loads a cube by extension, otherwise a CSV whose label column is the
/// configured one or, when unset, a column named `label` if present.
pub fn load_input(path: &Path, label_column: Option<&str>) -> Result<Data, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("hsc")) {
        return Ok(load_cube(path)?);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let column = match label_column {
        Some(c) => Some(c),
        None => {
            let header = text.lines().next().unwrap_or("");
            header.split(',').any(|h| h.trim() == "label").then_some("label")
        }
    };
    Ok(read_tabular(text.as_bytes(), column)?)
}

fn class_name(data: &Data, class: usize) -> String {
    data.class_names().get(class).cloned().unwrap_or_else(|| class.to_string())
}

fn load_regions_for(config: &RunConfig, data: &Data) -> Result<RegionMap, CliError> {
    let path = config
        .regions
        .as_deref()
        .ok_or_else(|| CliError::Usage("region mode requires the `regions` setting".into()))?;
    let regions = load_region_map(path)?;
    if regions.len() != data.n() {
        return Err(CliError::Usage(format!(
            "region map covers {} pixels but the input has {} samples",
            regions.len(),
            data.n()
        )));
    }
    Ok(regions)
}

pub fn cmd_embed(config: &RunConfig) -> Result<(), CliError> {
    let tc = config.train_config();
    tc.validate()?;
    let original = load_input(config.require_input()?, config.label_column.as_deref())?;
    let regions = match tc.mode {
        EmbedMode::Region => Some(load_regions_for(config, &original)?),
        _ => None,
    };
    if tc.mode == EmbedMode::Labelled && original.labels().is_none() {
        return Err(CliError::Usage(
            "labelled mode needs labels: the input has no `label_column`".into(),
        ));
    }
    let mut data = if config.standardize.unwrap_or(true) {
        original.standardize()?
    } else {
        original.clone()
    };
    if config.hide_test_labels.unwrap_or(false) {
        let labels = original
            .labels()
            .ok_or_else(|| CliError::Usage("`hide_test_labels` needs a `label_column`".into()))?;
        let split = stratified_split(labels, config.train_fraction(), config.seed())?;
        data = data.hide_labels(&split.test);
    }

    let (model, result) = train(&data, &tc, regions.as_ref())?;
    let dir = prepare_out(config)?;

    let e = result.embedding.ncols();
    let mut csv: Vec<String> = (0..e).map(|j| format!("y{j}")).collect();
    csv.push("label".into());
    let mut text = csv.join(",") + "\n";
    for (i, row) in result.embedding.outer_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        let label = original.labels().and_then(|l| l[i]).map(|c| class_name(&original, c));
        cells.push(label.unwrap_or_default());
        text += &cells.join(",");
        text.push('\n');
    }
    fs::write(dir.join("embeddings.csv"), text)?;

    let mut loss = String::from("epoch,laplacian_term,kl_term,total\n");
    for h in &result.history {
        loss += &format!("{},{},{},{}\n", h.epoch, fmt_num(h.laplacian), fmt_num(h.kl), fmt_num(h.total));
    }
    fs::write(dir.join("loss.csv"), loss)?;
    model.save(dir.join("model.bin"))?;

    let resolved = RunConfig {
        standardize: Some(config.standardize.unwrap_or(true)),
        ..config.clone().with_train_config(&tc)
    };
    write_manifest(&dir, "embed", &resolved, &original, vec!["embeddings.csv", "loss.csv", "model.bin", "manifest.json"])
}

pub fn cmd_segment(config: &RunConfig) -> Result<(), CliError> {
    let data = load_input(config.require_input()?, None)?;
    let grid = data
        .grid()
        .ok_or_else(|| CliError::Usage("segment needs a cube input with grid geometry; tabular input has none".into()))?;
    let target = config.target_regions.unwrap_or(256).min(grid.len());
    let compactness = config.compactness.unwrap_or(10.0);
    let iterations = config.iterations.unwrap_or(10);
    let threshold = config.merge_threshold.unwrap_or(0.0);
    let channels = config.channels.unwrap_or(3).min(data.d());
    if channels == 0 {
        return Err(CliError::Usage("`channels` must be at least 1".into()));
    }
    if !(threshold >= 0.0) {
        return Err(CliError::Usage("`merge_threshold` must be non-negative".into()));
    }
    let std = data.standardize()?;
    let pcs = pca_project(std.values().view(), channels)?;
    let image = Image::new(grid.height, grid.width, channels, pcs.iter().copied().collect())?.normalized();
    let mut regions = slic(&image, target, compactness, iterations)?;
    if threshold > 0.0 {
        regions = merge_regions(&regions, &image, threshold)?;
    }
    let dir = prepare_out(config)?;
    save_region_map(&regions, dir.join("regions.csv"))?;
    fs::write(dir.join("regions.svg"), svg::region_map(&regions))?;
    let resolved = RunConfig {
        target_regions: Some(target),
        compactness: Some(compactness),
        iterations: Some(iterations),
        merge_threshold: Some(threshold),
        channels: Some(channels),
        ..config.clone()
    };
    write_manifest(&dir, "segment", &resolved, &data, vec!["regions.csv", "regions.svg", "manifest.json"])
}

pub fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    let data = load_input(config.require_input()?, config.label_column.as_deref())?;
    let labels = data
        .labels()
        .ok_or_else(|| CliError::Usage("eval needs labels: the input has no `label_column`".into()))?;
    let features = match config.pca_dims {
        Some(e) => pca_project(data.standardize()?.values().view(), e)?,
        None => data.values().clone(),
    };
    let fraction = config.train_fraction();
    let split = stratified_split(labels, fraction, config.seed())?;
    let defaults = SvmConfig::default();
    let svm = SvmConfig {
        c: config.svm_c.unwrap_or(defaults.c),
        epochs: config.svm_epochs.unwrap_or(defaults.epochs),
        seed: config.seed(),
        ..defaults
    };
    let report = evaluate_split(features.view(), labels, &split, fraction, &svm)?;
    if svm.c == 0.0 {
        eprintln!("warning: svm_c = 0 trains an unregularized classifier");
    }
    let dir = prepare_out(config)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join("report.json"), text + "\n")?;
    let resolved = RunConfig {
        train_fraction: Some(fraction),
        svm_c: Some(svm.c),
        svm_epochs: Some(svm.epochs),
        seed: Some(svm.seed),
        ..config.clone()
    };
    write_manifest(&dir, "eval", &resolved, &data, vec!["report.json", "manifest.json"])
}

pub fn cmd_plot(config: &RunConfig) -> Result<(), CliError> {
    let data = load_input(config.require_input()?, config.label_column.as_deref())?;
    let values = data.values();
    let points: Vec<(f64, f64)> = values
        .outer_iter()
        .map(|r| (r[0], if r.len() > 1 { r[1] } else { 0.0 }))
        .collect();
    let color_by = config
        .color_by
        .unwrap_or(if data.labels().is_some() { ColorBy::Label } else { ColorBy::Component });
    let classes: Vec<Option<usize>> = match color_by {
        ColorBy::Label => data
            .labels()
            .ok_or_else(|| CliError::Usage("color_by label needs a `label_column`".into()))?
            .to_vec(),
        ColorBy::Region => load_regions_for(config, &data)?.ids().iter().map(|&r| Some(r)).collect(),
        ColorBy::Component => {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
            let bins = svg::PALETTE.len();
            points
                .iter()
                .map(|p| {
                    let t = if hi > lo { (p.0 - lo) / (hi - lo) } else { 0.0 };
                    Some(((t * bins as f64) as usize).min(bins - 1))
                })
                .collect()
        }
    };
    let radius = config.point_size.unwrap_or(3.0);
    if !(radius > 0.0) {
        return Err(CliError::Usage("`point_size` must be positive".into()));
    }
    let dir = prepare_out(config)?;
    fs::write(dir.join("plot.svg"), svg::scatter(&points, &classes, radius))?;
    Ok(())
}

pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let kind = config
        .kind
        .ok_or_else(|| CliError::Usage("missing required setting `kind` (blobs, swissroll or blocks)".into()))?;
    let seed = config.seed();
    let dir = prepare_out(config)?;
    let (data, name) = match kind {
        SynthKind::Blobs => {
            let data = make_blobs::<f64>(
                config.n.unwrap_or(50),
                config.classes.unwrap_or(3),
                config.features.unwrap_or(10),
                config.spread.unwrap_or(1.0),
                seed,
            )?;
            write_tabular(&data, dir.join("dataset.csv"))?;
            (data, "dataset.csv")
        }
        SynthKind::Swissroll => {
            let data = make_swiss_roll::<f64>(config.n.unwrap_or(1000), config.noise.unwrap_or(0.05), seed)?;
            write_tabular(&data, dir.join("dataset.csv"))?;
            (data, "dataset.csv")
        }
        SynthKind::Blocks => {
            let data = make_quadrant_cube::<f64>(
                config.side.unwrap_or(16),
                config.bands.unwrap_or(20),
                config.noise.unwrap_or(1.0),
                seed,
            )?;
            write_cube(&data, CubeDtype::F64, dir.join("cube.hsc"))?;
            (data, "cube.hsc")
        }
    };
    write_manifest(&dir, "synth", config, &data, vec![name, "manifest.json"])
}
