//! Command-line front end: dataset generation and validation, training,
//! evaluation, heatmaps and distance profiles.
//!
//! Each subcommand resolves its flags, an optional config file and the
//! defaults into an [`Invocation`], executes it, and records it in a
//! `run.json` next to its outputs. `replay` re-executes a recorded run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use trusspose::camera::{validate_pose, write_overlay, ValidationReport};
use trusspose::evaluation::{
    distance_profile, evaluate, plot_profile, rank_by_error, sample_heatmap, tensor_image, MetricsReport, HEATMAP_METHOD,
};
use trusspose::scenegen::{generate_dataset, load_dataset, load_manifest, load_sample, SceneConfig};
use trusspose::training::{make_batch, train, TrainConfig};
use trusspose::models::Variant;

/// Relative output paths are resolved against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "TRUSSPOSE_OUTPUT_ROOT";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const VALIDATION_FILE: &str = "validation.jsonl";

/// Exit status for failed runs and failed validation.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub bin_width: f64,
    /// Distance range the profile bins cover at minimum (m).
    pub range: [f64; 2],
    pub top_k: usize,
    /// Heatmap layer; the last convolution when unset.
    pub layer: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            bin_width: 0.1,
            range: [0.3, 1.0],
            top_k: 5,
            layer: None,
        }
    }
}

/// Contents of a `--config` file (TOML or JSON). Every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub evaluation: EvalSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            _ => bail!("config {} must end in .toml or .json", path.display()),
        }
    }

    fn from_option(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Parser)]
#[command(name = "trusspose", version, about = "Monocular truss pose estimation at toy scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a labelled synthetic dataset.
    Generate(GenerateArgs),
    /// Reproject every label onto its rendered mask.
    Validate(ValidateArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Activation heatmaps for chosen samples.
    Heatmap(HeatmapArgs),
    /// Distance-binned error statistics and error rankings.
    Profile(ProfileArgs),
    /// Re-execute a recorded run.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to `<dataset>/validation`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one overlay image per sample.
    #[arg(long)]
    overlays: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Fails unless the checkpoint holds this variant.
    #[arg(long)]
    variant: Option<Variant>,
    /// Defaults to `eval/` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Sample index; repeat for several.
    #[arg(long = "sample", required = true)]
    samples: Vec<usize>,
    /// `name`, or `translation/name` / `attitude/name` for parallel models.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// A metrics.json written by `eval`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    run: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A fully resolved subcommand. Paths are absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase", deny_unknown_fields)]
pub enum Invocation {
    Generate {
        scene: SceneConfig,
        out: PathBuf,
    },
    Validate {
        dataset: PathBuf,
        out: PathBuf,
        overlays: bool,
    },
    Train {
        train: TrainConfig,
        dataset: PathBuf,
        out: PathBuf,
    },
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        variant: Option<Variant>,
        out: PathBuf,
    },
    Heatmap {
        checkpoint: PathBuf,
        dataset: PathBuf,
        samples: Vec<usize>,
        layer: Option<String>,
        out: PathBuf,
    },
    Profile {
        report: PathBuf,
        bin_width: f64,
        range: [f64; 2],
        top_k: usize,
        out: PathBuf,
    },
}

impl Invocation {
    pub fn out(&self) -> &Path {
        match self {
            Self::Generate { out, .. }
            | Self::Validate { out, .. }
            | Self::Train { out, .. }
            | Self::Eval { out, .. }
            | Self::Heatmap { out, .. }
            | Self::Profile { out, .. } => out,
        }
    }

    fn set_out(&mut self, path: PathBuf) {
        match self {
            Self::Generate { out, .. }
            | Self::Validate { out, .. }
            | Self::Train { out, .. }
            | Self::Eval { out, .. }
            | Self::Heatmap { out, .. }
            | Self::Profile { out, .. } => *out = path,
        }
    }
}

/// Provenance written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub invocation: Invocation,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub argv: Vec<String>,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

fn output_path(path: &Path) -> Result<PathBuf> {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => absolute(&Path::new(&root).join(path)),
        _ => absolute(path),
    }
}

fn resolve(command: Command) -> Result<Invocation> {
    Ok(match command {
        Command::Generate(a) => {
            let mut scene = RunConfig::from_option(a.config.as_deref())?.scene;
            if let Some(v) = a.count {
                scene.count = v;
            }
            if let Some(v) = a.seed {
                scene.seed = v;
            }
            if let Some(v) = a.size {
                scene.size = v;
            }
            Invocation::Generate {
                scene,
                out: output_path(&a.out)?,
            }
        }
        Command::Validate(a) => {
            let dataset = absolute(&a.dataset)?;
            let out = match a.out {
                Some(o) => output_path(&o)?,
                None => dataset.join("validation"),
            };
            Invocation::Validate {
                dataset,
                out,
                overlays: a.overlays,
            }
        }
        Command::Train(a) => {
            let mut train = RunConfig::from_option(a.config.as_deref())?.train;
            if let Some(v) = a.variant {
                train.topology.variant = v;
            }
            if let Some(v) = a.epochs {
                train.epochs = v;
            }
            if let Some(v) = a.beta {
                train.loss.beta = v;
            }
            if let Some(v) = a.seed {
                train.seed = v;
            }
            if let Some(v) = a.batch_size {
                train.batch_size = v;
            }
            if let Some(v) = a.learning_rate {
                train.learning_rate = v;
            }
            Invocation::Train {
                train,
                dataset: absolute(&a.dataset)?,
                out: output_path(&a.out)?,
            }
        }
        Command::Eval(a) => {
            let checkpoint = absolute(&a.checkpoint)?;
            let out = match a.out {
                Some(o) => output_path(&o)?,
                None => checkpoint.parent().map(|p| p.join("eval")).unwrap_or_else(|| "eval".into()),
            };
            Invocation::Eval {
                checkpoint,
                dataset: absolute(&a.dataset)?,
                variant: a.variant,
                out,
            }
        }
        Command::Heatmap(a) => {
            let settings = RunConfig::from_option(a.config.as_deref())?.evaluation;
            Invocation::Heatmap {
                checkpoint: absolute(&a.checkpoint)?,
                dataset: absolute(&a.dataset)?,
                samples: a.samples,
                layer: a.layer.or(settings.layer),
                out: output_path(&a.out)?,
            }
        }
        Command::Profile(a) => {
            let settings = RunConfig::from_option(a.config.as_deref())?.evaluation;
            let report = absolute(&a.report)?;
            let out = match a.out {
                Some(o) => output_path(&o)?,
                None => report.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            Invocation::Profile {
                report,
                bin_width: a.bin_width.unwrap_or(settings.bin_width),
                range: settings.range,
                top_k: a.top_k.unwrap_or(settings.top_k),
                out,
            }
        }
        Command::Replay(a) => {
            let text = std::fs::read_to_string(&a.run).with_context(|| format!("reading {}", a.run.display()))?;
            let record: RunRecord =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", a.run.display()))?;
            let mut invocation = record.invocation;
            if let Some(o) = a.out {
                invocation.set_out(output_path(&o)?);
            }
            invocation
        }
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Seeds that determine the run's outputs, including those inherited
/// from its inputs.
fn seeds(invocation: &Invocation) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    let dataset_seed = |dir: &Path| load_manifest(dir).ok().map(|m| m.config.seed);
    match invocation {
        Invocation::Generate { scene, .. } => {
            seeds.insert("scene".into(), scene.seed);
        }
        Invocation::Train { train, dataset, .. } => {
            seeds.insert("shuffle".into(), train.seed);
            seeds.insert("init".into(), train.topology.init_seed);
            if let Some(s) = dataset_seed(dataset) {
                seeds.insert("scene".into(), s);
            }
        }
        Invocation::Validate { dataset, .. } | Invocation::Eval { dataset, .. } | Invocation::Heatmap { dataset, .. } => {
            if let Some(s) = dataset_seed(dataset) {
                seeds.insert("scene".into(), s);
            }
        }
        Invocation::Profile { .. } => {}
    }
    seeds
}

fn record(invocation: &Invocation, argv: &[String]) -> Result<()> {
    let record = RunRecord {
        invocation: invocation.clone(),
        seeds: seeds(invocation),
        versions: BTreeMap::from([
            ("trusspose".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("run_format".to_string(), "1".to_string()),
        ]),
        argv: argv.to_vec(),
    };
    write_json(&invocation.out().join(RUN_FILE), &record)
}

/// Runs a resolved invocation. `Ok(false)` means the run completed but
/// its check failed (validation).
pub fn execute(invocation: &Invocation) -> Result<bool> {
    create_dir(invocation.out())?;
    match invocation {
        Invocation::Generate { scene, out } => {
            let manifest = generate_dataset(scene, out)?;
            println!(
                "{} samples ({} train, {} test) in {}",
                manifest.samples.len(),
                manifest.train_count,
                manifest.test_count,
                out.display()
            );
            Ok(true)
        }
        Invocation::Validate { dataset, out, overlays } => validate_dataset(dataset, out, *overlays),
        Invocation::Train { train: config, dataset, out } => {
            let (_, log) = train(config, dataset, out)?;
            let last = log.last();
            println!(
                "{} after {} epochs: L_T {:.5} L_R {:.5} L {:.5}; {}",
                config.topology.variant,
                last.epoch,
                last.translation_loss,
                last.rotation_loss,
                last.total_loss,
                out.display()
            );
            Ok(true)
        }
        Invocation::Eval {
            checkpoint,
            dataset,
            variant,
            out,
        } => {
            let report = evaluate(checkpoint, dataset, *variant)
                .with_context(|| format!("evaluating {} on {}", checkpoint.display(), dataset.display()))?;
            report.write_json(&out.join(METRICS_JSON))?;
            report.write_csv(&out.join(METRICS_CSV))?;
            println!(
                "{} test samples: rotation mean {:.3}° median {:.3}°, translation mean {:.4} m",
                report.samples.len(),
                report.mean_rotation_error_deg,
                report.median_rotation_error_deg,
                report.mean_translation_error_m
            );
            Ok(true)
        }
        Invocation::Heatmap {
            checkpoint,
            dataset,
            samples,
            layer,
            out,
        } => heatmaps(checkpoint, dataset, samples, layer.as_deref(), out),
        Invocation::Profile {
            report,
            bin_width,
            range,
            top_k,
            out,
        } => {
            let report = MetricsReport::read_json(report)?;
            let profile = distance_profile(&report, *bin_width, Some(*range))?;
            profile.write_json(&out.join("profile.json"))?;
            plot_profile(&profile, &out.join("profile.png"))?;
            let ranking = rank_by_error(&report, (*top_k).min(report.samples.len()))?;
            write_json(&out.join("ranking.json"), &ranking)?;
            println!(
                "{} bins of {} m, pooled σ {:.4}, Spearman {}",
                profile.counts.len(),
                bin_width,
                profile.pooled_std,
                profile.spearman.map_or("n/a".to_string(), |r| format!("{r:.3}"))
            );
            Ok(true)
        }
    }
}

fn validate_dataset(dataset: &Path, out: &Path, overlays: bool) -> Result<bool> {
    let manifest = load_manifest(dataset)?;
    let mesh = manifest.config.mesh()?;
    let k = manifest.intrinsics;
    if overlays {
        create_dir(&out.join("overlays"))?;
    }
    let mut lines = String::new();
    let mut failed: Vec<ValidationReport> = Vec::new();
    for record in &manifest.samples {
        let sample = load_sample(dataset, &manifest, record)?;
        let (report, projected) = validate_pose(sample.index, &sample.mask, &sample.pose, &mesh, &k);
        if overlays {
            let path = out.join("overlays").join(format!("{:06}.png", sample.index));
            write_overlay(&path, &sample.image, &sample.mask, &projected)?;
        }
        lines.push_str(&serde_json::to_string(&report)?);
        lines.push('\n');
        if !report.passed {
            failed.push(report);
        }
    }
    let path = out.join(VALIDATION_FILE);
    std::fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
    for r in &failed {
        eprintln!("sample {} failed: {:.3} of in-frame vertices on the mask", r.index, r.fraction);
    }
    println!(
        "{}/{} samples passed; reports in {}",
        manifest.samples.len() - failed.len(),
        manifest.samples.len(),
        path.display()
    );
    Ok(failed.is_empty())
}

#[derive(Serialize)]
struct HeatmapRecord {
    index: usize,
    image: String,
    peak: [usize; 2],
    bbox: [f64; 4],
    /// Whether the peak lies in the label's bounding box; only defined
    /// for layers that see the full-frame image.
    peak_in_bbox: Option<bool>,
}

fn heatmaps(checkpoint: &Path, dataset: &Path, samples: &[usize], layer: Option<&str>, out: &Path) -> Result<bool> {
    let (model, _) = trusspose::models::PoseModel::<f32>::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let (_, data) = load_dataset(dataset)?;
    let mut records = Vec::new();
    let mut resolved_layer = None;
    let mut input = "";
    for &index in samples {
        let sample = data
            .samples
            .iter()
            .find(|s| s.index == index)
            .with_context(|| format!("no sample {index} in {}", dataset.display()))?;
        let heat = sample_heatmap(&model, &data, sample, layer)?;
        let (image, bounded) = make_batch(&data, &[sample]);
        let base = if heat.input == trusspose::models::BOUNDED_INPUT { bounded } else { image };
        let name = format!("heatmap_{index:06}.png");
        heat.overlay(&tensor_image(&base, 0)).save_png(&out.join(&name))?;
        let (px, py) = heat.peak();
        let [x0, y0, x1, y1] = sample.bbox;
        let full_frame = heat.input == trusspose::models::IMAGE_INPUT;
        let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
        records.push(HeatmapRecord {
            index,
            image: name,
            peak: [px, py],
            bbox: sample.bbox,
            peak_in_bbox: full_frame.then_some(cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1),
        });
        resolved_layer = Some(heat.layer);
        input = heat.input;
    }
    write_json(
        &out.join("heatmaps.json"),
        &serde_json::json!({
            "method": HEATMAP_METHOD,
            "layer": resolved_layer,
            "input": input,
            "samples": records,
        }),
    )?;
    println!("{} heatmaps in {}", samples.len(), out.display());
    Ok(true)
}

/// Parses `argv` (including the program name), runs it, and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = resolve(cli.command).and_then(|inv| {
        let ok = execute(&inv)?;
        record(&inv, &argv)?;
        Ok(ok)
    });
    match outcome {
        Ok(true) => 0,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
