//! Held-out metrics, distance-binned error statistics, error rankings and
//! activation heatmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_angle, translation_loss, LossConfig, Quaternion, Translation};
use crate::imaging::{draw_cross, draw_line, jet, Image};
use crate::models::{last_conv, PoseModel, PoseOutput, Variant, BOUNDED_INPUT};
use crate::scenegen::{load_dataset, sample_paths, LoadedDataset, LoadedSample, SceneError, Split};
use crate::tensor::{LayerKind, Tensor, TensorError};
use crate::training::predict_samples;

/// Full-scale results for reference (pretrained backbones, 100 epochs):
/// `(model, mean rotation error °, median rotation error °, mean
/// translation error m)`. Not expected at toy scale.
pub const REFERENCE_RESULTS: [(&str, f64, f64, f64); 4] = [
    ("VGG-16", 13.56, 12.33, 0.18),
    ("VGG-19", 12.21, 11.34, 0.15),
    ("Branched VGG-19", 8.34, 7.34, 0.06),
    ("Parallel VGG-19", 4.61, 4.41, 0.03),
];

pub const HEATMAP_METHOD: &str = "mean-absolute-activation";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` is not convolutional")]
    NotConvolutional(String),
    #[error("sample {index}: predicted quaternion is degenerate")]
    DegenerateQuaternion { index: usize },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("{predictions} predictions for {samples} samples")]
    CountMismatch { predictions: usize, samples: usize },
    #[error("the report has no samples")]
    EmptyReport,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub index: usize,
    pub rotation_error_deg: f64,
    pub translation_error_m: f64,
    pub distance_m: f64,
    /// `translation error + β · rotation error (radians)`.
    pub combined_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Option<Variant>,
    pub loss: LossConfig,
    pub mean_rotation_error_deg: f64,
    pub median_rotation_error_deg: f64,
    pub mean_translation_error_m: f64,
    pub samples: Vec<SampleError>,
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl MetricsReport {
    pub fn max_rotation_error_deg(&self) -> f64 {
        self.samples.iter().map(|s| s.rotation_error_deg).fold(0.0, f64::max)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| EvalError::Json {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|source| EvalError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Per-sample errors, one row each.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let err = |source| EvalError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for s in &self.samples {
            w.serialize(s).map_err(err)?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Scores `predictions` against the labels of `samples`.
pub fn evaluate_predictions(
    samples: &[&LoadedSample],
    predictions: &[PoseOutput<f32>],
    loss: &LossConfig,
    variant: Option<Variant>,
) -> Result<MetricsReport, EvalError> {
    if samples.len() != predictions.len() {
        return Err(EvalError::CountMismatch {
            predictions: predictions.len(),
            samples: samples.len(),
        });
    }
    if samples.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let rows = samples
        .iter()
        .zip(predictions)
        .map(|(s, p)| {
            let q = Quaternion::from_array(p.quaternion_raw.map(f64::from))
                .normalize()
                .map_err(|_| EvalError::DegenerateQuaternion { index: s.index })?;
            let rot = rotation_angle(s.pose.rotation, q, loss.convention);
            let trans = translation_loss(s.pose.translation, Translation::from_array(p.translation.map(f64::from)));
            Ok(SampleError {
                index: s.index,
                rotation_error_deg: rot.to_degrees(),
                translation_error_m: trans,
                distance_m: s.distance,
                combined_error: trans + loss.beta * rot,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let n = rows.len() as f64;
    let mut rot: Vec<f64> = rows.iter().map(|r| r.rotation_error_deg).collect();
    Ok(MetricsReport {
        variant,
        loss: *loss,
        mean_rotation_error_deg: rot.iter().sum::<f64>() / n,
        median_rotation_error_deg: median(&mut rot),
        mean_translation_error_m: rows.iter().map(|r| r.translation_error_m).sum::<f64>() / n,
        samples: rows,
    })
}

/// Evaluates `model` on the test split of `dataset`.
pub fn evaluate_model(model: &PoseModel<f32>, dataset: &LoadedDataset, loss: &LossConfig) -> Result<MetricsReport, EvalError> {
    let test = dataset.split(Split::Test);
    let predictions = predict_samples(model, dataset, &test, 32)?;
    evaluate_predictions(&test, &predictions, loss, Some(model.variant()))
}

/// Loss weighting recorded by training in the checkpoint metadata.
pub fn checkpoint_loss(extra: &serde_json::Value) -> LossConfig {
    serde_json::from_value(extra["train"]["loss"].clone()).unwrap_or_default()
}

/// Loads a checkpoint and evaluates it on the test split of the dataset
/// under `dataset_dir`. A `variant` that disagrees with the checkpoint is
/// an error.
pub fn evaluate(checkpoint: &Path, dataset_dir: &Path, variant: Option<Variant>) -> Result<MetricsReport, EvalError> {
    let (model, extra) = PoseModel::<f32>::load(checkpoint)?;
    if let Some(expected) = variant {
        if expected != model.variant() {
            return Err(EvalError::VariantMismatch {
                expected,
                found: model.variant(),
            });
        }
    }
    let (_, dataset) = load_dataset(dataset_dir)?;
    evaluate_model(&model, &dataset, &checkpoint_loss(&extra))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub bin_width: f64,
    /// `bins + 1` edges in metres.
    pub edges: Vec<f64>,
    /// Mean combined error per bin; `None` for empty bins.
    pub means: Vec<Option<f64>>,
    /// Population standard deviation per bin.
    pub std_devs: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Count-weighted quadratic mean of the per-bin deviations.
    pub pooled_std: f64,
    /// Rank correlation of bin index against bin mean over non-empty bins.
    pub spearman: Option<f64>,
}

impl DistanceProfile {
    /// Whether each non-empty bin mean is at least the previous one minus
    /// `tolerance`.
    pub fn non_decreasing_within(&self, tolerance: f64) -> bool {
        let means: Vec<f64> = self.means.iter().flatten().copied().collect();
        means.windows(2).all(|w| w[1] >= w[0] - tolerance)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| EvalError::Json {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or fewer than two points exist.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Bins the per-sample combined error by label distance. Bins start at
/// `range[0]` (or the smallest distance) and cover up to `range[1]` (or
/// the largest).
pub fn distance_profile(report: &MetricsReport, bin_width: f64, range: Option<[f64; 2]>) -> Result<DistanceProfile, EvalError> {
    if report.samples.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(EvalError::InvalidArgument(format!("bin width {bin_width}")));
    }
    let d = report.samples.iter().map(|s| s.distance_m);
    let (dmin, dmax) = d.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let [lo, hi] = range.map_or([dmin, dmax], |[a, b]| [a.min(dmin), b.max(dmax)]);
    // Tolerate rounding in (hi - lo) / bin_width.
    let bins = (((hi - lo) / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * bin_width).collect();
    let mut groups = vec![Vec::new(); bins];
    for s in &report.samples {
        let b = (((s.distance_m - lo) / bin_width).floor().max(0.0) as usize).min(bins - 1);
        groups[b].push(s.combined_error);
    }
    let mut means = Vec::with_capacity(bins);
    let mut std_devs = Vec::with_capacity(bins);
    let (mut pooled, mut total) = (0.0, 0usize);
    for g in &groups {
        if g.is_empty() {
            means.push(None);
            std_devs.push(None);
            continue;
        }
        let n = g.len() as f64;
        let m = g.iter().sum::<f64>() / n;
        let var = g.iter().map(|e| (e - m).powi(2)).sum::<f64>() / n;
        means.push(Some(m));
        std_devs.push(Some(var.sqrt()));
        pooled += var * n;
        total += g.len();
    }
    let (idx, vals): (Vec<f64>, Vec<f64>) =
        means.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i as f64, m))).unzip();
    Ok(DistanceProfile {
        bin_width,
        edges,
        means,
        std_devs,
        counts: groups.iter().map(Vec::len).collect(),
        pooled_std: (pooled / total as f64).sqrt(),
        spearman: spearman(&idx, &vals),
    })
}

/// Renders mean ± 1σ per bin against distance.
pub fn plot_profile(profile: &DistanceProfile, path: &Path) -> Result<(), EvalError> {
    let (w, h, margin) = (480u32, 320u32, 40.0);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let top = profile
        .means
        .iter()
        .zip(&profile.std_devs)
        .filter_map(|(m, s)| Some(m.as_ref()? + s.as_ref()?))
        .fold(0.0, f64::max)
        .max(1e-9);
    let (x0, x1) = (profile.edges[0], *profile.edges.last().expect("at least one bin"));
    let px = |d: f64| margin + (d - x0) / (x1 - x0).max(1e-12) * (w as f64 - 2.0 * margin);
    let py = |e: f64| h as f64 - margin - e / top * (h as f64 - 2.0 * margin);
    let axis = [0, 0, 0];
    draw_line(&mut img, (margin, py(0.0)), (w as f64 - margin, py(0.0)), axis);
    draw_line(&mut img, (margin, py(0.0)), (margin, margin), axis);
    for &e in &profile.edges {
        draw_line(&mut img, (px(e), py(0.0)), (px(e), py(0.0) + 4.0), axis);
    }
    let mut prev: Option<(f64, f64)> = None;
    for (i, (m, s)) in profile.means.iter().zip(&profile.std_devs).enumerate() {
        let (Some(m), Some(s)) = (m, s) else {
            prev = None;
            continue;
        };
        let x = px(0.5 * (profile.edges[i] + profile.edges[i + 1]));
        draw_line(&mut img, (x, py(m - s)), (x, py(m + s)), [120, 120, 220]);
        draw_cross(&mut img, x, py(*m), 3, [200, 0, 0]);
        if let Some(p) = prev {
            draw_line(&mut img, p, (x, py(*m)), [200, 0, 0]);
        }
        prev = Some((x, py(*m)));
    }
    img.save(path).map_err(|source| {
        EvalError::Imaging(crate::imaging::ImagingError::Codec {
            path: path.display().to_string(),
            source,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    #[serde(flatten)]
    pub error: SampleError,
    /// Full-frame image, relative to the dataset directory.
    pub image: String,
}

impl RankedSample {
    fn new(error: SampleError) -> Self {
        let [image, ..] = sample_paths(error.index);
        Self { error, image }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Highest combined error first.
    pub worst: Vec<RankedSample>,
    /// Lowest combined error first.
    pub best: Vec<RankedSample>,
}

/// All samples by descending combined error, ties by ascending index.
pub fn sorted_by_error(report: &MetricsReport) -> Vec<SampleError> {
    let mut all = report.samples.clone();
    all.sort_by(|a, b| b.combined_error.total_cmp(&a.combined_error).then(a.index.cmp(&b.index)));
    all
}

pub fn rank_by_error(report: &MetricsReport, k: usize) -> Result<Ranking, EvalError> {
    if k > report.samples.len() {
        return Err(EvalError::InvalidArgument(format!(
            "k = {k} exceeds {} samples",
            report.samples.len()
        )));
    }
    let worst = sorted_by_error(report);
    let mut best = report.samples.clone();
    best.sort_by(|a, b| a.combined_error.total_cmp(&b.combined_error).then(a.index.cmp(&b.index)));
    Ok(Ranking {
        worst: worst.into_iter().take(k).map(RankedSample::new).collect(),
        best: best.into_iter().take(k).map(RankedSample::new).collect(),
    })
}

/// Activation-energy map at one layer, upsampled to the input size.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub layer: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f32>,
    /// Which input the layer sees: `image` or `bounded`.
    pub input: &'static str,
}

impl Heatmap {
    /// `(x, y)` of the largest value, first in row-major order.
    pub fn peak(&self) -> (usize, usize) {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.values[best] { i } else { best });
        (i % self.width, i / self.width)
    }

    /// Jet colour map blended at 50 % over `image`.
    pub fn overlay(&self, image: &Image) -> Image {
        let mut out = Image::new(self.width, self.height, 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = jet(self.values[y * self.width + x]);
                for (ch, &cv) in c.iter().enumerate() {
                    let base = image.get(x, y, ch.min(image.channels - 1));
                    out.set(x, y, ch, 0.5 * base + 0.5 * cv);
                }
            }
        }
        out
    }
}

/// Channel mean of `|activation|` at `layer` for one sample, min–max
/// normalized (a constant map becomes all zeros) and bilinearly upsampled.
/// `layer` defaults to the last convolution of the first stream; parallel
/// models accept `translation/…` and `attitude/…` addresses.
pub fn activation_heatmap(
    model: &PoseModel<f32>,
    image: &Tensor<f32>,
    bounded: &Tensor<f32>,
    layer: Option<&str>,
) -> Result<Heatmap, EvalError> {
    let default = last_conv(&model.config);
    let address = layer.unwrap_or(&default);
    let (g, name) = model
        .resolve_layer(address)
        .ok_or_else(|| EvalError::UnknownLayer(address.to_string()))?;
    let graph = &model.graphs[g];
    if graph.layer_kind(name) != Some(LayerKind::Conv2d) {
        return Err(EvalError::NotConvolutional(address.to_string()));
    }
    let input_name = graph.input_names()[0];
    let input = if input_name == BOUNDED_INPUT { bounded } else { image };
    if input.shape().first() != Some(&1) {
        return Err(EvalError::InvalidArgument("heatmaps take a single sample".into()));
    }
    let tape = graph.forward(&[(input_name, input)])?;
    let act = tape.get(name).expect("resolved layers are recorded");
    let (c, h, w) = (act.shape()[1], act.shape()[2], act.shape()[3]);
    let mut energy = vec![0.0f64; h * w];
    for ch in 0..c {
        for (e, v) in energy.iter_mut().zip(&act.values()[ch * h * w..(ch + 1) * h * w]) {
            *e += v.abs() as f64 / c as f64;
        }
    }
    let (lo, hi) = energy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let normalized: Vec<f32> = energy
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo)) as f32 } else { 0.0 })
        .collect();
    let (ow, oh) = (input.shape()[3], input.shape()[2]);
    let small = Image::from_gray(w, h, 1, &normalized);
    let up = small.resample_region([0.0, 0.0, w as f64, h as f64], ow, oh);
    Ok(Heatmap {
        layer: address.to_string(),
        width: ow,
        height: oh,
        values: up.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        input: if input_name == BOUNDED_INPUT { BOUNDED_INPUT } else { crate::models::IMAGE_INPUT },
    })
}

/// Heatmap of one loaded sample.
pub fn sample_heatmap(
    model: &PoseModel<f32>,
    dataset: &LoadedDataset,
    sample: &LoadedSample,
    layer: Option<&str>,
) -> Result<Heatmap, EvalError> {
    let (image, bounded) = crate::training::make_batch(dataset, &[sample]);
    activation_heatmap(model, &image, &bounded, layer)
}

/// Rebuilds the HWC image a network input tensor was made from.
pub fn tensor_image(t: &Tensor<f32>, sample: usize) -> Image {
    let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
    let plane = &t.values()[sample * c * h * w..(sample + 1) * c * h * w];
    let mut img = Image::new(w, h, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, ch, plane[(ch * h + y) * w + x]);
            }
        }
    }
    img
}

/// Runs `model` over the test split and returns the predictions paired
/// with their samples, for callers that score them differently.
pub fn test_predictions<'a>(
    model: &PoseModel<f32>,
    dataset: &'a LoadedDataset,
) -> Result<(Vec<&'a LoadedSample>, Vec<PoseOutput<f32>>), EvalError> {
    let test = dataset.split(Split::Test);
    let preds = predict_samples(model, dataset, &test, 32)?;
    Ok((test, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AngleConvention, Pose};
    use crate::models::TopologyConfig;
    use proptest::prelude::*;

    fn sample(index: usize, t: [f64; 3], q: [f64; 4]) -> LoadedSample {
        let pose = Pose::new(Translation::from_array(t), Quaternion::from_array(q).normalize().unwrap());
        LoadedSample {
            index,
            pose,
            bbox: [0.0, 0.0, 1.0, 1.0],
            distance: pose.distance(),
            split: Split::Test,
            image: Vec::new(),
            bounded: Vec::new(),
        }
    }

    fn oracle(s: &LoadedSample) -> PoseOutput<f32> {
        PoseOutput::from_slice(&s.pose.to_label().map(|v| v as f32))
    }

    fn report_with(errors: &[(f64, f64)]) -> MetricsReport {
        MetricsReport {
            variant: None,
            loss: LossConfig::default(),
            mean_rotation_error_deg: 0.0,
            median_rotation_error_deg: 0.0,
            mean_translation_error_m: 0.0,
            samples: errors
                .iter()
                .enumerate()
                .map(|(i, &(distance_m, combined_error))| SampleError {
                    index: i,
                    rotation_error_deg: 0.0,
                    translation_error_m: 0.0,
                    distance_m,
                    combined_error,
                })
                .collect(),
        }
    }

    #[test]
    fn oracle_predictor_has_zero_error() {
        let s = [sample(0, [0.0, 0.0, 0.5], [1.0, 0.0, 0.0, 0.0]), sample(1, [0.1, 0.2, 0.7], [0.5, 0.5, 0.5, 0.5])];
        let refs: Vec<&LoadedSample> = s.iter().collect();
        let preds: Vec<_> = s.iter().map(oracle).collect();
        let r = evaluate_predictions(&refs, &preds, &LossConfig::default(), None).unwrap();
        assert!(r.mean_rotation_error_deg < 0.05 && r.mean_translation_error_m < 1e-7, "{r:?}");
    }

    #[test]
    fn identity_predictor_matches_hand_values() {
        // Label 1: 90° about z at (0, 0, 0.5); label 2: identity at (0.3, 0, 0.4).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = [sample(0, [0.0, 0.0, 0.5], [h, 0.0, 0.0, h]), sample(1, [0.3, 0.0, 0.4], [1.0, 0.0, 0.0, 0.0])];
        let refs: Vec<&LoadedSample> = s.iter().collect();
        let ident = PoseOutput {
            translation: [0.0f32; 3],
            quaternion_raw: [1.0, 0.0, 0.0, 0.0],
        };
        let r = evaluate_predictions(&refs, &[ident, ident], &LossConfig::default(), None).unwrap();
        assert!((r.samples[0].rotation_error_deg - 90.0).abs() < 1e-9);
        assert!(r.samples[1].rotation_error_deg.abs() < 1e-9);
        assert!((r.samples[0].translation_error_m - 0.5).abs() < 1e-12);
        assert!((r.samples[1].translation_error_m - 0.5).abs() < 1e-12);
        assert!((r.mean_rotation_error_deg - 45.0).abs() < 1e-9);
        assert!((r.median_rotation_error_deg - 45.0).abs() < 1e-9);
        assert!((r.mean_translation_error_m - 0.5).abs() < 1e-12);
        assert!((r.samples[0].combined_error - (0.5 + 10.0 * std::f64::consts::FRAC_PI_2)).abs() < 1e-9);
    }

    #[test]
    fn degrees_are_the_radian_angle_scaled() {
        let s = [sample(0, [0.0, 0.0, 0.5], [0.3, 0.1, -0.7, 0.2])];
        let p = PoseOutput {
            translation: [0.0f32; 3],
            quaternion_raw: [0.2, 0.5, 0.1, -0.3],
        };
        let r = evaluate_predictions(&[&s[0]], &[p], &LossConfig::default(), None).unwrap();
        let q = Quaternion::from_array(p.quaternion_raw.map(f64::from)).normalize().unwrap();
        let rad = rotation_angle(s[0].pose.rotation, q, AngleConvention::Conjugate);
        assert!((r.samples[0].rotation_error_deg - rad * 180.0 / std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn degenerate_predictions_and_count_mismatches_are_errors() {
        let s = [sample(4, [0.0, 0.0, 0.5], [1.0, 0.0, 0.0, 0.0])];
        let zero = PoseOutput {
            translation: [0.0f32; 3],
            quaternion_raw: [0.0; 4],
        };
        assert!(matches!(
            evaluate_predictions(&[&s[0]], &[zero], &LossConfig::default(), None),
            Err(EvalError::DegenerateQuaternion { index: 4 })
        ));
        assert!(matches!(
            evaluate_predictions(&[&s[0]], &[], &LossConfig::default(), None),
            Err(EvalError::CountMismatch { .. })
        ));
    }

    #[test]
    fn constant_error_gives_flat_profile() {
        let r = report_with(&[(0.31, 2.0), (0.45, 2.0), (0.62, 2.0), (0.99, 2.0)]);
        let p = distance_profile(&r, 0.1, Some([0.3, 1.0])).unwrap();
        assert_eq!(p.edges.len(), 8);
        assert!((p.edges[0] - 0.3).abs() < 1e-12 && (p.edges[7] - 1.0).abs() < 1e-9);
        for (m, s) in p.means.iter().zip(&p.std_devs) {
            if let (Some(m), Some(s)) = (m, s) {
                assert_eq!((*m, *s), (2.0, 0.0));
            }
        }
        assert_eq!(p.counts.iter().sum::<usize>(), 4);
        assert_eq!(p.spearman, None);
    }

    #[test]
    fn two_bins_hand_values() {
        // Bin [0.3, 0.5): errors 1, 3 → mean 2, σ 1. Bin [0.5, 0.7]: 4, 6, 8 → mean 6, σ √(8/3).
        let r = report_with(&[(0.3, 1.0), (0.4, 3.0), (0.55, 4.0), (0.6, 6.0), (0.7, 8.0)]);
        let p = distance_profile(&r, 0.2, None).unwrap();
        assert_eq!(p.counts, vec![2, 3]);
        assert_eq!(p.means, vec![Some(2.0), Some(6.0)]);
        assert!((p.std_devs[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((p.std_devs[1].unwrap() - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((p.pooled_std - ((2.0 * 1.0 + 3.0 * 8.0 / 3.0) / 5.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(p.spearman, Some(1.0));
        assert!(p.non_decreasing_within(0.0));
    }

    #[test]
    fn profile_plot_is_written() {
        let r = report_with(&[(0.3, 1.0), (0.4, 3.0), (0.55, 4.0), (0.9, 6.0)]);
        let p = distance_profile(&r, 0.1, Some([0.3, 1.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.png");
        plot_profile(&p, &path).unwrap();
        assert_eq!(image::open(&path).unwrap().width(), 480);
    }

    #[test]
    fn ranking_examples() {
        let r = report_with(&[(0.5, 3.0), (0.5, 1.0), (0.5, 2.0)]);
        let k1 = rank_by_error(&r, 1).unwrap();
        assert_eq!((k1.worst[0].error.index, k1.best[0].error.index), (0, 1));
        assert_eq!(k1.worst[0].image, "images/000000.png");
        let tied = report_with(&[(0.5, 2.0), (0.5, 5.0), (0.5, 2.0), (0.5, 5.0)]);
        let order: Vec<usize> = sorted_by_error(&tied).iter().map(|s| s.index).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
        let k2 = rank_by_error(&tied, 2).unwrap();
        assert_eq!(k2.best.iter().map(|s| s.error.index).collect::<Vec<_>>(), vec![0, 2]);
        assert!(rank_by_error(&r, 4).is_err());
    }

    proptest! {
        #[test]
        fn full_sort_matches_a_naive_sort(errors in proptest::collection::vec(0u8..6, 0..30)) {
            let r = report_with(&errors.iter().map(|&e| (0.5, e as f64)).collect::<Vec<_>>());
            let got: Vec<usize> = sorted_by_error(&r).iter().map(|s| s.index).collect();
            // Selection sort on (−error, index).
            let mut rest: Vec<(f64, usize)> = r.samples.iter().map(|s| (s.combined_error, s.index)).collect();
            let mut want = Vec::new();
            while !rest.is_empty() {
                let mut best = 0;
                for i in 1..rest.len() {
                    if rest[i].0 > rest[best].0 || (rest[i].0 == rest[best].0 && rest[i].1 < rest[best].1) {
                        best = i;
                    }
                }
                want.push(rest.remove(best).1);
            }
            prop_assert_eq!(got, want);
        }

        #[test]
        fn report_invariants(qs in proptest::collection::vec(proptest::array::uniform4(-1.0f32..1.0), 1..20)) {
            let labels: Vec<LoadedSample> = (0..qs.len()).map(|i| sample(i, [0.0, 0.0, 0.5], [0.2, 0.3, -0.4, 0.5])).collect();
            let refs: Vec<&LoadedSample> = labels.iter().collect();
            let preds: Vec<PoseOutput<f32>> = qs.iter().map(|q| PoseOutput {
                translation: [0.1, 0.0, 0.2],
                quaternion_raw: if q.iter().all(|v| v.abs() < 1e-3) { [1.0, 0.0, 0.0, 0.0] } else { *q },
            }).collect();
            let r = evaluate_predictions(&refs, &preds, &LossConfig::default(), None).unwrap();
            prop_assert!(r.median_rotation_error_deg <= r.max_rotation_error_deg());
            for s in &r.samples {
                prop_assert!(s.rotation_error_deg >= 0.0 && s.rotation_error_deg <= 180.0);
                prop_assert!(s.translation_error_m >= 0.0);
            }
        }
    }

    fn tiny_model() -> PoseModel<f32> {
        PoseModel::build(&TopologyConfig {
            variant: Variant::Parallel,
            input_size: 32,
            stage_widths: vec![4, 6, 8],
            dense_widths: vec![8],
            branch_dense: 8,
            ..TopologyConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_input_gives_all_zero_heatmap() {
        let m = tiny_model();
        let x = Tensor::zeros(vec![1, 3, 32, 32]);
        let h = activation_heatmap(&m, &x, &x, None).unwrap();
        assert_eq!((h.width, h.height), (32, 32));
        assert!(h.values.iter().all(|&v| v == 0.0));
        assert_eq!(h.layer, "conv3_2");
    }

    #[test]
    fn heatmap_values_lie_in_unit_interval() {
        let m = tiny_model();
        let x = Tensor::from_fn(vec![1, 3, 32, 32], |i| ((i * 37) % 101) as f32 / 100.0);
        for layer in ["conv1_1", "translation/conv2_2", "attitude/conv3_1"] {
            let h = activation_heatmap(&m, &x, &x, Some(layer)).unwrap();
            assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(h.values.iter().any(|&v| v > 0.5), "{layer}");
            let over = h.overlay(&tensor_image(&x, 0));
            assert_eq!((over.width, over.channels), (32, 3));
        }
        assert_eq!(activation_heatmap(&m, &x, &x, Some("attitude/conv1_1")).unwrap().input, BOUNDED_INPUT);
    }

    #[test]
    fn unknown_and_non_conv_layers_are_rejected() {
        let m = tiny_model();
        let x = Tensor::zeros(vec![1, 3, 32, 32]);
        assert!(matches!(activation_heatmap(&m, &x, &x, Some("conv9_9")), Err(EvalError::UnknownLayer(_))));
        assert!(matches!(activation_heatmap(&m, &x, &x, Some("pool1")), Err(EvalError::NotConvolutional(_))));
    }

    #[test]
    fn checkpoint_evaluation_is_deterministic_and_checks_integrity() {
        use crate::scenegen::{generate_dataset, SceneConfig};
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        generate_dataset(
            &SceneConfig {
                count: 10,
                size: 32,
                ..SceneConfig::default()
            },
            &data,
        )
        .unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let model = PoseModel::<f32>::build(&TopologyConfig {
            input_size: 32,
            stage_widths: vec![8, 8, 8],
            dense_widths: vec![32],
            branch_dense: 32,
            ..TopologyConfig::default()
        })
        .unwrap();
        model.save(&ckpt, serde_json::json!({})).unwrap();
        let a = evaluate(&ckpt, &data, Some(Variant::Parallel)).unwrap();
        let b = evaluate(&ckpt, &data, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 2);
        assert!(matches!(
            evaluate(&ckpt, &data, Some(Variant::Plain)),
            Err(EvalError::VariantMismatch { .. })
        ));
        let mut bytes = std::fs::read(&ckpt).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        std::fs::write(&ckpt, bytes).unwrap();
        assert!(matches!(
            evaluate(&ckpt, &data, None),
            Err(EvalError::Tensor(TensorError::ChecksumMismatch(_)))
        ));
    }

    #[test]
    fn reference_results_keep_their_ordering() {
        let means: Vec<f64> = REFERENCE_RESULTS.iter().map(|r| r.1).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(REFERENCE_RESULTS[3], ("Parallel VGG-19", 4.61, 4.41, 0.03));
    }
}
