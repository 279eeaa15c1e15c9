use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bbox_from_vertices, build_truss, make_bounded_image, render, sample_pose, MeshModel, PoseSampling, RenderConfig,
    Sample, SceneError, Split, TrussDims,
};
use crate::camera::{reproject_vertices, validate_pose, CameraIntrinsics};
use crate::geometry::{norm3, Pose};
use crate::imaging::{quantize, Image, Mask};

pub const MANIFEST_FILE: &str = "manifest.json";

/// The stream reserved for the train/test shuffle; per-sample streams are
/// `2i` (pose) and `2i + 1` (star field).
const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    pub count: usize,
    /// Square output size in pixels.
    pub size: u32,
    pub train_fraction: f64,
    pub truss: TrussDims,
    pub sampling: PoseSampling,
    pub render: RenderConfig,
    /// Direction towards the light, camera frame.
    pub light_dir: [f64; 3],
    /// Overrides the synthetic camera for the output size.
    pub intrinsics: Option<CameraIntrinsics<f64>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            count: 5000,
            size: 64,
            train_fraction: 0.8,
            truss: TrussDims::default(),
            sampling: PoseSampling::default(),
            render: RenderConfig::default(),
            light_dir: [-0.4, -0.6, -0.7],
            intrinsics: None,
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        self.intrinsics
            .unwrap_or_else(|| CameraIntrinsics::synthetic(self.size, self.size))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.sampling.validate()?;
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.size < 8 {
            return bad("size must be at least 8");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("train_fraction must lie in [0, 1]");
        }
        if !(norm3(self.light_dir) > 0.0) {
            return bad("light_dir must be nonzero");
        }
        if self.render.channels == 0 || self.render.render_width == 0 || self.render.render_height == 0 {
            return bad("render size and channels must be positive");
        }
        if !(0.0..1.0).contains(&self.render.star_probability) {
            return bad("star_probability must lie in [0, 1)");
        }
        if let Some(k) = &self.intrinsics {
            k.validate()
                .map_err(|e| SceneError::InvalidConfig(e.to_string()))?;
            if (k.width, k.height) != (self.size, self.size) {
                return bad("intrinsics size must match the output size");
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<MeshModel, SceneError> {
        build_truss(self.truss.length, self.truss.width, self.truss.depth)
    }
}

/// Seeded shuffle assigning `round(train_fraction · count)` samples to the
/// training split.
pub fn assign_splits(count: usize, train_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_train = (train_fraction * count as f64).round() as usize;
    let mut splits = vec![Split::Test; count];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    splits
}

/// Renders and validates sample `index`. The split is left as `Train`;
/// [`generate_samples`] assigns the real one.
pub fn generate_sample(
    config: &SceneConfig,
    mesh: &MeshModel,
    k: &CameraIntrinsics<f64>,
    index: usize,
) -> Result<Sample, SceneError> {
    let wrap = |e: SceneError| SceneError::Sample {
        index,
        source: Box::new(e),
    };
    let mut pose_rng = ChaCha8Rng::seed_from_u64(config.seed);
    pose_rng.set_stream(2 * index as u64);
    let mut star_rng = ChaCha8Rng::seed_from_u64(config.seed);
    star_rng.set_stream(2 * index as u64 + 1);

    let pose = sample_pose(&mut pose_rng, &config.sampling, k);
    let rendered = render(mesh, &pose, k, config.light_dir, &config.render, &mut star_rng).map_err(wrap)?;
    let bbox = bbox_from_vertices(&reproject_vertices(k, &pose, mesh), mesh, k).map_err(wrap)?;
    let size = config.size as usize;
    let bounded_image = make_bounded_image(&rendered.image, bbox, size, size).map_err(wrap)?;
    let (report, _) = validate_pose(index, &rendered.mask, &pose, mesh, k);
    if !report.passed {
        return Err(SceneError::Validation {
            index,
            fraction: report.fraction,
        });
    }
    Ok(Sample {
        index,
        image: rendered.image,
        bounded_image,
        mask: rendered.mask,
        pose,
        bbox,
        distance: pose.distance(),
        split: Split::Train,
    })
}

/// Generates every sample in memory, in index order.
pub fn generate_samples(config: &SceneConfig) -> Result<Vec<Sample>, SceneError> {
    config.validate()?;
    let mesh = config.mesh()?;
    let k = config.intrinsics();
    let splits = assign_splits(config.count, config.train_fraction, config.seed);
    (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut s = generate_sample(config, &mesh, &k, i)?;
            s.split = splits[i];
            Ok(s)
        })
        .collect()
}

/// Contents of `labels/NNNNNN.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub index: usize,
    /// `[tx, ty, tz, k, vx, vy, vz]`.
    pub pose: [f64; 7],
    pub bbox: [f64; 4],
    pub distance: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub index: usize,
    pub image: String,
    pub bounded: String,
    pub mask: String,
    pub label: String,
    pub pose: [f64; 7],
    pub bbox: [f64; 4],
    pub distance: f64,
    pub split: Split,
}

impl SampleRecord {
    pub fn pose(&self) -> Pose<f64> {
        Pose::from_label(self.pose)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: SceneConfig,
    pub intrinsics: CameraIntrinsics<f64>,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Relative paths of the image, bounded image, mask and label files.
pub fn sample_paths(index: usize) -> [String; 4] {
    [
        format!("images/{index:06}.png"),
        format!("bounded/{index:06}.png"),
        format!("masks/{index:06}.png"),
        format!("labels/{index:06}.json"),
    ]
}

pub fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(&sample_paths(index)[3])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| SceneError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SceneError::io(path, e))
}

/// Writes the full dataset layout under `dir` and returns the manifest.
pub fn generate_dataset(config: &SceneConfig, dir: &Path) -> Result<DatasetManifest, SceneError> {
    config.validate()?;
    let mesh = config.mesh()?;
    let k = config.intrinsics();
    for sub in ["images", "bounded", "masks", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| SceneError::io(&p, e))?;
    }
    let splits = assign_splits(config.count, config.train_fraction, config.seed);
    let samples: Vec<SampleRecord> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let s = generate_sample(config, &mesh, &k, i)?;
            let [image, bounded, mask, label] = sample_paths(i);
            s.image.save_png(&dir.join(&image))?;
            s.bounded_image.save_png(&dir.join(&bounded))?;
            s.mask.save_png(&dir.join(&mask))?;
            let record = SampleRecord {
                index: i,
                image,
                bounded,
                mask,
                label,
                pose: s.pose.to_label(),
                bbox: s.bbox,
                distance: s.distance,
                split: splits[i],
            };
            write_json(
                &dir.join(&record.label),
                &LabelRecord {
                    index: i,
                    pose: record.pose,
                    bbox: record.bbox,
                    distance: record.distance,
                    split: record.split,
                },
            )?;
            Ok(record)
        })
        .collect::<Result<_, SceneError>>()?;
    let train_count = splits.iter().filter(|&&s| s == Split::Train).count();
    let manifest = DatasetManifest {
        config: config.clone(),
        intrinsics: k,
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        train_count,
        test_count: config.count - train_count,
        samples,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, SceneError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SceneError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| SceneError::json(&path, e))
}

/// A sample as the networks see it: 8-bit planar (CHW) images plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub index: usize,
    pub pose: Pose<f64>,
    pub bbox: [f64; 4],
    pub distance: f64,
    pub split: Split,
    pub image: Vec<u8>,
    pub bounded: Vec<u8>,
}

impl LoadedSample {
    fn planar(img: &Image) -> Vec<u8> {
        img.to_chw().into_iter().map(quantize).collect()
    }

    pub fn from_sample(s: &Sample) -> Self {
        Self {
            index: s.index,
            pose: s.pose,
            bbox: s.bbox,
            distance: s.distance,
            split: s.split,
            image: Self::planar(&s.image),
            bounded: Self::planar(&s.bounded_image),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDataset {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<LoadedSample>,
}

impl LoadedDataset {
    /// Same quantization as the PNG files, so in-memory and on-disk data
    /// are interchangeable.
    pub fn from_samples(samples: &[Sample]) -> Self {
        let first = samples.first();
        Self {
            width: first.map_or(0, |s| s.image.width),
            height: first.map_or(0, |s| s.image.height),
            channels: first.map_or(0, |s| s.image.channels),
            samples: samples.iter().map(LoadedSample::from_sample).collect(),
        }
    }

    pub fn split(&self, split: Split) -> Vec<&LoadedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height * self.channels
    }
}

/// Loads the images and labels listed in the manifest of `dir`.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, LoadedDataset), SceneError> {
    let manifest = load_manifest(dir)?;
    let size = manifest.config.size as usize;
    let channels = manifest.config.render.channels;
    let samples = manifest
        .samples
        .par_iter()
        .map(|r| {
            let image = Image::load_png(&dir.join(&r.image), channels)?;
            let bounded = Image::load_png(&dir.join(&r.bounded), channels)?;
            for (img, path) in [(&image, &r.image), (&bounded, &r.bounded)] {
                if (img.width, img.height) != (size, size) {
                    return Err(crate::imaging::ImagingError::Size {
                        path: path.clone(),
                        found: (img.width as u32, img.height as u32),
                        expected: (size as u32, size as u32),
                    }
                    .into());
                }
            }
            Ok(LoadedSample {
                index: r.index,
                pose: r.pose(),
                bbox: r.bbox,
                distance: r.distance,
                split: r.split,
                image: LoadedSample::planar(&image),
                bounded: LoadedSample::planar(&bounded),
            })
        })
        .collect::<Result<_, SceneError>>()?;
    Ok((
        manifest,
        LoadedDataset {
            width: size,
            height: size,
            channels,
            samples,
        },
    ))
}

/// Reads back the rendered image and mask of one record for validation.
pub fn load_sample(dir: &Path, manifest: &DatasetManifest, record: &SampleRecord) -> Result<Sample, SceneError> {
    let channels = manifest.config.render.channels;
    Ok(Sample {
        index: record.index,
        image: Image::load_png(&dir.join(&record.image), channels)?,
        bounded_image: Image::load_png(&dir.join(&record.bounded), channels)?,
        mask: Mask::load_png(&dir.join(&record.mask))?,
        pose: record.pose(),
        bbox: record.bbox,
        distance: record.distance,
        split: record.split,
    })
}
