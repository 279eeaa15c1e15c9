//! Mini-batch Adam training on `L = L_T + β·L_R` with per-epoch logs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    combined_loss, rotation_loss_grad, translation_loss, translation_loss_grad, LossConfig, Pose, Quaternion,
    Translation,
};
use crate::models::{ModelInputs, PoseModel, PoseOutput, TopologyConfig};
use crate::scenegen::{load_dataset, LoadedDataset, LoadedSample, SceneError, Split, MANIFEST_FILE};
use crate::tensor::{adam_step, AdamConfig, AdamState, Gradients, Tensor, TensorError};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no dataset manifest at {0}")]
    DatasetMissing(String),
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("sample {index}: predicted quaternion is degenerate")]
    DegenerateQuaternion { index: usize },
    #[error("batch has {predictions} predictions for {labels} labels")]
    BatchMismatch { predictions: usize, labels: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub topology: TopologyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            loss: LossConfig::default(),
            seed: 0,
            topology: TopologyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.loss.beta >= 0.0 && self.loss.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        self.topology.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub translation_loss: f64,
    pub rotation_loss: f64,
    pub total_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("training runs at least one epoch")
    }

    /// `L_T / (β·L_R)` over the final epoch.
    pub fn loss_balance(&self, beta: f64) -> f64 {
        let r = self.last();
        r.translation_loss / (beta * r.rotation_loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let err = |source| TrainError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for r in &self.records {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
        let err = |source| TrainError::Csv {
            path: path.display().to_string(),
            source,
        };
        csv::Reader::from_path(path)
            .map_err(err)?
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(err)
    }
}

/// Batch means of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub translation: f64,
    pub rotation: f64,
}

fn split_output(p: &PoseOutput<f32>) -> (Translation<f64>, Quaternion<f64>) {
    (
        Translation::from_array(p.translation.map(f64::from)),
        Quaternion::from_array(p.quaternion_raw.map(f64::from)),
    )
}

/// Mean `L_T`, mean `L_R` and `mean L_T + β·mean L_R` over a batch, with
/// the gradient of the combined mean with respect to each raw output.
pub fn loss_batch_with_grad(
    predictions: &[PoseOutput<f32>],
    labels: &[Pose<f64>],
    loss: &LossConfig,
) -> Result<(BatchLoss, Vec<[f32; 7]>), TrainError> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(TrainError::BatchMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let n = labels.len() as f64;
    let (mut lt, mut lr) = (0.0, 0.0);
    let mut grads = Vec::with_capacity(labels.len());
    for (i, (p, label)) in predictions.iter().zip(labels).enumerate() {
        let (t, q) = split_output(p);
        lt += translation_loss(label.translation, t);
        let (r, gq) = rotation_loss_grad(label.rotation, q, loss.convention)
            .map_err(|_| TrainError::DegenerateQuaternion { index: i })?;
        lr += r;
        let gt = translation_loss_grad(label.translation, t);
        let mut g = [0.0f32; 7];
        for k in 0..3 {
            g[k] = (gt[k] / n) as f32;
        }
        for k in 0..4 {
            g[3 + k] = (loss.beta * gq[k] / n) as f32;
        }
        grads.push(g);
    }
    let (translation, rotation) = (lt / n, lr / n);
    Ok((
        BatchLoss {
            total: combined_loss(translation, rotation, loss.beta),
            translation,
            rotation,
        },
        grads,
    ))
}

pub fn loss_batch(predictions: &[PoseOutput<f32>], labels: &[Pose<f64>], loss: &LossConfig) -> Result<BatchLoss, TrainError> {
    Ok(loss_batch_with_grad(predictions, labels, loss)?.0)
}

/// Stacks the full and bounded images of `samples` into NCHW tensors in
/// `[0, 1]`.
pub fn make_batch(dataset: &LoadedDataset, samples: &[&LoadedSample]) -> (Tensor<f32>, Tensor<f32>) {
    let shape = vec![samples.len(), dataset.channels, dataset.height, dataset.width];
    let stack = |pick: fn(&LoadedSample) -> &[u8]| {
        let values = samples
            .iter()
            .flat_map(|s| pick(s).iter().map(|&b| b as f32 / 255.0))
            .collect();
        Tensor::new(shape.clone(), values).expect("dataset images have the manifest size")
    };
    (stack(|s| &s.image), stack(|s| &s.bounded))
}

/// Runs the model over `samples` in batches of `batch_size`.
pub fn predict_samples(
    model: &PoseModel<f32>,
    dataset: &LoadedDataset,
    samples: &[&LoadedSample],
    batch_size: usize,
) -> Result<Vec<PoseOutput<f32>>, TensorError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (image, bounded) = make_batch(dataset, chunk);
        out.extend(model.predict(&ModelInputs {
            image: &image,
            bounded: &bounded,
        })?);
    }
    Ok(out)
}

fn apply(model: &mut PoseModel<f32>, grads: &[Gradients<f32>], states: &mut [AdamState], lr: f64) {
    let adam = AdamConfig::default();
    for ((graph, g), state) in model.graphs.iter_mut().zip(grads).zip(states) {
        graph.zero_grad();
        graph.accumulate(g);
        adam_step(graph.params_mut(), state, lr, &adam);
    }
}

/// Trains a freshly built model on the training split of `dataset`.
pub fn train_model(config: &TrainConfig, dataset: &LoadedDataset) -> Result<(PoseModel<f32>, TrainLog), TrainError> {
    config.validate()?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let mut model = PoseModel::<f32>::build(&config.topology)?;
    let mut states: Vec<AdamState> = model.graphs.iter().map(|_| AdamState::default()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order = train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut lt, mut lr, mut total) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (image, bounded) = make_batch(dataset, chunk);
            let inputs = ModelInputs {
                image: &image,
                bounded: &bounded,
            };
            let tape = model.forward(&inputs)?;
            let predictions = model.outputs(&tape);
            let labels: Vec<Pose<f64>> = chunk.iter().map(|s| s.pose).collect();
            let (loss, out_grads) = loss_batch_with_grad(&predictions, &labels, &config.loss).map_err(|e| match e {
                TrainError::DegenerateQuaternion { index } => TrainError::DegenerateQuaternion {
                    index: chunk[index].index,
                },
                other => other,
            })?;
            if !loss.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            let grads = model.backward(&tape, &out_grads)?;
            if !grads.iter().all(Gradients::all_finite) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            apply(&mut model, &grads, &mut states, config.learning_rate);
            let w = chunk.len() as f64;
            lt += loss.translation * w;
            lr += loss.rotation * w;
            total += loss.total * w;
        }
        let n = train.len() as f64;
        records.push(EpochRecord {
            epoch,
            translation_loss: lt / n,
            rotation_loss: lr / n,
            total_loss: total / n,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((
        model,
        TrainLog {
            records,
            checkpoint: None,
        },
    ))
}

/// Trains on `dataset`, then writes the checkpoint and CSV log into `out`.
pub fn train_to_dir(
    config: &TrainConfig,
    dataset: &LoadedDataset,
    dataset_seed: Option<u64>,
    out: &Path,
) -> Result<(PoseModel<f32>, TrainLog), TrainError> {
    let (model, mut log) = train_model(config, dataset)?;
    std::fs::create_dir_all(out).map_err(|source| TrainError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let last = log.last();
    model.save(
        &ckpt,
        serde_json::json!({
            "train": config,
            "dataset_seed": dataset_seed,
            "final_epoch": {
                "epoch": last.epoch,
                "translation_loss": last.translation_loss,
                "rotation_loss": last.rotation_loss,
                "total_loss": last.total_loss,
            },
        }),
    )?;
    log.write_csv(&out.join(LOG_FILE))?;
    log.checkpoint = Some(ckpt);
    Ok((model, log))
}

/// Loads the dataset under `dataset_dir` and trains on it.
pub fn train(config: &TrainConfig, dataset_dir: &Path, out: &Path) -> Result<(PoseModel<f32>, TrainLog), TrainError> {
    if !dataset_dir.join(MANIFEST_FILE).is_file() {
        return Err(TrainError::DatasetMissing(dataset_dir.display().to_string()));
    }
    let (manifest, dataset) = load_dataset(dataset_dir)?;
    train_to_dir(config, &dataset, Some(manifest.config.seed), out)
}
