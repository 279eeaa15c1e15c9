//! Plain, branched and parallel VGG-style pose regressors at toy scale.
//!
//! Every stage is `conv3×3 → relu` repeated, then a 2×2 max pool. The
//! branched topology taps the second stage's pooled output, pools it once
//! more, passes it through a dense layer and concatenates the result with
//! the flattened backbone features ahead of the first head dense layer. The
//! parallel model runs a plain stream on the full image for translation and
//! a branched stream on the bounded image for attitude.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{cast, GeometryError, Quaternion, Translation};
use crate::tensor::{checkpoint, Gradients, Graph, GraphBuilder, LayerSpec, Scalar, Tape, Tensor, TensorError};
use crate::Real;

pub const IMAGE_INPUT: &str = "image";
pub const BOUNDED_INPUT: &str = "bounded";
pub const HEAD: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Branched,
    Parallel,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Plain, Variant::Branched, Variant::Parallel];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Branched => "branched",
            Variant::Parallel => "parallel",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected plain, branched or parallel)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub variant: Variant,
    /// Square input size in pixels.
    pub input_size: usize,
    pub channels: usize,
    /// Output channels of each stage.
    pub stage_widths: Vec<usize>,
    pub convs_per_stage: usize,
    /// Hidden dense layers before the linear head.
    pub dense_widths: Vec<usize>,
    pub branch_dense: usize,
    /// The branch taps the output of this stage (1-based).
    pub branch_stage: usize,
    /// Replace each stage's pool with a stride-2 final convolution.
    pub strided_conv: bool,
    /// Seeds the He-uniform initialization.
    pub init_seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Parallel,
            input_size: 64,
            channels: 3,
            stage_widths: vec![8, 16, 32, 32, 32],
            convs_per_stage: 2,
            dense_widths: vec![64, 64],
            branch_dense: 64,
            branch_stage: 2,
            strided_conv: false,
            init_seed: 0,
        }
    }
}

impl TopologyConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: String| Err(TensorError::ShapeMismatch { op: "topology", detail: m });
        if self.stage_widths.is_empty() || self.convs_per_stage == 0 || self.channels == 0 {
            return bad("need at least one stage, one conv per stage and one channel".into());
        }
        if self.stage_widths.contains(&0) || self.dense_widths.contains(&0) || self.branch_dense == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.input_size >> self.stage_widths.len() == 0 {
            return bad(format!(
                "{} stages reduce a {}-pixel input to nothing",
                self.stage_widths.len(),
                self.input_size
            ));
        }
        if self.variant != Variant::Plain && !(1..self.stage_widths.len()).contains(&self.branch_stage) {
            return bad(format!("branch stage {} must precede the last stage", self.branch_stage));
        }
        Ok(())
    }
}

pub fn conv_name(stage: usize, conv: usize) -> String {
    format!("conv{stage}_{conv}")
}

/// Name of the node closing stage `stage` (1-based).
pub fn stage_output(config: &TopologyConfig, stage: usize) -> String {
    if config.strided_conv {
        format!("relu{stage}_{}", config.convs_per_stage)
    } else {
        format!("pool{stage}")
    }
}

/// Name of the last convolution, the default heatmap layer.
pub fn last_conv(config: &TopologyConfig) -> String {
    conv_name(config.stage_widths.len(), config.convs_per_stage)
}

fn backbone(b: &mut GraphBuilder, config: &TopologyConfig, input: &str) {
    let mut prev = input.to_string();
    for (si, &width) in config.stage_widths.iter().enumerate() {
        let stage = si + 1;
        for ci in 1..=config.convs_per_stage {
            let strided = config.strided_conv && ci == config.convs_per_stage;
            let conv = conv_name(stage, ci);
            b.layer(
                &conv,
                LayerSpec::Conv2d {
                    out_channels: width,
                    kernel: 3,
                    stride: if strided { 2 } else { 1 },
                    padding: 1,
                },
                &[&prev],
            );
            let relu = format!("relu{stage}_{ci}");
            b.layer(&relu, LayerSpec::Relu, &[&conv]);
            prev = relu;
        }
        if !config.strided_conv {
            let pool = stage_output(config, stage);
            b.layer(&pool, LayerSpec::MaxPool2, &[&prev]);
            prev = pool;
        }
    }
    b.layer("flatten", LayerSpec::Flatten, &[&stage_output(config, config.stage_widths.len())]);
}

fn head(b: &mut GraphBuilder, config: &TopologyConfig, features: &str, outputs: usize) {
    let mut prev = features.to_string();
    for (i, &units) in config.dense_widths.iter().enumerate() {
        let fc = format!("fc{}", i + 1);
        b.layer(&fc, LayerSpec::Dense { units }, &[&prev]);
        let relu = format!("fc{}_relu", i + 1);
        b.layer(&relu, LayerSpec::Relu, &[&fc]);
        prev = relu;
    }
    b.layer(HEAD, LayerSpec::Dense { units: outputs }, &[&prev]).output(HEAD);
}

fn builder(config: &TopologyConfig, input: &str, branched: bool, outputs: usize) -> GraphBuilder {
    let s = config.input_size;
    let mut b = GraphBuilder::new();
    b.input(input, &[config.channels, s, s]);
    backbone(&mut b, config, input);
    if branched {
        b.layer("branch_pool", LayerSpec::MaxPool2, &[&stage_output(config, config.branch_stage)])
            .layer("branch_fc", LayerSpec::Dense { units: config.branch_dense }, &["branch_pool"])
            .layer("branch_relu", LayerSpec::Relu, &["branch_fc"])
            .layer("merge", LayerSpec::Concat { axis: 0 }, &["flatten", "branch_relu"]);
        head(&mut b, config, "merge", outputs);
    } else {
        head(&mut b, config, "flatten", outputs);
    }
    b
}

fn init_rng(config: &TopologyConfig, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    rng.set_stream(stream);
    rng
}

/// Backbone plus dense head with `outputs` linear units, reading `input`.
pub fn build_plain_with<S: Scalar>(config: &TopologyConfig, input: &str, outputs: usize) -> Result<Graph<S>, TensorError> {
    config.validate()?;
    builder(config, input, false, outputs).build(&mut init_rng(config, 0))
}

pub fn build_branched_with<S: Scalar>(
    config: &TopologyConfig,
    input: &str,
    outputs: usize,
) -> Result<Graph<S>, TensorError> {
    config.validate()?;
    builder(config, input, true, outputs).build(&mut init_rng(config, 1))
}

/// Plain model on the full image with a 7-unit head.
pub fn build_plain<S: Scalar>(config: &TopologyConfig) -> Result<Graph<S>, TensorError> {
    build_plain_with(config, IMAGE_INPUT, 7)
}

/// Branched model on the full image with a 7-unit head.
pub fn build_branched<S: Scalar>(config: &TopologyConfig) -> Result<Graph<S>, TensorError> {
    build_branched_with(config, IMAGE_INPUT, 7)
}

/// `(translation, attitude)` streams: plain on the full image with 3
/// outputs, branched on the bounded image with 4. They share nothing.
pub fn build_parallel<S: Scalar>(config: &TopologyConfig) -> Result<(Graph<S>, Graph<S>), TensorError> {
    config.validate()?;
    let t = builder(config, IMAGE_INPUT, false, 3).build(&mut init_rng(config, 2))?;
    let a = builder(config, BOUNDED_INPUT, true, 4).build(&mut init_rng(config, 3))?;
    Ok((t, a))
}

/// Raw network output for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseOutput<T> {
    pub translation: [T; 3],
    /// `(k, vx, vy, vz)`, not normalized.
    pub quaternion_raw: [T; 4],
}

impl<T: Copy> PoseOutput<T> {
    pub fn from_slice(v: &[T]) -> Self {
        Self {
            translation: [v[0], v[1], v[2]],
            quaternion_raw: [v[3], v[4], v[5], v[6]],
        }
    }

    pub fn to_array(&self) -> [T; 7] {
        let (t, q) = (self.translation, self.quaternion_raw);
        [t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
    }
}

impl<T: Real> PoseOutput<T> {
    pub fn all_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn translation(&self) -> Translation<T> {
        Translation::from_array(self.translation)
    }

    pub fn rotation(&self) -> Result<Quaternion<T>, GeometryError> {
        Quaternion::from_array(self.quaternion_raw).normalize()
    }
}

/// Batched network inputs in NCHW layout. The bounded images are only read
/// by the parallel model.
pub struct ModelInputs<'a, S> {
    pub image: &'a Tensor<S>,
    pub bounded: &'a Tensor<S>,
}

/// Forward activations of every stream.
pub struct ModelTape<S> {
    pub tapes: Vec<Tape<S>>,
}

/// A built topology: one graph (plain, branched) or two (parallel).
#[derive(Clone, Debug)]
pub struct PoseModel<S> {
    pub config: TopologyConfig,
    pub graphs: Vec<Graph<S>>,
}

const CHECKPOINT_KIND: &str = "trusspose-model";

impl<S: Scalar + Real> PoseModel<S> {
    pub fn build(config: &TopologyConfig) -> Result<Self, TensorError> {
        let graphs = match config.variant {
            Variant::Plain => vec![build_plain(config)?],
            Variant::Branched => vec![build_branched(config)?],
            Variant::Parallel => {
                let (t, a) = build_parallel(config)?;
                vec![t, a]
            }
        };
        Ok(Self {
            config: config.clone(),
            graphs,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Stream names used in checkpoints and layer addresses.
    pub fn roles(&self) -> &'static [&'static str] {
        match self.variant() {
            Variant::Parallel => &["translation", "attitude"],
            _ => &["model"],
        }
    }

    pub fn param_count(&self) -> usize {
        self.graphs.iter().map(Graph::param_count).sum()
    }

    fn feeds<'a>(&self, graph: usize, inputs: &ModelInputs<'a, S>) -> [(&'static str, &'a Tensor<S>); 1] {
        if self.variant() == Variant::Parallel && graph == 1 {
            [(BOUNDED_INPUT, inputs.bounded)]
        } else {
            [(IMAGE_INPUT, inputs.image)]
        }
    }

    pub fn forward(&self, inputs: &ModelInputs<S>) -> Result<ModelTape<S>, TensorError> {
        let tapes = (0..self.graphs.len())
            .map(|g| self.graphs[g].forward(&self.feeds(g, inputs)))
            .collect::<Result<_, _>>()?;
        Ok(ModelTape { tapes })
    }

    pub fn outputs(&self, tape: &ModelTape<S>) -> Vec<PoseOutput<S>> {
        let heads: Vec<&Tensor<S>> = tape.tapes.iter().map(|t| t.get(HEAD).expect("head is recorded")).collect();
        let batch = heads[0].shape()[0];
        (0..batch)
            .map(|n| {
                let mut v = Vec::with_capacity(7);
                for h in &heads {
                    let w = h.shape()[1];
                    v.extend_from_slice(&h.values()[n * w..(n + 1) * w]);
                }
                PoseOutput::from_slice(&v)
            })
            .collect()
    }

    pub fn predict(&self, inputs: &ModelInputs<S>) -> Result<Vec<PoseOutput<S>>, TensorError> {
        Ok(self.outputs(&self.forward(inputs)?))
    }

    /// Backpropagates per-sample gradients of the loss with respect to the
    /// seven raw outputs; returns one gradient set per stream.
    pub fn backward(&self, tape: &ModelTape<S>, output_grads: &[[S; 7]]) -> Result<Vec<Gradients<S>>, TensorError> {
        let n = output_grads.len();
        let seeds: Vec<Tensor<S>> = match self.variant() {
            Variant::Parallel => vec![
                Tensor::new(vec![n, 3], output_grads.iter().flat_map(|g| g[..3].to_vec()).collect())?,
                Tensor::new(vec![n, 4], output_grads.iter().flat_map(|g| g[3..].to_vec()).collect())?,
            ],
            _ => vec![Tensor::new(vec![n, 7], output_grads.iter().flat_map(|g| g.to_vec()).collect())?],
        };
        self.graphs
            .iter()
            .zip(&tape.tapes)
            .zip(&seeds)
            .map(|((g, t), s)| g.backward(t, &[(HEAD, s)], false))
            .collect()
    }

    /// Resolves `role/layer` (or a bare layer name, meaning the first
    /// stream) to a graph index and layer name.
    pub fn resolve_layer<'a>(&self, address: &'a str) -> Option<(usize, &'a str)> {
        let (g, layer) = match address.split_once('/') {
            Some((role, layer)) => (self.roles().iter().position(|r| *r == role)?, layer),
            None => (0, address),
        };
        self.graphs[g].layer_kind(layer).map(|_| (g, layer))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), TensorError> {
        let metadata = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "topology": self.config,
            "extra": extra,
        });
        let names: Vec<String> = self
            .graphs
            .iter()
            .zip(self.roles())
            .flat_map(|(g, role)| g.params().iter().map(move |p| format!("{role}/{}", p.name)))
            .collect();
        let tensors: Vec<(&str, &Tensor<S>)> = names
            .iter()
            .map(String::as_str)
            .zip(self.graphs.iter().flat_map(|g| g.params().iter().map(|p| &p.tensor)))
            .collect();
        checkpoint::save(path, &metadata, &tensors)
    }

    /// Rebuilds the topology recorded in the checkpoint and loads its
    /// parameters. Also returns the `extra` metadata given to [`save`].
    ///
    /// [`save`]: PoseModel::save
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), TensorError> {
        let ck = checkpoint::load::<S>(path)?;
        let malformed = |m: String| TensorError::MalformedCheckpoint(m);
        if ck.metadata.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(malformed("not a pose-model checkpoint".into()));
        }
        let config: TopologyConfig = serde_json::from_value(ck.metadata["topology"].clone())
            .map_err(|e| malformed(format!("topology: {e}")))?;
        let mut model = Self::build(&config)?;
        let roles = model.roles();
        let expected: usize = model.graphs.iter().map(|g| g.params().len()).sum();
        if ck.tensors.len() != expected {
            return Err(malformed(format!("{} tensors, topology needs {expected}", ck.tensors.len())));
        }
        for (g, role) in model.graphs.iter_mut().zip(roles) {
            for p in g.params_mut() {
                let name = format!("{role}/{}", p.name);
                let t = ck.get(&name).ok_or_else(|| malformed(format!("missing tensor `{name}`")))?;
                if t.shape() != p.tensor.shape() {
                    return Err(malformed(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        t.shape(),
                        p.tensor.shape()
                    )));
                }
                p.tensor = t.clone();
            }
        }
        Ok((model, ck.metadata["extra"].clone()))
    }
}

/// Closed-form parameter count of one stream.
pub fn expected_param_count(config: &TopologyConfig, branched: bool, outputs: usize) -> usize {
    let mut count = 0;
    let mut channels = config.channels;
    let mut sizes = Vec::new();
    let mut size = config.input_size;
    for &w in &config.stage_widths {
        for _ in 0..config.convs_per_stage {
            count += w * channels * 9 + w;
            channels = w;
        }
        size = size.div_ceil(2);
        sizes.push(size);
    }
    let mut features = channels * size * size;
    if branched {
        let tap_channels = config.stage_widths[config.branch_stage - 1];
        let tap = sizes[config.branch_stage - 1].div_ceil(2);
        count += tap_channels * tap * tap * config.branch_dense + config.branch_dense;
        features += config.branch_dense;
    }
    for &units in config.dense_widths.iter().chain(std::iter::once(&outputs)) {
        count += features * units + units;
        features = units;
    }
    count
}

/// Converts a quaternion stored as network scalars to the geometry type.
pub fn to_quaternion<S: Real>(raw: [S; 4]) -> Quaternion<f64> {
    Quaternion::from_array(raw.map(cast::<f64>))
}
