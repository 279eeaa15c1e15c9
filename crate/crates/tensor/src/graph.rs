//! Static layer graphs. Nodes are wired by name, sorted topologically at
//! build time, and executed in that order. Shapes stored on nodes exclude
//! the leading batch dimension.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, TensorError};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2,
    Dense {
        units: usize,
    },
    Relu,
    Flatten,
    /// Axis counts per-sample dimensions (0 = first non-batch axis).
    Concat {
        axis: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv2d,
    MaxPool2,
    Dense,
    Relu,
    Flatten,
    Concat,
}

#[derive(Clone, Debug)]
enum Layer {
    Input,
    Conv2d {
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2,
    Dense {
        weight: usize,
        bias: usize,
    },
    Relu,
    Flatten,
    Concat {
        axis: usize,
    },
}

impl Layer {
    fn kind(&self) -> LayerKind {
        match self {
            Layer::Input => LayerKind::Input,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Concat { .. } => LayerKind::Concat,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    name: String,
    layer: Layer,
    inputs: Vec<usize>,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub tensor: Tensor<S>,
}

enum PendingNode {
    Input(Vec<usize>),
    Layer(LayerSpec, Vec<String>),
}

/// Collects named nodes in any order; `build` validates the wiring.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<(String, PendingNode)>,
    outputs: Vec<String>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an input with its per-sample shape, e.g. `[3, 64, 64]`.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> &mut Self {
        self.nodes
            .push((name.to_string(), PendingNode::Input(shape.to_vec())));
        self
    }

    pub fn layer(&mut self, name: &str, spec: LayerSpec, inputs: &[&str]) -> &mut Self {
        self.nodes.push((
            name.to_string(),
            PendingNode::Layer(spec, inputs.iter().map(|s| s.to_string()).collect()),
        ));
        self
    }

    pub fn output(&mut self, name: &str) -> &mut Self {
        self.outputs.push(name.to_string());
        self
    }

    /// Topologically sorts the nodes, infers shapes, and allocates
    /// He-uniform weights (zero biases) from `rng`.
    pub fn build<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Graph<S>> {
        let mut by_name = HashMap::new();
        for (i, (name, _)) in self.nodes.iter().enumerate() {
            if by_name.insert(name.clone(), i).is_some() {
                return Err(TensorError::DuplicateNode(name.clone()));
            }
        }
        let deps: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|(_, node)| match node {
                PendingNode::Input(_) => Ok(Vec::new()),
                PendingNode::Layer(_, inputs) => inputs
                    .iter()
                    .map(|n| {
                        by_name
                            .get(n)
                            .copied()
                            .ok_or_else(|| TensorError::UnknownNode(n.clone()))
                    })
                    .collect(),
            })
            .collect::<Result<_>>()?;

        // Kahn's algorithm; ties resolve by declaration order.
        let mut indegree: Vec<usize> = deps.iter().map(Vec::len).collect();
        let mut users = vec![Vec::new(); self.nodes.len()];
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                users[j].push(i);
            }
        }
        let mut ready: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &u in &users[i] {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    ready.push_back(u);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].0.clone())
                .collect();
            return Err(TensorError::Cycle(stuck));
        }

        let mut position = vec![0; self.nodes.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(order.len());
        let mut params = Vec::new();
        for &i in &order {
            let (name, pending) = &self.nodes[i];
            let inputs: Vec<usize> = deps[i].iter().map(|&j| position[j]).collect();
            let in_shapes: Vec<&[usize]> = inputs.iter().map(|&j| nodes[j].shape.as_slice()).collect();
            let (layer, shape) = match pending {
                PendingNode::Input(shape) => (Layer::Input, shape.clone()),
                PendingNode::Layer(spec, _) => infer(name, spec, &in_shapes, &mut params, rng)?,
            };
            nodes.push(Node {
                name: name.clone(),
                layer,
                inputs,
                shape,
            });
        }
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let outputs = self
            .outputs
            .iter()
            .map(|n| index.get(n).copied().ok_or_else(|| TensorError::UnknownNode(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        let inputs = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.layer, Layer::Input))
            .map(|(i, _)| i)
            .collect();
        Ok(Graph {
            nodes,
            params,
            inputs,
            outputs,
            index,
        })
    }
}

fn he_uniform<S: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<S> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| S::from_acc(rng.random_range(-limit..limit)))
}

fn infer<S: Scalar, R: Rng + ?Sized>(
    name: &str,
    spec: &LayerSpec,
    inputs: &[&[usize]],
    params: &mut Vec<Param<S>>,
    rng: &mut R,
) -> Result<(Layer, Vec<usize>)> {
    let arity = if matches!(spec, LayerSpec::Concat { .. }) { 2 } else { 1 };
    if inputs.len() != arity {
        return Err(shape_err(
            "graph",
            format!("`{name}` takes {arity} input(s), wired to {}", inputs.len()),
        ));
    }
    let x = inputs[0];
    let mut push = |suffix: &str, t: Tensor<S>| {
        params.push(Param {
            name: format!("{name}.{suffix}"),
            tensor: t,
        });
        params.len() - 1
    };
    match *spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            if x.len() != 3 {
                return Err(shape_err("graph", format!("`{name}` needs CHW input, got {x:?}")));
            }
            let oh = ops::conv2d_output_size(x[1], kernel, stride, padding);
            let ow = ops::conv2d_output_size(x[2], kernel, stride, padding);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(shape_err("graph", format!("`{name}` kernel does not fit {x:?}")));
            };
            let fan_in = x[0] * kernel * kernel;
            let weight = push("weight", he_uniform(vec![out_channels, x[0], kernel, kernel], fan_in, rng));
            let bias = push("bias", Tensor::zeros(vec![out_channels]));
            Ok((
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                },
                vec![out_channels, oh, ow],
            ))
        }
        LayerSpec::MaxPool2 => {
            if x.len() != 3 {
                return Err(shape_err("graph", format!("`{name}` needs CHW input, got {x:?}")));
            }
            Ok((Layer::MaxPool2, vec![x[0], x[1].div_ceil(2), x[2].div_ceil(2)]))
        }
        LayerSpec::Dense { units } => {
            let fan_in: usize = x.iter().product();
            let weight = push("weight", he_uniform(vec![fan_in, units], fan_in, rng));
            let bias = push("bias", Tensor::zeros(vec![units]));
            Ok((Layer::Dense { weight, bias }, vec![units]))
        }
        LayerSpec::Relu => Ok((Layer::Relu, x.to_vec())),
        LayerSpec::Flatten => Ok((Layer::Flatten, vec![x.iter().product()])),
        LayerSpec::Concat { axis } => {
            let y = inputs[1];
            let ok = x.len() == y.len()
                && axis < x.len()
                && x.iter().zip(y).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(
                    "graph",
                    format!("`{name}` cannot concatenate {x:?} and {y:?} on axis {axis}"),
                ));
            }
            let mut shape = x.to_vec();
            shape[axis] += y[axis];
            Ok((Layer::Concat { axis }, shape))
        }
    }
}

/// Activations recorded by a forward pass, consumed by `Graph::backward`.
pub struct Tape<S> {
    values: Vec<Tensor<S>>,
    routes: Vec<Option<Vec<usize>>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Tape<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.values[i])
    }
}

/// Gradients of every parameter (same order as `Graph::params`) and,
/// optionally, of the graph inputs.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub params: Vec<Tensor<S>>,
    pub inputs: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn add_assign(&mut self, other: &Gradients<S>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign_values(b.values());
        }
    }

    pub fn scale(&mut self, factor: S) {
        for p in &mut self.params {
            for v in p.values_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }
}

#[derive(Clone, Debug)]
pub struct Graph<S> {
    nodes: Vec<Node>,
    params: Vec<Param<S>>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Graph<S> {
    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    /// Node names in execution order.
    pub fn layer_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    pub fn layer_kind(&self, name: &str) -> Option<LayerKind> {
        self.index.get(name).map(|&i| self.nodes[i].layer.kind())
    }

    /// Per-sample output shape of a node.
    pub fn node_shape(&self, name: &str) -> Option<&[usize]> {
        self.index.get(name).map(|&i| self.nodes[i].shape.as_slice())
    }

    /// Names of the nodes feeding `name`.
    pub fn node_inputs(&self, name: &str) -> Option<Vec<&str>> {
        self.index
            .get(name)
            .map(|&i| self.nodes[i].inputs.iter().map(|&j| self.nodes[j].name.as_str()).collect())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Adds `grads` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients<S>) {
        for (p, g) in self.params.iter_mut().zip(&grads.params) {
            for (a, &b) in p.tensor.grad_mut().iter_mut().zip(g.values()) {
                *a = *a + b;
            }
        }
    }

    pub fn forward(&self, inputs: &[(&str, &Tensor<S>)]) -> Result<Tape<S>> {
        let mut values: Vec<Tensor<S>> = Vec::with_capacity(self.nodes.len());
        let mut routes = Vec::with_capacity(self.nodes.len());
        let mut batch = None;
        for node in &self.nodes {
            let arg = |k: usize| &values[node.inputs[k]];
            let mut route = None;
            let out = match &node.layer {
                Layer::Input => {
                    let t = inputs
                        .iter()
                        .find(|(n, _)| *n == node.name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| TensorError::MissingInput(node.name.clone()))?;
                    let s = t.shape();
                    if s.len() != node.shape.len() + 1 || s[1..] != node.shape[..] {
                        return Err(shape_err(
                            "forward",
                            format!("input `{}` expects [N, {:?}], got {s:?}", node.name, node.shape),
                        ));
                    }
                    if *batch.get_or_insert(s[0]) != s[0] {
                        return Err(shape_err("forward", "inputs disagree on batch size"));
                    }
                    t.clone()
                }
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => ops::conv2d(
                    arg(0),
                    &self.params[*weight].tensor,
                    &self.params[*bias].tensor,
                    *stride,
                    *padding,
                )?,
                Layer::MaxPool2 => {
                    let (y, r) = ops::maxpool2(arg(0))?;
                    route = Some(r);
                    y
                }
                Layer::Dense { weight, bias } => {
                    ops::dense(arg(0), &self.params[*weight].tensor, &self.params[*bias].tensor)?
                }
                Layer::Relu => ops::relu(arg(0)),
                Layer::Flatten => ops::flatten(arg(0))?,
                Layer::Concat { axis } => ops::concat(arg(0), arg(1), axis + 1)?,
            };
            values.push(out);
            routes.push(route);
        }
        Ok(Tape {
            values,
            routes,
            index: self.index.clone(),
        })
    }

    /// Reverse pass seeded with upstream gradients for the named nodes
    /// (normally the outputs). Input gradients are computed only when
    /// `input_grads` is set.
    pub fn backward(
        &self,
        tape: &Tape<S>,
        seeds: &[(&str, &Tensor<S>)],
        input_grads: bool,
    ) -> Result<Gradients<S>> {
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (name, g) in seeds {
            let &i = self.index.get(*name).ok_or_else(|| TensorError::UnknownNode(name.to_string()))?;
            if g.shape() != tape.values[i].shape() {
                return Err(shape_err(
                    "backward",
                    format!("seed for `{name}` has shape {:?}, node has {:?}", g.shape(), tape.values[i].shape()),
                ));
            }
            accumulate(&mut grads[i], (*g).clone())?;
        }
        let mut param_grads: Vec<Tensor<S>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape().to_vec()))
            .collect();
        // Nodes whose gradient nobody reads: graph inputs (unless requested).
        let needs_grad: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| input_grads || !matches!(n.layer, Layer::Input))
            .collect();

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let x = |k: usize| &tape.values[node.inputs[k]];
            match &node.layer {
                Layer::Input => {
                    grads[i] = Some(g);
                }
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let src = node.inputs[0];
                    let r = ops::conv2d_backward(
                        x(0),
                        &self.params[*weight].tensor,
                        *stride,
                        *padding,
                        &g,
                        needs_grad[src],
                    )?;
                    param_grads[*weight].add_assign_values(r.weight.values());
                    param_grads[*bias].add_assign_values(r.bias.values());
                    if let Some(gi) = r.input {
                        accumulate(&mut grads[src], gi)?;
                    }
                }
                Layer::MaxPool2 => {
                    let route = tape.routes[i].as_ref().expect("pool route recorded");
                    let gi = ops::maxpool2_backward(x(0).shape(), route, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Layer::Dense { weight, bias } => {
                    let r = ops::dense_backward(x(0), &self.params[*weight].tensor, &g)?;
                    param_grads[*weight].add_assign_values(r.weight.values());
                    param_grads[*bias].add_assign_values(r.bias.values());
                    if needs_grad[node.inputs[0]] {
                        accumulate(&mut grads[node.inputs[0]], r.input)?;
                    }
                }
                Layer::Relu => {
                    let gi = ops::relu_backward(x(0), &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Layer::Flatten => {
                    let gi = g.reshape(x(0).shape().to_vec())?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Layer::Concat { axis } => {
                    let (ga, gb) = ops::concat_backward(x(0).shape(), x(1).shape(), axis + 1, &g)?;
                    accumulate(&mut grads[node.inputs[0]], ga)?;
                    accumulate(&mut grads[node.inputs[1]], gb)?;
                }
            }
        }
        let inputs = if input_grads {
            self.inputs
                .iter()
                .filter_map(|&i| grads[i].take().map(|g| (self.nodes[i].name.clone(), g)))
                .collect()
        } else {
            BTreeMap::new()
        };
        Ok(Gradients {
            params: param_grads,
            inputs,
        })
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(existing) => {
            if existing.shape() != g.shape() {
                return Err(shape_err("backward", "gradient shapes disagree"));
            }
            existing.add_assign_values(g.values());
        }
    }
    Ok(())
}
