//! Residual regression network with softmax-weighted multi-scale heads.

mod checkpoint;
mod spec;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use spec::{LayerSpec, NetworkSpec, ResolvedSpec};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: expected {expected} input channels, found {found}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: spatial dims {dims:?} collapse below 1")]
    SpatialCollapse { layer: usize, dims: [usize; 3] },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("batch shape {got:?} incompatible with network input [N,{channels},{dims:?}]")]
    BatchShape {
        got: Vec<usize>,
        channels: usize,
        dims: [usize; 3],
    },
    #[error("flat parameter vector has {got} values, model needs {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("parameter {0:?} missing from model state")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// All learnable tensors of a network, in a stable build order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: NetworkSpec,
    params: IndexMap<String, Tensor<f32>>,
}

/// Parameters of one residual block as they sit on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub conv1: (Var, Var),
    pub conv2: (Var, Var),
    pub proj: Option<(Var, Var)>,
    pub stride: usize,
}

/// `relu(F(x) + shortcut(x))` with `F = conv3³ -> relu -> conv3³`.
///
/// The shortcut is the identity unless a 1³ strided projection is supplied.
pub fn res_block_forward(tape: &mut Tape<f32>, x: Var, block: &BlockVars) -> Result<Var, NnError> {
    let h = tape.conv3d(x, block.conv1.0, block.conv1.1, block.stride, 1)?;
    let h = tape.relu(h);
    let f = tape.conv3d(h, block.conv2.0, block.conv2.1, 1, 1)?;
    let skip = match block.proj {
        Some((w, b)) => tape.conv3d(x, w, b, block.stride, 0)?,
        None => x,
    };
    let sum = tape.add(f, skip)?;
    Ok(tape.relu(sum))
}

/// Head outputs and their softmax mixture, all as tape variables.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// One `[N,M]` output per head.
    pub heads: Vec<Var>,
    /// Softmax over the head axis of `alpha`, `[H,M]`.
    pub mix_weights: Var,
    pub combined: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `[H,N,M]`
    pub per_head: Tensor<f32>,
    /// `[N,M]`
    pub combined: Tensor<f32>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng) as f32)
}

impl ModelState {
    /// Deterministic initialization: He-normal conv kernels, fan-in scaled
    /// head weights, zero biases and all-zero head logits `alpha`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let resolved = spec.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();

        let mut channels = spec.in_channels;
        for (i, layer) in spec.stem.iter().enumerate() {
            if let LayerSpec::Conv3D {
                in_channels,
                out_channels,
                k,
                ..
            } = *layer
            {
                let fan_in = in_channels * k * k * k;
                params.insert(
                    format!("stem.{i}.weight"),
                    he_normal(&mut rng, &[out_channels, in_channels, k, k, k], fan_in),
                );
                params.insert(format!("stem.{i}.bias"), Tensor::zeros(&[out_channels]));
                channels = out_channels;
            }
        }
        for (s, stage) in spec.stages.iter().enumerate() {
            for (b, layer) in stage.iter().enumerate() {
                let LayerSpec::ResBlock { channels: out, stride } = *layer else {
                    unreachable!("resolve() admits only ResBlocks in stages")
                };
                let p = format!("stage{s}.block{b}");
                params.insert(
                    format!("{p}.conv1.weight"),
                    he_normal(&mut rng, &[out, channels, 3, 3, 3], channels * 27),
                );
                params.insert(format!("{p}.conv1.bias"), Tensor::zeros(&[out]));
                params.insert(
                    format!("{p}.conv2.weight"),
                    he_normal(&mut rng, &[out, out, 3, 3, 3], out * 27),
                );
                params.insert(format!("{p}.conv2.bias"), Tensor::zeros(&[out]));
                if stride != 1 || out != channels {
                    params.insert(
                        format!("{p}.proj.weight"),
                        he_normal(&mut rng, &[out, channels, 1, 1, 1], channels),
                    );
                    params.insert(format!("{p}.proj.bias"), Tensor::zeros(&[out]));
                }
                channels = out;
            }
        }
        let m = spec.measurements;
        for (h, &stage) in spec.head_stages.iter().enumerate() {
            let c = resolved.stage_outputs[stage].0;
            let normal = Normal::new(0.0f64, (1.0 / c as f64).sqrt()).expect("positive std");
            params.insert(
                format!("head{h}.weight"),
                Tensor::from_fn(&[c, m], |_| normal.sample(&mut rng) as f32),
            );
            params.insert(format!("head{h}.bias"), Tensor::zeros(&[m]));
        }
        params.insert("alpha".into(), Tensor::zeros(&[spec.head_count(), m]));
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<f32>> {
        &self.params
    }

    /// Mutable access for optimizers; names and shapes must not change.
    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor<f32>> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn alpha(&self) -> &Tensor<f32> {
        &self.params["alpha"]
    }

    /// Concatenation of all parameters in build order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.params.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every parameter from a vector produced by [`Self::flatten`].
    pub fn unflatten(&mut self, flat: &[f32]) -> Result<(), NnError> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(NnError::FlatLength {
                expected,
                got: flat.len(),
            });
        }
        let mut at = 0;
        for t in self.params.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Rebuilds a model from named tensors; names and shapes must match `spec`.
    pub fn from_params(spec: NetworkSpec, params: IndexMap<String, Tensor<f32>>) -> Result<Self, NnError> {
        let template = Self::build(spec, 0)?;
        if template.params.len() != params.len() {
            return Err(NnError::InvalidSpec(format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                params.len()
            )));
        }
        let mut ordered = IndexMap::with_capacity(params.len());
        for (name, t) in &template.params {
            let p = params.get(name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if p.shape() != t.shape() {
                return Err(NnError::InvalidSpec(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
            ordered.insert(name.clone(), p.clone());
        }
        Ok(Self {
            spec: template.spec,
            params: ordered,
        })
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<f32>, trainable: bool) -> IndexMap<String, Var> {
        self.params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect()
    }

    fn check_batch(&self, shape: &[usize]) -> Result<(), NnError> {
        let ok = shape.len() == 5 && shape[1] == self.spec.in_channels && shape[2..] == self.spec.input_dims;
        if ok {
            Ok(())
        } else {
            Err(NnError::BatchShape {
                got: shape.to_vec(),
                channels: self.spec.in_channels,
                dims: self.spec.input_dims,
            })
        }
    }

    /// Builds the forward graph for `input` (`[N,1,D,H,W]`) on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<f32>,
        vars: &IndexMap<String, Var>,
        input: Var,
    ) -> Result<ForwardVars, NnError> {
        self.check_batch(tape.value(input).shape())?;
        let get = |name: String| vars.get(&name).copied().ok_or(NnError::MissingParam(name));

        let mut x = input;
        for (i, layer) in self.spec.stem.iter().enumerate() {
            x = match *layer {
                LayerSpec::Conv3D { k, stride, .. } => {
                    tape.conv3d(x, get(format!("stem.{i}.weight"))?, get(format!("stem.{i}.bias"))?, stride, k / 2)?
                }
                LayerSpec::MaxPool3D { k, stride } => tape.maxpool3d(x, k, stride)?,
                LayerSpec::ReLU => tape.relu(x),
                _ => unreachable!("resolve() admits only conv/pool/relu in the stem"),
            };
        }

        let mut stage_out = Vec::with_capacity(self.spec.stages.len());
        for (s, stage) in self.spec.stages.iter().enumerate() {
            for (b, layer) in stage.iter().enumerate() {
                let LayerSpec::ResBlock { stride, .. } = *layer else {
                    unreachable!()
                };
                let p = format!("stage{s}.block{b}");
                let proj = match vars.get(&format!("{p}.proj.weight")) {
                    Some(&w) => Some((w, get(format!("{p}.proj.bias"))?)),
                    None => None,
                };
                let block = BlockVars {
                    conv1: (get(format!("{p}.conv1.weight"))?, get(format!("{p}.conv1.bias"))?),
                    conv2: (get(format!("{p}.conv2.weight"))?, get(format!("{p}.conv2.bias"))?),
                    proj,
                    stride,
                };
                x = res_block_forward(tape, x, &block)?;
            }
            stage_out.push(x);
        }

        let mut heads = Vec::with_capacity(self.spec.head_count());
        for (h, &stage) in self.spec.head_stages.iter().enumerate() {
            let pooled = tape.global_avg_pool(stage_out[stage])?;
            heads.push(tape.linear(pooled, get(format!("head{h}.weight"))?, get(format!("head{h}.bias"))?)?);
        }
        let mix_weights = tape.softmax(get("alpha".into())?, 0)?;
        let combined = tape.head_mix(mix_weights, &heads)?;
        Ok(ForwardVars {
            heads,
            mix_weights,
            combined,
        })
    }

    /// Inference: per-head predictions `[H,N,M]` and their mixture `[N,M]`.
    pub fn forward(&self, batch: &Tensor<f32>) -> Result<ForwardOutput, NnError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let input = tape.constant(batch.clone());
        let out = self.forward_on_tape(&mut tape, &vars, input)?;
        let mut per_head = Vec::new();
        for &h in &out.heads {
            per_head.extend_from_slice(tape.value(h).data());
        }
        let combined = tape.value(out.combined).clone();
        let [n, m] = [combined.shape()[0], combined.shape()[1]];
        Ok(ForwardOutput {
            per_head: Tensor::new(vec![out.heads.len(), n, m], per_head)?,
            combined,
        })
    }
}
