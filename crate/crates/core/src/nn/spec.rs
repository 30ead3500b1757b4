use serde::{Deserialize, Serialize};

use super::NnError;
use crate::tensor::conv_out_extent;

/// One layer of the network grammar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Conv3D {
        #[serde(rename = "in")]
        in_channels: usize,
        #[serde(rename = "out")]
        out_channels: usize,
        k: usize,
        stride: usize,
    },
    MaxPool3D {
        k: usize,
        stride: usize,
    },
    FullyConnected {
        #[serde(rename = "in")]
        in_features: usize,
        #[serde(rename = "out")]
        out_features: usize,
    },
    ResBlock {
        channels: usize,
        stride: usize,
    },
    GlobalAvgPool,
    ReLU,
}

/// Stem, residual stages and the stages tapped by regression heads.
///
/// Every head is `GlobalAvgPool -> FullyConnected[C_stage, M]` on the output of
/// its stage; the head outputs are mixed per measurement by softmax weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dims: [usize; 3],
    pub in_channels: usize,
    pub stem: Vec<LayerSpec>,
    pub stages: Vec<Vec<LayerSpec>>,
    pub head_stages: Vec<usize>,
    pub measurements: usize,
}

/// Shapes resolved by walking the spec once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedSpec {
    /// Channel count and spatial dims after each stage.
    pub stage_outputs: Vec<(usize, [usize; 3])>,
    pub stem_output: (usize, [usize; 3]),
}

impl NetworkSpec {
    /// Stem `Conv3D[1,c,3,1] + ReLU + MaxPool3D[2,2]`, four single-block stages
    /// with channels `c, 2c, 4c, 8c` (stride 2 between stages).
    ///
    /// `heads == 1` taps only the last stage (single funnel regressor);
    /// otherwise the last `heads` stages are tapped.
    pub fn desk(input_dim: usize, base_channels: usize, measurements: usize, heads: usize) -> Self {
        let c = base_channels;
        let stages = (0..4)
            .map(|s| {
                vec![LayerSpec::ResBlock {
                    channels: c << s,
                    stride: if s == 0 { 1 } else { 2 },
                }]
            })
            .collect();
        let heads = heads.clamp(1, 4);
        Self {
            input_dims: [input_dim; 3],
            in_channels: 1,
            stem: vec![
                LayerSpec::Conv3D {
                    in_channels: 1,
                    out_channels: c,
                    k: 3,
                    stride: 1,
                },
                LayerSpec::ReLU,
                LayerSpec::MaxPool3D { k: 2, stride: 2 },
            ],
            stages,
            head_stages: (4 - heads..4).collect(),
            measurements,
        }
    }

    pub fn head_count(&self) -> usize {
        self.head_stages.len()
    }

    /// Checks channel chaining, strides and spatial extents.
    ///
    /// Layers are numbered in one flat sequence: stem layers first, then every
    /// block of every stage.
    pub fn resolve(&self) -> Result<ResolvedSpec, NnError> {
        if self.measurements == 0 {
            return Err(NnError::InvalidSpec("measurement count must be positive".into()));
        }
        if self.in_channels == 0 || self.input_dims.contains(&0) {
            return Err(NnError::InvalidSpec("input channels and dims must be positive".into()));
        }
        let mut channels = self.in_channels;
        let mut dims = self.input_dims;
        let mut index = 0;


        for layer in &self.stem {
            match *layer {
                LayerSpec::Conv3D {
                    in_channels,
                    out_channels,
                    k,
                    stride,
                } => {
                    if in_channels != channels {
                        return Err(NnError::ChannelMismatch {
                            layer: index,
                            expected: channels,
                            found: in_channels,
                        });
                    }
                    if out_channels == 0 || k == 0 || stride == 0 {
                        return Err(NnError::InvalidLayer {
                            layer: index,
                            reason: "Conv3D parameters must be positive".into(),
                        });
                    }
                    dims = shrink(dims, index, k, stride, k / 2)?;
                    channels = out_channels;
                }
                LayerSpec::MaxPool3D { k, stride } => {
                    if k == 0 || stride == 0 {
                        return Err(NnError::InvalidLayer {
                            layer: index,
                            reason: "MaxPool3D parameters must be positive".into(),
                        });
                    }
                    dims = shrink(dims, index, k, stride, 0)?;
                }
                LayerSpec::ReLU => {}
                ref other => {
                    return Err(NnError::InvalidLayer {
                        layer: index,
                        reason: format!("{other:?} is not allowed in the stem"),
                    })
                }
            }
            index += 1;
        }
        let stem_output = (channels, dims);

        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if stage.is_empty() {
                return Err(NnError::InvalidLayer {
                    layer: index,
                    reason: "empty stage".into(),
                });
            }
            for layer in stage {
                let LayerSpec::ResBlock { channels: out, stride } = *layer else {
                    return Err(NnError::InvalidLayer {
                        layer: index,
                        reason: format!("stages hold ResBlocks only, found {layer:?}"),
                    });
                };
                if out == 0 || !(1..=2).contains(&stride) {
                    return Err(NnError::InvalidLayer {
                        layer: index,
                        reason: format!("ResBlock needs positive channels and stride 1 or 2, got {out}/{stride}"),
                    });
                }
                dims = shrink(dims, index, 3, stride, 1)?;
                channels = out;
                index += 1;
            }
            stage_outputs.push((channels, dims));
        }

        if self.head_stages.is_empty() {
            return Err(NnError::InvalidSpec("at least one head is required".into()));
        }
        for (h, &s) in self.head_stages.iter().enumerate() {
            if s >= self.stages.len() {
                return Err(NnError::InvalidSpec(format!(
                    "head {h} taps stage {s} but only {} stages exist",
                    self.stages.len()
                )));
            }
            if self.head_stages[..h].contains(&s) {
                return Err(NnError::InvalidSpec(format!("stage {s} tapped twice")));
            }
        }
        Ok(ResolvedSpec {
            stage_outputs,
            stem_output,
        })
    }
}

fn shrink(dims: [usize; 3], layer: usize, k: usize, stride: usize, pad: usize) -> Result<[usize; 3], NnError> {
    let mut out = [0; 3];
    for (o, &d) in out.iter_mut().zip(&dims) {
        *o = conv_out_extent(d, k, stride, pad).ok_or(NnError::SpatialCollapse { layer, dims })?;
    }
    Ok(out)
}
