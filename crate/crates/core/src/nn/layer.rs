use std::fmt;

use super::activation::ActKind;
use super::conv::ConvParams;
use super::pool::PoolParams;
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Shape-level description of one layer, enough to propagate shapes and
/// count multiply-accumulates without running any arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerDesc {
    Conv(ConvParams),
    BatchNorm {
        channels: usize,
    },
    Act(ActKind),
    MaxPool(PoolParams),
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Residual sum of two equal-shape maps.
    Add,
}

impl LayerDesc {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerDesc::Conv(p) if p.is_depthwise() => "dwconv",
            LayerDesc::Conv(_) => "conv",
            LayerDesc::BatchNorm { .. } => "bn",
            LayerDesc::Act(ActKind::Relu) => "relu",
            LayerDesc::Act(ActKind::Gelu) => "gelu",
            LayerDesc::MaxPool(_) => "maxpool",
            LayerDesc::GlobalAvgPool => "avgpool",
            LayerDesc::Linear { .. } => "linear",
            LayerDesc::Add => "add",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerDesc::Conv(p) => p.output_shape(input),
            LayerDesc::BatchNorm { channels } => {
                if input.c() != channels {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("{input} into {channels} channels"),
                    ));
                }
                Ok(input)
            }
            LayerDesc::Act(_) | LayerDesc::Add => Ok(input),
            LayerDesc::MaxPool(p) => p.output_shape(input),
            LayerDesc::GlobalAvgPool => Ok(Shape::new(input.n(), input.c(), 1, 1)),
            LayerDesc::Linear {
                in_features,
                out_features,
            } => {
                if input.c() != in_features || input.plane() != 1 {
                    return Err(Error::shape(
                        "linear",
                        format!("{input} into {in_features} features"),
                    ));
                }
                Ok(Shape::new(input.n(), out_features, 1, 1))
            }
        }
    }

    /// Multiply-accumulates per forward pass over the whole batch. Norms,
    /// activations, pooling and residual sums count as zero.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        match *self {
            LayerDesc::Conv(p) => p.macs(input),
            LayerDesc::Linear {
                in_features,
                out_features,
            } => Ok(input.n() as u64 * in_features as u64 * out_features as u64),
            _ => Ok(0),
        }
    }

    /// Elementwise operations per forward pass; reported separately from MACs.
    pub fn elementwise_ops(&self, input: Shape) -> Result<u64> {
        Ok(match *self {
            LayerDesc::BatchNorm { .. } | LayerDesc::Act(_) | LayerDesc::Add => {
                input.numel() as u64
            }
            LayerDesc::MaxPool(p) => {
                self.output_shape(input)?.numel() as u64 * (p.kernel * p.kernel) as u64
            }
            LayerDesc::GlobalAvgPool => input.numel() as u64,
            _ => 0,
        })
    }
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Conv(p) => write!(
                f,
                "{} {}→{} k{} s{} p{} g{}",
                self.kind(),
                p.in_channels,
                p.out_channels,
                p.kernel,
                p.stride,
                p.padding,
                p.groups
            ),
            LayerDesc::BatchNorm { channels } => write!(f, "bn {channels}"),
            LayerDesc::MaxPool(p) => {
                write!(f, "maxpool k{} s{} p{}", p.kernel, p.stride, p.padding)
            }
            LayerDesc::Linear {
                in_features,
                out_features,
            } => write!(f, "linear {in_features}→{out_features}"),
            other => f.write_str(other.kind()),
        }
    }
}

/// One layer as it appears in a shape trace of a full model.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedLayer {
    pub path: String,
    pub desc: LayerDesc,
    pub input: Shape,
    pub output: Shape,
}

/// Accumulates a shape trace; `push` propagates the shape and returns it.
#[derive(Debug, Default)]
pub struct Tracer {
    pub layers: Vec<TracedLayer>,
}

impl Tracer {
    pub fn push(
        &mut self,
        path: impl Into<String>,
        desc: LayerDesc,
        input: Shape,
    ) -> Result<Shape> {
        let output = desc.output_shape(input)?;
        self.layers.push(TracedLayer {
            path: path.into(),
            desc,
            input,
            output,
        });
        Ok(output)
    }
}
