use super::spec::{LayerKind, ShapedLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

/// Closed-form per-sample cost of one layer.
///
/// Multiply-accumulate counts as 2 FLOPs. Dense and convolution backward
/// passes cost twice their forward pass (input and weight gradients).
/// Element-wise and data-movement layers cost 1 per output element in either
/// direction. The loss costs `5 * classes` per sample, charged once on the
/// forward side since its gradient falls out of the same computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub forward: u64,
    pub backward: u64,
}

impl LayerCost {
    pub fn of(layer: &ShapedLayer) -> Self {
        let out_elems: u64 = layer.output.iter().product::<usize>() as u64;
        match layer.spec.kind {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => {
                let mac = (in_dim * out_dim) as u64;
                Self {
                    forward: 2 * mac,
                    backward: 4 * mac,
                }
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                ..
            } => {
                let spatial = (layer.output[1] * layer.output[2]) as u64;
                let fwd = 2 * (kernel_h * kernel_w * in_ch * out_ch) as u64 * spatial;
                Self {
                    forward: fwd,
                    backward: 2 * fwd,
                }
            }
            LayerKind::Relu
            | LayerKind::MaxPool2d { .. }
            | LayerKind::Flatten
            | LayerKind::Concat { .. } => Self {
                forward: out_elems,
                backward: out_elems,
            },
            LayerKind::SoftmaxCrossEntropy { num_classes } => Self {
                forward: 5 * num_classes as u64,
                backward: 0,
            },
        }
    }

    pub fn get(&self, direction: Direction) -> u64 {
        match direction {
            Direction::Forward => self.forward,
            Direction::Backward => self.backward,
        }
    }
}

/// FLOPs for running `layer` over a batch in one direction.
pub fn flops(layer: &ShapedLayer, batch: usize, direction: Direction) -> u64 {
    LayerCost::of(layer).get(direction) * batch as u64
}
