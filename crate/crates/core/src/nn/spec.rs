use std::fmt;
use std::str::FromStr;

use super::NnError;

/// The fixed layer vocabulary. Dimensions are per sample; the batch axis is
/// implicit everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    },
    Relu,
    /// Valid (unpadded) convolution over `[channels, height, width]` inputs.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    /// Joins `arity` inputs along the feature axis (axis 1 of the batched tensor).
    Concat {
        arity: usize,
        axis: usize,
    },
    SoftmaxCrossEntropy {
        num_classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn dense(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self::new(
            name,
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias: true,
            },
        )
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn concat(name: impl Into<String>, arity: usize) -> Self {
        Self::new(name, LayerKind::Concat { arity, axis: 1 })
    }

    pub fn loss(name: impl Into<String>, num_classes: usize) -> Self {
        Self::new(name, LayerKind::SoftmaxCrossEntropy { num_classes })
    }

    pub fn is_loss(&self) -> bool {
        matches!(self.kind, LayerKind::SoftmaxCrossEntropy { .. })
    }

    pub fn is_concat(&self) -> bool {
        matches!(self.kind, LayerKind::Concat { .. })
    }

    pub fn arity(&self) -> usize {
        match self.kind {
            LayerKind::Concat { arity, .. } => arity,
            _ => 1,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.param_shapes().is_empty()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self.kind {
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias,
            } => {
                let mut shapes = vec![vec![in_dim, out_dim]];
                if bias {
                    shapes.push(vec![out_dim]);
                }
                shapes
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                ..
            } => vec![vec![out_ch, in_ch, kernel_h, kernel_w], vec![out_ch]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Checks the configuration-only invariants (no input shape needed).
    pub fn check(&self) -> Result<(), NnError> {
        let bad = |reason: &str| {
            Err(NnError::InvalidSpec {
                layer: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        match self.kind {
            LayerKind::Dense { in_dim, out_dim, .. } if in_dim == 0 || out_dim == 0 => {
                bad("dense dimensions must be at least 1")
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                stride,
            } if in_ch == 0 || out_ch == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 => {
                bad("conv channels, kernel and stride must be at least 1")
            }
            LayerKind::MaxPool2d { window, stride } if window == 0 || stride == 0 => {
                bad("pool window and stride must be at least 1")
            }
            LayerKind::Concat { arity, .. } if arity < 2 => bad("concat needs at least 2 inputs"),
            LayerKind::Concat { axis, .. } if axis != 1 => {
                bad("concat only joins along the feature axis (1)")
            }
            LayerKind::SoftmaxCrossEntropy { num_classes } if num_classes < 2 => {
                bad("softmax cross-entropy needs at least 2 classes")
            }
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for the given per-sample input shapes.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, NnError> {
        self.check()?;
        if inputs.len() != self.arity() {
            return Err(NnError::Arity {
                layer: self.name.clone(),
                expected: self.arity(),
                actual: inputs.len(),
            });
        }
        let mismatch = |expected: String, actual: &[usize]| NnError::ShapeMismatch {
            layer: self.name.clone(),
            expected,
            actual: actual.to_vec(),
        };
        let x = inputs[0];
        match self.kind {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => {
                if x != [in_dim] {
                    return Err(mismatch(format!("[{in_dim}]"), x));
                }
                Ok(vec![out_dim])
            }
            LayerKind::Relu => Ok(x.to_vec()),
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                stride,
            } => {
                if x.len() != 3 || x[0] != in_ch || x[1] < kernel_h || x[2] < kernel_w {
                    return Err(mismatch(
                        format!("[{in_ch}, >={kernel_h}, >={kernel_w}]"),
                        x,
                    ));
                }
                Ok(vec![
                    out_ch,
                    (x[1] - kernel_h) / stride + 1,
                    (x[2] - kernel_w) / stride + 1,
                ])
            }
            LayerKind::MaxPool2d { window, stride } => {
                if x.len() != 3 || x[1] < window || x[2] < window {
                    return Err(mismatch(format!("[channels, >={window}, >={window}]"), x));
                }
                Ok(vec![
                    x[0],
                    (x[1] - window) / stride + 1,
                    (x[2] - window) / stride + 1,
                ])
            }
            LayerKind::Flatten => Ok(vec![x.iter().product()]),
            LayerKind::Concat { .. } => {
                if x.is_empty() {
                    return Err(mismatch("rank >= 1".into(), x));
                }
                let mut out = x.to_vec();
                for other in &inputs[1..] {
                    if other.len() != x.len() || other[1..] != x[1..] {
                        return Err(mismatch(format!("[_, {:?}]", &x[1..]), other));
                    }
                    out[0] += other[0];
                }
                Ok(out)
            }
            LayerKind::SoftmaxCrossEntropy { num_classes } => {
                if x != [num_classes] {
                    return Err(mismatch(format!("[{num_classes}]"), x));
                }
                Ok(x.to_vec())
            }
        }
    }
}

/// A layer together with the per-sample shapes it sees in a concrete network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapedLayer {
    pub spec: LayerSpec,
    pub inputs: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

impl ShapedLayer {
    pub fn new(spec: LayerSpec, inputs: Vec<Vec<usize>>) -> Result<Self, NnError> {
        let refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let output = spec.output_shape(&refs)?;
        Ok(Self {
            spec,
            inputs,
            output,
        })
    }
}

/// Propagates a per-sample input shape through a chain of single-input layers.
pub fn infer_chain(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<ShapedLayer>, NnError> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(layers.len());
    for spec in layers {
        let shaped = ShapedLayer::new(spec.clone(), vec![shape])?;
        shape = shaped.output.clone();
        out.push(shaped);
    }
    Ok(out)
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias,
            } => {
                write!(f, "dense {in_dim} {out_dim}")?;
                if !bias {
                    write!(f, " nobias")?;
                }
                Ok(())
            }
            LayerKind::Relu => write!(f, "relu"),
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                stride,
            } => write!(f, "conv2d {in_ch} {out_ch} {kernel_h} {kernel_w} {stride}"),
            LayerKind::MaxPool2d { window, stride } => write!(f, "maxpool2d {window} {stride}"),
            LayerKind::Flatten => write!(f, "flatten"),
            LayerKind::Concat { arity, .. } => write!(f, "concat {arity}"),
            LayerKind::SoftmaxCrossEntropy { num_classes } => write!(f, "softmax_ce {num_classes}"),
        }
    }
}

impl FromStr for LayerKind {
    type Err = NnError;

    /// Parses the compact text form, e.g. `dense 784 64`, `conv2d 1 8 3 3 1`.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| NnError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut words = text.split_whitespace();
        let op = words.next().ok_or_else(|| err("empty layer"))?;
        let rest: Vec<&str> = words.collect();
        let flag_nobias = rest.last() == Some(&"nobias");
        let nums: Vec<usize> = rest
            .iter()
            .filter(|w| **w != "nobias")
            .map(|w| w.parse::<usize>().map_err(|_| err("expected an unsigned integer")))
            .collect::<Result<_, _>>()?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(err(&format!("`{op}` takes {n} argument(s)")))
            }
        };
        if flag_nobias && op != "dense" {
            return Err(err("`nobias` only applies to dense"));
        }
        let kind = match op {
            "dense" => {
                want(2)?;
                LayerKind::Dense {
                    in_dim: nums[0],
                    out_dim: nums[1],
                    bias: !flag_nobias,
                }
            }
            "relu" => {
                want(0)?;
                LayerKind::Relu
            }
            "conv2d" => {
                want(5)?;
                LayerKind::Conv2d {
                    in_ch: nums[0],
                    out_ch: nums[1],
                    kernel_h: nums[2],
                    kernel_w: nums[3],
                    stride: nums[4],
                }
            }
            "maxpool2d" => {
                want(2)?;
                LayerKind::MaxPool2d {
                    window: nums[0],
                    stride: nums[1],
                }
            }
            "flatten" => {
                want(0)?;
                LayerKind::Flatten
            }
            "concat" => {
                want(1)?;
                LayerKind::Concat {
                    arity: nums[0],
                    axis: 1,
                }
            }
            "softmax_ce" => {
                want(1)?;
                LayerKind::SoftmaxCrossEntropy {
                    num_classes: nums[0],
                }
            }
            _ => return Err(err("unknown layer type")),
        };
        Ok(kind)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.kind)
    }
}

impl LayerSpec {
    /// Parses `name: kind args` or, without a name, `kind args` using `default_name`.
    pub fn parse_with_default(text: &str, default_name: &str) -> Result<Self, NnError> {
        match text.split_once(':') {
            Some((name, kind)) => Ok(Self::new(name.trim(), kind.trim().parse()?)),
            None => Ok(Self::new(default_name, text.trim().parse()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        for text in [
            "dense 784 64",
            "dense 3 1 nobias",
            "relu",
            "conv2d 1 8 3 3 1",
            "maxpool2d 2 2",
            "flatten",
            "concat 3",
            "softmax_ce 10",
        ] {
            let kind: LayerKind = text.parse().unwrap();
            assert_eq!(kind.to_string(), text);
        }
        assert!("dense 3".parse::<LayerKind>().is_err());
        assert!("swish".parse::<LayerKind>().is_err());
        assert!("relu nobias".parse::<LayerKind>().is_err());
    }

    #[test]
    fn named_parse() {
        let spec = LayerSpec::parse_with_default("fc1: dense 2 3", "x").unwrap();
        assert_eq!(spec.name, "fc1");
        let spec = LayerSpec::parse_with_default("relu", "l4").unwrap();
        assert_eq!(spec.name, "l4");
    }

    #[test]
    fn shape_propagation_through_a_small_cnn() {
        let layers = vec![
            LayerSpec::new(
                "c1",
                LayerKind::Conv2d {
                    in_ch: 1,
                    out_ch: 4,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                },
            ),
            LayerSpec::relu("r1"),
            LayerSpec::new("p1", LayerKind::MaxPool2d { window: 2, stride: 2 }),
            LayerSpec::new("f", LayerKind::Flatten),
            LayerSpec::dense("d", 100, 2),
            LayerSpec::loss("ce", 2),
        ];
        let shaped = infer_chain(&layers, &[1, 12, 12]).unwrap();
        let outs: Vec<_> = shaped.iter().map(|s| s.output.clone()).collect();
        assert_eq!(
            outs,
            vec![
                vec![4, 10, 10],
                vec![4, 10, 10],
                vec![4, 5, 5],
                vec![100],
                vec![2],
                vec![2]
            ]
        );
    }

    #[test]
    fn concat_shapes_and_violations() {
        let cat = LayerSpec::concat("cat", 2);
        assert_eq!(cat.output_shape(&[&[4], &[6]]).unwrap(), vec![10]);
        assert!(matches!(
            cat.output_shape(&[&[4]]),
            Err(NnError::Arity { expected: 2, actual: 1, .. })
        ));
        assert!(LayerSpec::concat("bad", 1).check().is_err());
        assert!(LayerSpec::new("ax", LayerKind::Concat { arity: 2, axis: 0 })
            .check()
            .is_err());
    }

    #[test]
    fn dense_shape_error_names_layer() {
        let err = LayerSpec::dense("fc", 4, 2).output_shape(&[&[5]]).unwrap_err();
        assert_eq!(
            err,
            NnError::ShapeMismatch {
                layer: "fc".into(),
                expected: "[4]".into(),
                actual: vec![5]
            }
        );
    }
}
