use super::loss::{softmax_cross_entropy, LossOutput};
use super::spec::{LayerKind, LayerSpec};
use super::NnError;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients produced by one backward pass, before any update is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// One entry per forward input (several for `Concat`).
    pub inputs: Vec<Tensor<T>>,
    /// Gradient per parameter tensor, summed over the batch and aligned with
    /// the layer weights.
    pub params: Vec<Tensor<T>>,
}

/// A layer's spec, its parameters, and the input cached for backward.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    spec: LayerSpec,
    weights: Vec<Tensor<T>>,
    cached: Option<Vec<Tensor<T>>>,
}

/// Half-width of the uniform initialization interval.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `weights <- weights - lr * grad`, element-wise.
pub fn sgd_step<T: Scalar>(weights: &mut Tensor<T>, grad: &Tensor<T>, lr: T) {
    debug_assert_eq!(weights.shape(), grad.shape());
    for (w, g) in weights.data_mut().iter_mut().zip(grad.data()) {
        *w -= lr * *g;
    }
}

impl<T: Scalar> LayerState<T> {
    /// Initializes parameters from a stream keyed by the layer name, so a layer
    /// gets the same weights wherever it is placed.
    pub fn init(spec: LayerSpec, seed: u64) -> Result<Self, NnError> {
        spec.check()?;
        let mut rng = SplitMix64::for_stream(seed, &spec.name);
        let weights = match spec.kind {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => {
                let bound = glorot_bound(in_dim, out_dim);
                let w = (0..in_dim * out_dim)
                    .map(|_| T::from_f64_lossy(rng.next_symmetric(bound)))
                    .collect();
                let mut ws = vec![Tensor::new(vec![in_dim, out_dim], w)?];
                if spec.param_shapes().len() == 2 {
                    ws.push(Tensor::zeros(vec![out_dim])?);
                }
                ws
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel_h,
                kernel_w,
                ..
            } => {
                let area = kernel_h * kernel_w;
                let bound = glorot_bound(in_ch * area, out_ch * area);
                let w = (0..out_ch * in_ch * area)
                    .map(|_| T::from_f64_lossy(rng.next_symmetric(bound)))
                    .collect();
                vec![
                    Tensor::new(vec![out_ch, in_ch, kernel_h, kernel_w], w)?,
                    Tensor::zeros(vec![out_ch])?,
                ]
            }
            _ => Vec::new(),
        };
        Ok(Self {
            spec,
            weights,
            cached: None,
        })
    }

    pub fn with_weights(spec: LayerSpec, weights: Vec<Tensor<T>>) -> Result<Self, NnError> {
        spec.check()?;
        let mut state = Self {
            spec,
            weights: Vec::new(),
            cached: None,
        };
        state.set_weights(weights)?;
        Ok(state)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<Tensor<T>>) -> Result<(), NnError> {
        let expected = self.spec.param_shapes();
        let actual: Vec<Vec<usize>> = weights.iter().map(|w| w.shape().to_vec()).collect();
        if expected != actual {
            return Err(NnError::ShapeMismatch {
                layer: self.spec.name.clone(),
                expected: format!("parameters {expected:?}"),
                actual: actual.concat(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    pub fn has_cache(&self) -> bool {
        self.cached.is_some()
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.forward_many(&[input])
    }

    /// Forward pass that caches its inputs for the next backward.
    pub fn forward_many(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
        let out = self.infer(inputs)?;
        self.cached = Some(inputs.iter().map(|t| (*t).clone()).collect());
        Ok(out)
    }

    /// Forward pass without caching (inference).
    pub fn infer(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
        if inputs.len() != self.spec.arity() {
            return Err(NnError::Arity {
                layer: self.spec.name.clone(),
                expected: self.spec.arity(),
                actual: inputs.len(),
            });
        }
        for t in inputs {
            if t.rank() == 0 {
                return Err(self.mismatch("a batched tensor", t));
            }
        }
        let per_sample: Vec<&[usize]> = inputs.iter().map(|t| &t.shape()[1..]).collect();
        let out_sample = self.spec.output_shape(&per_sample).map_err(|e| match e {
            NnError::ShapeMismatch { layer, expected, .. } => NnError::ShapeMismatch {
                layer,
                expected,
                actual: inputs[0].shape().to_vec(),
            },
            other => other,
        })?;
        let batch = inputs[0].batch();
        if inputs.iter().any(|t| t.batch() != batch) {
            return Err(self.mismatch(&format!("batch {batch} on every input"), inputs[1]));
        }
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&out_sample);

        let x = inputs[0];
        let out = match self.spec.kind {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => dense_forward(x.data(), &self.weights, batch, in_dim, out_dim),
            LayerKind::Relu => x
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
            LayerKind::Conv2d { stride, .. } => {
                conv_forward(x, &self.weights[0], &self.weights[1], stride, &out_shape)
            }
            LayerKind::MaxPool2d { window, stride } => {
                pool_forward(x, window, stride, &out_shape).0
            }
            LayerKind::Flatten => x.data().to_vec(),
            LayerKind::Concat { .. } => Tensor::concat_axis1(inputs)?.into_data(),
            LayerKind::SoftmaxCrossEntropy { .. } => {
                return Err(NnError::LossLayer {
                    layer: self.spec.name.clone(),
                })
            }
        };
        let out = Tensor::new(out_shape, out)?;
        self.finite(out)
    }

    /// Backward pass followed by an SGD update of this layer's parameters.
    /// Returns one gradient per forward input.
    pub fn backward(&mut self, upstream: &Tensor<T>, lr: T) -> Result<Vec<Tensor<T>>, NnError> {
        let grads = self.backward_grads(upstream)?;
        self.apply_update(&grads.params, lr)?;
        Ok(grads.inputs)
    }

    /// Backward pass without touching the parameters. Consumes the cache.
    pub fn backward_grads(&mut self, upstream: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        let inputs = self
            .cached
            .take()
            .ok_or_else(|| NnError::BackwardWithoutForward {
                layer: self.spec.name.clone(),
            })?;
        let x = &inputs[0];
        let batch = x.batch();
        let expected = {
            let refs: Vec<&Tensor<T>> = inputs.iter().collect();
            self.infer_shape(&refs)?
        };
        if upstream.shape() != expected.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: self.spec.name.clone(),
                expected: format!("upstream gradient {expected:?}"),
                actual: upstream.shape().to_vec(),
            });
        }
        let g = upstream.data();
        let grads = match self.spec.kind {
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias,
            } => {
                let w = self.weights[0].data();
                let xd = x.data();
                let mut dx = vec![T::zero(); batch * in_dim];
                let mut dw = vec![T::zero(); in_dim * out_dim];
                for b in 0..batch {
                    let grow = &g[b * out_dim..(b + 1) * out_dim];
                    let xrow = &xd[b * in_dim..(b + 1) * in_dim];
                    for i in 0..in_dim {
                        let wrow = &w[i * out_dim..(i + 1) * out_dim];
                        let mut acc = T::zero();
                        for o in 0..out_dim {
                            acc += grow[o] * wrow[o];
                        }
                        dx[b * in_dim + i] = acc;
                        let xi = xrow[i];
                        let dwrow = &mut dw[i * out_dim..(i + 1) * out_dim];
                        for o in 0..out_dim {
                            dwrow[o] += xi * grow[o];
                        }
                    }
                }
                let mut params = vec![Tensor::new(vec![in_dim, out_dim], dw)?];
                if bias {
                    let mut db = vec![T::zero(); out_dim];
                    for row in g.chunks(out_dim) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    params.push(Tensor::new(vec![out_dim], db)?);
                }
                Gradients {
                    inputs: vec![Tensor::new(x.shape().to_vec(), dx)?],
                    params,
                }
            }
            LayerKind::Relu => {
                let dx = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                Gradients {
                    inputs: vec![Tensor::new(x.shape().to_vec(), dx)?],
                    params: Vec::new(),
                }
            }
            LayerKind::Conv2d { stride, .. } => {
                let (dx, dw, db) = conv_backward(x, &self.weights[0], upstream, stride);
                Gradients {
                    inputs: vec![dx],
                    params: vec![dw, db],
                }
            }
            LayerKind::MaxPool2d { window, stride } => {
                let (_, argmax) = pool_forward(x, window, stride, upstream.shape());
                let mut dx = vec![T::zero(); x.numel()];
                for (src, gv) in argmax.iter().zip(g) {
                    dx[*src] += *gv;
                }
                Gradients {
                    inputs: vec![Tensor::new(x.shape().to_vec(), dx)?],
                    params: Vec::new(),
                }
            }
            LayerKind::Flatten => Gradients {
                inputs: vec![upstream.clone().reshape(x.shape().to_vec())?],
                params: Vec::new(),
            },
            LayerKind::Concat { .. } => {
                let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
                Gradients {
                    inputs: upstream.split_axis1(&widths)?,
                    params: Vec::new(),
                }
            }
            LayerKind::SoftmaxCrossEntropy { .. } => {
                return Err(NnError::LossLayer {
                    layer: self.spec.name.clone(),
                })
            }
        };
        if grads.inputs.iter().chain(&grads.params).any(|t| !t.is_finite()) {
            return Err(NnError::NonFinite {
                layer: self.spec.name.clone(),
            });
        }
        Ok(grads)
    }

    /// Applies `w <- w - lr * grad` to every parameter tensor.
    pub fn apply_update(&mut self, param_grads: &[Tensor<T>], lr: T) -> Result<(), NnError> {
        if param_grads.len() != self.weights.len()
            || param_grads
                .iter()
                .zip(&self.weights)
                .any(|(g, w)| g.shape() != w.shape())
        {
            return Err(NnError::ShapeMismatch {
                layer: self.spec.name.clone(),
                expected: format!("{} parameter gradient(s)", self.weights.len()),
                actual: param_grads.iter().flat_map(|g| g.shape().to_vec()).collect(),
            });
        }
        if lr == T::zero() {
            return Ok(());
        }
        for (w, g) in self.weights.iter_mut().zip(param_grads) {
            sgd_step(w, g, lr);
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(NnError::NonFinite {
                layer: self.spec.name.clone(),
            });
        }
        Ok(())
    }

    /// Loss and logits gradient for a `SoftmaxCrossEntropy` layer.
    pub fn loss_forward_backward(
        &self,
        logits: &Tensor<T>,
        labels: &[u16],
    ) -> Result<LossOutput<T>, NnError> {
        match self.spec.kind {
            LayerKind::SoftmaxCrossEntropy { num_classes } => {
                if logits.rank() != 2 || logits.shape()[1] != num_classes {
                    return Err(self.mismatch(&format!("[batch, {num_classes}]"), logits));
                }
                softmax_cross_entropy(&self.spec.name, logits, labels)
            }
            _ => Err(NnError::InvalidSpec {
                layer: self.spec.name.clone(),
                reason: "not a loss layer".into(),
            }),
        }
    }

    fn infer_shape(&self, inputs: &[&Tensor<T>]) -> Result<Vec<usize>, NnError> {
        let per_sample: Vec<&[usize]> = inputs.iter().map(|t| &t.shape()[1..]).collect();
        let mut shape = vec![inputs[0].batch()];
        shape.extend(self.spec.output_shape(&per_sample)?);
        Ok(shape)
    }

    fn mismatch(&self, expected: &str, got: &Tensor<T>) -> NnError {
        NnError::ShapeMismatch {
            layer: self.spec.name.clone(),
            expected: expected.to_string(),
            actual: got.shape().to_vec(),
        }
    }

    fn finite(&self, t: Tensor<T>) -> Result<Tensor<T>, NnError> {
        if t.is_finite() {
            Ok(t)
        } else {
            Err(NnError::NonFinite {
                layer: self.spec.name.clone(),
            })
        }
    }
}

fn dense_forward<T: Scalar>(
    x: &[T],
    weights: &[Tensor<T>],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Vec<T> {
    let w = weights[0].data();
    let mut out = match weights.get(1) {
        Some(b) => b.data().repeat(batch),
        None => vec![T::zero(); batch * out_dim],
    };
    for b in 0..batch {
        let orow = &mut out[b * out_dim..(b + 1) * out_dim];
        for i in 0..in_dim {
            let xi = x[b * in_dim + i];
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            for o in 0..out_dim {
                orow[o] += xi * wrow[o];
            }
        }
    }
    out
}

fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    out_shape: &[usize],
) -> Vec<T> {
    let [batch, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let (xd, wdata) = (x.data(), w.data());
    let mut out = vec![T::zero(); batch * cout * ho * wo];
    for b in 0..batch {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.data()[o];
                    for c in 0..cin {
                        for p in 0..kh {
                            let xrow = ((b * cin + c) * h + i * stride + p) * wd + j * stride;
                            let wrow = ((o * cin + c) * kh + p) * kw;
                            for q in 0..kw {
                                acc += wdata[wrow + q] * xd[xrow + q];
                            }
                        }
                    }
                    out[((b * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [batch, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (ho, wo) = (upstream.shape()[2], upstream.shape()[3]);
    let (xd, wdata, g) = (x.data(), w.data(), upstream.data());
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); cout];
    for b in 0..batch {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let gv = g[((b * cout + o) * ho + i) * wo + j];
                    db[o] += gv;
                    for c in 0..cin {
                        for p in 0..kh {
                            let xrow = ((b * cin + c) * h + i * stride + p) * wd + j * stride;
                            let wrow = ((o * cin + c) * kh + p) * kw;
                            for q in 0..kw {
                                dw[wrow + q] += gv * xd[xrow + q];
                                dx[xrow + q] += gv * wdata[wrow + q];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("input-shaped gradient"),
        Tensor::new(w.shape().to_vec(), dw).expect("weight-shaped gradient"),
        Tensor::new(vec![cout], db).expect("bias-shaped gradient"),
    )
}

/// Max pooling; also returns the flat input index chosen for each output.
fn pool_forward<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    out_shape: &[usize],
) -> (Vec<T>, Vec<usize>) {
    let [batch, ch, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let xd = x.data();
    let n = batch * ch * ho * wo;
    let (mut out, mut idx) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for plane in 0..batch * ch {
        let base = plane * h * wd;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + i * stride * wd + j * stride;
                for p in 0..window {
                    for q in 0..window {
                        let at = base + (i * stride + p) * wd + j * stride + q;
                        if xd[at] > xd[best] {
                            best = at;
                        }
                    }
                }
                out.push(xd[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut relu = LayerState::<f32>::init(LayerSpec::relu("r"), 0).unwrap();
        let out = relu.forward(&t(&[1, 3], &[-1.0, 2.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0, 0.0]);

        relu.forward(&t(&[1, 2], &[-1.0, 2.0])).unwrap();
        let g = relu.backward(&t(&[1, 2], &[5.0, 5.0]), 0.0).unwrap();
        assert_eq!(g[0].data(), &[0.0, 5.0]);
    }

    #[test]
    fn dense_dot_product() {
        let spec = LayerSpec::dense("d", 2, 1);
        let mut d =
            LayerState::with_weights(spec, vec![t(&[2, 1], &[1.0, 1.0]), t(&[1], &[0.0])]).unwrap();
        let out = d.forward(&t(&[1, 2], &[3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn dense_backward_and_update() {
        let spec = LayerSpec::new(
            "d",
            LayerKind::Dense {
                in_dim: 1,
                out_dim: 1,
                bias: false,
            },
        );
        let mut d = LayerState::with_weights(spec.clone(), vec![t(&[1, 1], &[2.0])]).unwrap();
        d.forward(&t(&[1, 1], &[3.0])).unwrap();
        let g = d.backward(&t(&[1, 1], &[1.0]), 0.0).unwrap();
        assert_eq!(g[0].data(), &[2.0]);
        assert_eq!(d.weights()[0].data(), &[2.0]);

        d.forward(&t(&[1, 1], &[3.0])).unwrap();
        d.backward(&t(&[1, 1], &[1.0]), 0.1).unwrap();
        assert!((d.weights()[0].data()[0] - 1.7).abs() < 1e-6);
    }

    #[test]
    fn concat_forward_and_backward_round_trip() {
        let mut cat = LayerState::<f32>::init(LayerSpec::concat("cat", 2), 0).unwrap();
        let a = t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let b = t(&[2, 6], &[10., 11., 12., 13., 14., 15., 16., 17., 18., 19., 20., 21.]);
        let out = cat.forward_many(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), &[2, 10]);
        assert_eq!(&out.data()[..10], &[1., 2., 3., 4., 10., 11., 12., 13., 14., 15.]);

        let upstream = out.clone();
        let parts = cat.backward(&upstream, 0.0).unwrap();
        assert_eq!(parts[0].shape(), &[2, 4]);
        assert_eq!(parts[1].shape(), &[2, 6]);
        let rejoined = Tensor::concat_axis1(&[&parts[0], &parts[1]]).unwrap();
        assert_eq!(rejoined, upstream);
    }

    #[test]
    fn backward_without_forward_is_misuse() {
        let mut relu = LayerState::<f32>::init(LayerSpec::relu("r"), 0).unwrap();
        let err = relu.backward(&t(&[1, 1], &[1.0]), 0.1).unwrap_err();
        assert_eq!(err, NnError::BackwardWithoutForward { layer: "r".into() });
    }

    #[test]
    fn cache_is_cleared_by_backward() {
        let mut d = LayerState::<f32>::init(LayerSpec::dense("d", 2, 2), 3).unwrap();
        assert!(!d.has_cache());
        d.forward(&t(&[1, 2], &[1.0, 1.0])).unwrap();
        assert!(d.has_cache());
        d.backward(&t(&[1, 2], &[1.0, 1.0]), 0.1).unwrap();
        assert!(!d.has_cache());
    }

    #[test]
    fn shape_mismatch_names_layer_and_shapes() {
        let mut d = LayerState::<f32>::init(LayerSpec::dense("fc", 3, 2), 3).unwrap();
        let err = d.forward(&t(&[2, 4], &[0.0; 8])).unwrap_err();
        assert_eq!(
            err,
            NnError::ShapeMismatch {
                layer: "fc".into(),
                expected: "[3]".into(),
                actual: vec![2, 4]
            }
        );
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = LayerState::<f32>::init(LayerSpec::dense("fc", 10, 6), 9).unwrap();
        let b = LayerState::<f32>::init(LayerSpec::dense("fc", 10, 6), 9).unwrap();
        assert_eq!(a, b);
        let bound = glorot_bound(10, 6) as f32;
        assert!(a.weights()[0].data().iter().all(|w| w.abs() <= bound));
        assert!(a.weights()[1].data().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn max_pool_routes_gradient_to_max() {
        let spec = LayerSpec::new("p", LayerKind::MaxPool2d { window: 2, stride: 2 });
        let mut p = LayerState::<f32>::init(spec, 0).unwrap();
        let x = t(&[1, 1, 2, 2], &[1.0, 4.0, 3.0, 2.0]);
        assert_eq!(p.forward(&x).unwrap().data(), &[4.0]);
        let g = p.backward(&t(&[1, 1, 1, 1], &[7.0]), 0.0).unwrap();
        assert_eq!(g[0].data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_layer_refuses_plain_forward() {
        let mut ce = LayerState::<f32>::init(LayerSpec::loss("ce", 2), 0).unwrap();
        assert!(matches!(
            ce.forward(&t(&[1, 2], &[0.0, 0.0])),
            Err(NnError::LossLayer { .. })
        ));
    }
}
