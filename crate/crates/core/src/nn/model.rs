use super::layer::LayerState;
use super::spec::LayerSpec;
use super::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub loss: T,
    pub correct: usize,
    pub batch: usize,
}

/// How gradients arriving at one tensor from several consumers are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMerge {
    #[default]
    Sum,
    Mean,
}

impl GradMerge {
    /// Combines gradients in the order given. The mean accumulates in f64
    /// and divides once, so equal terms average to themselves exactly.
    pub fn merge<T: Scalar>(self, grads: &[Tensor<T>]) -> Tensor<T> {
        let mut acc = grads[0].clone();
        match self {
            GradMerge::Sum => {
                for g in &grads[1..] {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *v;
                    }
                }
            }
            GradMerge::Mean => {
                let k = grads.len() as f64;
                for (i, a) in acc.data_mut().iter_mut().enumerate() {
                    let sum: f64 = grads.iter().map(|g| g.data()[i].to_f64_lossless()).sum();
                    *a = T::from_f64_lossy(sum / k);
                }
            }
        }
        acc
    }
}

fn init_layers<T: Scalar>(specs: &[LayerSpec], seed: u64) -> Result<Vec<LayerState<T>>, NnError> {
    specs
        .iter()
        .map(|s| LayerState::init(s.clone(), seed))
        .collect()
}

fn forward_chain<T: Scalar>(
    layers: &mut [LayerState<T>],
    mut x: Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    for layer in layers {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

fn backward_chain<T: Scalar>(
    layers: &mut [LayerState<T>],
    mut g: Tensor<T>,
    lr: T,
) -> Result<Tensor<T>, NnError> {
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&g, lr)?.swap_remove(0);
    }
    Ok(g)
}

/// A chain of layers ending in a softmax cross-entropy loss, trained on one
/// machine. The reference every split placement is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    layers: Vec<LayerState<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        Self::from_layers(init_layers(specs, seed)?)
    }

    pub fn from_layers(layers: Vec<LayerState<T>>) -> Result<Self, NnError> {
        match layers.last() {
            Some(last) if last.spec().is_loss() => Ok(Self { layers }),
            Some(last) => Err(NnError::InvalidSpec {
                layer: last.name().to_string(),
                reason: "a network must end with a softmax cross-entropy layer".into(),
            }),
            None => Err(NnError::InvalidSpec {
                layer: String::new(),
                reason: "empty network".into(),
            }),
        }
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    fn split_loss(&mut self) -> (&mut [LayerState<T>], &LayerState<T>) {
        let n = self.layers.len() - 1;
        let (body, loss) = self.layers.split_at_mut(n);
        (body, &loss[0])
    }

    /// One forward + backward + SGD update over a batch.
    pub fn train_step(
        &mut self,
        x: &Tensor<T>,
        labels: &[u16],
        lr: T,
    ) -> Result<StepOutcome<T>, NnError> {
        let (body, loss_layer) = self.split_loss();
        let logits = forward_chain(body, x.clone())?;
        let out = loss_layer.loss_forward_backward(&logits, labels)?;
        backward_chain(body, out.grad, lr)?;
        Ok(StepOutcome {
            loss: out.loss,
            correct: out.correct,
            batch: labels.len(),
        })
    }

    /// Parameter gradients per layer, without updating anything.
    pub fn gradients(
        &mut self,
        x: &Tensor<T>,
        labels: &[u16],
    ) -> Result<(StepOutcome<T>, Vec<Vec<Tensor<T>>>), NnError> {
        let (body, loss_layer) = self.split_loss();
        let logits = forward_chain(body, x.clone())?;
        let out = loss_layer.loss_forward_backward(&logits, labels)?;
        let mut g = out.grad;
        let mut per_layer = vec![Vec::new(); body.len() + 1];
        for (i, layer) in body.iter_mut().enumerate().rev() {
            let grads = layer.backward_grads(&g)?;
            per_layer[i] = grads.params;
            g = grads.inputs.into_iter().next().expect("one input gradient");
        }
        let outcome = StepOutcome {
            loss: out.loss,
            correct: out.correct,
            batch: labels.len(),
        };
        Ok((outcome, per_layer))
    }

    pub fn apply_gradients(&mut self, grads: &[Vec<Tensor<T>>], lr: T) -> Result<(), NnError> {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.apply_update(g, lr)?;
        }
        Ok(())
    }

    /// Loss and correct count without caching or updates.
    pub fn evaluate(&self, x: &Tensor<T>, labels: &[u16]) -> Result<StepOutcome<T>, NnError> {
        let (body, loss_layer) = self.layers.split_at(self.layers.len() - 1);
        let mut h = x.clone();
        for layer in body {
            h = layer.infer(&[&h])?;
        }
        let out = loss_layer[0].loss_forward_backward(&h, labels)?;
        Ok(StepOutcome {
            loss: out.loss,
            correct: out.correct,
            batch: labels.len(),
        })
    }

    /// All parameter tensors, layer by layer.
    pub fn weights(&self) -> Vec<Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| l.weights().iter().cloned())
            .collect()
    }

    pub fn set_weights(&mut self, weights: Vec<Tensor<T>>) -> Result<(), NnError> {
        set_flat_weights(&mut self.layers, weights)
    }
}

/// Distributes a flat parameter list over layers in order.
pub(crate) fn set_flat_weights<T: Scalar>(
    layers: &mut [LayerState<T>],
    weights: Vec<Tensor<T>>,
) -> Result<(), NnError> {
    let total: usize = layers.iter().map(|l| l.spec().param_shapes().len()).sum();
    if total != weights.len() {
        return Err(NnError::InvalidSpec {
            layer: layers.first().map(|l| l.name().to_string()).unwrap_or_default(),
            reason: format!("expected {total} parameter tensors, got {}", weights.len()),
        });
    }
    let mut it = weights.into_iter();
    for layer in layers {
        let n = layer.spec().param_shapes().len();
        layer.set_weights(it.by_ref().take(n).collect())?;
    }
    Ok(())
}

/// Several input branches joined by a concat at the start of every head;
/// each head ends in its own loss. Branch gradients from all heads are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedNet<T> {
    branches: Vec<Vec<LayerState<T>>>,
    heads: Vec<Vec<LayerState<T>>>,
    merge: GradMerge,
}

impl<T: Scalar> BranchedNet<T> {
    pub fn init(
        branches: &[Vec<LayerSpec>],
        heads: &[Vec<LayerSpec>],
        merge: GradMerge,
        seed: u64,
    ) -> Result<Self, NnError> {
        let branches: Vec<_> = branches
            .iter()
            .map(|b| init_layers(b, seed))
            .collect::<Result<_, _>>()?;
        let heads: Vec<Vec<LayerState<T>>> = heads
            .iter()
            .map(|h| init_layers(h, seed))
            .collect::<Result<_, _>>()?;
        for head in &heads {
            let ok = head.len() >= 2
                && head[0].spec().is_concat()
                && head[0].spec().arity() == branches.len()
                && head.last().is_some_and(|l| l.spec().is_loss());
            if !ok {
                return Err(NnError::InvalidSpec {
                    layer: head.first().map(|l| l.name().to_string()).unwrap_or_default(),
                    reason: format!(
                        "a head must start with a concat of {} inputs and end with a loss",
                        branches.len()
                    ),
                });
            }
        }
        Ok(Self {
            branches,
            heads,
            merge,
        })
    }

    pub fn branches(&self) -> &[Vec<LayerState<T>>] {
        &self.branches
    }

    pub fn heads(&self) -> &[Vec<LayerState<T>>] {
        &self.heads
    }

    /// One joint step: `inputs[i]` feeds branch `i`, `labels[h]` supervises head `h`.
    pub fn train_step(
        &mut self,
        inputs: &[Tensor<T>],
        labels: &[&[u16]],
        lr: T,
    ) -> Result<Vec<StepOutcome<T>>, NnError> {
        let outs: Vec<Tensor<T>> = self
            .branches
            .iter_mut()
            .zip(inputs)
            .map(|(b, x)| forward_chain(b, x.clone()))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor<T>> = outs.iter().collect();

        let mut outcomes = Vec::with_capacity(self.heads.len());
        let mut per_branch: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.branches.len()];
        for (head, task_labels) in self.heads.iter_mut().zip(labels) {
            let n = head.len() - 1;
            let (body, loss) = head.split_at_mut(n);
            let (concat, rest) = body.split_at_mut(1);
            let joined = concat[0].forward_many(&refs)?;
            let logits = forward_chain(rest, joined)?;
            let out = loss[0].loss_forward_backward(&logits, task_labels)?;
            let g = backward_chain(rest, out.grad, lr)?;
            for (slot, piece) in per_branch.iter_mut().zip(concat[0].backward(&g, lr)?) {
                slot.push(piece);
            }
            outcomes.push(StepOutcome {
                loss: out.loss,
                correct: out.correct,
                batch: task_labels.len(),
            });
        }
        for (branch, grads) in self.branches.iter_mut().zip(per_branch) {
            backward_chain(branch, self.merge.merge(&grads), lr)?;
        }
        Ok(outcomes)
    }

    pub fn evaluate(
        &self,
        inputs: &[Tensor<T>],
        labels: &[&[u16]],
    ) -> Result<Vec<StepOutcome<T>>, NnError> {
        let mut outs = Vec::with_capacity(inputs.len());
        for (branch, x) in self.branches.iter().zip(inputs) {
            let mut h = x.clone();
            for layer in branch {
                h = layer.infer(&[&h])?;
            }
            outs.push(h);
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        self.heads
            .iter()
            .zip(labels)
            .map(|(head, task_labels)| {
                let mut h = head[0].infer(&refs)?;
                for layer in &head[1..head.len() - 1] {
                    h = layer.infer(&[&h])?;
                }
                let out = head[head.len() - 1].loss_forward_backward(&h, task_labels)?;
                Ok(StepOutcome {
                    loss: out.loss,
                    correct: out.correct,
                    batch: task_labels.len(),
                })
            })
            .collect()
    }
}
