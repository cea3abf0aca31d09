use crate::metering::ResourceLedger;
use crate::nn::{flops, Direction, LayerSpec, LayerState, NnError, ShapedLayer};
use crate::Tensor32;

/// A segment's layers as held by one role.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SegmentRt {
    pub layers: Vec<LayerState<f32>>,
    pub shaped: Vec<ShapedLayer>,
}

pub(crate) struct LossStep {
    pub loss: f32,
    pub correct: usize,
    /// Gradients with respect to the segment inputs.
    pub input_grads: Vec<Tensor32>,
}

impl SegmentRt {
    pub fn init(specs: &[LayerSpec], shaped: Vec<ShapedLayer>, seed: u64) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .map(|s| LayerState::init(s.clone(), seed))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, shaped })
    }

    fn body_len(&self) -> usize {
        match self.layers.last() {
            Some(l) if l.spec().is_loss() => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    fn charge(&self, range: std::ops::Range<usize>, batch: usize, dir: Direction, ledger: &mut ResourceLedger) {
        for l in &self.shaped[range] {
            ledger.add_flops(dir, flops(l, batch, dir));
        }
    }

    /// Forward through every layer except a trailing loss, caching for backward.
    pub fn forward(&mut self, inputs: &[Tensor32], ledger: &mut ResourceLedger) -> Result<Tensor32, NnError> {
        let batch = inputs[0].batch();
        let n = self.body_len();
        let mut x = if self.layers[0].spec().is_concat() {
            let refs: Vec<&Tensor32> = inputs.iter().collect();
            self.layers[0].forward_many(&refs)?
        } else {
            self.layers[0].forward(&inputs[0])?
        };
        for layer in &mut self.layers[1..n] {
            x = layer.forward(&x)?;
        }
        self.charge(0..n, batch, Direction::Forward, ledger);
        Ok(x)
    }

    /// Backward with update through every layer except a trailing loss.
    pub fn backward(
        &mut self,
        upstream: Tensor32,
        lr: f32,
        ledger: &mut ResourceLedger,
    ) -> Result<Vec<Tensor32>, NnError> {
        let batch = upstream.batch();
        let n = self.body_len();
        let mut g = vec![upstream];
        for layer in self.layers[..n].iter_mut().rev() {
            g = layer.backward(&g[0], lr)?;
        }
        self.charge(0..n, batch, Direction::Backward, ledger);
        Ok(g)
    }

    /// Forward, loss, and backward with update for a segment ending in the loss.
    pub fn train_with_loss(
        &mut self,
        inputs: &[Tensor32],
        labels: &[u16],
        lr: f32,
        ledger: &mut ResourceLedger,
    ) -> Result<LossStep, NnError> {
        let batch = inputs[0].batch();
        let n = self.body_len();
        let logits = self.forward(inputs, ledger)?;
        let out = self.layers[n].loss_forward_backward(&logits, labels)?;
        self.charge(n..n + 1, batch, Direction::Forward, ledger);
        self.charge(n..n + 1, batch, Direction::Backward, ledger);
        let input_grads = self.backward(out.grad, lr, ledger)?;
        Ok(LossStep {
            loss: out.loss,
            correct: out.correct,
            input_grads,
        })
    }

    /// Forward-only pass through the body, no caching.
    pub fn infer(&self, inputs: &[Tensor32]) -> Result<Tensor32, NnError> {
        let n = self.body_len();
        let refs: Vec<&Tensor32> = inputs.iter().collect();
        let mut x = self.layers[0].infer(&refs)?;
        for layer in &self.layers[1..n] {
            x = layer.infer(&[&x])?;
        }
        Ok(x)
    }

    /// Loss and correct count for a loss-terminated segment, no caching.
    pub fn infer_loss(&self, inputs: &[Tensor32], labels: &[u16]) -> Result<(f32, usize), NnError> {
        let logits = self.infer(inputs)?;
        let out = self.layers[self.body_len()].loss_forward_backward(&logits, labels)?;
        Ok((out.loss, out.correct))
    }

    pub fn weights(&self) -> Vec<Tensor32> {
        self.layers
            .iter()
            .flat_map(|l| l.weights().iter().cloned())
            .collect()
    }

    pub fn param_tensor_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_shapes().len()).sum()
    }

    pub fn set_weights(&mut self, weights: Vec<Tensor32>) -> Result<(), NnError> {
        crate::nn::set_flat_weights(&mut self.layers, weights)
    }
}
