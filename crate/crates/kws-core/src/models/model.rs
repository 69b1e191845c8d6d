//! Built models: parameter tensors wired into explicit forward and backward
//! passes over the nn ops.

use super::ArchSpec;
use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::nn::{
    add, avg_pool, avg_pool_backward, conv2d, conv2d_backward, global_avg_pool,
    global_avg_pool_backward, kaiming_normal, linear_softmax, linear_softmax_xent,
    linear_softmax_xent_backward, relu, relu_backward, BatchNorm2d, Mode, Tensor,
};
use crate::rng;

pub const N_OUTPUT_CLASSES: usize = 12;

/// Stack feature matrices into an (N, 1, T, F) input tensor.
pub fn batch_to_tensor(feats: &[&FeatureMatrix]) -> Result<Tensor> {
    let first = feats.first().ok_or(Error::EmptyBuffer)?;
    let (t, f) = (first.n_frames, first.n_coeffs);
    let mut data = Vec::with_capacity(feats.len() * t * f);
    for m in feats {
        if m.n_frames != t || m.n_coeffs != f {
            return Err(Error::ShapeMismatch {
                op: "batch_to_tensor",
                detail: format!(
                    "feature matrix {}x{} in a batch of {t}x{f}",
                    m.n_frames, m.n_coeffs
                ),
            });
        }
        data.extend_from_slice(&m.values);
    }
    Ok(Tensor::new(vec![feats.len(), 1, t, f], data))
}

#[derive(Debug, Clone)]
struct ConvLayer {
    name: String,
    weights: Tensor,
    dilation: (usize, usize),
    saved_input: Option<Tensor>,
}

impl ConvLayer {
    fn forward(&mut self, x: &Tensor, save: bool) -> Result<Tensor> {
        let out = conv2d(x, &self.weights, self.dilation)?;
        self.saved_input = if save { Some(x.clone()) } else { None };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.saved_input.take().ok_or(Error::ShapeMismatch {
            op: "conv_backward",
            detail: format!("'{}' has no saved forward input", self.name),
        })?;
        let (gi, gw) = conv2d_backward(grad_out, &input, &self.weights, self.dilation)?;
        self.weights.accumulate_grad(&gw.data);
        Ok(gi)
    }

    fn param(&mut self) -> (&str, &mut Tensor) {
        let Self { name, weights, .. } = self;
        (name.as_str(), weights)
    }
}

/// conv -> relu -> bn, twice, with the identity added after the second bn
/// and no activation after the join.
#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: ConvLayer,
    bn1: BatchNorm2d,
    conv2: ConvLayer,
    bn2: BatchNorm2d,
    saved_c1: Option<Tensor>,
    saved_c2: Option<Tensor>,
}

impl ResidualBlock {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let train = mode == Mode::Train;
        let c1 = self.conv1.forward(x, train)?;
        let r1 = relu(&c1);
        self.saved_c1 = train.then_some(c1);
        let b1 = self.bn1.forward(&r1, mode)?;
        let c2 = self.conv2.forward(&b1, train)?;
        let r2 = relu(&c2);
        self.saved_c2 = train.then_some(c2);
        let b2 = self.bn2.forward(&r2, mode)?;
        add(&b2, x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let missing = || Error::ShapeMismatch {
            op: "block_backward",
            detail: "no saved forward state".into(),
        };
        let g_r2 = self.bn2.backward(grad_out)?;
        let c2 = self.saved_c2.take().ok_or_else(missing)?;
        let g_c2 = relu_backward(&g_r2, &c2);
        let g_b1 = self.conv2.backward(&g_c2)?;
        let g_r1 = self.bn1.backward(&g_b1)?;
        let c1 = self.saved_c1.take().ok_or_else(missing)?;
        let g_c1 = relu_backward(&g_r1, &c1);
        let g_x = self.conv1.backward(&g_c1)?;
        // identity path: grad_out flows to x unchanged
        add(&g_x, grad_out)
    }
}

#[derive(Debug, Clone)]
struct SavedForward {
    pool_in_shape: Option<Vec<usize>>,
    gap_in_shape: Vec<usize>,
    head_in: Tensor,
    probs: Tensor,
    labels: Vec<usize>,
}

/// One architecture instance: parameters plus batch-norm state.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ArchSpec,
    stem: ConvLayer,
    blocks: Vec<ResidualBlock>,
    tail: Option<(ConvLayer, BatchNorm2d)>,
    softmax_w: Tensor,
    saved: Option<SavedForward>,
}

impl Model {
    /// Deterministically initialize a model: conv weights are Kaiming
    /// fan-in normal from per-layer derived streams, softmax weights zero.
    pub fn build(spec: &ArchSpec, seed: u64) -> Model {
        let n = spec.n_feature_maps;
        let mut layer = 0u64;
        let mut next_conv = |name: String, c_in: usize, d: usize| {
            let mut rng = rng::derived(seed, "init", &[layer]);
            layer += 1;
            ConvLayer {
                name,
                weights: kaiming_normal(vec![n, c_in, 3, 3], &mut rng),
                dilation: (d, d),
                saved_input: None,
            }
        };

        let stem = next_conv("stem".into(), 1, 1);
        let mut blocks = Vec::with_capacity(spec.n_res_blocks);
        for b in 0..spec.n_res_blocks {
            let conv1 = next_conv(format!("block{b}.conv1"), n, spec.dilation_of_layer(2 * b));
            let conv2 = next_conv(
                format!("block{b}.conv2"),
                n,
                spec.dilation_of_layer(2 * b + 1),
            );
            blocks.push(ResidualBlock {
                conv1,
                bn1: BatchNorm2d::new(n),
                conv2,
                bn2: BatchNorm2d::new(n),
                saved_c1: None,
                saved_c2: None,
            });
        }
        let tail = spec
            .dilation_enabled
            .then(|| (next_conv("tail.conv".into(), n, 16), BatchNorm2d::new(n)));
        let softmax_w = Tensor::zeros(vec![n, N_OUTPUT_CLASSES]);
        Model {
            spec: spec.clone(),
            stem,
            blocks,
            tail,
            softmax_w,
            saved: None,
        }
    }

    fn body(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Vec<usize>>, Vec<usize>)> {
        let train = mode == Mode::Train;
        let mut cur = self.stem.forward(x, train)?;
        let mut pool_in_shape = None;
        if let Some(window) = self.spec.front_pool {
            pool_in_shape = Some(cur.shape.clone());
            cur = avg_pool(&cur, window)?;
        }
        for block in &mut self.blocks {
            cur = block.forward(&cur, mode)?;
        }
        if let Some((conv, bn)) = &mut self.tail {
            let c = conv.forward(&cur, train)?;
            cur = bn.forward(&c, mode)?;
        }
        let gap_in_shape = cur.shape.clone();
        let pooled = global_avg_pool(&cur)?;
        Ok((pooled, pool_in_shape, gap_in_shape))
    }

    /// Training-mode forward: returns (mean cross-entropy, probabilities)
    /// and saves everything the backward pass needs.
    pub fn forward_train(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let (pooled, pool_in_shape, gap_in_shape) = self.body(x, Mode::Train)?;
        let (loss, probs) = linear_softmax_xent(&pooled, &self.softmax_w, labels)?;
        self.saved = Some(SavedForward {
            pool_in_shape,
            gap_in_shape,
            head_in: pooled,
            probs: probs.clone(),
            labels: labels.to_vec(),
        });
        Ok((loss, probs))
    }

    /// Inference: batch-norm running statistics, nothing saved.
    pub fn forward_eval(&mut self, x: &Tensor) -> Result<Tensor> {
        let (pooled, _, _) = self.body(x, Mode::Eval)?;
        linear_softmax(&pooled, &self.softmax_w)
    }

    /// Backpropagate from the last forward_train, accumulating parameter
    /// gradients in place.
    pub fn backward(&mut self) -> Result<()> {
        let saved = self.saved.take().ok_or(Error::ShapeMismatch {
            op: "model_backward",
            detail: "no saved forward state; call forward_train first".into(),
        })?;
        let (g_head, g_w) = linear_softmax_xent_backward(
            &saved.probs,
            &saved.head_in,
            &self.softmax_w,
            &saved.labels,
        );
        self.softmax_w.accumulate_grad(&g_w.data);
        let mut g = global_avg_pool_backward(&g_head, &saved.gap_in_shape);
        if let Some((conv, bn)) = &mut self.tail {
            let g_c = bn.backward(&g)?;
            g = conv.backward(&g_c)?;
        }
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        if let Some(shape) = &saved.pool_in_shape {
            g = avg_pool_backward(&g, shape, self.spec.front_pool.unwrap());
        }
        self.stem.backward(&g)?;
        Ok(())
    }

    /// All trainable tensors in a fixed order (the optimizer's velocity
    /// order and the checkpoint order).
    pub fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 + 2 * self.blocks.len());
        out.push(self.stem.param());
        for block in &mut self.blocks {
            out.push(block.conv1.param());
            out.push(block.conv2.param());
        }
        if let Some((conv, _)) = &mut self.tail {
            out.push(conv.param());
        }
        out.push(("softmax", &mut self.softmax_w));
        out
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 + 2 * self.blocks.len());
        out.push((self.stem.name.clone(), &self.stem.weights));
        for block in &self.blocks {
            out.push((block.conv1.name.clone(), &block.conv1.weights));
            out.push((block.conv2.name.clone(), &block.conv2.weights));
        }
        if let Some((conv, _)) = &self.tail {
            out.push((conv.name.clone(), &conv.weights));
        }
        out.push(("softmax".into(), &self.softmax_w));
        out
    }

    pub fn bn_layers_mut(&mut self) -> Vec<(String, &mut BatchNorm2d)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.bn1"), &mut block.bn1));
            out.push((format!("block{i}.bn2"), &mut block.bn2));
        }
        if let Some((_, bn)) = &mut self.tail {
            out.push(("tail.bn".into(), bn));
        }
        out
    }

    pub fn bn_layers(&self) -> Vec<(String, &BatchNorm2d)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.bn1"), &block.bn1));
            out.push((format!("block{i}.bn2"), &block.bn2));
        }
        if let Some((_, bn)) = &self.tail {
            out.push(("tail.bn".into(), bn));
        }
        out
    }

    pub fn n_params(&self) -> u64 {
        self.params().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.clear_grad();
        }
    }
}
