//! Affine-free batch normalization over (N, H, W) per channel.
//!
//! There is no learned scale/shift: the architectures count zero parameters
//! for every bn layer. Running statistics use the biased (population)
//! variance, the same quantity that normalizes the batch.

use super::{expect_rank, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct Saved {
    x_hat: Vec<f32>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f64,
    pub momentum: f64,
    saved: Option<Saved>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            saved: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        expect_rank("batch_norm", x, 4)?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm".into(),
                detail: format!("input has {c} channels, state has {}", self.channels()),
            });
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut out = Tensor::zeros(x.shape.clone());
        let mut inv_stds = vec![0.0f64; c];

        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for b in 0..n {
                        let p = &x.data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                        sum += p.iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut sq = 0.0f64;
                    for b in 0..n {
                        let p = &x.data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                        sq += p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
                    }
                    let var = sq / count;
                    self.running_mean[ch] = ((1.0 - self.momentum) * self.running_mean[ch] as f64
                        + self.momentum * mean) as f32;
                    self.running_var[ch] = ((1.0 - self.momentum) * self.running_var[ch] as f64
                        + self.momentum * var) as f32;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch] as f64, self.running_var[ch] as f64),
            };
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_stds[ch] = inv_std;
            for b in 0..n {
                let src = &x.data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                let dst = &mut out.data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = ((v as f64 - mean) * inv_std) as f32;
                }
            }
        }
        self.saved = Some(Saved {
            x_hat: out.data.clone(),
            inv_std: inv_stds,
            shape: x.shape.clone(),
            mode,
        });
        Ok(out)
    }

    /// Gradient w.r.t. the input of the last forward call.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let saved = self.saved.take().ok_or_else(|| Error::ShapeMismatch {
            op: "batch_norm_backward".into(),
            detail: "no saved forward state".into(),
        })?;
        if grad_out.shape != saved.shape {
            return Err(Error::ShapeMismatch {
                op: "batch_norm_backward".into(),
                detail: format!(
                    "grad_out shape {:?} does not match forward shape {:?}",
                    grad_out.shape, saved.shape
                ),
            });
        }
        let (n, c, h, w) = (
            saved.shape[0],
            saved.shape[1],
            saved.shape[2],
            saved.shape[3],
        );
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut grad_in = Tensor::zeros(saved.shape.clone());

        for ch in 0..c {
            let inv_std = saved.inv_std[ch];
            match saved.mode {
                // batch statistics depend on x: full normalization backward
                Mode::Train => {
                    let mut g_sum = 0.0f64;
                    let mut gx_sum = 0.0f64;
                    for b in 0..n {
                        let base = (b * c + ch) * plane;
                        for k in 0..plane {
                            let g = grad_out.data[base + k] as f64;
                            g_sum += g;
                            gx_sum += g * saved.x_hat[base + k] as f64;
                        }
                    }
                    let g_mean = g_sum / count;
                    let gx_mean = gx_sum / count;
                    for b in 0..n {
                        let base = (b * c + ch) * plane;
                        for k in 0..plane {
                            let g = grad_out.data[base + k] as f64;
                            let xh = saved.x_hat[base + k] as f64;
                            grad_in.data[base + k] = (inv_std * (g - g_mean - xh * gx_mean)) as f32;
                        }
                    }
                }
                // running statistics are constants w.r.t. x
                Mode::Eval => {
                    for b in 0..n {
                        let base = (b * c + ch) * plane;
                        for k in 0..plane {
                            grad_in.data[base + k] =
                                (grad_out.data[base + k] as f64 * inv_std) as f32;
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}
