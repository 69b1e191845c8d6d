//! Elementwise and pooling ops: relu, residual add, windowed and global
//! average pooling.

use super::{expect_rank, Tensor};
use crate::error::{Error, Result};

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Pass-through where the forward input was positive; zero subgradient at 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    debug_assert_eq!(grad_out.shape, input.shape);
    let data = grad_out
        .data
        .iter()
        .zip(&input.data)
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape.clone(), data)
}

/// Elementwise sum (the residual join).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op: "add".into(),
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::new(a.shape.clone(), data))
}

pub fn pool_out_dim(dim: usize, window: usize) -> usize {
    dim.div_ceil(window)
}

/// Non-overlapping average pooling. Partial windows at the bottom/right
/// borders are truncated: the average runs over the in-range elements only,
/// so output dims are ceil(H/ph) x ceil(W/pw).
pub fn avg_pool(x: &Tensor, window: (usize, usize)) -> Result<Tensor> {
    expect_rank("avg_pool", x, 4)?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ph, pw) = window;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::ShapeMismatch {
            op: "avg_pool".into(),
            detail: format!("window {ph}x{pw} invalid for input {h}x{w}"),
        });
    }
    let (oh, ow) = (pool_out_dim(h, ph), pool_out_dim(w, pw));
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for img in 0..n * c {
        let src = &x.data[img * h * w..(img + 1) * h * w];
        let dst = &mut out.data[img * oh * ow..(img + 1) * oh * ow];
        for oy in 0..oh {
            let y1 = ((oy + 1) * ph).min(h);
            for ox in 0..ow {
                let x1 = ((ox + 1) * pw).min(w);
                let mut acc = 0.0f64;
                for y in oy * ph..y1 {
                    for xx in ox * pw..x1 {
                        acc += src[y * w + xx] as f64;
                    }
                }
                let count = (y1 - oy * ph) * (x1 - ox * pw);
                dst[oy * ow + ox] = (acc / count as f64) as f32;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward(
    grad_out: &Tensor,
    input_shape: &[usize],
    window: (usize, usize),
) -> Tensor {
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (ph, pw) = window;
    let (oh, ow) = (pool_out_dim(h, ph), pool_out_dim(w, pw));
    debug_assert_eq!(grad_out.shape, vec![n, c, oh, ow]);
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    for img in 0..n * c {
        let gout = &grad_out.data[img * oh * ow..(img + 1) * oh * ow];
        let gin = &mut grad_in.data[img * h * w..(img + 1) * h * w];
        for oy in 0..oh {
            let y1 = ((oy + 1) * ph).min(h);
            for ox in 0..ow {
                let x1 = ((ox + 1) * pw).min(w);
                let count = (y1 - oy * ph) * (x1 - ox * pw);
                let g = gout[oy * ow + ox] / count as f32;
                for y in oy * ph..y1 {
                    for xx in ox * pw..x1 {
                        gin[y * w + xx] += g;
                    }
                }
            }
        }
    }
    grad_in
}

/// Reduce (N, C, H, W) to (N, C) by averaging each feature map.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", x, 4)?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let mut out = Tensor::zeros(vec![n, c]);
    for (i, o) in out.data.iter_mut().enumerate() {
        let src = &x.data[i * plane..(i + 1) * plane];
        let acc: f64 = src.iter().map(|&v| v as f64).sum();
        *o = (acc / plane as f64) as f32;
    }
    Ok(out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let plane = input_shape[2] * input_shape[3];
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    for (i, &g) in grad_out.data.iter().enumerate() {
        let v = g / plane as f32;
        for slot in &mut grad_in.data[i * plane..(i + 1) * plane] {
            *slot = v;
        }
    }
    grad_in
}
