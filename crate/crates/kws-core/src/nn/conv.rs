//! Bias-free 3x3 convolution with dilation and same-padding, plus its
//! backward pass. The reduction for every output element runs in a fixed
//! order with f64 accumulation; parallelism only splits disjoint outputs.

use rayon::prelude::*;

use super::{expect_rank, Tensor};
use crate::error::{Error, Result};

const K: usize = 3;

/// Valid output coordinates `lo..hi` such that `coord + offset` stays inside
/// `0..dim`.
#[inline]
fn tap_range(dim: usize, offset: isize) -> (usize, usize) {
    let lo = if offset < 0 { (-offset) as usize } else { 0 };
    let hi = if offset > 0 {
        dim.saturating_sub(offset as usize)
    } else {
        dim
    };
    (lo, hi)
}

fn check_shapes(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    dilation: (usize, usize),
) -> Result<()> {
    expect_rank(op, input, 4)?;
    expect_rank(op, weights, 4)?;
    if weights.dim(2) != K || weights.dim(3) != K {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("kernel must be {K}x{K}, got {:?}", &weights.shape[2..]),
        });
    }
    if input.dim(1) != weights.dim(1) {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "input channels (dim 1) = {} but weights expect {}",
                input.dim(1),
                weights.dim(1)
            ),
        });
    }
    if dilation.0 == 0 || dilation.1 == 0 {
        return Err(Error::ShapeMismatch {
            op,
            detail: "dilation must be >= 1".into(),
        });
    }
    Ok(())
}

/// Same-padded dilated convolution:
/// out[n,o,y,x] = sum over c,i,j of w[o,c,i,j] * in[n,c, y+(i-1)dh, x+(j-1)dw],
/// out-of-range taps reading zero.
pub fn conv2d(input: &Tensor, weights: &Tensor, dilation: (usize, usize)) -> Result<Tensor> {
    check_shapes("conv2d", input, weights, dilation)?;
    let (n_batch, c_in, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let o_out = weights.dim(0);
    let (dh, dw) = (dilation.0 as isize, dilation.1 as isize);
    let plane = h * w;

    let mut out = Tensor::zeros(vec![n_batch, o_out, h, w]);
    out.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, out_plane)| {
            let (n, o) = (idx / o_out, idx % o_out);
            let in_base = n * c_in * plane;
            let w_base = o * c_in * K * K;
            let mut acc = vec![0.0f64; plane];
            for c in 0..c_in {
                let in_plane = &input.data[in_base + c * plane..in_base + (c + 1) * plane];
                for i in 0..K {
                    let dy = (i as isize - 1) * dh;
                    let (y0, y1) = tap_range(h, dy);
                    if y0 >= y1 {
                        continue;
                    }
                    for j in 0..K {
                        let dx = (j as isize - 1) * dw;
                        let (x0, x1) = tap_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let wt = weights.data[w_base + c * K * K + i * K + j] as f64;
                        if wt == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let src =
                                ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                            let src_row = &in_plane[src..src + (x1 - x0)];
                            let acc_row = &mut acc[y * w + x0..y * w + x1];
                            for (a, &v) in acc_row.iter_mut().zip(src_row) {
                                *a += wt * v as f64;
                            }
                        }
                    }
                }
            }
            for (o_val, a) in out_plane.iter_mut().zip(&acc) {
                *o_val = *a as f32;
            }
        });
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. the convolution input and weights.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    dilation: (usize, usize),
) -> Result<(Tensor, Tensor)> {
    check_shapes("conv2d_backward", input, weights, dilation)?;
    let (n_batch, c_in, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let o_out = weights.dim(0);
    if grad_out.shape != [n_batch, o_out, h, w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward".into(),
            detail: format!(
                "grad_out shape {:?} does not match output shape [{n_batch}, {o_out}, {h}, {w}]",
                grad_out.shape
            ),
        });
    }
    let (dh, dw) = (dilation.0 as isize, dilation.1 as isize);
    let plane = h * w;

    // d loss / d input: out[y,x] consumed in[y+dy, x+dx], so grad flows back
    // along the same tap ranges, scattering instead of gathering.
    let mut grad_input = Tensor::zeros(input.shape.clone());
    grad_input
        .data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, gin_plane)| {
            let (n, c) = (idx / c_in, idx % c_in);
            let gout_base = n * o_out * plane;
            let mut acc = vec![0.0f64; plane];
            for o in 0..o_out {
                let gout_plane = &grad_out.data[gout_base + o * plane..gout_base + (o + 1) * plane];
                let w_base = o * c_in * K * K + c * K * K;
                for i in 0..K {
                    let dy = (i as isize - 1) * dh;
                    let (y0, y1) = tap_range(h, dy);
                    if y0 >= y1 {
                        continue;
                    }
                    for j in 0..K {
                        let dx = (j as isize - 1) * dw;
                        let (x0, x1) = tap_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let wt = weights.data[w_base + i * K + j] as f64;
                        if wt == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let dst =
                                ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                            let gout_row = &gout_plane[y * w + x0..y * w + x1];
                            let acc_row = &mut acc[dst..dst + (x1 - x0)];
                            for (a, &g) in acc_row.iter_mut().zip(gout_row) {
                                *a += wt * g as f64;
                            }
                        }
                    }
                }
            }
            for (g, a) in gin_plane.iter_mut().zip(&acc) {
                *g = *a as f32;
            }
        });

    // d loss / d weights: grad_w[o,c,i,j] = sum over n,y,x of
    // gout[n,o,y,x] * in[n,c, y+dy, x+dx].
    let mut grad_weights = Tensor::zeros(weights.shape.clone());
    grad_weights
        .data
        .par_chunks_mut(c_in * K * K)
        .enumerate()
        .for_each(|(o, gw_chunk)| {
            for c in 0..c_in {
                for i in 0..K {
                    let dy = (i as isize - 1) * dh;
                    let (y0, y1) = tap_range(h, dy);
                    for j in 0..K {
                        let dx = (j as isize - 1) * dw;
                        let (x0, x1) = tap_range(w, dx);
                        let mut acc = 0.0f64;
                        if y0 < y1 && x0 < x1 {
                            for n in 0..n_batch {
                                let gout_plane = &grad_out.data
                                    [(n * o_out + o) * plane..(n * o_out + o + 1) * plane];
                                let in_plane =
                                    &input.data[(n * c_in + c) * plane..(n * c_in + c + 1) * plane];
                                for y in y0..y1 {
                                    let src = ((y as isize + dy) as usize) * w
                                        + (x0 as isize + dx) as usize;
                                    let g_row = &gout_plane[y * w + x0..y * w + x1];
                                    let i_row = &in_plane[src..src + (x1 - x0)];
                                    for (&g, &v) in g_row.iter().zip(i_row) {
                                        acc += g as f64 * v as f64;
                                    }
                                }
                            }
                        }
                        gw_chunk[c * K * K + i * K + j] = acc as f32;
                    }
                }
            }
        });

    Ok((grad_input, grad_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct six-nested-loop definition, kept deliberately naive.
    fn conv2d_reference(input: &Tensor, weights: &Tensor, d: (usize, usize)) -> Tensor {
        let (nb, c_in, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let o_out = weights.dim(0);
        let mut out = Tensor::zeros(vec![nb, o_out, h, w]);
        for n in 0..nb {
            for o in 0..o_out {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut acc = 0.0f64;
                        for c in 0..c_in {
                            for i in 0..3isize {
                                for j in 0..3isize {
                                    let yy = y + (i - 1) * d.0 as isize;
                                    let xx = x + (j - 1) * d.1 as isize;
                                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                                        let iv = input.data
                                            [((n * c_in + c) * h + yy as usize) * w + xx as usize];
                                        let wv = weights.data
                                            [((o * c_in + c) * 3 + i as usize) * 3 + j as usize];
                                        acc += iv as f64 * wv as f64;
                                    }
                                }
                            }
                        }
                        out.data[((n * o_out + o) * h + y as usize) * w + x as usize] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_kernel_zero_output() {
        let input = Tensor::new(vec![1, 1, 1, 1], vec![3.0]);
        let weights = Tensor::zeros(vec![1, 1, 3, 3]);
        let out = conv2d(&input, &weights, (1, 1)).unwrap();
        assert_eq!(out.data, vec![0.0]);
    }

    #[test]
    fn ones_kernel_counts_in_range_taps() {
        let input = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]);
        let weights = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]);
        let out = conv2d(&input, &weights, (1, 1)).unwrap();
        assert_eq!(out.shape, vec![1, 1, 3, 3]);
        assert_eq!(out.data[4], 9.0); // center
        for corner in [0, 2, 6, 8] {
            assert_eq!(out.data[corner], 4.0);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(out.data[edge], 6.0);
        }
    }

    #[test]
    fn matches_reference_dilation_2() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let input = random_tensor(vec![1, 1, 8, 8], &mut rng);
        let weights = random_tensor(vec![1, 1, 3, 3], &mut rng);
        let fast = conv2d(&input, &weights, (2, 2)).unwrap();
        let slow = conv2d_reference(&input, &weights, (2, 2));
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_reference_all_dilations_multichannel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [1usize, 2, 4, 8, 16] {
            let input = random_tensor(vec![2, 3, 35, 19], &mut rng);
            let weights = random_tensor(vec![4, 3, 3, 3], &mut rng);
            let fast = conv2d(&input, &weights, (d, d)).unwrap();
            let slow = conv2d_reference(&input, &weights, (d, d));
            assert_eq!(fast.shape, slow.shape);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-6, "dilation {d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn same_padding_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1usize, 2, 4, 8, 16] {
            let input = random_tensor(vec![1, 2, 98, 40], &mut rng);
            let weights = random_tensor(vec![3, 2, 3, 3], &mut rng);
            let out = conv2d(&input, &weights, (d, d)).unwrap();
            assert_eq!(out.shape, vec![1, 3, 98, 40]);
        }
    }

    #[test]
    fn zero_grad_out_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(vec![1, 2, 5, 5], &mut rng);
        let weights = random_tensor(vec![2, 2, 3, 3], &mut rng);
        let gout = Tensor::zeros(vec![1, 2, 5, 5]);
        let (gi, gw) = conv2d_backward(&gout, &input, &weights, (1, 1)).unwrap();
        assert!(gi.data.iter().all(|&x| x == 0.0));
        assert!(gw.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(vec![1, 2, 4, 4]);
        let weights = Tensor::zeros(vec![1, 3, 3, 3]);
        let err = conv2d(&input, &weights, (1, 1)).unwrap_err().to_string();
        assert!(err.contains("channels"), "{err}");
        assert!(err.contains('2') && err.contains('3'), "{err}");
    }

    #[test]
    fn rejects_non_3x3_kernel() {
        let input = Tensor::zeros(vec![1, 1, 4, 4]);
        let weights = Tensor::zeros(vec![1, 1, 5, 5]);
        assert!(conv2d(&input, &weights, (1, 1)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        use super::super::gradcheck::finite_diff_check;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1usize, 2] {
            let input = random_tensor(vec![2, 2, 7, 6], &mut rng);
            let weights = random_tensor(vec![3, 2, 3, 3], &mut rng);
            let proj: Vec<f32> = (0..2 * 3 * 7 * 6)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();

            let loss = |inp: &Tensor, wt: &Tensor| -> f64 {
                let out = conv2d(inp, wt, (d, d)).unwrap();
                out.data
                    .iter()
                    .zip(&proj)
                    .map(|(&o, &p)| o as f64 * p as f64)
                    .sum()
            };
            let gout = Tensor::new(vec![2, 3, 7, 6], proj.clone());
            let (gi, gw) = conv2d_backward(&gout, &input, &weights, (d, d)).unwrap();

            let mut inp = input.clone();
            let err_i = finite_diff_check(
                &mut inp.data,
                &gi.data,
                |data| {
                    let t = Tensor::new(vec![2, 2, 7, 6], data.to_vec());
                    loss(&t, &weights)
                },
                1e-3,
            );
            assert!(err_i < 1e-3, "input grad, dilation {d}: {err_i}");

            let mut wt = weights.clone();
            let err_w = finite_diff_check(
                &mut wt.data,
                &gw.data,
                |data| {
                    let t = Tensor::new(vec![3, 2, 3, 3], data.to_vec());
                    loss(&input, &t)
                },
                1e-3,
            );
            assert!(err_w < 1e-3, "weight grad, dilation {d}: {err_w}");
        }
    }
}
