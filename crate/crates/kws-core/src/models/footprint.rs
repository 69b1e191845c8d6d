//! Per-layer parameter and multiply accounting.
//!
//! Conventions: parameters come from conv and softmax weights only
//! (batch norm is affine-free, pools have none). Multiplies are weight
//! applications times spatial positions for convs, one per element for
//! batch norm, one per output element for windowed pooling, one per
//! feature map for the global pool, and the weight count for softmax.

use super::ArchSpec;
use crate::nn::pool_out_dim;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct LayerRow {
    pub kind: &'static str,
    pub label: String,
    /// conv kernel or pool window (m, r)
    pub kernel: Option<(usize, usize)>,
    pub n_maps: usize,
    /// None for non-conv rows and for aggregates with a mixed schedule
    pub dilation: Option<(usize, usize)>,
    pub params: u64,
    pub multiplies: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Footprint {
    pub arch: String,
    pub input_frames: usize,
    pub input_coeffs: usize,
    pub rows: Vec<LayerRow>,
    pub n_params: u64,
    pub n_multiplies: u64,
}

pub fn footprint(spec: &ArchSpec, t: usize, f: usize) -> Footprint {
    assert!(t >= 1 && f >= 1, "input dims must be at least 1x1");
    let n = spec.n_feature_maps as u64;
    let k = spec.n_res_blocks as u64;
    let full = (t * f) as u64;
    let mut rows = Vec::new();

    let stem_params = 9 * n;
    rows.push(LayerRow {
        kind: "conv",
        label: "conv".into(),
        kernel: Some((3, 3)),
        n_maps: spec.n_feature_maps,
        dilation: Some((1, 1)),
        params: stem_params,
        multiplies: stem_params * full,
    });

    let body = match spec.front_pool {
        Some((pw, ph)) => {
            let pos = (pool_out_dim(t, pw) * pool_out_dim(f, ph)) as u64;
            rows.push(LayerRow {
                kind: "avg-pool",
                label: "avg-pool".into(),
                kernel: Some((pw, ph)),
                n_maps: spec.n_feature_maps,
                dilation: None,
                params: 0,
                multiplies: n * pos,
            });
            pos
        }
        None => full,
    };

    let res_params = k * 2 * 9 * n * n;
    let dilations = spec.conv_dilations();
    let block_d = dilations[1]; // first block conv
    let uniform = dilations[1..1 + 2 * spec.n_res_blocks]
        .iter()
        .all(|&d| d == block_d);
    rows.push(LayerRow {
        kind: "res",
        label: format!("res x {k}"),
        kernel: Some((3, 3)),
        n_maps: spec.n_feature_maps,
        dilation: uniform.then_some((block_d, block_d)),
        params: res_params,
        multiplies: res_params * body,
    });
    rows.push(LayerRow {
        kind: "bn",
        label: format!("bn x {}", 2 * k),
        kernel: None,
        n_maps: spec.n_feature_maps,
        dilation: None,
        params: 0,
        multiplies: 2 * k * n * body,
    });

    if spec.dilation_enabled {
        let tail_params = 9 * n * n;
        rows.push(LayerRow {
            kind: "conv",
            label: "conv".into(),
            kernel: Some((3, 3)),
            n_maps: spec.n_feature_maps,
            dilation: Some((16, 16)),
            params: tail_params,
            multiplies: tail_params * body,
        });
        rows.push(LayerRow {
            kind: "bn",
            label: "bn".into(),
            kernel: None,
            n_maps: spec.n_feature_maps,
            dilation: None,
            params: 0,
            multiplies: n * body,
        });
    }

    rows.push(LayerRow {
        kind: "avg-pool",
        label: "avg-pool".into(),
        kernel: None,
        n_maps: spec.n_feature_maps,
        dilation: None,
        params: 0,
        multiplies: n,
    });
    let softmax_params = n * 12;
    rows.push(LayerRow {
        kind: "softmax",
        label: "softmax".into(),
        kernel: None,
        n_maps: 12,
        dilation: None,
        params: softmax_params,
        multiplies: softmax_params,
    });

    Footprint {
        arch: spec.name.as_str().to_string(),
        input_frames: t,
        input_coeffs: f,
        n_params: rows.iter().map(|r| r.params).sum(),
        n_multiplies: rows.iter().map(|r| r.multiplies).sum(),
        rows,
    }
}
