//! The six residual architectures: declarative specs, the built model, and
//! the footprint analyzer.

mod footprint;
mod model;

pub use footprint::{footprint, Footprint, LayerRow};
pub use model::{batch_to_tensor, Model, N_OUTPUT_CLASSES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCH_NAMES: [&str; 6] = [
    "res15",
    "res15-narrow",
    "res8",
    "res8-narrow",
    "res26",
    "res26-narrow",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchName {
    Res15,
    Res15Narrow,
    Res8,
    Res8Narrow,
    Res26,
    Res26Narrow,
}

impl ArchName {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "res15" => Ok(Self::Res15),
            "res15-narrow" => Ok(Self::Res15Narrow),
            "res8" => Ok(Self::Res8),
            "res8-narrow" => Ok(Self::Res8Narrow),
            "res26" => Ok(Self::Res26),
            "res26-narrow" => Ok(Self::Res26Narrow),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Res15 => "res15",
            Self::Res15Narrow => "res15-narrow",
            Self::Res8 => "res8",
            Self::Res8Narrow => "res8-narrow",
            Self::Res26 => "res26",
            Self::Res26Narrow => "res26-narrow",
        }
    }
}

/// Structural description of one architecture variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: ArchName,
    /// 45 for wide variants, 19 for -narrow.
    pub n_feature_maps: usize,
    pub n_res_blocks: usize,
    /// (height, width) of the front average pool, if any.
    pub front_pool: Option<(usize, usize)>,
    /// res15* dilate residual convs by 2^(i/3) and append a d=16 conv + bn.
    pub dilation_enabled: bool,
}

impl ArchSpec {
    pub fn named(name: ArchName) -> Self {
        let narrow = matches!(
            name,
            ArchName::Res15Narrow | ArchName::Res8Narrow | ArchName::Res26Narrow
        );
        let n_feature_maps = if narrow { 19 } else { 45 };
        match name {
            ArchName::Res15 | ArchName::Res15Narrow => Self {
                name,
                n_feature_maps,
                n_res_blocks: 6,
                front_pool: None,
                dilation_enabled: true,
            },
            ArchName::Res8 | ArchName::Res8Narrow => Self {
                name,
                n_feature_maps,
                n_res_blocks: 3,
                front_pool: Some((4, 3)),
                dilation_enabled: false,
            },
            ArchName::Res26 | ArchName::Res26Narrow => Self {
                name,
                n_feature_maps,
                n_res_blocks: 12,
                front_pool: Some((2, 2)),
                dilation_enabled: false,
            },
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::named(ArchName::parse(name)?))
    }

    /// Dilation of residual conv layer `i` (0-based across blocks):
    /// 2^(i/3) when dilation is enabled, else 1.
    pub fn dilation_of_layer(&self, i: usize) -> usize {
        if self.dilation_enabled {
            dilation_at(i)
        } else {
            1
        }
    }

    /// Dilations of every conv in forward order: the stem, the residual
    /// convs, and (for res15*) the appended d=16 conv.
    pub fn conv_dilations(&self) -> Vec<usize> {
        let mut out = vec![1]; // stem
        for i in 0..2 * self.n_res_blocks {
            out.push(self.dilation_of_layer(i));
        }
        if self.dilation_enabled {
            out.push(16);
        }
        out
    }
}

/// The res15 dilation schedule: layer i (0-based, counted from the first
/// conv inside the first residual block) uses 2^floor(i/3).
pub fn dilation_at(i: usize) -> usize {
    1 << (i / 3)
}

/// Receptive field (height, width) of one output unit in input pixels.
///
/// Each 3x3 conv of dilation d widens the field by 2*d*jump, where jump is
/// the input stride accumulated so far; a pool of size p widens it by
/// (p-1)*jump and multiplies jump by p.
pub fn receptive_field(spec: &ArchSpec) -> (usize, usize) {
    let mut rf = (1usize, 1usize);
    let mut jump = (1usize, 1usize);
    let conv = |rf: &mut (usize, usize), jump: &(usize, usize), d: usize| {
        rf.0 += 2 * d * jump.0;
        rf.1 += 2 * d * jump.1;
    };
    conv(&mut rf, &jump, 1); // stem
    if let Some((ph, pw)) = spec.front_pool {
        rf.0 += (ph - 1) * jump.0;
        rf.1 += (pw - 1) * jump.1;
        jump.0 *= ph;
        jump.1 *= pw;
    }
    for i in 0..2 * spec.n_res_blocks {
        conv(&mut rf, &jump, spec.dilation_of_layer(i));
    }
    if spec.dilation_enabled {
        conv(&mut rf, &jump, 16);
    }
    rf
}
