//! Versioned little-endian checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "KWSCKPT\0"
//! version   u32      currently 1
//! arch      u16 length + UTF-8 name
//! epoch     u32      completed epochs
//! seed      u64
//! val_acc   f64      validation accuracy at `epoch`
//! best_val  f64      best validation accuracy seen so far
//! plateau   f64      plateau reference accuracy for the LR schedule
//! lr        f64      learning rate in effect
//! stale     u32      consecutive non-improving epochs
//! sections  3 x [u32 count, entries...]   params, bn stats, velocities
//! entry:    u16 name length + UTF-8, u8 rank, u32 dims..., f32 data
//! ```
//!
//! Batch-norm stats are stored as `<layer>.running_mean` / `.running_var`
//! vectors; velocities use the parameter names in optimizer order.

use crate::error::{Error, Result};
use crate::models::{ArchName, Model};
use crate::nn::{SgdMomentum, Tensor};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 8] = b"KWSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Scalar training-progress state carried inside a checkpoint; everything a
/// resumed run needs besides tensors and the seed-derived streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainState {
    /// completed epochs
    pub epoch: u32,
    pub seed: u64,
    /// validation accuracy at `epoch` (fraction)
    pub val_accuracy: f64,
    /// best validation accuracy over all completed epochs (fraction)
    pub best_val: f64,
    /// plateau reference accuracy for the LR schedule (fraction)
    pub plateau_best: f64,
    pub lr: f64,
    /// consecutive epochs without a plateau-counting improvement
    pub stale_epochs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchName,
    pub state: TrainState,
    pub params: Vec<NamedTensor>,
    pub bn_stats: Vec<NamedTensor>,
    pub velocities: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshot the model and optimizer. A never-stepped optimizer yields
    /// zero velocities.
    pub fn capture(model: &Model, opt: &SgdMomentum, state: TrainState) -> Checkpoint {
        let params: Vec<NamedTensor> = model
            .params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect();
        let mut bn_stats = Vec::new();
        for (name, bn) in model.bn_layers() {
            bn_stats.push(NamedTensor {
                name: format!("{name}.running_mean"),
                shape: vec![bn.channels()],
                data: bn.running_mean.clone(),
            });
            bn_stats.push(NamedTensor {
                name: format!("{name}.running_var"),
                shape: vec![bn.channels()],
                data: bn.running_var.clone(),
            });
        }
        let velocities = params
            .iter()
            .enumerate()
            .map(|(i, p)| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: opt
                    .velocities
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; p.data.len()]),
            })
            .collect();
        Checkpoint {
            arch: model.spec.name,
            state,
            params,
            bn_stats,
            velocities,
        }
    }

    /// Load every tensor into the model and optimizer, verifying names and
    /// shapes against the built architecture.
    pub fn restore(&self, model: &mut Model, opt: &mut SgdMomentum) -> Result<()> {
        if model.spec.name != self.arch {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint is for {}, model is {}",
                self.arch.as_str(),
                model.spec.name.as_str()
            )));
        }
        {
            let mut targets = model.params_mut();
            if targets.len() != self.params.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "{} parameter tensors in file, model has {}",
                    self.params.len(),
                    targets.len()
                )));
            }
            for ((name, t), stored) in targets.iter_mut().zip(&self.params) {
                copy_into(name, t, stored)?;
            }
        }
        let mut bn_iter = self.bn_stats.iter();
        for (name, bn) in model.bn_layers_mut() {
            let mean = expect_stat(
                bn_iter.next(),
                &format!("{name}.running_mean"),
                bn.channels(),
            )?;
            bn.running_mean.copy_from_slice(&mean.data);
            let var = expect_stat(
                bn_iter.next(),
                &format!("{name}.running_var"),
                bn.channels(),
            )?;
            bn.running_var.copy_from_slice(&var.data);
        }
        if let Some(extra) = bn_iter.next() {
            return Err(Error::CheckpointMismatch(format!(
                "unexpected extra bn tensor '{}'",
                extra.name
            )));
        }
        if self.velocities.len() != self.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} velocity buffers for {} parameters",
                self.velocities.len(),
                self.params.len()
            )));
        }
        opt.velocities = self.velocities.iter().map(|v| v.data.clone()).collect();
        opt.lr = self.state.lr as f32;
        Ok(())
    }
}

fn copy_into(name: &str, t: &mut Tensor, stored: &NamedTensor) -> Result<()> {
    if stored.name != name {
        return Err(Error::CheckpointMismatch(format!(
            "expected tensor '{name}', file has '{}'",
            stored.name
        )));
    }
    if stored.shape != t.shape {
        return Err(Error::CheckpointMismatch(format!(
            "tensor '{name}' has shape {:?} in file, {:?} in model",
            stored.shape, t.shape
        )));
    }
    t.data.copy_from_slice(&stored.data);
    t.clear_grad();
    Ok(())
}

fn expect_stat<'a>(
    got: Option<&'a NamedTensor>,
    want: &str,
    channels: usize,
) -> Result<&'a NamedTensor> {
    let nt = got.ok_or_else(|| Error::CheckpointMismatch(format!("missing bn tensor '{want}'")))?;
    if nt.name != want {
        return Err(Error::CheckpointMismatch(format!(
            "expected bn tensor '{want}', file has '{}'",
            nt.name
        )));
    }
    if nt.shape != [channels] {
        return Err(Error::CheckpointMismatch(format!(
            "bn tensor '{want}' has shape {:?}, expected [{channels}]",
            nt.shape
        )));
    }
    Ok(nt)
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    decode(&mut std::io::BufReader::new(file))
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    write_str(&mut out, ckpt.arch.as_str());
    let s = &ckpt.state;
    out.extend_from_slice(&s.epoch.to_le_bytes());
    out.extend_from_slice(&s.seed.to_le_bytes());
    out.extend_from_slice(&s.val_accuracy.to_le_bytes());
    out.extend_from_slice(&s.best_val.to_le_bytes());
    out.extend_from_slice(&s.plateau_best.to_le_bytes());
    out.extend_from_slice(&s.lr.to_le_bytes());
    out.extend_from_slice(&s.stale_epochs.to_le_bytes());
    for section in [&ckpt.params, &ckpt.bn_stats, &ckpt.velocities] {
        out.extend_from_slice(&(section.len() as u32).to_le_bytes());
        for nt in section {
            write_str(&mut out, &nt.name);
            out.push(nt.shape.len() as u8);
            for &d in &nt.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &nt.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn decode<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(
            "bad magic bytes; not a checkpoint file".into(),
        ));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            got: version,
        });
    }
    let arch_name = read_str(r, "arch name")?;
    let arch = ArchName::parse(&arch_name)
        .map_err(|_| Error::CheckpointFormat(format!("unknown architecture '{arch_name}'")))?;
    let state = TrainState {
        epoch: read_u32(r, "epoch")?,
        seed: read_u64(r, "seed")?,
        val_accuracy: read_f64(r, "val accuracy")?,
        best_val: read_f64(r, "best val accuracy")?,
        plateau_best: read_f64(r, "plateau reference")?,
        lr: read_f64(r, "lr")?,
        stale_epochs: read_u32(r, "stale epochs")?,
    };
    let mut sections = Vec::with_capacity(3);
    for what in ["params", "bn stats", "velocities"] {
        let count = read_u32(r, what)? as usize;
        let mut v = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            v.push(read_tensor(r, what)?);
        }
        sections.push(v);
    }
    let velocities = sections.pop().unwrap();
    let bn_stats = sections.pop().unwrap();
    let params = sections.pop().unwrap();
    Ok(Checkpoint {
        arch,
        state,
        params,
        bn_stats,
        velocities,
    })
}

fn read_tensor<R: Read>(r: &mut R, what: &str) -> Result<NamedTensor> {
    let name = read_str(r, what)?;
    let mut rank = [0u8; 1];
    read_exact(r, &mut rank, what)?;
    if rank[0] > 8 {
        return Err(Error::CheckpointFormat(format!(
            "tensor '{name}' claims rank {}",
            rank[0]
        )));
    }
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        shape.push(read_u32(r, what)? as usize);
    }
    let numel: usize = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::CheckpointFormat(format!("tensor '{name}' shape overflows")))?;
    let mut bytes = vec![0u8; numel * 4];
    read_exact(r, &mut bytes, what)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NamedTensor { name, shape, data })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CheckpointTruncated(format!("ran out of bytes reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let mut len = [0u8; 2];
    read_exact(r, &mut len, what)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact(r, &mut bytes, what)?;
    String::from_utf8(bytes)
        .map_err(|_| Error::CheckpointFormat(format!("non-UTF-8 name in {what}")))
}
