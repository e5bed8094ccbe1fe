//! Checkpoint container, magic `SPAE`.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SPAE", version u32 (=1)
//! input_channels u32, input_length u32, latent_boundary u32
//! n_layers u32, then per layer a tag byte plus fields:
//!     0 conv:      in u32, out u32, kernel u32
//!     1 transconv: in u32, out u32, kernel u32
//!     2 maxpool:   window u32
//!     3 upsample:  factor u32
//!     4 activation: kind u8 (0 relu, 1 identity)
//! n_params u64, parameters f64 x n (layer order, weights then bias)
//! adam: t u64, alpha f64, beta1 f64, beta2 f64, epsilon f64,
//!       m f64 x n, v f64 x n
//! history: n_epochs u32, rows (train f64, val f64, lr f64),
//!          stop_reason u8 (0 max-epochs, 1 early-stopped)
//! crc32 u32 over all preceding bytes
//! ```

use std::path::Path;

use super::adam::AdamState;
use super::model::{Activation, AutoencoderModel, LayerSpec};
use super::NnError;
use crate::train::{StopReason, TrainHistory};
use crate::wire::{ByteReader, ByteWriter};

pub const MAGIC: &[u8; 4] = b"SPAE";
pub const VERSION: u32 = 1;

/// Everything a resumed or evaluated run needs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AutoencoderModel,
    pub adam: AdamState,
    pub history: TrainHistory,
}

pub fn encode_checkpoint(
    model: &AutoencoderModel,
    adam: &AdamState,
    history: &TrainHistory,
) -> Result<Vec<u8>, NnError> {
    if adam.m.len() != model.n_params() {
        return Err(NnError::ShapeMismatch(format!(
            "Adam state tracks {} parameters, model has {}",
            adam.m.len(),
            model.n_params()
        )));
    }
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let (in_ch, in_len) = model.input_shape();
    w.u32(in_ch as u32);
    w.u32(in_len as u32);
    w.u32(model.latent_boundary() as u32);
    w.u32(model.layers().len() as u32);
    for layer in model.layers() {
        match *layer {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
            } => {
                w.bytes(&[0]);
                w.u32(in_ch as u32);
                w.u32(out_ch as u32);
                w.u32(kernel as u32);
            }
            LayerSpec::TransConv1d {
                in_ch,
                out_ch,
                kernel,
            } => {
                w.bytes(&[1]);
                w.u32(in_ch as u32);
                w.u32(out_ch as u32);
                w.u32(kernel as u32);
            }
            LayerSpec::MaxPool1d { window } => {
                w.bytes(&[2]);
                w.u32(window as u32);
            }
            LayerSpec::Upsample1d { factor } => {
                w.bytes(&[3]);
                w.u32(factor as u32);
            }
            LayerSpec::Activation(a) => {
                w.bytes(&[4]);
                w.bytes(&[match a {
                    Activation::ReLU => 0,
                    Activation::Identity => 1,
                }]);
            }
        }
    }
    w.u64(model.n_params() as u64);
    w.f64_slice(model.params());
    w.u64(adam.t);
    w.f64(adam.alpha);
    w.f64(adam.beta1);
    w.f64(adam.beta2);
    w.f64(adam.epsilon);
    w.f64_slice(&adam.m);
    w.f64_slice(&adam.v);
    w.u32(history.epochs() as u32);
    for e in 0..history.epochs() {
        w.f64(history.train_loss[e]);
        w.f64(history.val_loss[e]);
        w.f64(history.lr[e]);
    }
    w.bytes(&[match history.stop_reason {
        StopReason::MaxEpochs => 0,
        StopReason::EarlyStopped => 1,
    }]);
    Ok(w.finish_with_crc())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    if bytes.len() < 8 {
        return Err(NnError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(NnError::BadMagic(bytes[..4].to_vec()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(NnError::VersionUnsupported(version));
    }
    let mut r = ByteReader::new_checked(bytes)?;
    r.bytes(4)?;
    r.u32()?;
    let in_ch = r.u32()? as usize;
    let in_len = r.u32()? as usize;
    let boundary = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.bytes(1)?[0];
        layers.push(match tag {
            0 => LayerSpec::Conv1d {
                in_ch: r.u32()? as usize,
                out_ch: r.u32()? as usize,
                kernel: r.u32()? as usize,
            },
            1 => LayerSpec::TransConv1d {
                in_ch: r.u32()? as usize,
                out_ch: r.u32()? as usize,
                kernel: r.u32()? as usize,
            },
            2 => LayerSpec::MaxPool1d {
                window: r.u32()? as usize,
            },
            3 => LayerSpec::Upsample1d {
                factor: r.u32()? as usize,
            },
            4 => LayerSpec::Activation(match r.bytes(1)?[0] {
                0 => Activation::ReLU,
                1 => Activation::Identity,
                k => {
                    return Err(NnError::InvalidSpec(format!(
                        "unknown activation tag {k}"
                    )))
                }
            }),
            t => return Err(NnError::InvalidSpec(format!("unknown layer tag {t}"))),
        });
    }
    let mut model = AutoencoderModel::new(layers, boundary, in_ch, in_len)?;
    let n_params = r.u64()? as usize;
    if n_params != model.n_params() {
        return Err(NnError::ShapeMismatch(format!(
            "checkpoint stores {n_params} parameters, architecture implies {}",
            model.n_params()
        )));
    }
    model.set_params(r.f64_vec(n_params)?)?;
    let mut adam = AdamState::new(n_params, AdamState::DEFAULT_ALPHA);
    adam.t = r.u64()?;
    adam.alpha = r.f64()?;
    adam.beta1 = r.f64()?;
    adam.beta2 = r.f64()?;
    adam.epsilon = r.f64()?;
    adam.m = r.f64_vec(n_params)?;
    adam.v = r.f64_vec(n_params)?;
    let n_epochs = r.u32()? as usize;
    let mut history = TrainHistory::empty();
    for _ in 0..n_epochs {
        history.train_loss.push(r.f64()?);
        history.val_loss.push(r.f64()?);
        history.lr.push(r.f64()?);
    }
    history.stop_reason = match r.bytes(1)?[0] {
        0 => StopReason::MaxEpochs,
        1 => StopReason::EarlyStopped,
        k => {
            return Err(NnError::InvalidSpec(format!(
                "unknown stop reason tag {k}"
            )))
        }
    };
    Ok(Checkpoint {
        model,
        adam,
        history,
    })
}

/// Write a checkpoint atomically (temp file, then rename).
pub fn save_checkpoint(
    model: &AutoencoderModel,
    adam: &AdamState,
    history: &TrainHistory,
    path: &Path,
) -> Result<(), NnError> {
    let bytes = encode_checkpoint(model, adam, history)?;
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor3;
    use crate::rng::Pcg32;

    fn sample() -> (AutoencoderModel, AdamState, TrainHistory) {
        let model = AutoencoderModel::default_seeded(31);
        let mut adam = AdamState::new(model.n_params(), 5e-4);
        adam.t = 17;
        let mut rng = Pcg32::new(1, 1);
        for i in 0..adam.m.len() {
            adam.m[i] = rng.uniform(-1e-3, 1e-3);
            adam.v[i] = rng.uniform(0.0, 1e-6);
        }
        let mut history = TrainHistory::empty();
        for e in 0..5 {
            history.train_loss.push(0.5 / (e + 1) as f64);
            history.val_loss.push(0.6 / (e + 1) as f64);
            history.lr.push(1e-3);
        }
        history.stop_reason = StopReason::EarlyStopped;
        (model, adam, history)
    }

    #[test]
    fn round_trip_bit_identical() {
        let (model, adam, history) = sample();
        let bytes = encode_checkpoint(&model, &adam, &history).unwrap();
        let ckpt = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ckpt.model, model);
        assert_eq!(ckpt.adam, adam);
        assert_eq!(ckpt.history, history);
        assert_eq!(encode_checkpoint(&ckpt.model, &ckpt.adam, &ckpt.history).unwrap(), bytes);
    }

    #[test]
    fn forward_identical_after_reload() {
        let (model, adam, history) = sample();
        let bytes = encode_checkpoint(&model, &adam, &history).unwrap();
        let ckpt = decode_checkpoint(&bytes).unwrap();
        let mut rng = Pcg32::new(2, 9);
        let x = Tensor3::from_vec(
            2,
            2,
            112,
            (0..2 * 2 * 112).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let before = model.reconstruct(&x).unwrap();
        let after = ckpt.model.reconstruct(&x).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn bad_magic_rejected() {
        let (model, adam, history) = sample();
        let mut bytes = encode_checkpoint(&model, &adam, &history).unwrap();
        bytes[0] = b'Z';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(NnError::BadMagic(_))
        ));
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let (model, adam, history) = sample();
        let mut bytes = encode_checkpoint(&model, &adam, &history).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(NnError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn future_version_rejected() {
        let (model, adam, history) = sample();
        let mut bytes = encode_checkpoint(&model, &adam, &history).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(NnError::VersionUnsupported(2))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (model, adam, history) = sample();
        save_checkpoint(&model, &adam, &history, &path).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.model.params(), model.params());
    }
}
