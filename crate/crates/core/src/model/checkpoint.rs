//! `PMX1` checkpoint: magic, nine little-endian `u64` config integers
//! (tokens, channels, token_hidden, channel_hidden, blocks, num_classes,
//! num_domains, domain_hidden, final_norm as 0/1), the dropout rate as `f64`,
//! the tensor count as `u64`, then every parameter as little-endian `f64` in
//! [`MixerParams::tensors`] order. Shapes follow from the config.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::MixerConfig;
use crate::model::network::Mixer;
use crate::model::params::MixerParams;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMX1";
const HEADER_LEN: usize = 4 + 9 * 8 + 8 + 8;

pub fn encode_checkpoint<T: Scalar>(model: &Mixer<T>) -> Vec<u8> {
    let c = model.config();
    let params = model.params();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * params.scalar_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        c.tokens,
        c.channels,
        c.token_hidden,
        c.channel_hidden,
        c.blocks,
        c.num_classes,
        c.num_domains,
        c.domain_hidden,
        usize::from(c.final_norm),
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
    buf.extend_from_slice(&(params.tensor_count() as u64).to_le_bytes());
    for t in params.tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Mixer<f64>> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail(0, "not a PMX1 checkpoint".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
    let int = |i: usize| {
        usize::try_from(word(i))
            .map_err(|_| fail(4 + 8 * i, "config integer overflows usize".into()))
    };
    let final_norm = match word(8) {
        0 => false,
        1 => true,
        v => {
            return Err(fail(
                4 + 8 * 8,
                format!("final_norm flag {v} is not 0 or 1"),
            ))
        }
    };
    let config = MixerConfig {
        tokens: int(0)?,
        channels: int(1)?,
        token_hidden: int(2)?,
        channel_hidden: int(3)?,
        blocks: int(4)?,
        num_classes: int(5)?,
        num_domains: int(6)?,
        domain_hidden: int(7)?,
        final_norm,
        dropout_rate: f64::from_le_bytes(bytes[76..84].try_into().unwrap()),
    };
    config
        .validate()
        .map_err(|e| fail(4, format!("invalid config: {e}")))?;
    let mut params = MixerParams::<f64>::zeros(&config);
    let count = word(10);
    if count != params.tensor_count() as u64 {
        return Err(fail(
            84,
            format!(
                "tensor count {count} does not match {} implied by the config",
                params.tensor_count()
            ),
        ));
    }
    let expected = HEADER_LEN + 8 * params.scalar_count();
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!(
                "length {} does not match expected {expected} bytes",
                bytes.len()
            ),
        ));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Mixer::from_params(config, params)
}

pub fn save_checkpoint<T: Scalar>(model: &Mixer<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mixer<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint and checks it against the architecture the caller
/// expects; a mismatch is a dimension error naming both sides.
pub fn load_checkpoint_for(path: &Path, expected: &MixerConfig) -> Result<Mixer<f64>> {
    let model = load_checkpoint(path)?;
    let c = model.config();
    let pairs = [
        ("tokens", c.tokens, expected.tokens),
        ("channels", c.channels, expected.channels),
        ("token_hidden", c.token_hidden, expected.token_hidden),
        ("channel_hidden", c.channel_hidden, expected.channel_hidden),
        ("blocks", c.blocks, expected.blocks),
        ("num_classes", c.num_classes, expected.num_classes),
        ("num_domains", c.num_domains, expected.num_domains),
        ("domain_hidden", c.domain_hidden, expected.domain_hidden),
    ];
    if let Some((name, have, want)) = pairs.iter().find(|(_, a, b)| a != b) {
        return Err(Error::Dimension {
            op: "load_checkpoint",
            lhs: format!("checkpoint {name}={have}"),
            rhs: format!("expected {name}={want}"),
        });
    }
    Ok(model)
}
