//! Named-tensor checkpoints.
//!
//! Layout: a plain-text header, then the raw tensor data.
//!
//! ```text
//! LAYOUTMRC-CHECKPOINT 1
//! tensors <count>
//! <name> <rows> <cols>        (one line per tensor, in storage order)
//! end
//! <little-endian f32 values of every tensor, row-major, same order>
//! ```

use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use thiserror::Error;

use crate::model::ModelParams;

const MAGIC: &str = "LAYOUTMRC-CHECKPOINT 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("tensor {name}: checkpoint has shape {got:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("tensor {name} expected by the model is missing from the checkpoint")]
    Missing { name: String },
    #[error("checkpoint holds tensor {name} that the model does not have")]
    Unexpected { name: String },
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let tensors = params.named_tensors();
    let mut out = format!("{MAGIC}\ntensors {}\n", tensors.len());
    for (name, m) in &tensors {
        out.push_str(&format!("{name} {} {}\n", m.rows, m.cols));
    }
    out.push_str("end\n");
    let mut bytes = out.into_bytes();
    for (_, m) in &tensors {
        for v in &m.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    bytes
}

/// Fills `params` from checkpoint bytes. Every tensor must be present with
/// the shape `params` already has.
pub fn from_bytes(bytes: &[u8], params: &mut ModelParams) -> Result<(), CheckpointError> {
    let fmt_err = |m: &str| CheckpointError::Format(m.to_string());
    let mut cursor = Cursor::new(bytes);
    let mut line = String::new();
    let mut next_line = |cursor: &mut Cursor<&[u8]>| -> Result<String, CheckpointError> {
        line.clear();
        cursor
            .read_line(&mut line)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut cursor)? != MAGIC {
        return Err(fmt_err("bad magic line"));
    }
    let count: usize = next_line(&mut cursor)?
        .strip_prefix("tensors ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| fmt_err("bad tensor count line"))?;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next_line(&mut cursor)?;
        let parts: Vec<&str> = l.split(' ').collect();
        let parsed = match parts.as_slice() {
            [name, r, c] => r.parse().ok().zip(c.parse().ok()).map(|s| (name.to_string(), s)),
            _ => None,
        };
        header.push(parsed.ok_or_else(|| CheckpointError::Format(format!("bad tensor line {l:?}")))?);
    }
    if next_line(&mut cursor)? != "end" {
        return Err(fmt_err("missing end of header"));
    }

    let mut targets = params.named_tensors_mut();
    for (name, _) in &header {
        if !targets.iter().any(|(n, _)| n == name) {
            return Err(CheckpointError::Unexpected { name: name.clone() });
        }
    }
    if let Some((name, _)) = targets.iter().find(|(n, _)| !header.iter().any(|(h, _)| h == n)) {
        return Err(CheckpointError::Missing { name: name.clone() });
    }
    for (name, shape) in &header {
        let (_, m) = targets.iter().find(|(n, _)| n == name).expect("checked above");
        if m.shape() != *shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: m.shape(),
                got: *shape,
            });
        }
    }
    let mut buf = [0u8; 4];
    for (name, _) in &header {
        let (_, m) = targets.iter_mut().find(|(n, _)| n == name).expect("checked above");
        for v in m.data.iter_mut() {
            cursor
                .read_exact(&mut buf)
                .map_err(|_| CheckpointError::Format(format!("data for {name} is truncated")))?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    if (cursor.position() as usize) != bytes.len() {
        return Err(fmt_err("trailing bytes after tensor data"));
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>, params: &mut ModelParams) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            ffn_dim: 16,
            max_len: 16,
            appearance_dim: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::new(&small(), 30, &mut rng);
        let bytes = to_bytes(&params);
        let header_end = bytes.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.starts_with(MAGIC));
        assert!(header.contains("embed.token 30 8\n"));
        assert_eq!(bytes.len() - header_end, params.num_parameters() * 4);

        let mut loaded = params.zeros_like();
        from_bytes(&bytes, &mut loaded).unwrap();
        for ((_, a), (_, b)) in params.named_tensors().iter().zip(loaded.named_tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // f32 values survive a second trip unchanged
        assert_eq!(to_bytes(&loaded), bytes);
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::new(&small(), 30, &mut rng);
        let mut other = ModelParams::new(&small(), 31, &mut rng);
        match from_bytes(&to_bytes(&params), &mut other) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "embed.token"),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::new(&small(), 30, &mut rng);
        let bytes = to_bytes(&params);
        let mut target = params.zeros_like();
        assert!(from_bytes(&bytes[..bytes.len() - 3], &mut target).is_err());
        assert!(from_bytes(b"garbage", &mut target).is_err());
    }
}
