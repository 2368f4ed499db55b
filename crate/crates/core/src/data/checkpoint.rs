//! Single-file model checkpoints.
//!
//! Layout (see `docs/checkpoint-format.md`):
//!
//! ```text
//! ptn-checkpoint v1\n
//! {JSON header}\n
//! payload: Σ R_n·D_n·R_{n+1} little-endian f64, core by core,
//!          each core row-major over (R_n, D_n, R_{n+1})
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::model::{Core, MpsModel, PositivityMode};

pub const MAGIC: &str = "ptn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub num_cores: usize,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub mode: PositivityMode,
    pub seed: Option<u64>,
    /// Free-form training metadata (config, epoch, metrics).
    #[serde(default)]
    pub training: serde_json::Value,
    pub payload_values: usize,
}

#[derive(Clone, Debug, Default)]
pub struct CheckpointMeta {
    pub seed: Option<u64>,
    pub training: serde_json::Value,
}

fn header_for(model: &MpsModel, meta: &CheckpointMeta) -> CheckpointHeader {
    CheckpointHeader {
        format_version: FORMAT_VERSION,
        num_cores: model.len(),
        dims: model.dims(),
        ranks: model.ranks(),
        mode: model.mode(),
        seed: meta.seed,
        training: meta.training.clone(),
        payload_values: model.num_params(),
    }
}

/// Encodes a checkpoint in memory.
pub fn encode_checkpoint(model: &MpsModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&header_for(model, meta))
        .map_err(|e| PtnError::Checkpoint(format!("header serialization: {e}")))?;
    let mut out = Vec::with_capacity(64 + header.len() + 8 * model.num_params());
    out.extend_from_slice(format!("{MAGIC} v{FORMAT_VERSION}\n").as_bytes());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for core in model.cores() {
        for x in core.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint(
    model: &MpsModel,
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| PtnError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| PtnError::io(&tmp, e))?;
    f.sync_all().map_err(|e| PtnError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PtnError::io(path, e))
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|b| *b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

/// Decodes a checkpoint; nothing is returned unless every check passes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MpsModel, CheckpointHeader)> {
    let bad = |m: String| PtnError::Checkpoint(m);
    let (first, rest) = split_line(bytes).ok_or_else(|| bad("missing format line".into()))?;
    let first = std::str::from_utf8(first).map_err(|_| bad("format line is not text".into()))?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().strip_prefix('v'))
        .ok_or_else(|| bad(format!("not a checkpoint (format line '{first}')")))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(bad(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let (header_line, payload) = split_line(rest).ok_or_else(|| bad("missing header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(header_line).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "header version {} does not match format line",
            header.format_version
        )));
    }
    let n = header.num_cores;
    if header.dims.len() != n || header.ranks.len() != n + 1 {
        return Err(bad(format!(
            "shape inconsistency: {n} cores, {} dims, {} ranks",
            header.dims.len(),
            header.ranks.len()
        )));
    }
    let expected: usize = (0..n)
        .map(|k| header.ranks[k] * header.dims[k] * header.ranks[k + 1])
        .sum();
    if expected != header.payload_values {
        return Err(bad(format!(
            "shape inconsistency: shapes imply {expected} values, header says {}",
            header.payload_values
        )));
    }
    if payload.len() != 8 * expected {
        return Err(bad(format!(
            "payload has {} bytes, expected {}{}",
            payload.len(),
            8 * expected,
            if payload.len() < 8 * expected {
                " (truncated)"
            } else {
                ""
            }
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut cores = Vec::with_capacity(n);
    for k in 0..n {
        let (l, d, r) = (header.ranks[k], header.dims[k], header.ranks[k + 1]);
        let data: Vec<f64> = values.by_ref().take(l * d * r).collect();
        cores.push(Core::from_vec(l, d, r, data).map_err(|e| bad(e.to_string()))?);
    }
    let model = MpsModel::new(cores, header.mode).map_err(|e| bad(e.to_string()))?;
    Ok((model, header))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(MpsModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| PtnError::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MpsModel> {
    Ok(read_checkpoint(path)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;

    fn model() -> MpsModel {
        let mut rng = Rng::new(3);
        MpsModel::random(&[2, 3, 2], 3, PositivityMode::SigmaSoftplus, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn bitwise_round_trip() {
        let m = model();
        let meta = CheckpointMeta {
            seed: Some(9),
            training: serde_json::json!({"epoch": 3}),
        };
        let (back, header) = decode_checkpoint(&encode_checkpoint(&m, &meta).unwrap()).unwrap();
        assert_eq!(header.seed, Some(9));
        assert_eq!(header.training["epoch"], 3);
        for (a, b) in m.cores().iter().zip(back.cores()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.mode(), m.mode());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&model(), &CheckpointMeta::default()).unwrap();
        let text_end = bytes.iter().position(|b| *b == b'\n').unwrap();

        let mut v2 = bytes.clone();
        v2[text_end - 1] = b'2';
        assert!(decode_checkpoint(&v2)
            .unwrap_err()
            .to_string()
            .contains("version"));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(decode_checkpoint(truncated)
            .unwrap_err()
            .to_string()
            .contains("truncated"));

        let s =
            String::from_utf8_lossy(&bytes[..bytes.len() - 8 * model().num_params()]).to_string();
        let broken = s.replace("\"ranks\":[1,3,3,1]", "\"ranks\":[1,3,2,1]");
        let mut b = broken.into_bytes();
        b.extend_from_slice(&bytes[bytes.len() - 8 * model().num_params()..]);
        assert!(decode_checkpoint(&b)
            .unwrap_err()
            .to_string()
            .contains("shape"));

        assert!(decode_checkpoint(b"garbage\n{}\n").is_err());
    }
}
