//! Container: `"DTRF"`, `u32` version, `u32` header length, JSON header,
//! then every parameter array as little-endian `f32` in header order, then
//! the occupancy mask packed one bit per cell (if present).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::error::{Error, Result};
use crate::factors::{init_cp, init_mm, FactorGrid, FactorKind, GridDims};
use crate::model::{Decoder, DecoderKind, Mlp, RadianceModel};
use crate::render::OccupancyMask;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTRF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub aabb: Aabb,
    pub res: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: FactorKind,
    pub dims: GridDims,
    pub geometry_ranks: [usize; 3],
    pub appearance_ranks: [usize; 3],
    pub feature_dim: usize,
    pub decoder: DecoderKind,
    /// `(in_dim, hidden)` for the MLP, `(degree, 0)` for SH.
    pub decoder_shape: (usize, usize),
    pub aabb: Aabb,
    pub arrays: Vec<ArrayEntry>,
    pub mask: Option<MaskEntry>,
    /// Free-form training configuration snapshot.
    pub config: serde_json::Value,
}

impl CheckpointHeader {
    /// Bytes of parameter data following the header.
    pub fn param_bytes(&self) -> usize {
        4 * self.arrays.iter().map(|a| a.len).sum::<usize>()
    }

    pub fn mask_bytes(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.res.iter().product::<usize>().div_ceil(8))
    }
}

fn named_arrays(model: &RadianceModel) -> Vec<(String, &[f32])> {
    let mut out = Vec::new();
    for (prefix, grid) in [("geometry", &model.geometry), ("appearance", &model.appearance)] {
        for (name, arr) in grid.arrays() {
            out.push((format!("{prefix}.{name}"), arr.data()));
        }
    }
    out.push(("basis".into(), &model.basis[..]));
    if let Decoder::Mlp(m) = &model.decoder {
        for (name, arr) in m.arrays() {
            out.push((format!("decoder.{name}"), arr));
        }
    }
    out
}

fn header_for(model: &RadianceModel, config: serde_json::Value) -> CheckpointHeader {
    CheckpointHeader {
        kind: model.kind(),
        dims: model.dims(),
        geometry_ranks: model.geometry.ranks(),
        appearance_ranks: model.appearance.ranks(),
        feature_dim: model.feature_dim,
        decoder: model.decoder_kind(),
        decoder_shape: match &model.decoder {
            Decoder::Mlp(m) => (m.in_dim, m.hidden),
            Decoder::Sh { degree } => (*degree, 0),
        },
        aabb: model.aabb,
        arrays: named_arrays(model).into_iter().map(|(name, a)| ArrayEntry { name, len: a.len() }).collect(),
        mask: model.mask.as_ref().map(|m| MaskEntry { aabb: *m.aabb(), res: m.resolution() }),
        config,
    }
}

/// Writes `model` and returns the number of bytes written.
pub fn save_checkpoint(model: &RadianceModel, config: serde_json::Value, path: &Path) -> Result<u64> {
    let header = serde_json::to_vec(&header_for(model, config))?;
    let mut buf = Vec::with_capacity(12 + header.len() + model.param_stats().bytes);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, arr) in named_arrays(model) {
        for v in arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(mask) = &model.mask {
        let mut bits = vec![0u8; mask.cells().len().div_ceil(8)];
        for (i, &c) in mask.cells().iter().enumerate() {
            if c {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&bits);
    }
    std::fs::write(path, &buf)?;
    Ok(buf.len() as u64)
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 {
        return Err(ck("truncated file: missing preamble"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(ck("bad magic bytes; not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ck(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| ck("truncated file: missing header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| ck(format!("malformed header: {e}")))?;
    Ok((header, 12 + hlen))
}

/// Reads only the header.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(parse_header(&std::fs::read(path)?)?.0)
}

fn template(h: &CheckpointHeader) -> Result<RadianceModel> {
    let grid = |ranks: [usize; 3]| -> Result<FactorGrid> {
        Ok(match h.kind {
            FactorKind::Cp => FactorGrid::Cp(init_cp(h.dims, ranks[0], 0.0, 0)?),
            FactorKind::Mm => FactorGrid::Mm(init_mm(h.dims, ranks, 0.0, 0)?),
        })
    };
    let geometry = grid(h.geometry_ranks)?;
    let appearance = grid(h.appearance_ranks)?;
    let basis = vec![0.0; h.feature_dim * appearance.n_components()];
    let decoder = match h.decoder {
        DecoderKind::Mlp => Decoder::Mlp(Mlp::zeros(h.decoder_shape.0, h.decoder_shape.1)),
        DecoderKind::Sh => Decoder::Sh { degree: h.decoder_shape.0 },
    };
    RadianceModel::from_parts(geometry, appearance, basis, h.feature_dim, decoder, h.aabb)
}

/// Loads a checkpoint and its configuration snapshot.
pub fn load_checkpoint(path: &Path) -> Result<(RadianceModel, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    let (header, mut off) = parse_header(&bytes)?;
    let mut model = template(&header).map_err(|e| ck(format!("inconsistent header: {e}")))?;
    {
        let mut slots: Vec<(String, &mut [f32])> =
            model.param_groups_mut().into_iter().map(|(n, _, s)| (n, s)).collect();
        if slots.len() != header.arrays.len() {
            return Err(ck(format!("header lists {} arrays, layout needs {}", header.arrays.len(), slots.len())));
        }
        for ((name, slot), entry) in slots.iter_mut().zip(&header.arrays) {
            if *name != entry.name || slot.len() != entry.len {
                return Err(ck(format!(
                    "shape mismatch in {}: header says {} values, layout needs {} for {name}",
                    entry.name,
                    entry.len,
                    slot.len()
                )));
            }
            let n = 4 * entry.len;
            let src = bytes
                .get(off..off + n)
                .ok_or_else(|| ck(format!("truncated file: array {} incomplete", entry.name)))?;
            for (v, b) in slot.iter_mut().zip(src.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
            off += n;
        }
    }
    if let Some(m) = &header.mask {
        let cells_n: usize = m.res.iter().product();
        let src = bytes
            .get(off..off + cells_n.div_ceil(8))
            .ok_or_else(|| ck("truncated file: occupancy mask incomplete"))?;
        let cells = (0..cells_n).map(|i| src[i / 8] >> (i % 8) & 1 == 1).collect();
        model.mask = Some(OccupancyMask::new(m.aabb, m.res, cells)?);
        off += cells_n.div_ceil(8);
    }
    if off != bytes.len() {
        return Err(ck(format!("{} trailing bytes after mask", bytes.len() - off)));
    }
    Ok((model, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, FEATURE_DIM};

    fn model(kind: FactorKind, decoder: DecoderKind) -> RadianceModel {
        RadianceModel::new(&ModelSpec {
            kind,
            density_rank: 3,
            appearance_rank: None,
            dims: GridDims::new(7, 5, 6, 4).unwrap(),
            aabb: Aabb::new([-1.0, -0.5, -2.0], [1.0, 0.5, 1.0]).unwrap(),
            decoder,
            feature_dim: FEATURE_DIM,
            density_init_scale: 0.1,
            appearance_init_scale: 0.1,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (kind, dec) in [(FactorKind::Cp, DecoderKind::Mlp), (FactorKind::Mm, DecoderKind::Sh)] {
            let mut m = model(kind, dec);
            let cells = (0..27).map(|i| i % 4 == 1).collect();
            m.mask = Some(OccupancyMask::new(m.aabb, [3, 3, 3], cells).unwrap());
            let p = dir.path().join(format!("{kind}.dtrf"));
            let cfg = serde_json::json!({"seed": 9});
            let n = save_checkpoint(&m, cfg.clone(), &p).unwrap();
            assert_eq!(n, std::fs::metadata(&p).unwrap().len());
            let (back, c) = load_checkpoint(&p).unwrap();
            assert_eq!(back, m);
            assert_eq!(c, cfg);
        }
    }

    #[test]
    fn file_size_is_params_plus_header() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(FactorKind::Mm, DecoderKind::Mlp);
        let p = dir.path().join("m.dtrf");
        let n = save_checkpoint(&m, serde_json::Value::Null, &p).unwrap() as usize;
        let h = read_checkpoint_header(&p).unwrap();
        let hlen = serde_json::to_vec(&h).unwrap().len();
        assert_eq!(n, 12 + hlen + m.param_stats().bytes);
        assert_eq!(h.param_bytes(), m.param_stats().bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(FactorKind::Cp, DecoderKind::Mlp);
        let p = dir.path().join("m.dtrf");
        save_checkpoint(&m, serde_json::Value::Null, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        let e = load_checkpoint(&p).unwrap_err().to_string();
        assert!(e.contains("truncated") && e.contains("decoder.b2"), "{e}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("version"));

        std::fs::write(&p, &bytes[..6]).unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("preamble"));
    }
}
