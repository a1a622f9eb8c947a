//! Dense skinning weights: row-major `V × J` little-endian f32 with a JSON
//! sidecar `{"vertices": V, "joints": J, "k_max": 8}`.

use serde::{Deserialize, Serialize};

use super::error::AssetError;
use super::json::{from_json, to_json};
use crate::skinning::{normalize_row, SkinningWeights, K_MAX};

type Res<T> = std::result::Result<T, AssetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsHeader {
    pub vertices: usize,
    pub joints: usize,
    pub k_max: usize,
}

pub fn write_weights(w: &SkinningWeights, joints: usize) -> (Vec<u8>, String) {
    let dense = w.to_dense(joints);
    let mut bin = Vec::with_capacity(dense.len() * 4);
    for v in dense {
        bin.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let header = WeightsHeader {
        vertices: w.rows(),
        joints,
        k_max: K_MAX,
    };
    (bin, to_json(&header))
}

/// Returns `(V, J, weights)`. Rows that already sum to one within 1e-6 and
/// have at most `K_MAX` entries are kept verbatim so that rewriting is
/// byte-stable; others are truncated and renormalized.
pub fn read_weights(bin: &[u8], sidecar: &str) -> Res<(usize, usize, SkinningWeights)> {
    let h: WeightsHeader = from_json(sidecar)?;
    if h.k_max != K_MAX {
        return Err(AssetError::invariant(format!("k_max {} differs from {K_MAX}", h.k_max)));
    }
    if h.joints == 0 {
        return Err(AssetError::invariant("weights declare zero joints"));
    }
    let expected = h
        .vertices
        .checked_mul(h.joints)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| AssetError::invariant("weight dimensions overflow"))?;
    if bin.len() != expected {
        return Err(AssetError::bounds_at(
            bin.len().min(expected),
            format!("expected {expected} bytes of weights, found {}", bin.len()),
        ));
    }
    let mut rows = Vec::with_capacity(h.vertices);
    for (r, chunk) in bin.chunks_exact(h.joints * 4).enumerate() {
        let mut row = Vec::new();
        for (j, b) in chunk.chunks_exact(4).enumerate() {
            let w = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            if !(0.0..=1.0 + 1e-6).contains(&w) {
                return Err(AssetError::invariant(format!("weight ({r}, {j}) = {w} outside [0, 1]")));
            }
            if w > 0.0 {
                row.push((j as u32, w));
            }
        }
        let sum: f64 = row.iter().map(|x| x.1).sum();
        if row.is_empty() {
            return Err(AssetError::invariant(format!("weight row {r} is all zero")));
        }
        if row.len() > K_MAX || (sum - 1.0).abs() > 1e-6 {
            row = normalize_row(row);
        }
        rows.push(row);
    }
    Ok((h.vertices, h.joints, SkinningWeights::from_rows(rows)?))
}
