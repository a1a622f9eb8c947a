//! Network checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! 0    magic "GSANIMCK"
//! 8    u32 file format version (1)
//! 12   u32 parameter layout version
//! 16   u32 L, then L bytes of JSON {"config": .., "mode": ..}
//!      u32 E tensor table entries, sorted by name, each:
//!        u16 name length, name (UTF-8), u8 rank, rank × u32 dims,
//!        u64 payload byte offset, u8 trainable flag
//!      u64 P, then P bytes of f32 payload
//! ```
//!
//! Aliased parameters share one payload offset. Tensors are laid out in slot
//! order with no gaps, so save-load-save is byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::error::AssetError;
use crate::nnet::{NetConfig, NetworkParams, ShareMode, Tensor};
use crate::real::Real;

type Res<T> = std::result::Result<T, AssetError>;

pub const MAGIC: &[u8; 8] = b"GSANIMCK";
pub const FORMAT_VERSION: u32 = 1;
/// Largest channel count accepted from a file.
const MAX_CHANNELS: usize = 256;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: NetConfig,
    mode: ShareMode,
}

pub fn encode_checkpoint<T: Real>(p: &NetworkParams<T>) -> Vec<u8> {
    let mut offsets = Vec::with_capacity(p.slot_count());
    let mut total = 0u64;
    for s in 0..p.slot_count() {
        offsets.push(total);
        total += 4 * p.tensor(s).len() as u64;
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&p.version.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        config: p.config,
        mode: p.mode,
    })
    .expect("plain struct");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let names: Vec<(&str, usize)> = p.names().collect();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, slot) in names {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = &p.tensor(slot).shape;
        out.push(shape.len() as u8);
        shape
            .iter()
            .for_each(|d| out.extend_from_slice(&(*d as u32).to_le_bytes()));
        out.extend_from_slice(&offsets[slot].to_le_bytes());
        out.push(u8::from(p.is_trainable(slot)));
    }
    out.extend_from_slice(&total.to_le_bytes());
    for s in 0..p.slot_count() {
        for v in &p.tensor(s).data {
            out.extend_from_slice(&(Real::to_f64(*v) as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Res<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(AssetError::bounds_at(
                self.pos,
                format!("need {n} bytes, {} remain", self.b.len() - self.pos),
            ));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Res<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Res<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Res<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Res<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Res<NetworkParams<f32>> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(AssetError::invariant("not a checkpoint (bad magic)"));
    }
    let at = r.pos;
    let format = r.u32()?;
    if format != FORMAT_VERSION {
        return Err(AssetError::bounds_at(
            at,
            format!("unsupported checkpoint format {format}"),
        ));
    }
    let version = r.u32()?;
    let meta_len = r.u32()? as usize;
    let meta_at = r.pos;
    let meta_text =
        std::str::from_utf8(r.take(meta_len)?).map_err(|_| AssetError::bounds_at(meta_at, "metadata is not UTF-8"))?;
    let meta: Meta = super::json::from_json(meta_text)?;
    let c = meta.config;
    let channels = [
        c.base_channels,
        c.feature_channels,
        c.decoder_channels,
        c.texture_channels,
        c.pose_channels,
        c.head_hidden,
    ];
    if channels.iter().any(|&ch| ch == 0 || ch > MAX_CHANNELS) {
        return Err(AssetError::invariant(format!(
            "channel counts {channels:?} outside 1..={MAX_CHANNELS}"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries: Vec<Entry> = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| AssetError::bounds_at(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(AssetError::bounds_at(r.pos - 1, format!("bad trainable flag {f}"))),
        };
        if entries.last().is_some_and(|e| e.name >= name) {
            return Err(AssetError::invariant(format!("tensor table not sorted at {name}")));
        }
        entries.push(Entry {
            name,
            shape,
            offset,
            trainable,
        });
    }
    let payload_len = r.u64()?;
    let payload_at = r.pos;
    if (bytes.len() - payload_at) as u64 != payload_len {
        return Err(AssetError::bounds_at(
            bytes.len(),
            format!(
                "payload declares {payload_len} bytes, found {}",
                bytes.len() - payload_at
            ),
        ));
    }
    let payload = &bytes[payload_at..];

    // distinct offsets become slots in payload order
    let mut by_offset: BTreeMap<u64, (Vec<usize>, bool)> = BTreeMap::new();
    for e in &entries {
        match by_offset.get(&e.offset) {
            Some((shape, tr)) if *shape != e.shape || *tr != e.trainable => {
                return Err(AssetError::invariant(format!(
                    "alias {} disagrees with its slot",
                    e.name
                )));
            }
            Some(_) => {}
            None => {
                by_offset.insert(e.offset, (e.shape.clone(), e.trainable));
            }
        }
    }
    let mut tensors = Vec::with_capacity(by_offset.len());
    let mut trainable = Vec::with_capacity(by_offset.len());
    let mut slot_of = BTreeMap::new();
    let mut expected_offset = 0u64;
    for (slot, (offset, (shape, tr))) in by_offset.into_iter().enumerate() {
        if offset != expected_offset {
            return Err(AssetError::bounds_at(
                payload_at,
                format!("tensor at payload offset {offset} leaves a gap or overlap"),
            ));
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|n| (*n as u64).saturating_mul(4) <= payload_len - offset)
            .ok_or_else(|| AssetError::bounds_at(payload_at + offset as usize, "tensor extends past the payload"))?;
        let start = offset as usize;
        let data = payload[start..start + 4 * len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
        trainable.push(tr);
        slot_of.insert(offset, slot);
        expected_offset = offset + 4 * len as u64;
    }
    if expected_offset != payload_len {
        return Err(AssetError::bounds_at(
            payload_at + expected_offset as usize,
            "unreferenced payload bytes",
        ));
    }
    let names = entries.iter().map(|e| (e.name.clone(), slot_of[&e.offset])).collect();
    Ok(NetworkParams::from_parts(
        meta.config,
        version,
        meta.mode,
        tensors,
        trainable,
        names,
    )?)
}
