//! Readers and writers for every on-disk format.
//!
//! Byte-level codecs are pure functions over buffers; the `load_*` and
//! `save_*` helpers add file access. Saves go through a temporary file and a
//! rename so readers never observe partial output.

mod checkpoint;
mod error;
mod image_io;
mod json;
mod obj;
mod ply;
mod weights;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, FORMAT_VERSION, MAGIC};
pub use error::{AssetError, AssetErrorKind, Location};
pub use image_io::{decode_png, decode_raw, encode_png, encode_raw};
pub use json::{
    from_json, load_model, parse_camera, parse_pose, parse_rig, save_model, to_json, write_pose, JointsFile, ModelFile,
    PoseFile,
};
pub use obj::{parse_obj, write_obj};
pub use ply::{
    parse_elements, parse_header, parse_mesh_ply, parse_splat_ply, write_mesh_ply, write_splat_ply, ElementData,
    ElementDecl, Property, ScalarType, SH_C0,
};
pub use weights::{read_weights, write_weights, WeightsHeader};

use crate::body_model::Pose;
use crate::gaussian::GaussianSet;
use crate::mesh::Mesh;
use crate::nnet::NetworkParams;
use crate::real::Real;
use crate::render::{Camera, Image};

type Res<T> = std::result::Result<T, AssetError>;

pub fn read_bytes(path: &Path) -> Res<Vec<u8>> {
    std::fs::read(path).map_err(|e| AssetError::io(e, path))
}

pub fn read_text(path: &Path) -> Res<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes)
        .map_err(|e| AssetError::bounds_at(e.utf8_error().valid_up_to(), format!("{} is not UTF-8", path.display())))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Res<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        AssetError::io(e, path)
    })
}

/// OBJ or PLY by extension.
pub fn load_mesh(path: &Path) -> Res<Mesh> {
    match extension(path).as_str() {
        "obj" => parse_obj(&read_text(path)?),
        "ply" => parse_mesh_ply(&read_bytes(path)?),
        other => Err(AssetError::invariant(format!("unknown mesh extension {other:?}"))),
    }
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Res<()> {
    match extension(path).as_str() {
        "obj" => write_atomic(path, write_obj(mesh).as_bytes()),
        "ply" => write_atomic(path, &write_mesh_ply(mesh)),
        other => Err(AssetError::invariant(format!("unknown mesh extension {other:?}"))),
    }
}

pub fn load_gaussians(path: &Path) -> Res<GaussianSet> {
    parse_splat_ply(&read_bytes(path)?)
}

pub fn save_gaussians(g: &GaussianSet, path: &Path) -> Res<()> {
    write_atomic(path, &write_splat_ply(g))
}

pub fn load_pose(path: &Path) -> Res<Pose> {
    parse_pose(&read_text(path)?)
}

pub fn save_pose(pose: &Pose, path: &Path) -> Res<()> {
    write_atomic(path, write_pose(pose).as_bytes())
}

pub fn load_camera(path: &Path) -> Res<Camera> {
    parse_camera(&read_text(path)?)
}

pub fn load_rig(path: &Path) -> Res<Vec<Camera>> {
    parse_rig(&read_text(path)?)
}

pub fn save_json<T: serde::Serialize>(value: &T, path: &Path) -> Res<()> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    from_json(&read_text(path)?)
}

/// PNG or raw f32 (`.f32`) by extension.
pub fn load_image(path: &Path) -> Res<Image> {
    match extension(path).as_str() {
        "png" => decode_png(&read_bytes(path)?),
        "f32" | "raw" => decode_raw(&read_bytes(path)?),
        other => Err(AssetError::invariant(format!("unknown image extension {other:?}"))),
    }
}

pub fn save_image(img: &Image, path: &Path) -> Res<()> {
    match extension(path).as_str() {
        "png" => write_atomic(path, &encode_png(img)?),
        "f32" | "raw" => write_atomic(path, &encode_raw(img)?),
        other => Err(AssetError::invariant(format!("unknown image extension {other:?}"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Res<NetworkParams<f32>> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn save_checkpoint<T: Real>(p: &NetworkParams<T>, path: &Path) -> Res<()> {
    write_atomic(path, &encode_checkpoint(p))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}
