//! JSON documents: body models, poses, cameras and configuration files.
//!
//! A model file names its template mesh (OBJ) and dense weights (binary f32)
//! by paths relative to the model file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::error::{AssetError, AssetErrorKind, Location};
use super::weights::{read_weights, write_weights};
use super::{read_bytes, read_text, write_atomic};
use crate::body_model::{BodyModel, Pose, Skeleton};
use crate::math::Vec3;
use crate::render::Camera;

type Res<T> = std::result::Result<T, AssetError>;

pub fn from_json<T: DeserializeOwned>(text: &str) -> Res<T> {
    serde_json::from_str(text).map_err(|e| {
        let kind = match e.classify() {
            serde_json::error::Category::Data => AssetErrorKind::Invariant,
            _ => AssetErrorKind::Syntax,
        };
        AssetError::new(kind, Location::Line(e.line()), e.to_string())
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable value") + "\n"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    /// Per-joint axis-angle rotation, radians.
    pub axis_angle: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
    #[serde(default)]
    pub expression: Vec<f64>,
    #[serde(default)]
    pub hand_pose: Vec<f64>,
}

impl From<&Pose> for PoseFile {
    fn from(p: &Pose) -> Self {
        PoseFile {
            axis_angle: p.axis_angle(),
            root_translation: p.root_translation.into(),
            expression: p.expression.clone(),
            hand_pose: p.hand_pose.clone(),
        }
    }
}

impl PoseFile {
    pub fn to_pose(&self) -> Res<Pose> {
        if self
            .axis_angle
            .iter()
            .flatten()
            .chain(&self.root_translation)
            .any(|v| !v.is_finite())
        {
            return Err(AssetError::invariant("pose contains non-finite values"));
        }
        let mut p = Pose::from_axis_angle(&self.axis_angle, Vec3::from(self.root_translation));
        p.expression = self.expression.clone();
        p.hand_pose = self.hand_pose.clone();
        Ok(p)
    }
}

pub fn parse_pose(text: &str) -> Res<Pose> {
    from_json::<PoseFile>(text)?.to_pose()
}

pub fn write_pose(pose: &Pose) -> String {
    to_json(&PoseFile::from(pose))
}

pub fn parse_camera(text: &str) -> Res<Camera> {
    let c: Camera = from_json(text)?;
    c.validate()?;
    Ok(c)
}

/// A camera rig file: a list of cameras.
pub fn parse_rig(text: &str) -> Res<Vec<Camera>> {
    let cams: Vec<Camera> = from_json(text)?;
    if cams.is_empty() {
        return Err(AssetError::invariant("camera rig is empty"));
    }
    for c in &cams {
        c.validate()?;
    }
    Ok(cams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointsFile {
    /// Parent index per joint, −1 for the root.
    pub parents: Vec<i64>,
    pub rest_offsets: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub joints: JointsFile,
    pub shape_dim: usize,
    /// `shape_dim × J × 3`, row-major.
    pub regressor: Vec<f64>,
    pub template_mesh: PathBuf,
    pub weights: PathBuf,
    pub canonical_pose: PoseFile,
    #[serde(default)]
    pub expression_dim: usize,
    #[serde(default)]
    pub hand_dim: usize,
}

pub fn load_model(path: &Path) -> Res<BodyModel> {
    let file: ModelFile = from_json(&read_text(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let template = super::obj::parse_obj(&read_text(&dir.join(&file.template_mesh))?)?;
    let weights_path = dir.join(&file.weights);
    let joints = file.joints.parents.len();
    let weights = read_weights(
        &read_bytes(&weights_path)?,
        &read_text(&weights_path.with_extension("json"))?,
    )?;
    let parents = file
        .joints
        .parents
        .iter()
        .map(|&p| if p < 0 { None } else { Some(p as usize) })
        .collect();
    let skeleton = Skeleton::new(
        parents,
        file.joints.rest_offsets.iter().map(|o| Vec3::from(*o)).collect(),
        file.canonical_pose.to_pose()?,
    )?;
    if weights.0 != template.vertex_count() || weights.1 != joints {
        return Err(AssetError::invariant(format!(
            "weights are {}x{} but the model has {} vertices and {joints} joints",
            weights.0,
            weights.1,
            template.vertex_count()
        )));
    }
    let model = BodyModel {
        skeleton,
        regressor: file.regressor,
        shape_dim: file.shape_dim,
        template,
        weights: weights.2,
        expression_dim: file.expression_dim,
        hand_dim: file.hand_dim,
    };
    model.validate()?;
    Ok(model)
}

/// Writes `path` plus `<stem>_template.obj`, `<stem>_weights.bin` and its
/// `.json` sidecar next to it.
pub fn save_model(model: &BodyModel, path: &Path) -> Res<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = path.parent().unwrap_or(Path::new("."));
    let mesh_name = PathBuf::from(format!("{stem}_template.obj"));
    let weights_name = PathBuf::from(format!("{stem}_weights.bin"));
    write_atomic(&dir.join(&mesh_name), super::obj::write_obj(&model.template).as_bytes())?;
    let (bin, sidecar) = write_weights(&model.weights, model.joint_count());
    write_atomic(&dir.join(&weights_name), &bin)?;
    write_atomic(&dir.join(&weights_name).with_extension("json"), sidecar.as_bytes())?;
    let file = ModelFile {
        joints: JointsFile {
            parents: model
                .skeleton
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            rest_offsets: model.skeleton.rest_offsets.iter().map(|o| (*o).into()).collect(),
        },
        shape_dim: model.shape_dim,
        regressor: model.regressor.clone(),
        template_mesh: mesh_name,
        weights: weights_name,
        canonical_pose: PoseFile::from(model.canonical_pose()),
        expression_dim: model.expression_dim,
        hand_dim: model.hand_dim,
    };
    write_atomic(path, to_json(&file).as_bytes())
}
