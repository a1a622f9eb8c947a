use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{is_rigid, transform_point, Mat3, Mat4, Vec3};

/// Pinhole camera, OpenCV convention: x right, y down, z forward. Pixel
/// `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rigid transform, row-major 4×4.
    #[serde(with = "mat4_rows")]
    pub world_to_camera: Mat4,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invariant("focal lengths must be positive".into()));
        }
        if !is_rigid(&self.world_to_camera, 1e-6) {
            return Err(Error::Invariant("camera extrinsic is not rigid".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Invariant("camera needs 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invariant("camera resolution is zero".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        transform_point(&self.world_to_camera, p)
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project_camera_point(&self, t: &Vec3) -> [f64; 2] {
        [self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy]
    }

    /// Camera centre in world coordinates.
    pub fn position(&self) -> Vec3 {
        let r = self.rotation();
        -(r.transpose() * self.world_to_camera.fixed_view::<3, 1>(0, 3))
    }

    /// Camera at `eye` looking at `target` with world `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, f: f64, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let x = (-up).cross(&z).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Camera {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_to_camera: crate::math::rigid(&r, &(-(r * eye))),
            width,
            height,
            near: 0.01,
            far: 100.0,
        }
    }
}

pub(crate) mod mat4_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::math::Mat4;

    pub fn serialize<S: Serializer>(m: &Mat4, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat4, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        Ok(Mat4::from_fn(|i, j| rows[i][j]))
    }
}

/// Four cameras at azimuths 0°, 90°, 180° and 270° around the vertical axis
/// through `centroid`, at elevation 0°, sharing intrinsics.
///
/// The cardinal rotations are built from exact `{0, ±1}` tables so that a 90°
/// rotation of the scene maps views onto each other without rounding.
pub fn four_view_rig(subject_radius: f64, resolution: usize, centroid: Vec3) -> Result<[Camera; 4]> {
    if !(subject_radius > 0.0) {
        return Err(Error::InvalidArgument("subject radius must be positive".into()));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let distance = 3.0 * subject_radius;
    let f = 1.2 * resolution as f64;
    let table = [(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)];
    Ok(table.map(|(sin, cos)| {
        let dir = Vec3::new(sin, 0.0, cos);
        // forward = -dir, down = -y, right = down × forward
        let z = -dir;
        let y = Vec3::new(0.0, -1.0, 0.0);
        let x = y.cross(&z);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let eye = centroid + dir * distance;
        Camera {
            fx: f,
            fy: f,
            cx: resolution as f64 / 2.0,
            cy: resolution as f64 / 2.0,
            world_to_camera: crate::math::rigid(&r, &(-(r * eye))),
            width: resolution,
            height: resolution,
            near: 0.01 * subject_radius,
            far: 100.0 * subject_radius,
        }
    }))
}
