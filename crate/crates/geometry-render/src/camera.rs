use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use occ_core::Se3Pose;

use crate::error::{RenderError, Result};

/// Camera role. The six base roles are listed in surround (cyclic) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraRole {
    FL,
    F,
    FR,
    BR,
    B,
    BL,
    Virtual(u32),
}

impl CameraRole {
    pub const BASE: [CameraRole; 6] = [Self::FL, Self::F, Self::FR, Self::BR, Self::B, Self::BL];

    pub fn is_virtual(&self) -> bool {
        matches!(self, Self::Virtual(_))
    }
}

impl fmt::Display for CameraRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FL => write!(f, "FL"),
            Self::F => write!(f, "F"),
            Self::FR => write!(f, "FR"),
            Self::BR => write!(f, "BR"),
            Self::B => write!(f, "B"),
            Self::BL => write!(f, "BL"),
            Self::Virtual(i) => write!(f, "V{i}"),
        }
    }
}

impl FromStr for CameraRole {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "FL" => Self::FL,
            "F" => Self::F,
            "FR" => Self::FR,
            "BR" => Self::BR,
            "B" => Self::B,
            "BL" => Self::BL,
            _ => match s.strip_prefix('V').and_then(|n| n.parse().ok()) {
                Some(i) => Self::Virtual(i),
                None => return Err(RenderError::InvalidRig(format!("unknown camera role {s:?}"))),
            },
        })
    }
}

/// Pinhole camera in the OpenCV convention (x right, y down, z forward);
/// `pose` maps camera coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Se3Pose,
    pub role: CameraRole,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(RenderError::InvalidCamera(format!("focal lengths {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("empty image".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(RenderError::InvalidCamera(format!("principal point ({}, {}) outside image", self.cx, self.cy)));
        }
        self.pose.validate()?;
        Ok(())
    }

    /// Camera at `eye` looking at `target`, image y pointing along `-up`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        (fx, fy, width, height): (f64, f64, usize, usize),
        role: CameraRole,
    ) -> Self {
        let z = (Vector3::from(target) - Vector3::from(eye)).normalize();
        let x = z.cross(&Vector3::from(up)).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            pose: Se3Pose { rotation, translation: Vector3::from(eye) },
            role,
        }
    }

    pub fn center(&self) -> [f64; 3] {
        self.pose.translation.into()
    }

    /// Unit world-space direction through continuous image point `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.pose.rotation * d).normalize().into()
    }

    /// Direction through the centre of pixel `(px, py)`.
    pub fn pixel_ray(&self, px: usize, py: usize) -> [f64; 3] {
        self.ray_direction(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Continuous image coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.pose.rotation.transpose() * (Vector3::from(p) - self.pose.translation);
        (c.z > 0.0).then(|| [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }
}

/// Per-pixel `(d, m)` with `m = o × d`, rows of `width` pixels.
pub fn plucker_embedding(cam: &Camera) -> Vec<[f64; 6]> {
    let o = cam.pose.translation;
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let d = Vector3::from(cam.pixel_ray(px, py));
            let m = o.cross(&d);
            out.push([d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    out
}

/// Cameras listed in cyclic adjacency order.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.cameras.iter().enumerate() {
            c.validate()?;
            if self.cameras[..i].iter().any(|o| o.role == c.role) {
                return Err(RenderError::InvalidRig(format!("duplicate role {}", c.role)));
            }
        }
        Ok(())
    }

    /// Six outward-facing cameras around `center` at the given height, in
    /// order FL, F, FR, BR, B, BL. Yaws follow a typical surround layout:
    /// F 0°, FL/FR ±55°, BL/BR ±110°, B 180° (counter-clockwise from +x).
    pub fn surround(center: [f64; 3], radius: f64, intrinsics: (f64, f64, usize, usize)) -> Self {
        let yaws = [55.0f64, 0.0, -55.0, -110.0, 180.0, 110.0];
        let cameras = CameraRole::BASE
            .iter()
            .zip(yaws)
            .map(|(&role, yaw)| {
                let (s, c) = yaw.to_radians().sin_cos();
                let eye = [center[0] + radius * c, center[1] + radius * s, center[2]];
                let target = [eye[0] + c, eye[1] + s, eye[2]];
                Camera::look_at(eye, target, [0.0, 0.0, 1.0], intrinsics, role)
            })
            .collect();
        Self { cameras }
    }

    pub fn find(&self, role: CameraRole) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.role == role)
    }
}

fn interpolate(a: &Camera, b: &Camera, t: f64, role: CameraRole) -> Camera {
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.pose.rotation));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.pose.rotation));
    let q = qa.try_slerp(&qb, t, 1e-12).unwrap_or(qa);
    let translation = a.pose.translation * (1.0 - t) + b.pose.translation * t;
    Camera { pose: Se3Pose { rotation: *q.to_rotation_matrix().matrix(), translation }, role, ..*a }
}

/// Inserts `insertions_per_gap` virtual cameras between every cyclically
/// adjacent pair: slerped rotation, linear translation and the left
/// neighbour's intrinsics. New cameras are numbered after existing virtual ones.
pub fn densify_rig(rig: &CameraRig, insertions_per_gap: usize) -> Result<CameraRig> {
    if insertions_per_gap == 0 {
        return Ok(rig.clone());
    }
    let n = rig.cameras.len();
    if n < 2 {
        return Err(RenderError::InvalidRig(format!("{n} cameras cannot be densified")));
    }
    let mut next_id = rig
        .cameras
        .iter()
        .filter_map(|c| match c.role {
            CameraRole::Virtual(i) => Some(i + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let mut cameras = Vec::with_capacity(n * (insertions_per_gap + 1));
    for i in 0..n {
        let (a, b) = (&rig.cameras[i], &rig.cameras[(i + 1) % n]);
        cameras.push(*a);
        for j in 1..=insertions_per_gap {
            let t = j as f64 / (insertions_per_gap + 1) as f64;
            cameras.push(interpolate(a, b, t, CameraRole::Virtual(next_id)));
            next_id += 1;
        }
    }
    Ok(CameraRig { cameras })
}
