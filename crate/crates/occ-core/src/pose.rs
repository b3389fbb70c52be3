use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Validated constructor: `RᵀR = I` and `det R = +1` within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::from(t) }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(OccError::InvalidPose("non-finite entries".into()));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(OccError::InvalidPose(format!("RᵀR deviates from I by {err:e}")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(OccError::InvalidPose(format!("det R = {det}")));
        }
        Ok(())
    }

    #[inline]
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        (self.rotation * Vector3::from(p) + self.translation).into()
    }

    #[inline]
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        (self.rotation * Vector3::from(v)).into()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Se3Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]
    }

    pub fn from_rows(rows: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        Self::new(r, Vector3::from(t))
    }
}

/// Annotated 3D box. The box frame has +x along the heading (length),
/// +y across (width) and +z up (height); `yaw` rotates the box frame about
/// world +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 3],
    /// `(width, length, height)` in metres.
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: u8,
    pub instance_id: u32,
}

impl OrientedBox {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(OccError::InvalidSpec(format!("box size {:?}", self.size)));
        }
        Ok(())
    }

    /// Half extents along box-frame `(x, y, z)` = `(length, width, height) / 2`.
    pub fn half_extents(&self) -> [f64; 3] {
        [self.size[1] / 2.0, self.size[0] / 2.0, self.size[2] / 2.0]
    }

    /// Box-to-world pose.
    pub fn pose(&self) -> Se3Pose {
        Se3Pose::from_yaw(self.yaw, self.center)
    }

    pub fn world_to_box(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    /// Inclusive containment test in the box frame.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let l = self.world_to_box(p);
        let h = self.half_extents();
        l[0].abs() <= h[0] && l[1].abs() <= h[1] && l[2].abs() <= h[2]
    }

    /// Inclusive footprint test ignoring height.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let l = self.world_to_box([x, y, self.center[2]]);
        let h = self.half_extents();
        l[0].abs() <= h[0] && l[1].abs() <= h[1]
    }

    /// World-space footprint corners, counter-clockwise.
    pub fn corners_xy(&self) -> [[f64; 2]; 4] {
        let h = self.half_extents();
        let (s, c) = self.yaw.sin_cos();
        let local = [[h[0], h[1]], [-h[0], h[1]], [-h[0], -h[1]], [h[0], -h[1]]];
        local.map(|[a, b]| [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b])
    }
}
