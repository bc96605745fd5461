//! Pinhole projection of annotated boxes and crop-view selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxPose, RigidTransform, Vec3};

/// Default minimum visibility score for a crop to be kept.
pub const DEFAULT_MIN_VISIBILITY: f64 = 0.4;

/// Calibrated pinhole camera. The camera frame has +z along the optical
/// axis, +x to the right and +y down the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// `T^e_cam`: camera frame to ego frame.
    pub extrinsic: RigidTransform,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "camera {}: focal lengths must be positive",
                self.name
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "camera {}: image size must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Project a point already expressed in the camera frame.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    /// `T^cam_g` at a given ego pose `T^g_e`.
    pub fn camera_from_global(&self, ego_pose: &RigidTransform) -> RigidTransform {
        self.extrinsic.inverse().compose(&ego_pose.inverse())
    }

    pub fn in_image(&self, uv: &[f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] < f64::from(self.width) && uv[1] >= 0.0 && uv[1] < f64::from(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Corners([[f64; 2]; 8]),
    /// At least one corner has non-positive depth.
    BehindCamera,
}

/// Project the eight corners of a global-frame box into `camera`.
pub fn project_corners(
    box_pose: &BoxPose,
    camera: &CameraModel,
    ego_pose: &RigidTransform,
) -> Projection {
    let cam_from_global = camera.camera_from_global(ego_pose);
    let mut out = [[0.0; 2]; 8];
    for (slot, corner) in out.iter_mut().zip(box_pose.corners()) {
        match camera.project(&cam_from_global.apply(&corner)) {
            Some(uv) => *slot = uv,
            None => return Projection::BehindCamera,
        }
    }
    Projection::Corners(out)
}

/// Axis-aligned crop rectangle in pixels, `(u_min, v_min, u_max, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Aabb {
    pub fn tight(points: &[[f64; 2]]) -> Aabb {
        let mut b = Aabb {
            u_min: f64::INFINITY,
            v_min: f64::INFINITY,
            u_max: f64::NEG_INFINITY,
            v_max: f64::NEG_INFINITY,
        };
        for p in points {
            b.u_min = b.u_min.min(p[0]);
            b.v_min = b.v_min.min(p[1]);
            b.u_max = b.u_max.max(p[0]);
            b.v_max = b.v_max.max(p[1]);
        }
        b
    }

    /// Integer pixel window grown outward: `[u0, u1) x [v0, v1)`.
    pub fn pixel_window(&self) -> (u32, u32, u32, u32) {
        let u0 = self.u_min.floor().max(0.0) as u32;
        let v0 = self.v_min.floor().max(0.0) as u32;
        let u1 = self.u_max.ceil().max(0.0) as u32;
        let v1 = self.v_max.ceil().max(0.0) as u32;
        (u0, v0, u1.max(u0 + 1), v1.max(v0 + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropCandidate {
    pub instance_id: String,
    pub camera: usize,
    pub timestamp: f64,
    pub aabb: Aabb,
    pub visibility: f64,
}

/// All cameras in which every box corner lands inside the image and the
/// visibility score clears `min_visibility`.
pub fn select_valid_views(
    instance_id: &str,
    box_pose: &BoxPose,
    cameras: &[CameraModel],
    ego_pose: &RigidTransform,
    visibility: f64,
    min_visibility: f64,
) -> Vec<CropCandidate> {
    if visibility < min_visibility {
        return Vec::new();
    }
    cameras
        .iter()
        .enumerate()
        .filter_map(|(j, cam)| match project_corners(box_pose, cam, ego_pose) {
            Projection::Corners(px) if px.iter().all(|uv| cam.in_image(uv)) => Some(CropCandidate {
                instance_id: instance_id.to_string(),
                camera: j,
                timestamp: box_pose.timestamp,
                aabb: Aabb::tight(&px),
                visibility,
            }),
            _ => None,
        })
        .collect()
}
