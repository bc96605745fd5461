//! Multi-sweep accumulation: ego-motion compensation into a reference
//! sensor frame, then per-object cropping and forward warping into the
//! object's canonical frame at the reference time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_chain, interpolate_pose, BoxPose, ObjectMotion, RigidTransform, Vec3};
use crate::scene::{same_time, Annotation, Scene};
use crate::templates::Template;

pub const DEFAULT_FUSED_SWEEPS: usize = 10;
pub const DEFAULT_CROP_MARGIN: f64 = 0.1;
pub const DEFAULT_MIN_POINTS: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Sweeps accumulated per object, counting the reference sweep.
    pub n_sweeps: usize,
    /// Crop box inflation per side, meters.
    pub crop_margin: f64,
    /// When false, points are re-centred but not shifted by the object's
    /// velocity (the uncompensated baseline).
    pub compensate_motion: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            n_sweeps: DEFAULT_FUSED_SWEEPS,
            crop_margin: DEFAULT_CROP_MARGIN,
            compensate_motion: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0 {
            return Err(Error::config("n_sweeps", "must be at least 1"));
        }
        if !(self.crop_margin >= 0.0 && self.crop_margin.is_finite()) {
            return Err(Error::config("crop_margin", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedObjectCloud {
    pub instance_id: String,
    pub class: String,
    pub reference_time: f64,
    /// Points in the canonical object frame at the reference time.
    pub points: Vec<Vec3>,
    /// Number of sweeps that contributed to the window.
    pub source_sweeps: usize,
    /// Cropped points per contributing sweep, newest first.
    pub per_sweep_counts: Vec<usize>,
    /// Box at the reference time in the reference sensor frame.
    pub reference_box: BoxPose,
}

impl FusedObjectCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `T^{s_t0}_{s_t}`: sensor frame at `t` into the sensor frame at `t0`.
pub fn sweep_to_reference(scene: &Scene, t: f64, t0: f64) -> Result<RigidTransform> {
    let src = scene.sweep_at(t)?;
    let dst = scene.sweep_at(t0)?;
    compose_chain(&[
        dst.sensor_mount.inverse(),
        dst.ego_pose.inverse(),
        src.ego_pose,
        src.sensor_mount,
    ])
}

/// Points of sweep `t` expressed in the sensor frame of sweep `t0`.
pub fn compensate_sweep(scene: &Scene, t: f64, t0: f64) -> Result<Vec<Vec3>> {
    let sweep = scene.sweep_at(t)?;
    let points = sweep.points.iter().map(|p| p.xyz());
    if same_time(t, t0) {
        return Ok(points.collect());
    }
    let tf = sweep_to_reference(scene, t, t0)?;
    Ok(points.map(|p| tf.apply(&p)).collect())
}

/// Annotation pair whose interval contains `t`, or the annotation at `t`
/// when `t` is the earliest annotated time.
fn enclosing(anns: &[Annotation], t: f64) -> Option<(Option<&Annotation>, &Annotation)> {
    let idx = anns
        .iter()
        .position(|a| a.pose.timestamp >= t || same_time(a.pose.timestamp, t))?;
    if same_time(anns[idx].pose.timestamp, t) {
        return Some((idx.checked_sub(1).map(|i| &anns[i]), &anns[idx]));
    }
    if idx == 0 {
        return None;
    }
    Some((Some(&anns[idx - 1]), &anns[idx]))
}

/// Accumulate the `n_sweeps` most recent sweeps up to `t0` for one object.
pub fn fuse_object(scene: &Scene, instance_id: &str, t0: f64, config: &FusionConfig) -> Result<FusedObjectCloud> {
    config.validate()?;
    let track = scene.track(instance_id)?;
    let anns = &track.annotations;
    let ref_idx = anns
        .iter()
        .position(|a| same_time(a.pose.timestamp, t0))
        .ok_or_else(|| Error::invalid(format!("instance `{instance_id}` is not annotated at t={t0}")))?;
    let ref_sweep = scene
        .sweep_index(t0)
        .ok_or(Error::MissingPose(t0))?;
    let global_to_ref = scene.sweeps[ref_sweep].sensor_to_global().inverse();
    let local = |a: &Annotation| a.pose.transformed(&global_to_ref);

    let reference_box = local(&anns[ref_idx]);
    let mut motion = match ref_idx.checked_sub(1) {
        Some(p) => ObjectMotion::from_annotations(&local(&anns[p]), &reference_box)?,
        None => ObjectMotion::stationary(reference_box),
    };
    if !config.compensate_motion {
        motion = ObjectMotion::stationary(reference_box);
    }
    let earliest = anns[0].pose.timestamp;

    let mut points = Vec::new();
    let mut per_sweep_counts = Vec::new();
    let first = (ref_sweep + 1).saturating_sub(config.n_sweeps);
    for k in (first..=ref_sweep).rev() {
        let t = scene.sweeps[k].timestamp;
        if t < earliest && !same_time(t, earliest) {
            break;
        }
        let crop_box = match enclosing(anns, t) {
            Some((Some(prev), cur)) => interpolate_pose(&local(prev), &local(cur), t)?,
            Some((None, cur)) => local(cur),
            None => break,
        };
        let cropped: Vec<Vec3> = compensate_sweep(scene, t, t0)?
            .into_iter()
            .filter(|p| crop_box.contains(p, config.crop_margin))
            .collect();
        per_sweep_counts.push(cropped.len());
        points.extend(crate::geometry::warp_to_canonical(&cropped, &motion, t, t0));
    }
    Ok(FusedObjectCloud {
        instance_id: instance_id.to_string(),
        class: track.class.clone(),
        reference_time: t0,
        source_sweeps: per_sweep_counts.len(),
        per_sweep_counts,
        points,
        reference_box,
    })
}

/// Keep iff the cloud has at least `threshold` points.
pub fn filter_min_points(cloud: &FusedObjectCloud, threshold: usize) -> bool {
    cloud.len() >= threshold
}

/// Fuse every (instance, annotated time) pair of a scene, in parallel across
/// instances. Output order is by instance id, then time.
pub fn fuse_scene(scene: &Scene, config: &FusionConfig) -> Result<Vec<FusedObjectCloud>> {
    config.validate()?;
    let jobs: Vec<(&String, f64)> = scene
        .tracks
        .iter()
        .flat_map(|(id, track)| track.annotations.iter().map(move |a| (id, a.pose.timestamp)))
        .collect();
    jobs.par_iter()
        .map(|(id, t0)| fuse_object(scene, id, *t0, config))
        .collect()
}

/// Mean distance from each point to the template surface.
pub fn mean_surface_distance(points: &[Vec3], template: &Template) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| template.surface_distance(p)).sum::<f64>() / points.len() as f64
}

/// Root-mean-square distance to the template surface.
pub fn rms_surface_distance(points: &[Vec3], template: &Template) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let ss: f64 = points.iter().map(|p| template.surface_distance(p).powi(2)).sum();
    (ss / points.len() as f64).sqrt()
}
