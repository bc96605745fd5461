//! Deterministic driving-scene simulator.
//!
//! A scene is a time-indexed list of LiDAR sweeps (points in the sensor
//! frame plus the ego pose `T^g_e` and sensor mount `T^e_s`), a camera rig,
//! box annotations every `annotation_every` sweeps, and caption sidecars for
//! every box view that projects fully into a camera. Every object moves with
//! exactly constant velocity and constant yaw rate, and the generator returns
//! those ground-truth motion records alongside the scene.
//!
//! All randomness flows through [`crate::rng`] streams keyed by the scene
//! seed, so identical configs produce identical scenes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxPose, Quat, RigidTransform, Vec3};
use crate::projection::{self, CameraModel, Projection};
use crate::rng::{self, hash_str, label};
use crate::templates::{self, ClassSpec, Template};

pub const SCENE_FORMAT_VERSION: u32 = 1;
const POINT_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub seed: u64,
    pub n_sweeps: usize,
    /// Seconds between sweeps.
    pub sweep_interval: f64,
    /// Sweeps between annotated frames; `M = annotation_every * sweep_interval`.
    pub annotation_every: usize,
    pub n_objects: usize,
    /// Class names drawn for objects; must exist in the synthetic taxonomy.
    pub classes: Vec<String>,
    /// Initial object distance from the ego origin, meters.
    pub object_range: [f64; 2],
    /// Object speed range, m/s. Objects move along their heading.
    pub speed_range: [f64; 2],
    /// Object yaw-rate range, rad/s.
    pub yaw_rate_range: [f64; 2],
    /// Relative per-dimension size jitter around the class nominal size.
    pub size_jitter: f64,
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub lidar_mount: [f64; 3],
    pub lidar_mount_yaw: f64,
    /// Surface samples per object per sweep before culling and dropout.
    pub points_per_object: usize,
    /// Points closer than this are never dropped; beyond it the keep
    /// probability falls as `ref / d`.
    pub dropout_ref_distance: f64,
    pub clutter_points: usize,
    pub clutter_radius: f64,
    /// Standard deviation of the per-point range noise, meters.
    pub range_noise: f64,
    pub n_cameras: usize,
    pub image_size: [u32; 2],
    pub focal_length: f64,
    pub camera_height: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            name: "scene".into(),
            seed: 0,
            n_sweeps: 40,
            sweep_interval: 0.05,
            annotation_every: 10,
            n_objects: 8,
            classes: templates::outdoor_classes()
                .into_iter()
                .map(|c| c.name)
                .collect(),
            object_range: [6.0, 22.0],
            speed_range: [0.0, 8.0],
            yaw_rate_range: [0.0, 0.0],
            size_jitter: 0.08,
            ego_speed: 5.0,
            ego_yaw_rate: 0.0,
            lidar_mount: [0.9, 0.0, 1.8],
            lidar_mount_yaw: 0.0,
            points_per_object: 120,
            dropout_ref_distance: 12.0,
            clutter_points: 300,
            clutter_radius: 30.0,
            range_noise: 0.02,
            n_cameras: 6,
            image_size: [800, 450],
            focal_length: 400.0,
            camera_height: 1.6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let taxonomy = templates::synthetic_classes();
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        let range = |field: &str, r: [f64; 2], min: f64| {
            if r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("expected {min} <= lo <= hi, got {r:?}"),
                ))
            }
        };
        if self.n_sweeps == 0 {
            return Err(Error::config("n_sweeps", "need at least one sweep"));
        }
        if self.annotation_every == 0 {
            return Err(Error::config("annotation_every", "must be at least 1"));
        }
        positive("sweep_interval", self.sweep_interval)?;
        positive("dropout_ref_distance", self.dropout_ref_distance)?;
        positive("clutter_radius", self.clutter_radius)?;
        positive("focal_length", self.focal_length)?;
        range("object_range", self.object_range, 0.0)?;
        range("speed_range", self.speed_range, 0.0)?;
        range("yaw_rate_range", self.yaw_rate_range, f64::NEG_INFINITY)?;
        if !(self.range_noise >= 0.0 && self.range_noise.is_finite()) {
            return Err(Error::config("range_noise", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.size_jitter) {
            return Err(Error::config("size_jitter", "must be in [0, 0.5)"));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::config("image_size", "must be positive"));
        }
        if self.n_objects > 0 && self.classes.is_empty() {
            return Err(Error::config("classes", "empty class list with objects requested"));
        }
        for c in &self.classes {
            if templates::find_class(&taxonomy, c).is_none() {
                return Err(Error::config("classes", format!("unknown class `{c}`")));
            }
        }
        if !(self.ego_speed.is_finite() && self.ego_yaw_rate.is_finite()) {
            return Err(Error::config("ego_speed", "must be finite"));
        }
        Ok(())
    }

    pub fn annotation_interval(&self) -> f64 {
        self.annotation_every as f64 * self.sweep_interval
    }

    pub fn timestamp(&self, sweep: usize) -> f64 {
        sweep as f64 * self.sweep_interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub position: [f32; 3],
    pub intensity: f32,
}

impl LidarPoint {
    pub fn xyz(&self) -> Vec3 {
        Vec3::new(
            f64::from(self.position[0]),
            f64::from(self.position[1]),
            f64::from(self.position[2]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub timestamp: f64,
    /// `T^g_e` at this sweep.
    pub ego_pose: RigidTransform,
    /// `T^e_s`.
    pub sensor_mount: RigidTransform,
    /// Points in the sensor frame of this sweep.
    pub points: Vec<LidarPoint>,
}

impl Sweep {
    /// `T^g_s`.
    pub fn sensor_to_global(&self) -> RigidTransform {
        self.ego_pose.compose(&self.sensor_mount)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Box in the global frame.
    pub pose: BoxPose,
    /// Fraction of the sensor-facing surface not hidden by other objects.
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub class: String,
    /// Sorted by timestamp.
    pub annotations: Vec<Annotation>,
}

impl Track {
    pub fn at(&self, timestamp: f64) -> Option<&Annotation> {
        self.annotations
            .iter()
            .find(|a| same_time(a.pose.timestamp, timestamp))
    }
}

pub(crate) fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Key of one camera view of one instance at one annotated timestamp.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CropKey {
    pub instance_id: String,
    pub camera: usize,
    /// Timestamp in integer microseconds.
    pub t_us: i64,
}

impl CropKey {
    pub fn new(instance_id: &str, camera: usize, timestamp: f64) -> Self {
        CropKey {
            instance_id: instance_id.to_string(),
            camera,
            t_us: (timestamp * 1e6).round() as i64,
        }
    }

    pub fn parse(s: &str) -> Option<CropKey> {
        let mut parts = s.rsplitn(3, "__");
        let t = parts.next()?.parse().ok()?;
        let cam = parts.next()?.strip_prefix("cam")?.parse().ok()?;
        let inst = parts.next()?;
        Some(CropKey {
            instance_id: inst.to_string(),
            camera: cam,
            t_us: t,
        })
    }
}

impl fmt::Display for CropKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__cam{}__{}", self.instance_id, self.camera, self.t_us)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub seed: u64,
    /// `M`, seconds between annotated frames.
    pub annotation_interval: f64,
    pub sweeps: Vec<Sweep>,
    pub cameras: Vec<CameraModel>,
    /// instance id -> annotated track.
    pub tracks: BTreeMap<String, Track>,
    /// Caption sidecars keyed by crop.
    pub captions: BTreeMap<CropKey, String>,
}

impl Scene {
    pub fn sweep_index(&self, timestamp: f64) -> Option<usize> {
        self.sweeps
            .iter()
            .position(|s| same_time(s.timestamp, timestamp))
    }

    pub fn sweep_at(&self, timestamp: f64) -> Result<&Sweep> {
        self.sweep_index(timestamp)
            .map(|i| &self.sweeps[i])
            .ok_or(Error::MissingPose(timestamp))
    }

    pub fn track(&self, instance_id: &str) -> Result<&Track> {
        self.tracks
            .get(instance_id)
            .ok_or_else(|| Error::UnknownInstance(instance_id.to_string()))
    }
}

/// Exact motion of one simulated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub class: String,
    pub shape: templates::ShapeKind,
    pub size: Vec3,
    /// Center at t = 0, global frame.
    pub initial_center: Vec3,
    pub velocity: Vec3,
    pub initial_yaw: f64,
    pub yaw_rate: f64,
}

impl ObjectTruth {
    pub fn pose_at(&self, t: f64) -> BoxPose {
        BoxPose {
            center: self.initial_center + t * self.velocity,
            orientation: Quat::from_yaw(self.initial_yaw + self.yaw_rate * t),
            size: self.size,
            timestamp: t,
        }
    }

    pub fn template(&self) -> Template {
        Template::new(self.shape, self.size)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: BTreeMap<String, ObjectTruth>,
}

fn ego_pose_at(config: &SceneConfig, t: f64) -> RigidTransform {
    let w = config.ego_yaw_rate;
    let yaw = w * t;
    let pos = if w.abs() < 1e-12 {
        Vec3::new(config.ego_speed * t, 0.0, 0.0)
    } else {
        let r = config.ego_speed / w;
        Vec3::new(r * yaw.sin(), r * (1.0 - yaw.cos()), 0.0)
    };
    RigidTransform::new(Quat::from_yaw(yaw), pos).expect("yaw quaternion is unit")
}

fn sensor_mount(config: &SceneConfig) -> RigidTransform {
    RigidTransform::new(
        Quat::from_yaw(config.lidar_mount_yaw),
        Vec3::from(config.lidar_mount),
    )
    .expect("yaw quaternion is unit")
}

/// Evenly spaced surround rig. Camera `j` looks along ego yaw `j * 360/n`.
pub fn camera_rig(config: &SceneConfig) -> Vec<CameraModel> {
    let [w, h] = config.image_size;
    (0..config.n_cameras)
        .map(|j| {
            let yaw = std::f64::consts::TAU * j as f64 / config.n_cameras as f64;
            let (s, c) = yaw.sin_cos();
            // columns: camera x (right), y (down), z (forward) in ego axes
            let m = nalgebra::Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0);
            let q = nalgebra::UnitQuaternion::from_matrix(&m);
            let rotation = Quat::new(q.w, q.i, q.j, q.k);
            CameraModel {
                name: format!("cam{j}"),
                fx: config.focal_length,
                fy: config.focal_length,
                cx: f64::from(w) / 2.0,
                cy: f64::from(h) / 2.0,
                width: w,
                height: h,
                extrinsic: RigidTransform::new(
                    rotation,
                    Vec3::new(0.0, 0.0, config.camera_height),
                )
                .expect("rotation from orthonormal matrix"),
            }
        })
        .collect()
}

fn intensity_for(class: &str) -> f32 {
    0.2 + 0.6 * ((hash_str(class) % 1000) as f32 / 1000.0)
}

const CAPTION_PHRASES: [&str; 4] = [
    "a point cloud of a {}",
    "a photo of a {} on the road",
    "a {} seen from a moving vehicle",
    "a blurry picture of a {}",
];

/// Template caption for a crop; phrasing is picked by hashing the key.
pub fn template_caption(class: &str, key: &CropKey) -> String {
    let phrase = CAPTION_PHRASES[(hash_str(&key.to_string()) % CAPTION_PHRASES.len() as u64) as usize];
    phrase.replace("{}", class)
}

fn xy_clearance_ok(a: &ObjectTruth, b: &ObjectTruth, times: &[f64], margin: f64) -> bool {
    let ra = 0.5 * a.size.xy().norm();
    let rb = 0.5 * b.size.xy().norm();
    times.iter().all(|t| {
        let d = (a.pose_at(*t).center - b.pose_at(*t).center).xy().norm();
        d >= ra + rb + margin
    })
}

fn place_objects(config: &SceneConfig, times: &[f64]) -> GroundTruth {
    let taxonomy = templates::synthetic_classes();
    let mut rng = rng::stream(config.seed, &[label::SCENE_LAYOUT]);
    let mut objects: BTreeMap<String, ObjectTruth> = BTreeMap::new();
    for i in 0..config.n_objects {
        for _attempt in 0..200 {
            let class_name = &config.classes[rng.random_range(0..config.classes.len())];
            let class = templates::find_class(&taxonomy, class_name).expect("validated");
            let j = config.size_jitter;
            let size = Vec3::new(
                class.size[0] * (1.0 + rng.random_range(-j..=j)),
                class.size[1] * (1.0 + rng.random_range(-j..=j)),
                class.size[2] * (1.0 + rng.random_range(-j..=j)),
            );
            let dist = rng.random_range(config.object_range[0]..=config.object_range[1]);
            let bearing = rng.random_range(0.0..std::f64::consts::TAU);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(config.speed_range[0]..=config.speed_range[1]);
            let yaw_rate = rng.random_range(config.yaw_rate_range[0]..=config.yaw_rate_range[1]);
            let candidate = ObjectTruth {
                class: class.name.clone(),
                shape: class.shape,
                size,
                initial_center: Vec3::new(dist * bearing.cos(), dist * bearing.sin(), 0.5 * size.z),
                velocity: speed * Vec3::new(heading.cos(), heading.sin(), 0.0),
                initial_yaw: heading,
                yaw_rate,
            };
            let radius = 0.5 * size.xy().norm();
            let clear_of_ego = times.iter().all(|t| {
                let ego = ego_pose_at(config, *t).translation();
                (candidate.pose_at(*t).center - ego).xy().norm() >= radius + 3.0
            });
            let clear_of_others = objects
                .values()
                .all(|o| xy_clearance_ok(&candidate, o, times, 0.5));
            if clear_of_ego && clear_of_others {
                objects.insert(format!("obj-{i:03}"), candidate);
                break;
            }
        }
        if !objects.contains_key(&format!("obj-{i:03}")) {
            log::warn!("scene {}: could not place object {i}", config.name);
        }
    }
    GroundTruth { objects }
}

/// Slab test: does the segment `a -> b` pass through the box interior?
fn segment_hits_box(a: &Vec3, b: &Vec3, pose: &BoxPose) -> bool {
    let inv = pose.orientation.conjugate();
    let la = inv.rotate(&(a - pose.center));
    let lb = inv.rotate(&(b - pose.center));
    let d = lb - la;
    let half = pose.size * 0.5;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if la[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let mut ta = (-half[k] - la[k]) / d[k];
        let mut tb = (half[k] - la[k]) / d[k];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    t1 - t0 > 1e-9
}

const VISIBILITY_PROBES: usize = 48;

fn visibility_score(
    config: &SceneConfig,
    id: &str,
    truth: &GroundTruth,
    sensor: &Vec3,
    t: f64,
) -> f64 {
    let obj = &truth.objects[id];
    let pose = obj.pose_at(t);
    let tf = pose.transform();
    let template = obj.template();
    let mut probe_rng = rng::stream(config.seed, &[label::SCENE_LAYOUT, hash_str(id)]);
    let others: Vec<BoxPose> = truth
        .objects
        .iter()
        .filter(|(k, _)| k.as_str() != id)
        .map(|(_, o)| o.pose_at(t))
        .collect();
    let (mut facing, mut visible) = (0usize, 0usize);
    for _ in 0..VISIBILITY_PROBES {
        let (p, n) = template.sample_surface(&mut probe_rng);
        let pw = tf.apply(&p);
        if tf.apply_vector(&n).dot(&(sensor - pw)) <= 0.0 {
            continue;
        }
        facing += 1;
        if !others.iter().any(|b| segment_hits_box(sensor, &pw, b)) {
            visible += 1;
        }
    }
    if facing == 0 {
        0.0
    } else {
        visible as f64 / facing as f64
    }
}

fn sample_sweep(
    config: &SceneConfig,
    truth: &GroundTruth,
    index: usize,
    ego_pose: RigidTransform,
    mount: RigidTransform,
) -> Sweep {
    let t = config.timestamp(index);
    let sensor_to_global = ego_pose.compose(&mount);
    let global_to_sensor = sensor_to_global.inverse();
    let sensor = sensor_to_global.translation();
    let mut rng = rng::stream(config.seed, &[label::SCENE_SWEEP, index as u64]);
    let mut points = Vec::new();

    let emit = |rng: &mut rng::StreamRng, p: Vec3, intensity: f32, points: &mut Vec<LidarPoint>| {
        let ray = p - sensor;
        let d = ray.norm();
        if d < 1e-6 {
            return;
        }
        if d > config.dropout_ref_distance
            && rng.random::<f64>() > config.dropout_ref_distance / d
        {
            return;
        }
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * config.range_noise;
        let noisy = sensor + ray * ((d + noise) / d);
        let local = global_to_sensor.apply(&noisy);
        points.push(LidarPoint {
            position: [local.x as f32, local.y as f32, local.z as f32],
            intensity,
        });
    };

    let poses: Vec<(BoxPose, &ObjectTruth)> =
        truth.objects.values().map(|o| (o.pose_at(t), o)).collect();
    for (pose, obj) in &poses {
        let tf = pose.transform();
        let template = obj.template();
        let intensity = intensity_for(&obj.class);
        for _ in 0..config.points_per_object {
            let (p, n) = template.sample_surface(&mut rng);
            let pw = tf.apply(&p);
            if tf.apply_vector(&n).dot(&(sensor - pw)) <= 0.0 {
                continue;
            }
            emit(&mut rng, pw, intensity, &mut points);
        }
    }

    for _ in 0..config.clutter_points {
        for _try in 0..20 {
            let r = config.clutter_radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let p = Vec3::new(sensor.x + r * a.cos(), sensor.y + r * a.sin(), 0.0);
            let clear = poses.iter().all(|(pose, _)| {
                let mut flat = *pose;
                flat.center.z = 0.0;
                !flat.contains(&p, 0.5)
            });
            if clear {
                emit(&mut rng, p, 0.05, &mut points);
                break;
            }
        }
    }

    Sweep {
        timestamp: t,
        ego_pose,
        sensor_mount: mount,
        points,
    }
}

/// `n` copies of `base` named `{name}-000`, `{name}-001`, ... with seeds
/// derived from `seed`.
pub fn scene_series(base: &SceneConfig, n: usize, seed: u64) -> Vec<SceneConfig> {
    (0..n)
        .map(|i| SceneConfig {
            name: format!("{}-{i:03}", base.name),
            seed: rng::derive_seed(seed, &[label::SCENE_LAYOUT, i as u64]),
            ..base.clone()
        })
        .collect()
}

/// Generate a scene and the exact motion of every object in it.
pub fn generate_scene(config: &SceneConfig) -> Result<(Scene, GroundTruth)> {
    config.validate()?;
    let times: Vec<f64> = (0..config.n_sweeps).map(|k| config.timestamp(k)).collect();
    let truth = place_objects(config, &times);
    let mount = sensor_mount(config);
    let cameras = camera_rig(config);

    let sweeps: Vec<Sweep> = (0..config.n_sweeps)
        .map(|k| sample_sweep(config, &truth, k, ego_pose_at(config, times[k]), mount))
        .collect();

    let mut tracks = BTreeMap::new();
    let mut captions = BTreeMap::new();
    for (id, obj) in &truth.objects {
        let mut annotations = Vec::new();
        for k in (0..config.n_sweeps).step_by(config.annotation_every) {
            let t = times[k];
            let sensor = sweeps[k].sensor_to_global().translation();
            let pose = obj.pose_at(t);
            let visibility = visibility_score(config, id, &truth, &sensor, t);
            for (j, cam) in cameras.iter().enumerate() {
                if let Projection::Corners(px) =
                    projection::project_corners(&pose, cam, &sweeps[k].ego_pose)
                {
                    if px.iter().all(|uv| cam.in_image(uv)) {
                        let key = CropKey::new(id, j, t);
                        captions.insert(key.clone(), template_caption(&obj.class, &key));
                    }
                }
            }
            annotations.push(Annotation { pose, visibility });
        }
        tracks.insert(
            id.clone(),
            Track {
                class: obj.class.clone(),
                annotations,
            },
        );
    }

    Ok((
        Scene {
            name: config.name.clone(),
            seed: config.seed,
            annotation_interval: config.annotation_interval(),
            sweeps,
            cameras,
            tracks,
            captions,
        },
        truth,
    ))
}

/// Procedural RGB crop of an instance as seen by one camera.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub pixels: Vec<u8>,
}

impl CropImage {
    /// Nearest-neighbour resample to `size x size`.
    pub fn thumbnail(&self, size: u32) -> CropImage {
        let mut pixels = Vec::with_capacity((size * size * 3) as usize);
        for y in 0..size {
            let sy = (u64::from(y) * u64::from(self.height) / u64::from(size)) as u32;
            for x in 0..size {
                let sx = (u64::from(x) * u64::from(self.width) / u64::from(size)) as u32;
                let o = ((sy * self.width + sx) * 3) as usize;
                pixels.extend_from_slice(&self.pixels[o..o + 3]);
            }
        }
        CropImage {
            width: size,
            height: size,
            pixels,
        }
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += f64::from(px[c]);
            }
        }
        let n = (self.pixels.len() / 3).max(1) as f64;
        acc.map(|v| v / n)
    }
}

/// Base texture color of a class.
pub fn class_color(class: &str) -> [u8; 3] {
    // known classes get evenly spaced hues; others hash to a hue
    let taxonomy = templates::synthetic_classes();
    let (hue, light) = match taxonomy.iter().position(|c| c.name == class) {
        Some(i) => (i as f64 / taxonomy.len() as f64, if i % 2 == 0 { 0.45 } else { 0.6 }),
        None => {
            let h = rng::mix64(hash_str(class));
            ((h % 3600) as f64 / 3600.0, 0.5)
        }
    };
    // HSL with s = 0.6, channels kept inside [40, 215] so stripes never clip
    let chroma = (1.0 - (2.0 * light - 1.0f64).abs()) * 0.6;
    let channel = |offset: f64| {
        let k = (offset + hue * 12.0) % 12.0;
        let v = light - chroma * (k - 3.0).min(9.0 - k).clamp(-1.0, 1.0);
        (40.0 + v * 175.0).round() as u8
    };
    [channel(0.0), channel(8.0), channel(4.0)]
}

/// Render the stand-in RGB crop of `instance_id` in camera `camera` at `t`.
pub fn render_crop_stub(scene: &Scene, instance_id: &str, camera: usize, t: f64) -> Result<CropImage> {
    let track = scene.track(instance_id)?;
    let not_visible = || Error::NotVisible {
        instance: instance_id.to_string(),
        camera,
        timestamp: t,
    };
    let annotation = track.at(t).ok_or_else(not_visible)?;
    let cam = scene
        .cameras
        .get(camera)
        .ok_or_else(|| Error::invalid(format!("no camera {camera}")))?;
    let sweep = scene.sweep_at(t)?;
    let px = match projection::project_corners(&annotation.pose, cam, &sweep.ego_pose) {
        Projection::Corners(px) if px.iter().all(|uv| cam.in_image(uv)) => px,
        _ => return Err(not_visible()),
    };
    let (u0, v0, u1, v1) = projection::Aabb::tight(&px).pixel_window();
    Ok(procedural_texture(&track.class, instance_id, (u0, v0), u1 - u0, v1 - v0))
}

/// Striped texture in the class color, shaded per instance. `origin` is the
/// window's top-left pixel so neighbouring crops line up.
pub fn procedural_texture(class: &str, instance_id: &str, origin: (u32, u32), width: u32, height: u32) -> CropImage {
    let base = class_color(class);
    let period = 3 + (hash_str(class) % 5) as u32;
    let shade = (rng::mix64(hash_str(instance_id)) % 9) as i32 - 4;
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let stripe = if ((x + origin.0 + y + origin.1) / period).is_multiple_of(2) { 12 } else { -12 };
            for c in base {
                pixels.push((i32::from(c) + stripe + shade).clamp(0, 255) as u8);
            }
        }
    }
    CropImage {
        width,
        height,
        pixels,
    }
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SweepEntry {
    index: usize,
    timestamp: f64,
    points_file: String,
    point_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    timestamp: f64,
    ego_pose: RigidTransform,
    sensor_mount: RigidTransform,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneManifest {
    format_version: u32,
    name: String,
    seed: u64,
    annotation_interval: f64,
    cameras: Vec<CameraModel>,
    pose_table: String,
    annotations: String,
    captions_dir: String,
    ground_truth: Option<String>,
    sweeps: Vec<SweepEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn encode_points(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for p in points {
        for v in p.position.iter().chain(std::iter::once(&p.intensity)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_points(bytes: &[u8], path: &Path) -> Result<Vec<LidarPoint>> {
    if !bytes.len().is_multiple_of(POINT_RECORD_BYTES) {
        let whole = bytes.len() / POINT_RECORD_BYTES * POINT_RECORD_BYTES;
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: whole as u64,
            reason: format!(
                "trailing {} bytes do not form a {POINT_RECORD_BYTES}-byte point record",
                bytes.len() - whole
            ),
        });
    }
    Ok(bytes
        .chunks_exact(POINT_RECORD_BYTES)
        .map(|r| {
            let f = |i: usize| f32::from_le_bytes([r[i], r[i + 1], r[i + 2], r[i + 3]]);
            LidarPoint {
                position: [f(0), f(4), f(8)],
                intensity: f(12),
            }
        })
        .collect())
}

/// Write a scene directory (see `docs/formats.md`).
pub fn write_scene(scene: &Scene, truth: Option<&GroundTruth>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("sweeps")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("captions")).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(scene.sweeps.len());
    let mut poses = Vec::with_capacity(scene.sweeps.len());
    for (i, sweep) in scene.sweeps.iter().enumerate() {
        let rel = format!("sweeps/{i:06}.bin");
        let path = dir.join(&rel);
        fs::write(&path, encode_points(&sweep.points)).map_err(|e| Error::io(&path, e))?;
        entries.push(SweepEntry {
            index: i,
            timestamp: sweep.timestamp,
            points_file: rel,
            point_count: sweep.points.len(),
        });
        poses.push(PoseRow {
            timestamp: sweep.timestamp,
            ego_pose: sweep.ego_pose,
            sensor_mount: sweep.sensor_mount,
        });
    }
    for (key, text) in &scene.captions {
        let path = dir.join("captions").join(format!("{key}.txt"));
        fs::write(&path, text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    write_json(&dir.join("poses.json"), &poses)?;
    write_json(&dir.join("annotations.json"), &scene.tracks)?;
    if let Some(truth) = truth {
        write_json(&dir.join("ground_truth.json"), truth)?;
    }
    let manifest = SceneManifest {
        format_version: SCENE_FORMAT_VERSION,
        name: scene.name.clone(),
        seed: scene.seed,
        annotation_interval: scene.annotation_interval,
        cameras: scene.cameras.clone(),
        pose_table: "poses.json".into(),
        annotations: "annotations.json".into(),
        captions_dir: "captions".into(),
        ground_truth: truth.map(|_| "ground_truth.json".into()),
        sweeps: entries,
    };
    write_json(&dir.join("scene.json"), &manifest)
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    let manifest: SceneManifest = read_json(&dir.join("scene.json"))?;
    if manifest.format_version != SCENE_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported scene format version {}",
            manifest.format_version
        )));
    }
    let poses: Vec<PoseRow> = read_json(&dir.join(&manifest.pose_table))?;
    if poses.len() != manifest.sweeps.len() {
        return Err(Error::invalid("pose table and sweep list differ in length"));
    }
    let mut sweeps = Vec::with_capacity(poses.len());
    for (entry, pose) in manifest.sweeps.iter().zip(poses) {
        let path = dir.join(&entry.points_file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let points = decode_points(&bytes, &path)?;
        if points.len() != entry.point_count {
            return Err(Error::Corrupt {
                path,
                offset: bytes.len() as u64,
                reason: format!("expected {} points, found {}", entry.point_count, points.len()),
            });
        }
        if !same_time(pose.timestamp, entry.timestamp) {
            return Err(Error::invalid(format!(
                "pose table timestamp {} does not match sweep {}",
                pose.timestamp, entry.index
            )));
        }
        sweeps.push(Sweep {
            timestamp: entry.timestamp,
            ego_pose: pose.ego_pose,
            sensor_mount: pose.sensor_mount,
            points,
        });
    }
    if sweeps.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::invalid("sweep timestamps are not strictly increasing"));
    }
    let tracks: BTreeMap<String, Track> = read_json(&dir.join(&manifest.annotations))?;
    let captions = read_captions(&dir.join(&manifest.captions_dir))?;
    Ok(Scene {
        name: manifest.name,
        seed: manifest.seed,
        annotation_interval: manifest.annotation_interval,
        sweeps,
        cameras: manifest.cameras,
        tracks,
        captions,
    })
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    read_json(&dir.join("ground_truth.json"))
}

/// Load caption sidecars `<instance>__cam<j>__<t_us>.txt`. A missing
/// directory means no captions.
pub fn read_captions(dir: &Path) -> Result<BTreeMap<CropKey, String>> {
    let mut out = BTreeMap::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".txt") else {
            continue;
        };
        let Some(key) = CropKey::parse(stem) else {
            log::warn!("ignoring caption file with unparsable name {name}");
            continue;
        };
        let text = fs::read_to_string(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        out.insert(key, text.trim_end_matches('\n').to_string());
    }
    Ok(out)
}

/// Look up the class spec of a class name in the full taxonomy.
pub fn class_spec(name: &str) -> Option<ClassSpec> {
    templates::find_class(&templates::synthetic_classes(), name).cloned()
}
