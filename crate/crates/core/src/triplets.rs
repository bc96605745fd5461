//! Point-image-text triplets: assembly from fused outdoor objects, the
//! synthetic (CAD-like) domain generator, and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json`, `clouds.bin` and
//! `triplets.bin`; the binary layouts are documented in `docs/formats.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig};
use crate::geometry::Vec3;
use crate::projection::{self, CropCandidate};
use crate::rng::{self, hash_str, label};
use crate::scene::{self, CropImage, CropKey, Scene};
use crate::templates::{self, Template};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const THUMBNAIL_SIZE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Synthetic,
    Outdoor,
}

impl Domain {
    fn tag(self) -> u8 {
        match self {
            Domain::Synthetic => 0,
            Domain::Outdoor => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Domain> {
        match t {
            0 => Some(Domain::Synthetic),
            1 => Some(Domain::Outdoor),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Synthetic => "synthetic",
            Domain::Outdoor => "outdoor",
        })
    }
}

/// One object point cloud, shared by all triplets that reference it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCloud {
    /// `<instance>@<t_us>` for outdoor clouds, `<object>` for synthetic ones.
    pub id: String,
    /// Instance the cloud belongs to; used for held-out splits.
    pub instance_id: String,
    pub class: String,
    pub domain: Domain,
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Crop key (`<instance>__cam<j>__<t_us>`) or rendered-view id.
    pub key: String,
    pub thumbnail: Option<CropImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    /// Index into [`TripletDataset::clouds`].
    pub cloud: usize,
    pub image: ImageRef,
    pub caption: String,
    pub domain: Domain,
    /// Class label, used only for evaluation.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletDataset {
    pub name: String,
    pub config_hash: String,
    pub clouds: Vec<ObjectCloud>,
    pub triplets: Vec<Triplet>,
}

impl TripletDataset {
    pub fn empty(name: &str, config_hash: &str) -> Self {
        TripletDataset {
            name: name.to_string(),
            config_hash: config_hash.to_string(),
            clouds: Vec::new(),
            triplets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.clouds.iter().enumerate() {
            if c.points.is_empty() {
                return Err(Error::invalid(format!("cloud {i} ({}) is empty", c.id)));
            }
        }
        for (i, t) in self.triplets.iter().enumerate() {
            if t.caption.is_empty() {
                return Err(Error::invalid(format!("triplet {i} has an empty caption")));
            }
            let cloud = self
                .clouds
                .get(t.cloud)
                .ok_or_else(|| Error::invalid(format!("triplet {i} references missing cloud {}", t.cloud)))?;
            if cloud.domain != t.domain {
                return Err(Error::invalid(format!("triplet {i} domain differs from its cloud")));
            }
        }
        Ok(())
    }

    pub fn cloud_of(&self, t: &Triplet) -> &ObjectCloud {
        &self.clouds[t.cloud]
    }

    pub fn manifest(&self) -> TripletManifest {
        let mut counts: BTreeMap<Domain, BTreeMap<String, usize>> = BTreeMap::new();
        for t in &self.triplets {
            *counts.entry(t.domain).or_default().entry(t.label.clone()).or_default() += 1;
        }
        TripletManifest {
            format_version: DATASET_FORMAT_VERSION,
            name: self.name.clone(),
            config_hash: self.config_hash.clone(),
            n_clouds: self.clouds.len(),
            n_triplets: self.triplets.len(),
            counts,
            clouds_file: "clouds.bin".into(),
            triplets_file: "triplets.bin".into(),
        }
    }

    /// Concatenate datasets, re-indexing cloud references.
    pub fn merged(name: &str, config_hash: &str, parts: &[&TripletDataset]) -> TripletDataset {
        let mut out = TripletDataset::empty(name, config_hash);
        for part in parts {
            let offset = out.clouds.len();
            out.clouds.extend(part.clouds.iter().cloned());
            out.triplets.extend(part.triplets.iter().map(|t| Triplet {
                cloud: t.cloud + offset,
                ..t.clone()
            }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletManifest {
    pub format_version: u32,
    pub name: String,
    pub config_hash: String,
    pub n_clouds: usize,
    pub n_triplets: usize,
    /// Triplet counts per domain and class.
    pub counts: BTreeMap<Domain, BTreeMap<String, usize>>,
    pub clouds_file: String,
    pub triplets_file: String,
}

/// Hex SHA-256 of a config's JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config types serialize");
    hex::encode(Sha256::digest(&json))
}

/// Pair one cloud with every crop that has a caption. Returns the triplets
/// and the number of crops skipped for lack of a caption.
pub fn assemble_triplets(
    cloud_index: usize,
    class: &str,
    crops: &[CropCandidate],
    captions: &BTreeMap<CropKey, String>,
) -> (Vec<Triplet>, usize) {
    let mut skipped = 0;
    let mut out = Vec::with_capacity(crops.len());
    for crop in crops {
        let key = CropKey::new(&crop.instance_id, crop.camera, crop.timestamp);
        match captions.get(&key) {
            Some(caption) if !caption.is_empty() => out.push(Triplet {
                cloud: cloud_index,
                image: ImageRef {
                    key: key.to_string(),
                    thumbnail: None,
                },
                caption: caption.clone(),
                domain: Domain::Outdoor,
                label: class.to_string(),
            }),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutdoorConfig {
    pub fusion: FusionConfig,
    pub min_points: usize,
    pub min_visibility: f64,
    /// Largest allowed |t_crop - t0| in seconds; `None` pairs every
    /// annotated time of the instance.
    pub max_time_offset: Option<f64>,
    pub thumbnail_size: u32,
}

impl Default for OutdoorConfig {
    fn default() -> Self {
        OutdoorConfig {
            fusion: FusionConfig::default(),
            min_points: fusion::DEFAULT_MIN_POINTS,
            min_visibility: projection::DEFAULT_MIN_VISIBILITY,
            max_time_offset: None,
            thumbnail_size: THUMBNAIL_SIZE,
        }
    }
}

impl OutdoorConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(Error::config("min_visibility", "must be in [0, 1]"));
        }
        if let Some(m) = self.max_time_offset {
            if !(m >= 0.0) {
                return Err(Error::config("max_time_offset", "must be non-negative"));
            }
        }
        if self.thumbnail_size == 0 {
            return Err(Error::config("thumbnail_size", "must be positive"));
        }
        Ok(())
    }
}

/// Fuse, filter and pair every annotated object of a scene with its valid
/// captioned views.
pub fn build_outdoor_dataset(scene: &Scene, config: &OutdoorConfig) -> Result<TripletDataset> {
    config.validate()?;
    let mut ds = TripletDataset::empty(&scene.name, &config_hash(config));
    let mut skipped = 0usize;
    let mut dropped = 0usize;
    for fused in fusion::fuse_scene(scene, &config.fusion)? {
        if !fusion::filter_min_points(&fused, config.min_points) {
            dropped += 1;
            continue;
        }
        let track = scene.track(&fused.instance_id)?;
        let mut crops = Vec::new();
        for ann in &track.annotations {
            let t = ann.pose.timestamp;
            if let Some(m) = config.max_time_offset {
                if (t - fused.reference_time).abs() > m + 1e-9 {
                    continue;
                }
            }
            let sweep = scene.sweep_at(t)?;
            crops.extend(projection::select_valid_views(
                &fused.instance_id,
                &ann.pose,
                &scene.cameras,
                &sweep.ego_pose,
                ann.visibility,
                config.min_visibility,
            ));
        }
        if crops.is_empty() {
            continue;
        }
        let index = ds.clouds.len();
        let (mut triplets, n_skipped) = assemble_triplets(index, &fused.class, &crops, &scene.captions);
        skipped += n_skipped;
        if triplets.is_empty() {
            continue;
        }
        for t in &mut triplets {
            let key = CropKey::parse(&t.image.key).expect("keys are built by CropKey");
            let img = scene::render_crop_stub(scene, &key.instance_id, key.camera, key.t_us as f64 / 1e6)?;
            t.image.thumbnail = Some(img.thumbnail(config.thumbnail_size));
            t.image.key = format!("{}/{}", scene.name, t.image.key);
        }
        ds.clouds.push(ObjectCloud {
            id: format!(
                "{}/{}@{}",
                scene.name,
                fused.instance_id,
                (fused.reference_time * 1e6).round() as i64
            ),
            instance_id: format!("{}/{}", scene.name, fused.instance_id),
            class: fused.class.clone(),
            domain: Domain::Outdoor,
            points: fused.points,
        });
        ds.triplets.extend(triplets);
    }
    if skipped > 0 {
        log::info!("{}: skipped {skipped} crops without captions", scene.name);
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} clouds below {} points", scene.name, config.min_points);
    }
    Ok(ds)
}

/// Simulate `n_scenes` scenes from `base` with seeds derived from `seed`
/// and merge their outdoor datasets.
pub fn build_outdoor_corpus(
    base: &scene::SceneConfig,
    n_scenes: usize,
    seed: u64,
    config: &OutdoorConfig,
) -> Result<TripletDataset> {
    let parts = scene::scene_series(base, n_scenes, seed)
        .iter()
        .map(|cfg| {
            let (sc, _) = scene::generate_scene(cfg)?;
            build_outdoor_dataset(&sc, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TripletDataset> = parts.iter().collect();
    Ok(TripletDataset::merged(
        &base.name,
        &config_hash(&(base, n_scenes, seed, config)),
        &refs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub name: String,
    pub seed: u64,
    pub classes: Vec<String>,
    pub objects_per_class: usize,
    pub points_per_object: usize,
    /// Rendered views per object; each view is one triplet.
    pub views: usize,
    pub size_jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            seed: 0,
            classes: templates::synthetic_classes().into_iter().map(|c| c.name).collect(),
            objects_per_class: 20,
            points_per_object: 256,
            views: 12,
            size_jitter: 0.15,
        }
    }
}

const SYNTHETIC_PHRASES: [&str; 3] = ["a 3d model of a {}", "a rendering of a {}", "a cad model of a {}"];

/// Complete, clean, unit-sphere-normalized surface samples of the template
/// library, each paired with several rendered views.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<TripletDataset> {
    if config.points_per_object == 0 {
        return Err(Error::config("points_per_object", "must be positive"));
    }
    if config.views == 0 {
        return Err(Error::config("views", "must be positive"));
    }
    if !(0.0..0.5).contains(&config.size_jitter) {
        return Err(Error::config("size_jitter", "must be in [0, 0.5)"));
    }
    let taxonomy = templates::synthetic_classes();
    let mut ds = TripletDataset::empty(&config.name, &config_hash(config));
    for class_name in &config.classes {
        let class = templates::find_class(&taxonomy, class_name)
            .ok_or_else(|| Error::config("classes", format!("unknown class `{class_name}`")))?;
        for i in 0..config.objects_per_class {
            let id = format!("{}-{i:04}", class.name.replace(' ', "_"));
            let mut rng = rng::stream(config.seed, &[label::SYNTHETIC, hash_str(&id)]);
            let j = config.size_jitter;
            let scale = Vec3::new(
                1.0 + rng.random_range(-j..=j),
                1.0 + rng.random_range(-j..=j),
                1.0 + rng.random_range(-j..=j),
            );
            let template = Template::from_class(class, scale);
            let raw: Vec<Vec3> = (0..config.points_per_object)
                .map(|_| template.sample_surface(&mut rng).0)
                .collect();
            let points = normalize_unit_sphere(&raw);
            let index = ds.clouds.len();
            ds.clouds.push(ObjectCloud {
                id: id.clone(),
                instance_id: id.clone(),
                class: class.name.clone(),
                domain: Domain::Synthetic,
                points,
            });
            for v in 0..config.views {
                let key = format!("{id}__view{v:02}");
                let phrase = SYNTHETIC_PHRASES[(hash_str(&key) % SYNTHETIC_PHRASES.len() as u64) as usize];
                ds.triplets.push(Triplet {
                    cloud: index,
                    image: ImageRef {
                        thumbnail: Some(scene::procedural_texture(
                            &class.name,
                            &id,
                            (v as u32, 0),
                            THUMBNAIL_SIZE,
                            THUMBNAIL_SIZE,
                        )),
                        key,
                    },
                    caption: phrase.replace("{}", &class.name),
                    domain: Domain::Synthetic,
                    label: class.name.clone(),
                });
            }
        }
    }
    Ok(ds)
}

/// Center on the centroid and scale so the farthest point has norm 1.
pub fn normalize_unit_sphere(points: &[Vec3]) -> Vec<Vec3> {
    if points.is_empty() {
        return Vec::new();
    }
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let radius = points
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    let s = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    points.iter().map(|p| (p - centroid) * s).collect()
}

// ---------------------------------------------------------------------------
// Binary storage
// ---------------------------------------------------------------------------

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt(at, format!("{what} is not UTF-8")))
    }
    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }
    fn domain(&mut self) -> Result<Domain> {
        let at = self.pos;
        let t = self.u8("domain tag")?;
        Domain::from_tag(t).ok_or_else(|| self.corrupt(at, format!("unknown domain tag {t}")))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

const CLOUDS_MAGIC: &[u8; 4] = b"MXC1";
const TRIPLETS_MAGIC: &[u8; 4] = b"MXT1";

fn encode_clouds(clouds: &[ObjectCloud]) -> Vec<u8> {
    let mut w = Writer(CLOUDS_MAGIC.to_vec());
    w.u64(clouds.len() as u64);
    for c in clouds {
        w.str(&c.id);
        w.str(&c.instance_id);
        w.str(&c.class);
        w.u8(c.domain.tag());
        w.u32(c.points.len() as u32);
        for p in &c.points {
            w.f64(p.x);
            w.f64(p.y);
            w.f64(p.z);
        }
    }
    w.0
}

fn decode_clouds(buf: &[u8], path: &Path) -> Result<Vec<ObjectCloud>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4, "magic")? != CLOUDS_MAGIC {
        return Err(r.corrupt(0, "bad magic"));
    }
    let n = r.u64("cloud count")?;
    let mut out = Vec::new();
    for _ in 0..n {
        let id = r.str("cloud id")?;
        let instance_id = r.str("instance id")?;
        let class = r.str("class")?;
        let domain = r.domain()?;
        let np = r.u32("point count")? as usize;
        let mut points = Vec::with_capacity(np.min(1 << 20));
        for _ in 0..np {
            points.push(Vec3::new(r.f64("point")?, r.f64("point")?, r.f64("point")?));
        }
        out.push(ObjectCloud {
            id,
            instance_id,
            class,
            domain,
            points,
        });
    }
    if !r.done() {
        return Err(r.corrupt(r.pos, "trailing bytes after last cloud"));
    }
    Ok(out)
}

fn encode_triplets(triplets: &[Triplet]) -> Vec<u8> {
    let mut w = Writer(TRIPLETS_MAGIC.to_vec());
    w.u64(triplets.len() as u64);
    for t in triplets {
        w.u64(t.cloud as u64);
        w.u8(t.domain.tag());
        w.str(&t.label);
        w.str(&t.caption);
        w.str(&t.image.key);
        match &t.image.thumbnail {
            Some(img) => {
                w.u8(1);
                w.u32(img.width);
                w.u32(img.height);
                w.bytes(&img.pixels);
            }
            None => w.u8(0),
        }
    }
    w.0
}

fn decode_triplets(buf: &[u8], path: &Path, n_clouds: usize) -> Result<Vec<Triplet>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4, "magic")? != TRIPLETS_MAGIC {
        return Err(r.corrupt(0, "bad magic"));
    }
    let n = r.u64("triplet count")?;
    let mut out = Vec::new();
    for _ in 0..n {
        let at = r.pos;
        let cloud = r.u64("cloud index")? as usize;
        if cloud >= n_clouds {
            return Err(r.corrupt(at, format!("cloud index {cloud} out of range ({n_clouds} clouds)")));
        }
        let domain = r.domain()?;
        let label = r.str("label")?;
        let caption = r.str("caption")?;
        let key = r.str("image key")?;
        let at = r.pos;
        let thumbnail = match r.u8("thumbnail flag")? {
            0 => None,
            1 => {
                let width = r.u32("thumbnail width")?;
                let height = r.u32("thumbnail height")?;
                let at_px = r.pos;
                let pixels = r.bytes("thumbnail pixels")?.to_vec();
                if pixels.len() as u64 != u64::from(width) * u64::from(height) * 3 {
                    return Err(r.corrupt(at_px, "thumbnail size does not match its dimensions"));
                }
                Some(CropImage { width, height, pixels })
            }
            f => return Err(r.corrupt(at, format!("bad thumbnail flag {f}"))),
        };
        out.push(Triplet {
            cloud,
            image: ImageRef { key, thumbnail },
            caption,
            domain,
            label,
        });
    }
    if !r.done() {
        return Err(r.corrupt(r.pos, "trailing bytes after last triplet"));
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn write_dataset(ds: &TripletDataset, dir: &Path) -> Result<TripletManifest> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = ds.manifest();
    let clouds = dir.join(&manifest.clouds_file);
    fs::write(&clouds, encode_clouds(&ds.clouds)).map_err(io_err(&clouds))?;
    let triplets = dir.join(&manifest.triplets_file);
    fs::write(&triplets, encode_triplets(&ds.triplets)).map_err(io_err(&triplets))?;
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
    fs::write(&mpath, json).map_err(io_err(&mpath))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<TripletManifest> {
    let mpath = dir.join("manifest.json");
    let bytes = fs::read(&mpath).map_err(io_err(&mpath))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(&mpath, e))
}

pub fn read_dataset(dir: &Path) -> Result<TripletDataset> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let cpath: PathBuf = dir.join(&manifest.clouds_file);
    let cbytes = fs::read(&cpath).map_err(io_err(&cpath))?;
    let clouds = decode_clouds(&cbytes, &cpath)?;
    let tpath: PathBuf = dir.join(&manifest.triplets_file);
    let tbytes = fs::read(&tpath).map_err(io_err(&tpath))?;
    let triplets = decode_triplets(&tbytes, &tpath, clouds.len())?;
    let ds = TripletDataset {
        name: manifest.name.clone(),
        config_hash: manifest.config_hash.clone(),
        clouds,
        triplets,
    };
    let recount = ds.manifest();
    if recount.n_clouds != manifest.n_clouds
        || recount.n_triplets != manifest.n_triplets
        || recount.counts != manifest.counts
    {
        return Err(Error::invalid(format!(
            "{}: manifest counts do not match the records",
            dir.display()
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crop(camera: usize) -> CropCandidate {
        CropCandidate {
            instance_id: "obj-000".into(),
            camera,
            timestamp: 0.5,
            aabb: projection::Aabb {
                u_min: 0.0,
                v_min: 0.0,
                u_max: 10.0,
                v_max: 10.0,
            },
            visibility: 1.0,
        }
    }

    fn captions(cams: &[usize]) -> BTreeMap<CropKey, String> {
        cams.iter()
            .map(|c| (CropKey::new("obj-000", *c, 0.5), format!("a car {c}")))
            .collect()
    }

    #[test]
    fn assembly_cardinality() {
        let crops: Vec<_> = (0..3).map(crop).collect();
        let (t, s) = assemble_triplets(0, "car", &crops, &captions(&[0, 1, 2]));
        assert_eq!((t.len(), s), (3, 0));
        let (t, s) = assemble_triplets(0, "car", &[], &captions(&[0]));
        assert_eq!((t.len(), s), (0, 0));
        let (t, s) = assemble_triplets(0, "car", &crops[..2], &captions(&[1]));
        assert_eq!((t.len(), s), (1, 1));
        assert_eq!(t[0].caption, "a car 1");
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = TripletDataset::empty("e", "00");
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn synthetic_round_trip_and_truncation() {
        let ds = generate_synthetic(&SyntheticConfig {
            objects_per_class: 2,
            points_per_object: 32,
            views: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_eq!(ds.triplets.len(), 12 * 2 * 3);
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(m.counts[&Domain::Synthetic]["car"], 6);
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);

        let path = dir.path().join("clouds.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset as usize <= bytes.len() - 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synthetic_clouds_are_unit_normalized() {
        let ds = generate_synthetic(&SyntheticConfig {
            objects_per_class: 1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        for c in &ds.clouds {
            let r = c.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outdoor_dataset_from_scene() {
        let cfg = scene::SceneConfig {
            seed: 3,
            n_sweeps: 21,
            n_objects: 6,
            ..scene::SceneConfig::default()
        };
        let (sc, _) = scene::generate_scene(&cfg).unwrap();
        let ds = build_outdoor_dataset(&sc, &OutdoorConfig::default()).unwrap();
        ds.validate().unwrap();
        assert!(!ds.triplets.is_empty());
        for t in &ds.triplets {
            assert!(ds.cloud_of(t).points.len() >= 150);
            assert!(t.image.thumbnail.is_some());
            assert!(t.caption.contains(&t.label));
        }
        let again = build_outdoor_dataset(&sc, &OutdoorConfig::default()).unwrap();
        assert_eq!(ds, again);
    }
}
