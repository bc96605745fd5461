//! Hidden point removal: approximate visibility of a point set from a
//! viewpoint by spherical flipping followed by a convex hull, plus
//! viewpoint sampling on a spherical shell for occlusion augmentation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::hull;
use crate::rng::{self, hash_str, label};
use crate::triplets::TripletDataset;

pub const DEFAULT_GAMMA: f64 = 1e2;

/// Flip every point about the sphere of radius `radius` centred on the
/// viewpoint: `p' = p + 2 (R - |p|) p / |p|` with `p` relative to the
/// viewpoint. Points at the viewpoint map to `None`.
pub fn spherical_inversion(points: &[Vec3], viewpoint: &Vec3, radius: f64) -> Result<Vec<Option<Vec3>>> {
    let rel: Vec<Vec3> = points.iter().map(|p| p - viewpoint).collect();
    let max = rel.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if !(radius >= max) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "inversion radius {radius} is smaller than the farthest point {max}"
        )));
    }
    Ok(rel
        .iter()
        .map(|p| {
            let n = p.norm();
            (n > 0.0).then(|| p + p * (2.0 * (radius - n) / n))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    /// One flag per input point.
    pub mask: Vec<bool>,
    /// True when the flipped set had no 3D hull; every point is then marked
    /// visible.
    pub degenerate: bool,
    /// Points coincident with the viewpoint, always marked hidden.
    pub excluded: usize,
}

impl Visibility {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        points
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Points visible from `viewpoint`: those whose flipped image is a vertex of
/// the convex hull of the flipped set plus the viewpoint, with
/// `R = gamma * max |p - viewpoint|`.
pub fn hpr_visible(points: &[Vec3], viewpoint: &Vec3, gamma: f64) -> Result<Visibility> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    if points.is_empty() {
        return Ok(Visibility {
            mask: Vec::new(),
            degenerate: false,
            excluded: 0,
        });
    }
    let max = points.iter().map(|p| (p - viewpoint).norm()).fold(0.0, f64::max);
    let flipped = spherical_inversion(points, viewpoint, gamma * max)?;
    let kept: Vec<usize> = (0..points.len()).filter(|&i| flipped[i].is_some()).collect();
    let excluded = points.len() - kept.len();
    if excluded > 0 {
        log::debug!("hpr: {excluded} points coincide with the viewpoint");
    }
    let mut cloud: Vec<Vec3> = kept.iter().map(|&i| flipped[i].expect("kept")).collect();
    cloud.push(Vec3::zeros());
    let hull = hull::convex_hull(&cloud);
    let mut mask = vec![false; points.len()];
    let degenerate = match hull.vertex_mask(&cloud) {
        Some(on_hull) => {
            for (j, &i) in kept.iter().enumerate() {
                mask[i] = on_hull[j];
            }
            false
        }
        None => {
            for &i in &kept {
                mask[i] = true;
            }
            true
        }
    };
    Ok(Visibility {
        mask,
        degenerate,
        excluded,
    })
}

/// Uniform direction, uniform radius in `[r_min, r_max]`, around `centroid`.
pub fn sample_viewpoint<R: Rng + ?Sized>(rng: &mut R, centroid: &Vec3, r_min: f64, r_max: f64) -> Result<Vec3> {
    if !(r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
        return Err(Error::invalid(format!(
            "viewpoint shell needs 0 < r_min <= r_max, got [{r_min}, {r_max}]"
        )));
    }
    let dir = loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    let r = if r_min == r_max { r_min } else { rng.random_range(r_min..=r_max) };
    Ok(centroid + dir * r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub gamma: f64,
    /// Shell radii as multiples of each cloud's bounding radius.
    pub r_min_factor: f64,
    pub r_max_factor: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            gamma: DEFAULT_GAMMA,
            r_min_factor: 2.0,
            r_max_factor: 6.0,
            seed: 0,
        }
    }
}

/// Replace every cloud with the part visible from one sampled viewpoint.
/// A cloud whose visible part is empty is kept unchanged.
pub fn augment_dataset(ds: &TripletDataset, config: &AugmentConfig) -> Result<TripletDataset> {
    let mut out = ds.clone();
    out.config_hash = crate::triplets::config_hash(&(&ds.config_hash, config));
    for cloud in &mut out.clouds {
        let centroid = cloud.points.iter().fold(Vec3::zeros(), |a, p| a + p) / cloud.points.len().max(1) as f64;
        let radius = cloud
            .points
            .iter()
            .map(|p| (p - centroid).norm())
            .fold(0.0, f64::max)
            .max(1e-6);
        let mut rng = rng::stream(config.seed, &[label::HPR_AUGMENT, hash_str(&cloud.id)]);
        let vp = sample_viewpoint(
            &mut rng,
            &centroid,
            config.r_min_factor * radius,
            config.r_max_factor * radius,
        )?;
        let vis = hpr_visible(&cloud.points, &vp, config.gamma)?;
        let kept = vis.apply(&cloud.points);
        if !kept.is_empty() {
            cloud.points = kept;
        }
    }
    Ok(out)
}
