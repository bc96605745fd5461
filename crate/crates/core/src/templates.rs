//! Parametric object templates and the toy class taxonomy.
//!
//! A template lives in its box frame: centered at the origin, length along
//! +x, width along +y, height along +z.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Box,
    /// Side-view "L" extruded along y: the block above `cut_z` and in front
    /// of `cut_x` (both as fractions of the extent from the rear/bottom) is
    /// removed.
    LShape { cut_x: f64, cut_z: f64 },
    /// Upright cylinder with diameter `min(l, w)`.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    /// Nominal `(l, w, h)` in meters.
    pub size: [f64; 3],
}

fn spec(name: &str, shape: ShapeKind, size: [f64; 3]) -> ClassSpec {
    ClassSpec {
        name: name.to_string(),
        shape,
        size,
    }
}

/// Road-user classes observed by the simulated vehicle.
pub fn outdoor_classes() -> Vec<ClassSpec> {
    vec![
        spec("car", ShapeKind::Box, [4.6, 1.9, 1.6]),
        spec(
            "truck",
            ShapeKind::LShape {
                cut_x: 0.75,
                cut_z: 0.6,
            },
            [7.5, 2.5, 3.2],
        ),
        spec("bus", ShapeKind::Box, [11.0, 2.9, 3.3]),
        spec("pedestrian", ShapeKind::Cylinder, [0.6, 0.6, 1.75]),
        spec("barrier", ShapeKind::Box, [0.4, 2.4, 1.0]),
        spec("traffic cone", ShapeKind::Cylinder, [0.4, 0.4, 0.8]),
    ]
}

/// The synthetic (CAD-like) taxonomy: every outdoor class plus indoor
/// objects never seen on the road.
pub fn synthetic_classes() -> Vec<ClassSpec> {
    let mut all = outdoor_classes();
    all.extend([
        spec(
            "chair",
            ShapeKind::LShape {
                cut_x: 0.25,
                cut_z: 0.5,
            },
            [0.6, 0.6, 1.0],
        ),
        spec(
            "sofa",
            ShapeKind::LShape {
                cut_x: 0.2,
                cut_z: 0.55,
            },
            [2.0, 0.9, 0.9],
        ),
        spec("table", ShapeKind::Box, [1.4, 0.8, 0.25]),
        spec("lamp", ShapeKind::Cylinder, [0.3, 0.3, 1.6]),
        spec("barrel", ShapeKind::Cylinder, [0.6, 0.6, 0.9]),
        spec("cabinet", ShapeKind::Box, [0.6, 1.0, 1.9]),
    ]);
    all
}

pub fn find_class<'a>(classes: &'a [ClassSpec], name: &str) -> Option<&'a ClassSpec> {
    classes.iter().find(|c| c.name == name)
}

#[derive(Debug, Clone, Copy)]
enum Patch {
    /// Rectangle `center + s*u + t*v`, `s, t in [-1, 1]`, outward `normal`.
    Rect {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        normal: Vec3,
    },
    Disc {
        center: Vec3,
        radius: f64,
        normal: Vec3,
    },
    CylinderSide {
        radius: f64,
        half_height: f64,
    },
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Rect { u, v, .. } => 4.0 * u.norm() * v.norm(),
            Patch::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
            Patch::CylinderSide {
                radius,
                half_height,
            } => 2.0 * std::f64::consts::PI * radius * 2.0 * half_height,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match *self {
            Patch::Rect {
                center,
                u,
                v,
                normal,
            } => {
                let s: f64 = rng.random_range(-1.0..=1.0);
                let t: f64 = rng.random_range(-1.0..=1.0);
                (center + s * u + t * v, normal)
            }
            Patch::Disc {
                center,
                radius,
                normal,
            } => {
                let r = radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (center + Vec3::new(r * a.cos(), r * a.sin(), 0.0), normal)
            }
            Patch::CylinderSide {
                radius,
                half_height,
            } => {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-half_height..=half_height);
                let n = Vec3::new(a.cos(), a.sin(), 0.0);
                (Vec3::new(radius * n.x, radius * n.y, z), n)
            }
        }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        match *self {
            Patch::Rect { center, u, v, .. } => {
                let d = p - center;
                let (lu, lv) = (u.norm(), v.norm());
                let (uh, vh) = (u / lu, v / lv);
                let s = d.dot(&uh).clamp(-lu, lu);
                let t = d.dot(&vh).clamp(-lv, lv);
                (d - s * uh - t * vh).norm()
            }
            Patch::Disc {
                center,
                radius,
                normal,
            } => {
                let d = p - center;
                let h = d.dot(&normal);
                let radial = d - h * normal;
                let r = radial.norm();
                let out = (r - radius).max(0.0);
                (h * h + out * out).sqrt()
            }
            Patch::CylinderSide {
                radius,
                half_height,
            } => {
                let r = (p.x * p.x + p.y * p.y).sqrt();
                let dz = (p.z.abs() - half_height).max(0.0);
                let dr = r - radius;
                (dr * dr + dz * dz).sqrt()
            }
        }
    }
}

/// A concrete template instance: a shape at a given size.
#[derive(Debug, Clone)]
pub struct Template {
    pub shape: ShapeKind,
    pub size: Vec3,
    patches: Vec<Patch>,
    cumulative_area: Vec<f64>,
}

fn rect(center: Vec3, u: Vec3, v: Vec3, normal: Vec3) -> Patch {
    Patch::Rect {
        center,
        u,
        v,
        normal,
    }
}

/// Axis-aligned rectangle spanning `[a0, a1] x [b0, b1]` on the plane
/// `axis = value`, where `a`/`b` are the other two axes in cyclic order.
fn axis_rect(axis: usize, value: f64, outward: f64, a: (f64, f64), b: (f64, f64)) -> Patch {
    let (ia, ib) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut center = Vec3::zeros();
    center[axis] = value;
    center[ia] = 0.5 * (a.0 + a.1);
    center[ib] = 0.5 * (b.0 + b.1);
    let mut u = Vec3::zeros();
    u[ia] = 0.5 * (a.1 - a.0);
    let mut v = Vec3::zeros();
    v[ib] = 0.5 * (b.1 - b.0);
    let mut n = Vec3::zeros();
    n[axis] = outward;
    rect(center, u, v, n)
}

impl Template {
    pub fn new(shape: ShapeKind, size: Vec3) -> Self {
        let (hl, hw, hh) = (0.5 * size.x, 0.5 * size.y, 0.5 * size.z);
        let patches = match shape {
            ShapeKind::Box => vec![
                axis_rect(0, hl, 1.0, (-hw, hw), (-hh, hh)),
                axis_rect(0, -hl, -1.0, (-hw, hw), (-hh, hh)),
                axis_rect(1, hw, 1.0, (-hh, hh), (-hl, hl)),
                axis_rect(1, -hw, -1.0, (-hh, hh), (-hl, hl)),
                axis_rect(2, hh, 1.0, (-hl, hl), (-hw, hw)),
                axis_rect(2, -hh, -1.0, (-hl, hl), (-hw, hw)),
            ],
            ShapeKind::LShape { cut_x, cut_z } => {
                let xc = -hl + cut_x * size.x;
                let zc = -hh + cut_z * size.z;
                vec![
                    // side walls, each split into the lower strip and the upper block
                    axis_rect(1, hw, 1.0, (-hh, zc), (-hl, hl)),
                    axis_rect(1, hw, 1.0, (zc, hh), (-hl, xc)),
                    axis_rect(1, -hw, -1.0, (-hh, zc), (-hl, hl)),
                    axis_rect(1, -hw, -1.0, (zc, hh), (-hl, xc)),
                    // bottom, rear, front-low, step top, step front, top
                    axis_rect(2, -hh, -1.0, (-hl, hl), (-hw, hw)),
                    axis_rect(0, -hl, -1.0, (-hw, hw), (-hh, hh)),
                    axis_rect(0, hl, 1.0, (-hw, hw), (-hh, zc)),
                    axis_rect(2, zc, 1.0, (xc, hl), (-hw, hw)),
                    axis_rect(0, xc, 1.0, (-hw, hw), (zc, hh)),
                    axis_rect(2, hh, 1.0, (-hl, xc), (-hw, hw)),
                ]
            }
            ShapeKind::Cylinder => {
                let r = 0.5 * size.x.min(size.y);
                vec![
                    Patch::CylinderSide {
                        radius: r,
                        half_height: hh,
                    },
                    Patch::Disc {
                        center: Vec3::new(0.0, 0.0, hh),
                        radius: r,
                        normal: Vec3::z(),
                    },
                    Patch::Disc {
                        center: Vec3::new(0.0, 0.0, -hh),
                        radius: r,
                        normal: -Vec3::z(),
                    },
                ]
            }
        };
        let mut total = 0.0;
        let cumulative_area = patches
            .iter()
            .map(|p| {
                total += p.area();
                total
            })
            .collect();
        Template {
            shape,
            size,
            patches,
            cumulative_area,
        }
    }

    pub fn from_class(class: &ClassSpec, scale: Vec3) -> Self {
        let size = Vec3::new(
            class.size[0] * scale.x,
            class.size[1] * scale.y,
            class.size[2] * scale.z,
        );
        Template::new(class.shape, size)
    }

    pub fn surface_area(&self) -> f64 {
        *self.cumulative_area.last().unwrap_or(&0.0)
    }

    /// Uniform-by-area surface sample: `(point, outward normal)`.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        let u = rng.random::<f64>() * self.surface_area();
        let idx = self
            .cumulative_area
            .partition_point(|c| *c < u)
            .min(self.patches.len() - 1);
        self.patches[idx].sample(rng)
    }

    /// Euclidean distance from `p` to the template surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.patches
            .iter()
            .map(|patch| patch.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Radius of the smallest origin-centered sphere containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        (self.size * 0.5).norm()
    }
}
