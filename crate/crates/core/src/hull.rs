//! Incremental 3D convex hull over exact orientation predicates.
//!
//! Points are inserted in lexicographic order (ties by input index), so the
//! result is a pure function of the input set. `orient3d` first evaluates the
//! determinant in floating point with a static error bound and falls back to
//! exact big-integer arithmetic when the sign is uncertain.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_bigint::BigInt;

use crate::geometry::Vec3;

/// Sign of `det[b - a, c - a, d - a]`: positive when `d` lies on the side of
/// plane `(a, b, c)` that the right-hand normal `(b - a) x (c - a)` points to.
pub fn orient3d(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> Ordering {
    let (adx, ady, adz) = (a.x - d.x, a.y - d.y, a.z - d.z);
    let (bdx, bdy, bdz) = (b.x - d.x, b.y - d.y, b.z - d.z);
    let (cdx, cdy, cdz) = (c.x - d.x, c.y - d.y, c.z - d.z);
    let bc = bdx * cdy - cdx * bdy;
    let ca = cdx * ady - adx * cdy;
    let ab = adx * bdy - bdx * ady;
    // det[a-d, b-d, c-d] = -det[b-a, c-a, d-a]
    let det = adz * bc + bdz * ca + cdz * ab;
    let permanent = (bdx * cdy).abs() + (cdx * bdy).abs();
    let permanent = permanent * adz.abs()
        + ((cdx * ady).abs() + (adx * cdy).abs()) * bdz.abs()
        + ((adx * bdy).abs() + (bdx * ady).abs()) * cdz.abs();
    let eps = f64::EPSILON * 0.5;
    let bound = (7.0 + 56.0 * eps) * eps * permanent;
    if det > bound {
        return Ordering::Less;
    }
    if -det > bound {
        return Ordering::Greater;
    }
    if !det.is_finite() || !permanent.is_finite() {
        return Ordering::Equal;
    }
    exact_orient3d(a, b, c, d)
}

/// `x = m * 2^e` with integer `m`.
fn decompose(x: f64) -> (i64, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1i64 << 52), exp - 1075)
    };
    (sign * m, e)
}

fn exact_orient3d(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> Ordering {
    let coords = [a, b, c, d].map(|p| [p.x, p.y, p.z].map(decompose));
    let min_e = coords
        .iter()
        .flatten()
        .filter(|(m, _)| *m != 0)
        .map(|(_, e)| *e)
        .min()
        .unwrap_or(0);
    let big = |(m, e): (i64, i32)| -> BigInt { BigInt::from(m) << ((e - min_e) as usize) };
    let p: Vec<[BigInt; 3]> = coords.iter().map(|c| c.map(big)).collect();
    let sub = |i: usize, j: usize| -> [BigInt; 3] {
        [&p[i][0] - &p[j][0], &p[i][1] - &p[j][1], &p[i][2] - &p[j][2]]
    };
    let (u, v, w) = (sub(1, 0), sub(2, 0), sub(3, 0));
    let det = &u[0] * (&v[1] * &w[2] - &v[2] * &w[1]) - &u[1] * (&v[0] * &w[2] - &v[2] * &w[0])
        + &u[2] * (&v[0] * &w[1] - &v[1] * &w[0]);
    det.sign().cmp_zero()
}

trait SignCmp {
    fn cmp_zero(self) -> Ordering;
}

impl SignCmp for num_bigint::Sign {
    fn cmp_zero(self) -> Ordering {
        match self {
            num_bigint::Sign::Minus => Ordering::Less,
            num_bigint::Sign::NoSign => Ordering::Equal,
            num_bigint::Sign::Plus => Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hull {
    /// Triangles as input indices, oriented outward.
    Solid { faces: Vec<[usize; 3]>, vertices: Vec<usize> },
    /// All points are coplanar (or fewer than four distinct points).
    Degenerate,
}

impl Hull {
    /// `on_hull[i]` is true iff input point `i` is a hull vertex or an exact
    /// duplicate of one.
    pub fn vertex_mask(&self, points: &[Vec3]) -> Option<Vec<bool>> {
        match self {
            Hull::Degenerate => None,
            Hull::Solid { vertices, .. } => {
                let mut mask = vec![false; points.len()];
                let keys: std::collections::HashSet<[u64; 3]> = vertices
                    .iter()
                    .map(|&v| bits_key(&points[v]))
                    .collect();
                for (i, p) in points.iter().enumerate() {
                    mask[i] = keys.contains(&bits_key(p));
                }
                Some(mask)
            }
        }
    }
}

fn bits_key(p: &Vec3) -> [u64; 3] {
    // +0.0 and -0.0 compare equal, so normalize them
    [p.x, p.y, p.z].map(|v| if v == 0.0 { 0u64 } else { v.to_bits() })
}

fn lex(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

struct Builder<'a> {
    pts: &'a [Vec3],
    faces: Vec<[usize; 3]>,
    alive: Vec<bool>,
    /// directed edge -> face that contains it in its winding
    edges: HashMap<(usize, usize), usize>,
}

impl<'a> Builder<'a> {
    fn add_face(&mut self, f: [usize; 3]) {
        let id = self.faces.len();
        self.faces.push(f);
        self.alive.push(true);
        for k in 0..3 {
            self.edges.insert((f[k], f[(k + 1) % 3]), id);
        }
    }

    fn kill_face(&mut self, id: usize) {
        self.alive[id] = false;
        let f = self.faces[id];
        for k in 0..3 {
            let e = (f[k], f[(k + 1) % 3]);
            if self.edges.get(&e) == Some(&id) {
                self.edges.remove(&e);
            }
        }
    }

    fn sees(&self, id: usize, p: usize) -> bool {
        let [a, b, c] = self.faces[id];
        orient3d(&self.pts[a], &self.pts[b], &self.pts[c], &self.pts[p]) == Ordering::Greater
    }

    fn insert(&mut self, p: usize) {
        let visible: Vec<usize> = (0..self.faces.len())
            .filter(|&f| self.alive[f] && self.sees(f, p))
            .collect();
        if visible.is_empty() {
            return;
        }
        let is_visible: std::collections::HashSet<usize> = visible.iter().copied().collect();
        let mut horizon = Vec::new();
        for &f in &visible {
            let tri = self.faces[f];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                match self.edges.get(&(b, a)) {
                    Some(g) if is_visible.contains(g) => {}
                    _ => horizon.push((a, b)),
                }
            }
        }
        for &f in &visible {
            self.kill_face(f);
        }
        for (a, b) in horizon {
            self.add_face([a, b, p]);
        }
        if self.faces.len() > 64 && self.alive.iter().filter(|a| !**a).count() * 2 > self.faces.len() {
            self.compact();
        }
    }

    fn compact(&mut self) {
        let old: Vec<[usize; 3]> = self
            .faces
            .iter()
            .zip(&self.alive)
            .filter(|(_, a)| **a)
            .map(|(f, _)| *f)
            .collect();
        self.faces.clear();
        self.alive.clear();
        self.edges.clear();
        for f in old {
            self.add_face(f);
        }
    }
}

/// Convex hull of `points`.
pub fn convex_hull(points: &[Vec3]) -> Hull {
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        return Hull::Degenerate;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| lex(&points[i], &points[j]).then(i.cmp(&j)));
    order.dedup_by(|b, a| lex(&points[*a], &points[*b]) == Ordering::Equal);
    if order.len() < 4 {
        return Hull::Degenerate;
    }

    let p0 = order[0];
    let p1 = order[1];
    let Some(p2) = order[2..]
        .iter()
        .copied()
        .find(|&k| !collinear(&points[p0], &points[p1], &points[k]))
    else {
        return Hull::Degenerate;
    };
    let Some(p3) = order
        .iter()
        .copied()
        .find(|&k| orient3d(&points[p0], &points[p1], &points[p2], &points[k]) != Ordering::Equal)
    else {
        return Hull::Degenerate;
    };

    let mut b = Builder {
        pts: points,
        faces: Vec::new(),
        alive: Vec::new(),
        edges: HashMap::new(),
    };
    let (q0, q1, q2) = if orient3d(&points[p0], &points[p1], &points[p2], &points[p3]) == Ordering::Greater {
        (p0, p2, p1)
    } else {
        (p0, p1, p2)
    };
    // (q0, q1, q2) now has p3 strictly behind it
    b.add_face([q0, q1, q2]);
    b.add_face([q0, p3, q1]);
    b.add_face([q1, p3, q2]);
    b.add_face([q2, p3, q0]);

    for &k in &order {
        if k == p0 || k == p1 || k == p2 || k == p3 {
            continue;
        }
        b.insert(k);
    }

    let faces: Vec<[usize; 3]> = b
        .faces
        .iter()
        .zip(&b.alive)
        .filter(|(_, a)| **a)
        .map(|(f, _)| *f)
        .collect();
    let mut vertices: Vec<usize> = faces.iter().flatten().copied().collect();
    vertices.sort_unstable();
    vertices.dedup();
    Hull::Solid { faces, vertices }
}

/// Exact collinearity of three points: all three coordinate-plane
/// projections have zero signed area.
fn collinear(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let lift = |p: &Vec3, axis: usize| -> Vec3 {
        let mut q = *p;
        q[axis] = 0.0;
        q
    };
    (0..3).all(|axis| {
        // area of the projection onto the plane orthogonal to `axis`, via
        // orient3d with a point lifted off that plane
        let mut top = Vec3::zeros();
        top[axis] = 1.0;
        let (a2, b2, c2) = (lift(a, axis), lift(b, axis), lift(c, axis));
        orient3d(&a2, &b2, &c2, &(a2 + top)) == Ordering::Equal
    })
}
