//! Small permutation-invariant point-cloud encoder: a shared per-point affine
//! map with leaky ReLU, channel-wise max-pooling, a linear projection and L2
//! normalization. Backpropagation is written out by hand.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, label};

/// Negative-side slope of the point nonlinearity; keeps channels from dying.
pub const LEAK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `h x 3` per-point weights.
    pub w1: DMatrix<f64>,
    /// `h` per-point biases.
    pub b1: DVector<f64>,
    /// `d x h` projection.
    pub w2: DMatrix<f64>,
}

/// Cached forward pass of one cloud.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embedding: DVector<f64>,
    pooled: DVector<f64>,
    argmax: Vec<usize>,
    raw_norm: f64,
}

impl EncoderParams {
    pub fn init(hidden: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[label::ENCODER_INIT]);
        let mut normal = |scale: f64| -> f64 { rng.sample::<f64, _>(StandardNormal) * scale };
        let w1 = DMatrix::from_fn(hidden, 3, |_, _| normal(1.0));
        let b1 = DVector::from_fn(hidden, |_, _| normal(0.5));
        let w2 = DMatrix::from_fn(dim, hidden, |_, _| normal(1.0 / (hidden as f64).sqrt()));
        EncoderParams { w1, b1, w2 }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            w1: DMatrix::zeros(self.w1.nrows(), 3),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w1.nrows();
        if self.w1.ncols() != 3 || self.b1.len() != h || self.w2.ncols() != h {
            return Err(Error::invalid("encoder parameter shapes are inconsistent"));
        }
        if !self.is_finite() {
            return Err(Error::invalid("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &EncoderParams) {
        self.w1 += &other.w1 * scale;
        self.b1 += &other.b1 * scale;
        self.w2 += &other.w2 * scale;
    }

    pub fn norm(&self) -> f64 {
        (self.w1.norm_squared() + self.b1.norm_squared() + self.w2.norm_squared()).sqrt()
    }

    pub fn forward(&self, points: &[Vec3]) -> Result<Forward> {
        if points.is_empty() {
            return Err(Error::invalid("cannot encode an empty point cloud"));
        }
        let h = self.hidden();
        let mut pooled = DVector::from_element(h, f64::NEG_INFINITY);
        let mut argmax = vec![0usize; h];
        for (k, p) in points.iter().enumerate() {
            for c in 0..h {
                let a = self.w1[(c, 0)] * p.x + self.w1[(c, 1)] * p.y + self.w1[(c, 2)] * p.z + self.b1[c];
                // strict comparison keeps the first maximizer, so the result
                // does not depend on where duplicates sit
                if a > pooled[c] {
                    pooled[c] = a;
                    argmax[c] = k;
                }
            }
        }
        // a monotone activation commutes with max
        pooled.apply(|v| {
            if *v < 0.0 {
                *v *= LEAK
            }
        });
        let z = &self.w2 * &pooled;
        let raw_norm = z.norm();
        if !(raw_norm > 0.0) {
            return Err(Error::invalid("encoder produced a zero embedding"));
        }
        Ok(Forward {
            embedding: z / raw_norm,
            pooled,
            argmax,
            raw_norm,
        })
    }

    pub fn encode(&self, points: &[Vec3]) -> Result<DVector<f64>> {
        Ok(self.forward(points)?.embedding)
    }

    /// Accumulate into `grad` the parameter gradient given `dL/d(embedding)`.
    pub fn backward(&self, points: &[Vec3], fwd: &Forward, d_embedding: &DVector<f64>, grad: &mut EncoderParams) {
        let f = &fwd.embedding;
        // d/dz of z/|z| is (I - f f^T)/|z|
        let dz = (d_embedding - f * f.dot(d_embedding)) / fwd.raw_norm;
        grad.w2 += &dz * fwd.pooled.transpose();
        let dm = self.w2.transpose() * &dz;
        for c in 0..self.hidden() {
            let g = if fwd.pooled[c] > 0.0 { dm[c] } else { dm[c] * LEAK };
            let p = &points[fwd.argmax[c]];
            grad.w1[(c, 0)] += g * p.x;
            grad.w1[(c, 1)] += g * p.y;
            grad.w1[(c, 2)] += g * p.z;
            grad.b1[c] += g;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let p: EncoderParams = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        p.validate()?;
        Ok(p)
    }
}

/// Encode a batch of clouds into a `B x d` matrix of unit rows.
pub fn encode_batch(params: &EncoderParams, clouds: &[&[Vec3]]) -> Result<(DMatrix<f64>, Vec<Forward>)> {
    let mut fwds = Vec::with_capacity(clouds.len());
    let mut m = DMatrix::zeros(clouds.len(), params.dim());
    for (i, c) in clouds.iter().enumerate() {
        let f = params.forward(c)?;
        m.set_row(i, &f.embedding.transpose());
        fwds.push(f);
    }
    Ok((m, fwds))
}

/// Deterministic stride subsample to at most `max` points.
pub fn subsample(points: &[Vec3], max: usize) -> Vec<Vec3> {
    if points.len() <= max || max == 0 {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

/// Encoder input for a raw cloud: subsampled, then optionally moved into
/// the unit sphere.
pub fn prepare(points: &[Vec3], max_points: usize, normalize: bool) -> Vec<Vec3> {
    let sub = subsample(points, max_points);
    if normalize {
        crate::triplets::normalize_unit_sphere(&sub)
    } else {
        sub
    }
}
