//! Frozen image/text embedding providers.
//!
//! [`SyntheticProvider`] maps every input to a fixed per-class anchor plus a
//! small input-keyed perturbation: text is classified by the longest class
//! name it contains, images by the nearest class texture color. The anchors
//! never change, so the provider behaves like a frozen pretrained encoder
//! with controllable semantic geometry. [`TableProvider`] serves embeddings
//! from a file, which is how externally computed embeddings are plugged in.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, hash_str, label};
use crate::scene::class_color;
use crate::triplets::ImageRef;

pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<DVector<f64>>;
    fn embed_image(&self, image: &ImageRef) -> Result<DVector<f64>>;
}

fn gaussian_unit(seed: u64, labels: &[u64], dim: usize) -> DVector<f64> {
    let mut r = rng::stream(seed, labels);
    let v = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v / n
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    pub dim: usize,
    pub seed: u64,
    /// Relative size of the caption-keyed perturbation.
    pub text_noise: f64,
    /// Relative size of the crop-keyed perturbation.
    pub image_noise: f64,
    classes: Vec<String>,
    anchors: Vec<DVector<f64>>,
}

impl SyntheticProvider {
    pub fn new(classes: &[String], dim: usize, seed: u64, text_noise: f64, image_noise: f64) -> Self {
        let anchors = classes
            .iter()
            .map(|c| gaussian_unit(seed, &[label::PROVIDER, 0, hash_str(c)], dim))
            .collect();
        SyntheticProvider {
            dim,
            seed,
            text_noise,
            image_noise,
            classes: classes.to_vec(),
            anchors,
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Longest class name contained in `text` (case-insensitive).
    pub fn text_class(&self, text: &str) -> Option<usize> {
        let lower = text.to_lowercase();
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| lower.contains(&c.to_lowercase()))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }

    /// Class whose texture color is nearest to the image's mean color.
    pub fn image_class(&self, image: &ImageRef) -> Option<usize> {
        let mean = image.thumbnail.as_ref()?.mean_color();
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let col = class_color(c);
                let d: f64 = (0..3).map(|k| (mean[k] - f64::from(col[k])).powi(2)).sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }

    fn mix(&self, class: Option<usize>, key_labels: &[u64], noise: f64) -> DVector<f64> {
        let jitter = gaussian_unit(self.seed, key_labels, self.dim);
        let v = match class {
            Some(c) => &self.anchors[c] + jitter * noise,
            None => jitter,
        };
        let n = v.norm();
        v / n
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<DVector<f64>> {
        Ok(self.mix(self.text_class(text), &[label::PROVIDER, 1, hash_str(text)], self.text_noise))
    }

    fn embed_image(&self, image: &ImageRef) -> Result<DVector<f64>> {
        if image.thumbnail.is_none() {
            return Err(Error::Embedding(format!("image `{}` has no pixels", image.key)));
        }
        Ok(self.mix(
            self.image_class(image),
            &[label::PROVIDER, 2, hash_str(&image.key)],
            self.image_noise,
        ))
    }
}

/// Embeddings looked up by key: text by the exact string, images by
/// [`ImageRef::key`].
#[derive(Debug, Clone, PartialEq)]
pub struct TableProvider {
    dim: usize,
    table: HashMap<String, DVector<f64>>,
}

impl TableProvider {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (String, DVector<f64>)>) -> Result<Self> {
        let mut table = HashMap::new();
        for (k, v) in entries {
            if v.len() != dim {
                return Err(Error::Embedding(format!("`{k}` has dimension {}, expected {dim}", v.len())));
            }
            let n = v.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Embedding(format!("`{k}` has a zero or non-finite embedding")));
            }
            table.insert(k, v / n);
        }
        Ok(TableProvider { dim, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn lookup(&self, key: &str) -> Result<DVector<f64>> {
        self.table
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Embedding(format!("no embedding for `{key}`")))
    }

    /// File layout: `u32 d`, `u32 count`, then `count` records of
    /// `u32 key_len`, UTF-8 key, `d` little-endian `f32`.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |offset: usize, reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return Err(corrupt(pos, format!("truncated {what}")));
            }
            let at = pos;
            pos += n;
            Ok((at, &bytes[at..at + n]))
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let dim = u32_at(take(4, "header")?.1) as usize;
        let count = u32_at(take(4, "header")?.1) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32_at(take(4, "key length")?.1) as usize;
            let (at, kb) = take(len, "key")?;
            let key = String::from_utf8(kb.to_vec()).map_err(|_| corrupt(at, "key is not UTF-8".into()))?;
            let (_, vb) = take(4 * dim, "vector")?;
            let v = DVector::from_iterator(
                dim,
                vb.chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))),
            );
            entries.push((key, v));
        }
        if pos != bytes.len() {
            return Err(corrupt(pos, "trailing bytes after last record".into()));
        }
        TableProvider::new(dim, entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        let mut out = Vec::new();
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(keys.len() as u32).to_le_bytes());
        for k in keys {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            for v in self.table[k].iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl EmbeddingProvider for TableProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<DVector<f64>> {
        self.lookup(text)
    }

    fn embed_image(&self, image: &ImageRef) -> Result<DVector<f64>> {
        self.lookup(&image.key)
    }
}
