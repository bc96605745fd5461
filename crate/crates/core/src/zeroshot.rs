//! Zero-shot classification against text-prompt prototypes, top-k
//! accuracy in object-wise and class-wise form, prompt retrieval and
//! feature export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::provider::EmbeddingProvider;
use crate::triplets::TripletDataset;

/// The single prompt used for the outdoor domain.
pub const OUTDOOR_PROMPT: &str = "point cloud of {}";

/// Clouds with at most this many points are left out of feature export.
pub const EXPORT_MIN_POINTS: usize = 150;

const TEMPLATE_FILE: &str = include_str!("../data/templates.txt");

/// The bundled 64-prompt ensemble.
pub fn default_templates() -> Vec<String> {
    parse_templates(TEMPLATE_FILE)
}

/// One template per non-empty line; `#` starts a comment line.
pub fn parse_templates(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn read_templates(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t = parse_templates(&text);
    if t.is_empty() {
        return Err(Error::invalid(format!("{} holds no templates", path.display())));
    }
    Ok(t)
}

fn fill(template: &str, class: &str) -> String {
    if template.contains("{}") {
        template.replace("{}", class)
    } else {
        format!("{template} {class}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub classes: Vec<String>,
    /// Unit vectors, parallel to `classes`.
    pub vectors: Vec<DVector<f64>>,
}

impl ClassPrototypes {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Mean of the per-template text embeddings of each class, re-normalized.
pub fn build_prototypes(
    classes: &[String],
    templates: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<ClassPrototypes> {
    if classes.is_empty() {
        return Err(Error::invalid("prototype class list is empty"));
    }
    if templates.is_empty() {
        return Err(Error::invalid("no prompt templates"));
    }
    let unique: BTreeSet<&String> = classes.iter().collect();
    if unique.len() != classes.len() {
        return Err(Error::invalid("prototype class names must be unique"));
    }
    let mut vectors = Vec::with_capacity(classes.len());
    for c in classes {
        let mut sum = DVector::zeros(provider.dim());
        for t in templates {
            let e = provider.embed_text(&fill(t, c))?;
            if e.len() != sum.len() {
                return Err(Error::Embedding(format!(
                    "provider returned dimension {} instead of {}",
                    e.len(),
                    sum.len()
                )));
            }
            sum += e;
        }
        let n = sum.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Embedding(format!("prompt embeddings of `{c}` cancel out")));
        }
        vectors.push(sum / n);
    }
    Ok(ClassPrototypes {
        classes: classes.to_vec(),
        vectors,
    })
}

/// Classes ranked by descending cosine similarity, ties broken by name.
pub fn classify(embedding: &DVector<f64>, prototypes: &ClassPrototypes) -> Result<Vec<(String, f64)>> {
    if prototypes.is_empty() {
        return Err(Error::invalid("no prototypes"));
    }
    if embedding.len() != prototypes.dim() {
        return Err(Error::invalid(format!(
            "embedding has dimension {}, prototypes have {}",
            embedding.len(),
            prototypes.dim()
        )));
    }
    let n = embedding.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("query embedding is zero or non-finite"));
    }
    let q = embedding / n;
    let mut ranked: Vec<(String, f64)> = prototypes
        .classes
        .iter()
        .zip(&prototypes.vectors)
        .map(|(c, v)| (c.clone(), q.dot(v)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    /// Fraction of instances.
    ObjectWise,
    /// Unweighted mean of per-class accuracies.
    ClassWise,
}

impl AccuracyMode {
    pub fn name(&self) -> &'static str {
        match self {
            AccuracyMode::ObjectWise => "object-wise",
            AccuracyMode::ClassWise => "class-wise",
        }
    }
}

/// Top-k accuracy of ranked predictions. Classes without instances do not
/// enter the class-wise mean.
pub fn accuracy(predictions: &[Vec<String>], labels: &[String], k: usize, mode: AccuracyMode) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let hit = |p: &Vec<String>, l: &String| p.iter().take(k).any(|c| c == l);
    match mode {
        AccuracyMode::ObjectWise => {
            let hits = predictions.iter().zip(labels).filter(|(p, l)| hit(p, l)).count();
            Ok(hits as f64 / predictions.len() as f64)
        }
        AccuracyMode::ClassWise => {
            let mut per: BTreeMap<&String, (usize, usize)> = BTreeMap::new();
            for (p, l) in predictions.iter().zip(labels) {
                let e = per.entry(l).or_default();
                e.1 += 1;
                if hit(p, l) {
                    e.0 += 1;
                }
            }
            let sum: f64 = per.values().map(|(h, n)| *h as f64 / *n as f64).sum();
            Ok(sum / per.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub modes: Vec<AccuracyMode>,
    /// When non-empty, only instances of these classes are scored; the
    /// prototypes still cover every class.
    pub holdout: Vec<String>,
    /// Instances with fewer points are skipped.
    pub min_points: usize,
    /// Clouds are stride-subsampled to at most this many points before
    /// encoding (0 keeps all).
    pub max_points: usize,
    /// Center and scale each cloud into the unit sphere before encoding.
    pub normalize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5],
            modes: vec![AccuracyMode::ObjectWise, AccuracyMode::ClassWise],
            holdout: Vec::new(),
            min_points: 1,
            max_points: 0,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub mode: AccuracyMode,
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn get(&self, mode: AccuracyMode, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode && r.k == k).map(|r| r.accuracy)
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = String::from("mode,k,accuracy,n_instances,config_hash\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{config_hash}", r.mode.name(), r.k, r.accuracy, self.n_instances);
        }
        out
    }
}

/// Ranked class lists and labels for every eligible cloud, in dataset order.
pub fn predict_dataset(
    ds: &TripletDataset,
    params: &EncoderParams,
    prototypes: &ClassPrototypes,
    config: &EvalConfig,
) -> Result<(Vec<Vec<String>>, Vec<String>)> {
    let holdout: BTreeSet<&String> = config.holdout.iter().collect();
    let eligible: Vec<usize> = (0..ds.clouds.len())
        .filter(|&i| {
            let c = &ds.clouds[i];
            c.points.len() >= config.min_points.max(1) && (holdout.is_empty() || holdout.contains(&c.class))
        })
        .collect();
    let predictions = eligible
        .par_iter()
        .map(|&i| {
            let e = params.encode(&encoder::prepare(&ds.clouds[i].points, config.max_points, config.normalize))?;
            Ok(classify(&e, prototypes)?.into_iter().map(|(c, _)| c).collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    let labels = eligible.iter().map(|&i| ds.clouds[i].class.clone()).collect();
    Ok((predictions, labels))
}

pub fn evaluate(
    ds: &TripletDataset,
    params: &EncoderParams,
    prototypes: &ClassPrototypes,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let (predictions, labels) = predict_dataset(ds, params, prototypes, config)?;
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for &k in &config.ks {
            rows.push(EvalRow {
                mode,
                k,
                accuracy: accuracy(&predictions, &labels, k, mode)?,
            });
        }
    }
    Ok(EvalReport {
        n_instances: labels.len(),
        rows,
    })
}

/// Clouds ranked by cosine similarity to a text prompt, ties broken by id.
pub fn retrieve(
    prompt: &str,
    provider: &dyn EmbeddingProvider,
    ds: &TripletDataset,
    params: &EncoderParams,
    top: usize,
) -> Result<Vec<(String, f64)>> {
    let q = provider.embed_text(prompt)?;
    if q.len() != params.dim() {
        return Err(Error::invalid(format!(
            "prompt embedding has dimension {}, encoder has {}",
            q.len(),
            params.dim()
        )));
    }
    let mut scored = ds
        .clouds
        .par_iter()
        .filter(|c| !c.points.is_empty())
        .map(|c| Ok((c.id.clone(), params.encode(&c.points)?.dot(&q))))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub class: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,class");
        for j in 0..self.dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.id, r.class);
            for v in &r.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Embeddings of every cloud with more than [`EXPORT_MIN_POINTS`] points.
pub fn export_features(ds: &TripletDataset, params: &EncoderParams) -> Result<FeatureTable> {
    let rows = ds
        .clouds
        .par_iter()
        .filter(|c| c.points.len() > EXPORT_MIN_POINTS)
        .map(|c| {
            Ok(FeatureRow {
                id: c.id.clone(),
                class: c.class.clone(),
                values: params.encode(&c.points)?.iter().copied().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable {
        dim: params.dim(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::TableProvider;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bundled_templates() {
        let t = default_templates();
        assert_eq!(t.len(), 64);
        assert!(t.iter().all(|x| x.contains("{}")));
        assert_eq!(t.last().unwrap(), "a point cloud model of {}.");
    }

    #[test]
    fn orthogonal_templates_average() {
        let p = TableProvider::new(
            2,
            vec![
                ("x a".to_string(), DVector::from_vec(vec![1.0, 0.0])),
                ("y a".to_string(), DVector::from_vec(vec![0.0, 1.0])),
            ],
        )
        .unwrap();
        let one = build_prototypes(&s(&["a"]), &s(&["x {}"]), &p).unwrap();
        assert_eq!(one.vectors[0], DVector::from_vec(vec![1.0, 0.0]));
        let twice = build_prototypes(&s(&["a"]), &s(&["x {}", "x {}"]), &p).unwrap();
        assert_eq!(twice, one);
        let both = build_prototypes(&s(&["a"]), &s(&["x {}", "y {}"]), &p).unwrap();
        let h = 0.5f64.sqrt();
        assert!((both.vectors[0][0] - h).abs() < 1e-15 && (both.vectors[0][1] - h).abs() < 1e-15);
        assert!(build_prototypes(&[], &s(&["x {}"]), &p).is_err());
        assert!(build_prototypes(&s(&["a", "a"]), &s(&["x {}"]), &p).is_err());
    }

    #[test]
    fn classify_ties_and_mismatch() {
        let protos = ClassPrototypes {
            classes: s(&["b", "a", "c"]),
            vectors: vec![
                DVector::from_vec(vec![1.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0, 0.0]),
            ],
        };
        let r = classify(&DVector::from_vec(vec![0.0, 0.0, 1.0]), &protos).unwrap();
        assert_eq!(r.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        let r = classify(&DVector::from_vec(vec![1.0, 0.0, 0.0]), &protos).unwrap();
        assert_eq!(r[0], ("b".to_string(), 1.0));
        assert!(classify(&DVector::from_vec(vec![1.0, 0.0]), &protos).is_err());
    }

    #[test]
    fn class_wise_versus_object_wise() {
        let mut preds = vec![s(&["A", "B"]); 100];
        let mut labels = vec!["A".to_string(); 100];
        preds.push(s(&["A", "B"]));
        labels.push("B".to_string());
        let o = accuracy(&preds, &labels, 1, AccuracyMode::ObjectWise).unwrap();
        let c = accuracy(&preds, &labels, 1, AccuracyMode::ClassWise).unwrap();
        assert_eq!(o, 100.0 / 101.0);
        assert_eq!(c, 0.5);
        assert_eq!(accuracy(&preds, &labels, 2, AccuracyMode::ClassWise).unwrap(), 1.0);
        assert!(accuracy(&[], &[], 1, AccuracyMode::ObjectWise).is_err());
        assert!(accuracy(&preds, &labels, 0, AccuracyMode::ObjectWise).is_err());
    }

    #[test]
    fn empty_feature_table_has_header() {
        let ds = TripletDataset::empty("x", "h");
        let params = EncoderParams::init(4, 3, 0);
        let t = export_features(&ds, &params).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), "id,class,f0,f1,f2\n");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    const POOL: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

    fn table() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<String>)> {
        let row = (Just(POOL.map(String::from).to_vec()).prop_shuffle(), 0usize..POOL.len());
        proptest::collection::vec(row, 1..60).prop_map(|rows| {
            let preds = rows.iter().map(|r| r.0.clone()).collect();
            let labels = rows.iter().map(|r| POOL[r.1].to_string()).collect();
            (preds, labels)
        })
    }

    proptest! {
        #[test]
        fn accuracy_bounded_and_monotone_in_k((preds, labels) in table()) {
            for mode in [AccuracyMode::ObjectWise, AccuracyMode::ClassWise] {
                let mut prev = 0.0;
                for k in 1..=POOL.len() {
                    let acc = accuracy(&preds, &labels, k, mode).unwrap();
                    prop_assert!((0.0..=1.0).contains(&acc));
                    prop_assert!(acc >= prev);
                    prev = acc;
                }
                prop_assert_eq!(prev, 1.0);
            }
        }

        #[test]
        fn class_wise_ignores_class_frequency((preds, labels) in table(), k in 1usize..4) {
            // duplicating every instance of one class changes its weight in
            // object-wise accuracy only
            let target = labels[0].clone();
            let mut p2 = preds.clone();
            let mut l2 = labels.clone();
            for (p, l) in preds.iter().zip(&labels) {
                if *l == target {
                    p2.push(p.clone());
                    l2.push(l.clone());
                }
            }
            let before = accuracy(&preds, &labels, k, AccuracyMode::ClassWise).unwrap();
            let after = accuracy(&p2, &l2, k, AccuracyMode::ClassWise).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn classify_ignores_positive_scale(v in proptest::collection::vec(-1.0..1.0f64, 4), s in 0.01..100.0f64) {
            let e = DVector::from_vec(v);
            prop_assume!(e.norm() > 1e-3);
            let protos = ClassPrototypes {
                classes: POOL[..3].iter().map(|c| c.to_string()).collect(),
                vectors: vec![
                    DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
                    DVector::from_vec(vec![0.0, 0.6, 0.8, 0.0]),
                    DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]),
                ],
            };
            let a = classify(&e, &protos).unwrap();
            let b = classify(&(&e * s), &protos).unwrap();
            prop_assert_eq!(a.iter().map(|x| &x.0).collect::<Vec<_>>(), b.iter().map(|x| &x.0).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }
}
