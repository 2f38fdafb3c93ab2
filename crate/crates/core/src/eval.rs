//! Logit- and representation-level metrics.
//!
//! Forgetting quality is the accuracy on forgotten-class test data (lower is
//! better), utility is the accuracy on retained-class test data. The
//! representation report replaces embedding plots with numbers: per-class
//! feature centroids, intra-class spread, distance to the nearest other
//! centroid, and their ratio (the dispersion ratio — spread divided by
//! nearest-centroid distance, so a dispersed or absorbed cluster scores
//! high).

use crate::autodiff::Tensor;
use crate::data::LabeledDataset;
use crate::models::{param_distance, ClassifierModel, ModelPart};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Argmax with ties broken toward the lowest class index.
fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn predictions(model: &ClassifierModel, data: &LabeledDataset) -> Result<Vec<usize>> {
    let (_, logits) = model.forward(&data.inputs)?;
    let (n, _) = logits.dims2()?;
    #[cfg(feature = "parallel")]
    {
        return Ok((0..n)
            .into_par_iter()
            .map(|i| argmax_row(logits.row(i)))
            .collect());
    }
    #[cfg(not(feature = "parallel"))]
    Ok((0..n).map(|i| argmax_row(logits.row(i))).collect())
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(model: &ClassifierModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    let preds = predictions(model, data)?;
    let correct = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Per-class accuracies over a dataset; classes absent from the data get
/// `None`.
pub fn per_class_accuracy(model: &ClassifierModel, data: &LabeledDataset) -> Result<Vec<Option<f64>>> {
    let preds = predictions(model, data)?;
    let mut correct = vec![0usize; data.classes];
    let mut total = vec![0usize; data.classes];
    for (p, &y) in preds.iter().zip(&data.labels) {
        total[y] += 1;
        if *p == y {
            correct[y] += 1;
        }
    }
    Ok(total
        .iter()
        .zip(&correct)
        .map(|(&t, &c)| if t == 0 { None } else { Some(c as f64 / t as f64) })
        .collect())
}

/// `(AD_f, AD_r)`: accuracy on forgotten-class and retained-class test data.
pub fn forget_retain_report(
    model: &ClassifierModel,
    forget_test: &LabeledDataset,
    retain_test: &LabeledDataset,
    forget_labels: &[usize],
) -> Result<(f64, f64)> {
    let forget: HashSet<usize> = forget_labels.iter().copied().collect();
    if forget_test.labels.iter().any(|y| !forget.contains(y)) {
        return Err(Error::InvalidSplit("retained-class row in the forgotten test split".into()));
    }
    if retain_test.labels.iter().any(|y| forget.contains(y)) {
        return Err(Error::InvalidSplit("forgotten-class row in the retained test split".into()));
    }
    Ok((accuracy(model, forget_test)?, accuracy(model, retain_test)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDistanceReport {
    pub feature_extractor: f64,
    pub head: f64,
    pub all: f64,
}

pub fn weight_distance_report(before: &ClassifierModel, after: &ClassifierModel) -> Result<WeightDistanceReport> {
    Ok(WeightDistanceReport {
        feature_extractor: param_distance(&before.params, &after.params, ModelPart::FeatureExtractor)?,
        head: param_distance(&before.params, &after.params, ModelPart::Head)?,
        all: param_distance(&before.params, &after.params, ModelPart::All)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRepresentation {
    pub class: usize,
    pub count: usize,
    pub forgotten: bool,
    pub centroid: Vec<f64>,
    /// Mean distance of the class's features to their centroid; absent for
    /// classes with fewer than two samples.
    pub intra_mean_dist: Option<f64>,
    pub nearest_other_centroid_dist: f64,
    /// intra / nearest-other; absent when intra is.
    pub dispersion_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub per_class: Vec<ClassRepresentation>,
}

impl RepresentationReport {
    pub fn class(&self, c: usize) -> Option<&ClassRepresentation> {
        self.per_class.iter().find(|r| r.class == c)
    }
}

/// Centroid geometry of the feature space, plus an optional CSV export of
/// the raw features for external plotting.
pub fn representation_report(
    model: &ClassifierModel,
    data: &LabeledDataset,
    forget_labels: &[usize],
    export_csv: Option<&Path>,
) -> Result<RepresentationReport> {
    let counts = data.per_class_counts();
    if counts.iter().any(|&c| c == 0) {
        let class = counts.iter().position(|&c| c == 0).expect("found above");
        return Err(Error::InsufficientSamples {
            class,
            have: 0,
            need: 1,
        });
    }
    let (features, _) = model.forward(&data.inputs)?;
    let (n, m) = features.dims2()?;

    if let Some(path) = export_csv {
        write_feature_csv(path, &features, &data.labels)?;
    }

    // Fixed accumulation order (sample index) keeps results independent of
    // the evaluation thread count.
    let k = data.classes;
    let mut centroids = vec![vec![0.0; m]; k];
    for i in 0..n {
        let y = data.labels[i];
        for (j, &v) in features.row(i).iter().enumerate() {
            centroids[y][j] += v;
        }
    }
    for (c, centroid) in centroids.iter_mut().enumerate() {
        for v in centroid.iter_mut() {
            *v /= counts[c] as f64;
        }
    }

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mut intra_sums = vec![0.0; k];
    for i in 0..n {
        let y = data.labels[i];
        intra_sums[y] += dist(features.row(i), &centroids[y]);
    }

    let forget: HashSet<usize> = forget_labels.iter().copied().collect();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let nearest = (0..k)
            .filter(|&o| o != c)
            .map(|o| dist(&centroids[c], &centroids[o]))
            .fold(f64::INFINITY, f64::min);
        let intra = if counts[c] >= 2 {
            Some(intra_sums[c] / counts[c] as f64)
        } else {
            None
        };
        per_class.push(ClassRepresentation {
            class: c,
            count: counts[c],
            forgotten: forget.contains(&c),
            centroid: centroids[c].clone(),
            intra_mean_dist: intra,
            nearest_other_centroid_dist: nearest,
            dispersion_ratio: intra.map(|i| i / nearest),
        });
    }
    Ok(RepresentationReport { per_class })
}

fn write_feature_csv(path: &Path, features: &Tensor, labels: &[usize]) -> Result<()> {
    let (n, m) = features.dims2()?;
    let mut f = std::fs::File::create(path)?;
    let header: Vec<String> = std::iter::once("y".to_string())
        .chain((0..m).map(|j| format!("f{j}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for i in 0..n {
        let mut line = labels[i].to_string();
        for &v in features.row(i) {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Everything the runner persists per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ad_f: f64,
    pub ad_r: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub weight_distance: Option<WeightDistanceReport>,
    pub representation: RepresentationReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::models::{init_model, DataRange, InitScheme, ModelSpec};

    fn toy_model(d: usize, k: usize) -> ClassifierModel {
        init_model(&ModelSpec {
            input_dim: d,
            hidden: vec![8],
            classes: k,
            z_dim: 4,
            gen_hidden: vec![8],
            range: DataRange::unit(d),
            init: InitScheme::GlorotUniform,
            seed: 3,
        })
        .unwrap()
    }

    /// Head rigged so class = argmax of the first k inputs.
    fn rigged_model(d: usize, k: usize) -> ClassifierModel {
        let mut m = init_model(&ModelSpec {
            input_dim: d,
            hidden: vec![d],
            classes: k,
            z_dim: 4,
            gen_hidden: vec![8],
            range: DataRange::unit(d),
            init: InitScheme::GlorotUniform,
            seed: 3,
        })
        .unwrap();
        let eye: Vec<f64> = (0..d * d)
            .map(|i| if i / d == i % d { 1.0 } else { 0.0 })
            .collect();
        m.params.tensors_mut()[0] = Tensor::matrix(d, d, eye).unwrap();
        m.params.tensors_mut()[1] = Tensor::zeros(vec![d]);
        let head: Vec<f64> = (0..d * k)
            .map(|i| if i / k == i % k { 1.0 } else { 0.0 })
            .collect();
        m.params.tensors_mut()[2] = Tensor::matrix(d, k, head).unwrap();
        m.params.tensors_mut()[3] = Tensor::zeros(vec![k]);
        m
    }

    #[test]
    fn perfect_predictions_score_one() {
        let data = make_blobs(3, 8, 10, 20.0, 0.01, 5).unwrap();
        let m = rigged_model(8, 3);
        assert_eq!(accuracy(&m, &data).unwrap(), 1.0);
    }

    #[test]
    fn three_of_four_correct_is_three_quarters() {
        let m = rigged_model(4, 4);
        let inputs = Tensor::matrix(
            4,
            4,
            vec![
                5.0, 0.0, 0.0, 0.0, //
                0.0, 5.0, 0.0, 0.0, //
                0.0, 0.0, 5.0, 0.0, //
                0.0, 0.0, 0.0, 5.0,
            ],
        )
        .unwrap();
        let labels = vec![0, 1, 2, 0]; // last one mislabeled on purpose
        let data = LabeledDataset::new(inputs, labels, 4).unwrap();
        assert_eq!(accuracy(&m, &data).unwrap(), 0.75);
    }

    #[test]
    fn constant_logits_break_ties_toward_class_zero() {
        let mut m = toy_model(4, 3);
        for t in m.params.tensors_mut() {
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let data = make_blobs(3, 4, 10, 5.0, 0.5, 8).unwrap();
        // Brute-force count oracle: every prediction is class 0.
        let expected = data.labels.iter().filter(|&&y| y == 0).count() as f64 / data.len() as f64;
        assert_eq!(accuracy(&m, &data).unwrap(), expected);
        let per_class = per_class_accuracy(&m, &data).unwrap();
        assert_eq!(per_class[0], Some(1.0));
        assert_eq!(per_class[1], Some(0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = toy_model(4, 3);
        let data = LabeledDataset {
            inputs: Tensor::matrix(0, 4, vec![]).unwrap(),
            labels: vec![],
            classes: 3,
        };
        assert!(matches!(accuracy(&m, &data), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn contaminated_splits_are_rejected() {
        let m = toy_model(4, 3);
        let data = make_blobs(3, 4, 4, 5.0, 0.1, 2).unwrap();
        let err = forget_retain_report(&m, &data, &data, &[0]);
        assert!(matches!(err, Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn forget_retain_matches_per_class_aggregation() {
        let data = make_blobs(4, 8, 25, 10.0, 1.0, 6).unwrap();
        let split = crate::data::split_forget(
            &data,
            &crate::data::SplitSpec {
                forget: vec![1],
                retained_fraction: 0.2,
                seed: 3,
            },
        )
        .unwrap();
        let m = rigged_model(8, 4);
        let (ad_f, ad_r) =
            forget_retain_report(&m, &split.forget_test, &split.retain_test, &[1]).unwrap();
        // Recount from per-class accuracies over the combined test set.
        let all = split.test_all().unwrap();
        let per_class = per_class_accuracy(&m, &all).unwrap();
        let counts = all.per_class_counts();
        let agg = |classes: &[usize]| {
            let (mut c, mut t) = (0.0, 0usize);
            for &y in classes {
                c += per_class[y].unwrap() * counts[y] as f64;
                t += counts[y];
            }
            c / t as f64
        };
        assert!((ad_f - agg(&split.forget_labels)).abs() < 1e-12);
        assert!((ad_r - agg(&split.retain_labels)).abs() < 1e-12);
    }

    #[test]
    fn weight_distance_identical_models_is_zero() {
        let m = toy_model(4, 3);
        let r = weight_distance_report(&m, &m).unwrap();
        assert_eq!((r.feature_extractor, r.head, r.all), (0.0, 0.0, 0.0));
    }

    #[test]
    fn head_only_difference_shows_in_head_distance() {
        let m = toy_model(4, 3);
        let mut other = m.clone();
        let hs = other.head_start();
        other.params.tensors_mut()[hs].data_mut()[0] += 2.0;
        let r = weight_distance_report(&m, &other).unwrap();
        assert_eq!(r.feature_extractor, 0.0);
        assert!((r.head - 2.0).abs() < 1e-12);
        assert!((r.all * r.all - (r.feature_extractor.powi(2) + r.head.powi(2))).abs() < 1e-9);
    }

    #[test]
    fn representation_geometry_on_constructed_features() {
        // Identity extractor: features are the inputs, two clusters 10 apart
        // with one unit of spread each (along distinct axes).
        let m = rigged_model(2, 2);
        let inputs = Tensor::matrix(
            4,
            2,
            vec![
                10.0, 1.0, //
                10.0, -1.0, //
                0.0, 1.0, //
                0.0, -1.0,
            ],
        )
        .unwrap();
        let data = LabeledDataset::new(inputs, vec![0, 0, 1, 1], 2).unwrap();
        let rep = representation_report(&m, &data, &[0], None).unwrap();
        // ReLU zeroes the negative second coordinate: centroid (10, 0.5),
        // intra = mean distance 0.5; nearest centroid distance 10.
        let c0 = rep.class(0).unwrap();
        assert!((c0.intra_mean_dist.unwrap() - 0.5).abs() < 1e-12);
        assert!((c0.nearest_other_centroid_dist - 10.0).abs() < 1e-12);
        assert!((c0.dispersion_ratio.unwrap() - 0.05).abs() < 1e-12);
        assert!(c0.forgotten);
    }

    #[test]
    fn identical_features_within_class_give_zero_intra() {
        let m = rigged_model(2, 2);
        let inputs = Tensor::matrix(4, 2, vec![3.0, 0.0, 3.0, 0.0, 0.0, 2.0, 0.0, 2.0]).unwrap();
        let data = LabeledDataset::new(inputs, vec![0, 0, 1, 1], 2).unwrap();
        let rep = representation_report(&m, &data, &[], None).unwrap();
        assert_eq!(rep.class(0).unwrap().intra_mean_dist, Some(0.0));
    }

    #[test]
    fn singleton_class_has_no_intra_metric() {
        let m = rigged_model(2, 2);
        let inputs = Tensor::matrix(3, 2, vec![3.0, 0.0, 0.0, 2.0, 0.0, 2.1]).unwrap();
        let data = LabeledDataset::new(inputs, vec![0, 1, 1], 2).unwrap();
        let rep = representation_report(&m, &data, &[], None).unwrap();
        assert_eq!(rep.class(0).unwrap().intra_mean_dist, None);
        assert_eq!(rep.class(0).unwrap().dispersion_ratio, None);
        assert!(rep.class(1).unwrap().intra_mean_dist.is_some());
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let data = make_blobs(3, 4, 20, 6.0, 1.0, 14).unwrap();
        let m = toy_model(4, 3);
        let base = accuracy(&m, &data).unwrap();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = crate::util::Rng::from_seed(5);
        rng.shuffle(&mut order);
        let shuffled = data.select(&order).unwrap();
        assert_eq!(accuracy(&m, &shuffled).unwrap(), base);
    }
}
