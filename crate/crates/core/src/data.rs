//! Synthetic datasets and the forget/retain partition.
//!
//! `make_blobs` places class centers deterministically (scaled basis simplex
//! when classes fit the dimension, a circle otherwise) and adds Gaussian
//! noise. `split_forget` holds out a test fraction first, then partitions by
//! forgotten labels and subsamples the class-balanced few-shot subset.

use crate::autodiff::Tensor;
use crate::util::{row_hash, Rng};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let (n, _) = inputs.dims2()?;
        if n == 0 {
            return Err(Error::EmptyInput("LabeledDataset::new"));
        }
        if labels.len() != n {
            return Err(Error::Shape {
                op: "labeled_dataset",
                detail: format!("{n} rows vs {} labels", labels.len()),
            });
        }
        for &y in &labels {
            if y >= classes {
                return Err(Error::InvalidLabel { label: y, classes });
            }
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// Rows at the given indices, in index order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(Tensor::matrix(indices.len(), d, data)?, labels, self.classes)
    }

    /// Content hash per row (label + feature bits).
    pub fn row_hashes(&self) -> Vec<u64> {
        (0..self.len())
            .map(|i| row_hash(self.labels[i], self.inputs.row(i)))
            .collect()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let d = self.dim();
        let header: Vec<String> = std::iter::once("y".to_string())
            .chain((0..d).map(|j| format!("x{j}")))
            .collect();
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut line = self.labels[i].to_string();
            for &v in self.inputs.row(i) {
                line.push(',');
                line.push_str(&format!("{v}"));
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, classes: usize) -> Result<LabeledDataset> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty dataset csv".into()))??;
        let d = header.split(',').count() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let y: usize = fields
                .next()
                .ok_or_else(|| Error::Config("missing label field".into()))?
                .parse()
                .map_err(|e| Error::Config(format!("bad label: {e}")))?;
            labels.push(y);
            for field in fields {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad value: {e}")))?,
                );
            }
        }
        let n = labels.len();
        LabeledDataset::new(Tensor::matrix(n, d, data)?, labels, classes)
    }
}

/// Forgotten label set, few-shot fraction, and the split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub forget: Vec<usize>,
    pub retained_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.forget.is_empty() {
            return Err(Error::InvalidSplit("forgotten label set is empty".into()));
        }
        let unique: HashSet<usize> = self.forget.iter().copied().collect();
        if unique.len() != self.forget.len() {
            return Err(Error::InvalidSplit("duplicate forgotten labels".into()));
        }
        for &y in &self.forget {
            if y >= classes {
                return Err(Error::InvalidLabel { label: y, classes });
            }
        }
        if unique.len() >= classes {
            return Err(Error::InvalidSplit("cannot forget every class".into()));
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 1.0) {
            return Err(Error::InvalidSplit(format!(
                "retained fraction {} outside (0, 1]",
                self.retained_fraction
            )));
        }
        Ok(())
    }
}

/// The five-way partition. `forget_train` exists only so evaluation fixtures
/// can be built; unlearning operations must never read it (the guard module
/// checks this by content hash).
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub forget_labels: Vec<usize>,
    pub retain_labels: Vec<usize>,
    pub forget_train: LabeledDataset,
    pub retain_train: LabeledDataset,
    pub retain_few: LabeledDataset,
    pub forget_test: LabeledDataset,
    pub retain_test: LabeledDataset,
    pub indices: SplitIndices,
}

/// Row indices of each split in the source dataset, for the manifest file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub forget_train: Vec<usize>,
    pub retain_train: Vec<usize>,
    pub retain_few: Vec<usize>,
    pub forget_test: Vec<usize>,
    pub retain_test: Vec<usize>,
}

impl DatasetSplit {
    /// Training rows visible to the original trainer: everything except the
    /// held-out test rows, in source order.
    pub fn full_train(&self, source: &LabeledDataset) -> Result<LabeledDataset> {
        let mut idx: Vec<usize> = self
            .indices
            .forget_train
            .iter()
            .chain(&self.indices.retain_train)
            .copied()
            .collect();
        idx.sort_unstable();
        source.select(&idx)
    }

    pub fn test_all(&self) -> Result<LabeledDataset> {
        let inputs = self.forget_test.inputs.concat_rows(&self.retain_test.inputs)?;
        let mut labels = self.forget_test.labels.clone();
        labels.extend_from_slice(&self.retain_test.labels);
        LabeledDataset::new(inputs, labels, self.forget_test.classes)
    }
}

/// Gaussian blobs around deterministic, well-separated class centers.
pub fn make_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || dim < 2 {
        return Err(Error::Config(format!("make_blobs needs K >= 2 and d >= 2, got K={classes} d={dim}")));
    }
    if n_per_class == 0 {
        return Err(Error::EmptyInput("make_blobs"));
    }
    if !(separation > 0.0) || noise_sigma < 0.0 {
        return Err(Error::Config("separation must be positive, noise_sigma non-negative".into()));
    }
    let centers = blob_centers(classes, dim, separation);
    let mut rng = Rng::from_seed(seed);
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &cc in center {
                data.push(cc + noise_sigma * rng.normal());
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(Tensor::matrix(n, dim, data)?, labels, classes)
}

/// Class centers on a circular arc in the first two dimensions, adjacent
/// centers exactly `separation` apart. The spacing is capped at 20 degrees
/// so neighbouring classes keep correlated feature directions: every class
/// lives in the shared subspace with a natural runner-up, the regime
/// class-level unlearning operates in (isolated orthogonal clusters leave
/// nothing for a forgotten class's inputs to fall back to).
/// Angular spacing cap for the arc arrangement, in radians (20 degrees).
const ARC_SPACING_CAP: f64 = std::f64::consts::PI / 9.0;

fn blob_centers(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let spacing = (2.0 * std::f64::consts::PI / classes as f64).min(ARC_SPACING_CAP);
    let radius = separation / (2.0 * (spacing / 2.0).sin());
    (0..classes)
        .map(|c| {
            let angle = spacing * c as f64;
            let mut center = vec![0.0; dim];
            center[0] = radius * angle.cos();
            center[1] = radius * angle.sin();
            center
        })
        .collect()
}

/// Fraction of each class held out as test data before any partitioning.
pub const TEST_FRACTION: f64 = 0.2;

/// Partition into forget/retain train splits, the few-shot retained subset,
/// and per-side test splits.
pub fn split_forget(data: &LabeledDataset, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate(data.classes)?;
    let forget: HashSet<usize> = spec.forget.iter().copied().collect();
    let mut rng = Rng::from_seed(spec.seed);

    // Class-balanced test holdout: shuffle each class's rows, take the
    // leading fraction as test.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut idx = SplitIndices::default();
    for (c, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            return Err(Error::InvalidSplit(format!("class {c} has no samples")));
        }
        rng.shuffle(rows);
        let n_test = ((rows.len() as f64) * TEST_FRACTION).round() as usize;
        let n_test = n_test.min(rows.len() - 1);
        let (test_rows, train_rows) = rows.split_at(n_test);
        let is_forget = forget.contains(&c);
        let (test_dst, train_dst) = if is_forget {
            (&mut idx.forget_test, &mut idx.forget_train)
        } else {
            (&mut idx.retain_test, &mut idx.retain_train)
        };
        test_dst.extend_from_slice(test_rows);
        train_dst.extend_from_slice(train_rows);

        if !is_forget {
            // Few-shot subsample: round-half-up of e * n_c, at least one.
            let take = ((spec.retained_fraction * train_rows.len() as f64) + 0.5).floor() as usize;
            let take = take.clamp(1, train_rows.len());
            idx.retain_few.extend_from_slice(&train_rows[..take]);
        }
    }
    for rows in [
        &mut idx.forget_train,
        &mut idx.retain_train,
        &mut idx.retain_few,
        &mut idx.forget_test,
        &mut idx.retain_test,
    ] {
        rows.sort_unstable();
    }

    let mut retain_labels: Vec<usize> = (0..data.classes).filter(|c| !forget.contains(c)).collect();
    retain_labels.sort_unstable();
    let mut forget_labels = spec.forget.clone();
    forget_labels.sort_unstable();

    Ok(DatasetSplit {
        forget_labels,
        retain_labels,
        forget_train: data.select(&idx.forget_train)?,
        retain_train: data.select(&idx.retain_train)?,
        retain_few: data.select(&idx.retain_few)?,
        forget_test: data.select(&idx.forget_test)?,
        retain_test: data.select(&idx.retain_test)?,
        indices: idx,
    })
}

/// Concatenate synthetic erasure samples (labels in the forgotten set) with
/// the few-shot retained data and shuffle deterministically.
pub fn assemble_erasure_set(
    oes: &LabeledDataset,
    retain_few: &LabeledDataset,
    forget_labels: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    if oes.is_empty() {
        return Err(Error::EmptyInput("assemble_erasure_set"));
    }
    let allowed: HashSet<usize> = forget_labels.iter().copied().collect();
    for &y in &oes.labels {
        if !allowed.contains(&y) {
            return Err(Error::InvalidLabel {
                label: y,
                classes: oes.classes,
            });
        }
    }
    let combined_inputs = oes.inputs.concat_rows(&retain_few.inputs)?;
    let mut combined_labels = oes.labels.clone();
    combined_labels.extend_from_slice(&retain_few.labels);
    let combined = LabeledDataset::new(combined_inputs, combined_labels, oes.classes)?;

    let mut order: Vec<usize> = (0..combined.len()).collect();
    let mut rng = Rng::from_seed(seed);
    rng.shuffle(&mut order);
    combined.select(&order)
}

pub fn write_split_manifest(path: &Path, forget_labels: &[usize], indices: &SplitIndices) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        forget_labels: &'a [usize],
        #[serde(flatten)]
        indices: &'a SplitIndices,
    }
    let json = serde_json::to_string_pretty(&Manifest {
        forget_labels,
        indices,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_split_manifest(path: &Path) -> Result<(Vec<usize>, SplitIndices)> {
    #[derive(Deserialize)]
    struct Manifest {
        forget_labels: Vec<usize>,
        #[serde(flatten)]
        indices: SplitIndices,
    }
    let text = std::fs::read_to_string(path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok((m.forget_labels, m.indices))
}

/// Rebuild a [`DatasetSplit`] from a source dataset and a manifest.
pub fn split_from_manifest(
    data: &LabeledDataset,
    forget_labels: Vec<usize>,
    indices: SplitIndices,
) -> Result<DatasetSplit> {
    let forget: HashSet<usize> = forget_labels.iter().copied().collect();
    let retain_labels: Vec<usize> = (0..data.classes).filter(|c| !forget.contains(c)).collect();
    Ok(DatasetSplit {
        forget_labels,
        retain_labels,
        forget_train: data.select(&indices.forget_train)?,
        retain_train: data.select(&indices.retain_train)?,
        retain_few: data.select(&indices.retain_few)?,
        forget_test: data.select(&indices.forget_test)?,
        retain_test: data.select(&indices.retain_test)?,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_collapses_to_centers() {
        let data = make_blobs(3, 4, 5, 6.0, 0.0, 1).unwrap();
        let centers = blob_centers(3, 4, 6.0);
        for i in 0..data.len() {
            let c = data.labels[i];
            for (j, &v) in data.inputs.row(i).iter().enumerate() {
                assert_eq!(v, centers[c][j]);
            }
        }
    }

    #[test]
    fn blobs_are_deterministic_and_separated() {
        let a = make_blobs(5, 16, 20, 8.0, 1.0, 42).unwrap();
        let b = make_blobs(5, 16, 20, 8.0, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let centers = blob_centers(5, 16, 8.0);
        for i in 0..5 {
            for j in (i + 1)..5 {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 8.0 - 1e-9);
            }
        }
    }

    #[test]
    fn circle_centers_cover_many_classes() {
        let centers = blob_centers(7, 2, 4.0);
        for i in 0..7 {
            for j in (i + 1)..7 {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 4.0 - 1e-9, "classes {i},{j}: {d}");
            }
        }
    }

    #[test]
    fn split_counts_match_the_partition() {
        let data = make_blobs(2, 4, 125, 8.0, 1.0, 3).unwrap();
        let split = split_forget(
            &data,
            &SplitSpec {
                forget: vec![0],
                retained_fraction: 0.1,
                seed: 5,
            },
        )
        .unwrap();
        // 125 per class, 20% test -> 25 test, 100 train per class.
        assert_eq!(split.forget_train.len(), 100);
        assert_eq!(split.retain_train.len(), 100);
        assert_eq!(split.forget_test.len(), 25);
        assert_eq!(split.retain_test.len(), 25);
        // e = 0.10 on 100 retained -> 10 per class.
        assert_eq!(split.retain_few.len(), 10);
    }

    #[test]
    fn split_is_a_partition_by_brute_force_membership() {
        let data = make_blobs(4, 3, 30, 5.0, 0.5, 9).unwrap();
        let split = split_forget(
            &data,
            &SplitSpec {
                forget: vec![1, 3],
                retained_fraction: 0.2,
                seed: 2,
            },
        )
        .unwrap();
        let idx = &split.indices;
        let mut seen = HashSet::new();
        for part in [
            &idx.forget_train,
            &idx.retain_train,
            &idx.forget_test,
            &idx.retain_test,
        ] {
            for &i in part.iter() {
                assert!(seen.insert(i), "row {i} in two splits");
            }
        }
        assert_eq!(seen.len(), data.len());
        for &i in &idx.forget_train {
            assert!([1, 3].contains(&data.labels[i]));
        }
        for &i in &idx.retain_few {
            assert!(idx.retain_train.binary_search(&i).is_ok(), "few-shot row outside retain train");
        }
        // Few-shot is class-balanced within 1 of round(e * n_c).
        let counts = split.retain_few.per_class_counts();
        for &c in &split.retain_labels {
            let n_c = split
                .retain_train
                .labels
                .iter()
                .filter(|&&y| y == c)
                .count();
            let target = ((0.2 * n_c as f64) + 0.5).floor() as usize;
            assert!((counts[c] as isize - target as isize).abs() <= 1);
        }
    }

    #[test]
    fn degenerate_forget_sets_are_rejected() {
        let data = make_blobs(3, 3, 10, 5.0, 0.5, 1).unwrap();
        for forget in [vec![], vec![0, 1, 2]] {
            let err = split_forget(
                &data,
                &SplitSpec {
                    forget,
                    retained_fraction: 0.1,
                    seed: 0,
                },
            );
            assert!(matches!(err, Err(Error::InvalidSplit(_))));
        }
    }

    #[test]
    fn erasure_set_is_a_shuffled_multiset_union() {
        let data = make_blobs(3, 4, 40, 6.0, 1.0, 11).unwrap();
        let split = split_forget(
            &data,
            &SplitSpec {
                forget: vec![2],
                retained_fraction: 0.5,
                seed: 4,
            },
        )
        .unwrap();
        let oes = LabeledDataset::new(
            Tensor::matrix(6, 4, (0..24).map(|i| i as f64).collect()).unwrap(),
            vec![2; 6],
            3,
        )
        .unwrap();
        let merged = assemble_erasure_set(&oes, &split.retain_few, &[2], 7).unwrap();
        assert_eq!(merged.len(), 6 + split.retain_few.len());
        assert_eq!(merged.labels.iter().filter(|&&y| y == 2).count(), 6);

        let mut expected: Vec<u64> = oes.row_hashes();
        expected.extend(split.retain_few.row_hashes());
        expected.sort_unstable();
        let mut got = merged.row_hashes();
        got.sort_unstable();
        assert_eq!(expected, got, "shuffle must be a permutation");
    }

    #[test]
    fn erasure_set_rejects_bad_oes_labels() {
        let data = make_blobs(3, 4, 20, 6.0, 1.0, 11).unwrap();
        let split = split_forget(
            &data,
            &SplitSpec {
                forget: vec![2],
                retained_fraction: 0.5,
                seed: 4,
            },
        )
        .unwrap();
        let oes = LabeledDataset::new(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap(), vec![1], 3).unwrap();
        assert!(matches!(
            assemble_erasure_set(&oes, &split.retain_few, &[2], 7),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn csv_roundtrip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_blobs(3, 5, 7, 4.0, 0.3, 21).unwrap();
        let path = dir.path().join("data.csv");
        data.write_csv(&path).unwrap();
        let loaded = LabeledDataset::read_csv(&path, 3).unwrap();
        assert_eq!(data, loaded);
    }
}
