use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::LearningError;
use crate::rng::{self, Purpose};

/// Labeled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dims: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dims: usize, classes: usize) -> Result<Self, LearningError> {
        if labels.is_empty() {
            return Err(LearningError::InvalidDataset("dataset has no samples".into()));
        }
        if dims == 0 || features.len() != labels.len() * dims {
            return Err(LearningError::InvalidDataset(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                dims
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LearningError::InvalidDataset(format!("label {bad} outside 0..{classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Dataset { features, labels, dims, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i * self.dims..(i + 1) * self.dims], self.labels[i])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, LearningError> {
        let mut features = Vec::with_capacity(indices.len() * self.dims);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Dataset::new(features, labels, self.dims, self.classes)
    }

    /// Splits off `test_n` samples chosen by a seeded shuffle.
    pub fn split_holdout(&self, test_n: usize, seed: u64) -> Result<(Dataset, Dataset), LearningError> {
        if test_n == 0 || test_n >= self.len() {
            return Err(LearningError::InvalidArgument(format!("holdout size {test_n} must be in 1..{}", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, 0, 0, Purpose::Split));
        let (test, train) = order.split_at(test_n);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Gaussian blobs around unit-norm random centers, one blob per class.
/// Labels cycle through the classes so every class gets `n / classes` or one
/// more sample.
pub fn generate_synthetic(
    classes: usize,
    dims: usize,
    n: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset, LearningError> {
    if classes < 2 || dims < 1 || n < classes {
        return Err(LearningError::InvalidArgument(format!(
            "need classes >= 2, dims >= 1, n >= classes; got classes={classes} dims={dims} n={n}"
        )));
    }
    if !(cluster_spread.is_finite() && cluster_spread >= 0.0) {
        return Err(LearningError::InvalidArgument(format!("cluster_spread {cluster_spread} must be >= 0")));
    }
    let mut center_rng = rng::stream(seed, 0, 0, Purpose::DataGen);
    let mut centers = Vec::with_capacity(classes * dims);
    for _ in 0..classes {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..dims).map(|_| center_rng.sample(StandardNormal)).collect();
            if v.iter().any(|x| *x != 0.0) {
                break v;
            }
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        centers.extend(v.into_iter().map(|x| x / norm));
    }

    let mut sample_rng = rng::stream(seed, 1, 0, Purpose::DataGen);
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let center = &centers[label * dims..(label + 1) * dims];
        for &c in center {
            let noise: f64 = sample_rng.sample(StandardNormal);
            features.push(c + cluster_spread * noise);
        }
        labels.push(label);
    }
    Dataset::new(features, labels, dims, classes)
}

/// Per-device sample indices into a shared dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn device(&self, index: usize) -> &[usize] {
        &self.assignments[index]
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Label-skew partition. Device `d` gets dominant label `d mod C`; `round(lambda * quota)`
/// of its samples come from that label and the rest are drawn without
/// replacement from the pooled samples of the other labels. At `lambda = 0`
/// there is no dominant label and every sample is drawn from the full pool.
pub fn partition_label_skew(
    dataset: &Dataset,
    num_devices: usize,
    quota: usize,
    lambda: f64,
    seed: u64,
) -> Result<Partition, LearningError> {
    let classes = dataset.classes();
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LearningError::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if num_devices == 0 || num_devices > dataset.len() || quota == 0 || classes < 2 {
        return Err(LearningError::InvalidArgument(format!(
            "cannot split {} samples of {classes} classes into {num_devices} devices of {quota}",
            dataset.len()
        )));
    }

    let mut rng = rng::stream(seed, 0, 0, Purpose::Partition);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in dataset.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let dominant_count = (lambda * quota as f64).round() as usize;
    let mut assignments: Vec<Vec<usize>> = vec![Vec::with_capacity(quota); num_devices];

    if lambda > 0.0 {
        for (d, slot) in assignments.iter_mut().enumerate() {
            let label = d % classes;
            let pool = &mut pools[label];
            if pool.len() < dominant_count {
                return Err(LearningError::InfeasiblePartition {
                    label,
                    needed: dominant_count,
                    available: pool.len(),
                });
            }
            slot.extend(pool.drain(pool.len() - dominant_count..));
        }
    }

    for (d, slot) in assignments.iter_mut().enumerate() {
        let excluded = (lambda > 0.0).then_some(d % classes);
        for _ in dominant_count..quota {
            let total: usize =
                pools.iter().enumerate().filter(|(l, _)| Some(*l) != excluded).map(|(_, p)| p.len()).sum();
            if total == 0 {
                return Err(LearningError::InfeasiblePartition {
                    label: excluded.unwrap_or(0),
                    needed: quota - slot.len(),
                    available: 0,
                });
            }
            let mut pick = rng.random_range(0..total);
            let label = pools
                .iter()
                .enumerate()
                .filter(|(l, _)| Some(*l) != excluded)
                .find_map(|(l, p)| {
                    if pick < p.len() {
                        Some(l)
                    } else {
                        pick -= p.len();
                        None
                    }
                })
                .expect("pick is below the pooled total");
            slot.push(pools[label].pop().expect("chosen pool is non-empty"));
        }
        slot.sort_unstable();
    }

    Ok(Partition { assignments })
}
