//! Exhaustive k-nearest-neighbor classification and box regression on
//! flattened heatmap features, plus seeded k-fold cross-validation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K: usize = 1;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} is invalid for {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("{n} samples cannot be split into {folds} folds")]
    TooFewSamples { n: usize, folds: usize },
}

/// Training data stored verbatim, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel<T> {
    data: Vec<f64>,
    labels: Vec<T>,
    dim: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index))
}

pub fn fit<T>(features: &[Vec<f64>], labels: Vec<T>, k: usize) -> Result<KnnModel<T>, KnnError> {
    let n = features.len();
    if labels.len() != n {
        return Err(KnnError::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if k == 0 || k > n {
        return Err(KnnError::KTooLarge { k, n });
    }
    let dim = features[0].len();
    let mut data = Vec::with_capacity(n * dim);
    for row in features {
        if row.len() != dim {
            return Err(KnnError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        data.extend_from_slice(row);
    }
    Ok(KnnModel { data, labels, dim, k })
}

impl<T> KnnModel<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` nearest training rows by Euclidean distance, closest first;
    /// equal distances go to the lower training index.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<Neighbor>, KnnError> {
        if query.len() != self.dim {
            return Err(KnnError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|index| Neighbor {
                index,
                dist2: squared_distance(self.row(index), query),
            })
            .collect();
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, by_distance_then_index);
            all.truncate(self.k);
        }
        all.sort_by(by_distance_then_index);
        Ok(all)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vote<T> {
    pub class: T,
    /// Share of the `k` neighbors voting for `class`.
    pub fraction: f64,
}

impl<T: Ord + Clone> KnnModel<T> {
    /// Majority vote among the nearest neighbors. Vote ties go to the
    /// smallest label, which for [`crate::heatmap::Presence`] is no-object.
    pub fn classify(&self, query: &[f64]) -> Result<Vote<T>, KnnError> {
        let nn = self.neighbors(query)?;
        let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
        for n in &nn {
            *counts.entry(&self.labels[n.index]).or_default() += 1;
        }
        let (class, count) = counts
            .into_iter()
            .fold(None, |best: Option<(&T, usize)>, (c, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((c, n)),
            })
            .expect("k >= 1");
        Ok(Vote {
            class: class.clone(),
            fraction: count as f64 / nn.len() as f64,
        })
    }
}

impl<const D: usize> KnnModel<[f64; D]> {
    /// Unweighted mean of the nearest targets.
    pub fn regress(&self, query: &[f64]) -> Result<[f64; D], KnnError> {
        let nn = self.neighbors(query)?;
        // Running mean: exact when all neighbor targets agree.
        let mut out = [0.0; D];
        for (seen, n) in nn.iter().enumerate() {
            for (o, t) in out.iter_mut().zip(&self.labels[n.index]) {
                *o += (t - *o) / (seen + 1) as f64;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    MeanAbsoluteError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: Metric,
    pub folds: usize,
    pub k: usize,
    pub seed: u64,
    pub samples: usize,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

/// Shuffles `0..n` with the seed and deals the result round-robin into folds.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>, KnnError> {
    if folds < 2 || n < folds {
        return Err(KnnError::TooFewSamples { n, folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn run_folds<T, F>(
    features: &[Vec<f64>],
    labels: &[T],
    folds: usize,
    k: usize,
    seed: u64,
    score: F,
) -> Result<Vec<f64>, KnnError>
where
    T: Clone + Send + Sync,
    F: Fn(&KnnModel<T>, &[usize]) -> Result<f64, KnnError> + Sync,
{
    if features.len() != labels.len() {
        return Err(KnnError::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let assignment = fold_assignment(features.len(), folds, seed)?;
    assignment
        .par_iter()
        .map(|test| {
            let mut in_test = vec![false; features.len()];
            for &i in test {
                in_test[i] = true;
            }
            let train: Vec<usize> = (0..features.len()).filter(|&i| !in_test[i]).collect();
            let rows: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let model = fit(&rows, train.iter().map(|&i| labels[i].clone()).collect(), k)?;
            score(&model, test)
        })
        .collect()
}

fn summarize(metric: Metric, folds: usize, k: usize, seed: u64, samples: usize, per_fold: Vec<f64>) -> CvReport {
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let var = per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    CvReport {
        metric,
        folds,
        k,
        seed,
        samples,
        per_fold,
        mean,
        std: var.sqrt(),
    }
}

pub fn cross_validate_classifier<T>(
    features: &[Vec<f64>],
    labels: &[T],
    folds: usize,
    k: usize,
    seed: u64,
) -> Result<CvReport, KnnError>
where
    T: Ord + Clone + Send + Sync,
{
    let per_fold = run_folds(features, labels, folds, k, seed, |model, test| {
        let mut correct = 0usize;
        for &i in test {
            if model.classify(&features[i])?.class == labels[i] {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len() as f64)
    })?;
    Ok(summarize(Metric::Accuracy, folds, k, seed, features.len(), per_fold))
}

/// Mean absolute error averaged over all target components.
pub fn cross_validate_regressor<const D: usize>(
    features: &[Vec<f64>],
    targets: &[[f64; D]],
    folds: usize,
    k: usize,
    seed: u64,
) -> Result<CvReport, KnnError> {
    let per_fold = run_folds(features, targets, folds, k, seed, |model, test| {
        let mut err = 0.0;
        for &i in test {
            let p = model.regress(&features[i])?;
            err += p.iter().zip(&targets[i]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        Ok(err / (test.len() * D) as f64)
    })?;
    Ok(summarize(Metric::MeanAbsoluteError, folds, k, seed, features.len(), per_fold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::Presence;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    // Full sort of every training row by (distance, index).
    fn scan_oracle(rows: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn fit_contract() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(fit(&rows, vec![0, 1], 1).unwrap().len(), 2);
        assert_eq!(fit(&rows, vec![0, 1], 0).unwrap_err(), KnnError::KTooLarge { k: 0, n: 2 });
        assert_eq!(fit(&rows, vec![0, 1], 3).unwrap_err(), KnnError::KTooLarge { k: 3, n: 2 });
        assert!(matches!(fit(&[vec![0.0], vec![0.0, 1.0]], vec![0, 1], 1), Err(KnnError::DimensionMismatch { .. })));
        let dup = vec![vec![0.5; 3]; 4];
        assert_eq!(fit(&dup, vec![1; 4], 2).unwrap().len(), 4);
    }

    #[test]
    fn classify_examples() {
        let rows = vec![vec![0.0], vec![1.0], vec![1.1], vec![5.0]];
        let labels = vec![Presence::NoObject, Presence::Object, Presence::Object, Presence::NoObject];
        let m1 = fit(&rows, labels.clone(), 1).unwrap();
        assert_eq!(m1.classify(&[5.0]).unwrap().class, Presence::NoObject);
        let m3 = fit(&rows, labels.clone(), 3).unwrap();
        let v = m3.classify(&[0.9]).unwrap();
        let oracle = scan_oracle(&rows, &[0.9], 3);
        let votes = oracle.iter().filter(|&&i| labels[i] == Presence::Object).count();
        assert_eq!(votes, 2);
        assert_eq!(v, Vote { class: Presence::Object, fraction: 2.0 / 3.0 });
        assert!(m3.classify(&[0.0, 1.0]).is_err());

        // Query at 0.5 is equidistant from rows 0 and 1; k = 2 splits the vote.
        let m2 = fit(&rows, labels.clone(), 2).unwrap();
        assert_eq!(m2.classify(&[0.5]).unwrap().class, Presence::NoObject);

        let same = fit(&rows, vec![Presence::Object; 4], 3).unwrap();
        assert_eq!(same.classify(&[-100.0]).unwrap().class, Presence::Object);
    }

    #[test]
    fn distance_ties_go_to_lower_index() {
        let rows = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let m = fit(&rows, vec![0, 1, 2], 1).unwrap();
        assert_eq!(m.neighbors(&[0.0]).unwrap()[0].index, 0);
        let m2 = fit(&rows, vec![[0.0], [1.0], [2.0]], 2).unwrap();
        assert_eq!(m2.regress(&[0.0]).unwrap(), [0.5]);
    }

    #[test]
    fn regress_examples() {
        let rows = vec![vec![-1.0], vec![1.0], vec![4.0]];
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.3, 0.4, 0.5, 0.6];
        let m = fit(&rows, vec![a, b, [9.0; 4]], 1).unwrap();
        assert_eq!(m.regress(&[3.5]).unwrap(), [9.0; 4]);
        let m2 = fit(&rows, vec![a, b, [9.0; 4]], 2).unwrap();
        let r = m2.regress(&[0.0]).unwrap();
        for i in 0..4 {
            assert!((r[i] - (a[i] + b[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_queries_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = random_rows(&mut rng, 1000, 8);
        let targets: Vec<[f64; 4]> = (0..1000).map(|_| [rng.random(), rng.random(), rng.random(), rng.random()]).collect();
        for k in [1, 3, 10] {
            let m = fit(&rows, targets.clone(), k).unwrap();
            for _ in 0..100 {
                let q: Vec<f64> = (0..8).map(|_| rng.random()).collect();
                let oracle = scan_oracle(&rows, &q, k);
                let got: Vec<usize> = m.neighbors(&q).unwrap().iter().map(|n| n.index).collect();
                assert_eq!(got, oracle);
                let r = m.regress(&q).unwrap();
                for c in 0..4 {
                    let mean = oracle.iter().map(|&i| targets[i][c]).sum::<f64>() / k as f64;
                    assert!((r[c] - mean).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let (c, l) = if i % 2 == 0 { (0.0, Presence::NoObject) } else { (3.0, Presence::Object) };
            rows.push((0..5).map(|_| c + noise.sample(&mut rng)).collect());
            labels.push(l);
        }
        let r = cross_validate_classifier(&rows, &labels, 5, 1, DEFAULT_SEED).unwrap();
        assert_eq!(r.per_fold.len(), 5);
        assert!(r.mean >= 0.95, "{r:?}");
    }

    #[test]
    fn random_labels_sit_at_chance() {
        // Balanced classes independent of the features: expected accuracy 0.5.
        let mut means = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let rows = random_rows(&mut rng, 400, 4);
            let labels: Vec<u8> = (0..400).map(|i| (i % 2) as u8).collect();
            means.push(cross_validate_classifier(&rows, &labels, 5, 1, seed).unwrap().mean);
        }
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        assert!((avg - 0.5).abs() <= 0.1, "{means:?}");
    }

    #[test]
    fn constant_target_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(&mut rng, 50, 3);
        let r = cross_validate_regressor(&rows, &vec![[0.2, 0.3, 0.1, 0.4]; 50], 5, 3, 42).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.metric, Metric::MeanAbsoluteError);
    }

    #[test]
    fn folds_are_a_seeded_partition() {
        let a = fold_assignment(23, 5, 42).unwrap();
        assert_eq!(a, fold_assignment(23, 5, 42).unwrap());
        assert_ne!(a, fold_assignment(23, 5, 43).unwrap());
        let mut all: Vec<usize> = a.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(a.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(fold_assignment(4, 5, 42).unwrap_err(), KnnError::TooFewSamples { n: 4, folds: 5 });
    }

    proptest! {
        #[test]
        fn regress_within_neighbor_hull(seed in 0u64..1000, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, 20, 3);
            let targets: Vec<[f64; 4]> = (0..20).map(|_| [rng.random(), rng.random(), rng.random(), rng.random()]).collect();
            let m = fit(&rows, targets.clone(), k).unwrap();
            let q: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let nn = m.neighbors(&q).unwrap();
            let r = m.regress(&q).unwrap();
            for c in 0..4 {
                let lo = nn.iter().map(|n| targets[n.index][c]).fold(f64::INFINITY, f64::min);
                let hi = nn.iter().map(|n| targets[n.index][c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(r[c] >= lo - 1e-15 && r[c] <= hi + 1e-15);
            }
        }

        #[test]
        fn permutation_invariant_without_ties(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, 30, 4);
            let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
            let mut perm: Vec<usize> = (0..30).collect();
            perm.shuffle(&mut rng);
            let prow: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let plab: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
            let a = fit(&rows, labels, 3).unwrap();
            let b = fit(&prow, plab, 3).unwrap();
            let q: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            prop_assert_eq!(a.classify(&q).unwrap(), b.classify(&q).unwrap());
        }
    }
}
