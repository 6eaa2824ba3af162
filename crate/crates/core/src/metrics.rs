//! Distribution distances and diversity diagnostics on raw sample vectors.
//!
//! - FID: Fréchet distance between Gaussian moment fits.
//! - KID: unbiased MMD² with the cubic polynomial kernel, averaged over
//!   disjoint blocks.
//! - Precision/recall: k-nearest-neighbour manifold membership.
//! - Mode coverage and class fidelity against a dataset's known mode centers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassConditionalDataset;
use crate::error::{Error, Result};

/// Seed of the fixed permutation that assigns points to KID blocks.
const KID_BLOCK_SEED: u64 = 0x4b49_445f_424c_4b53;

pub const DEFAULT_KID_BLOCK: usize = 100;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_RADIUS_MULTIPLE: f64 = 3.0;

/// Non-empty set of equal-length vectors, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    vectors: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(dim: usize, vectors: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || !vectors.len().is_multiple_of(dim) {
            return Err(Error::contract(format!(
                "feature set needs a non-empty multiple of dim {dim}, got {} values",
                vectors.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() * dim != vectors.len() {
                return Err(Error::contract("labels and vectors disagree in length"));
            }
        }
        Ok(Self { dim, vectors, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::contract("inconsistent feature dimension"));
        }
        Self::new(dim, rows.concat(), labels)
    }

    pub fn from_dataset(ds: &ClassConditionalDataset) -> Self {
        Self {
            dim: ds.dim(),
            vectors: ds.points().to_vec(),
            labels: Some(ds.labels().to_vec()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows carrying `label`, or `None` when the set is unlabeled or has none.
    pub fn restrict(&self, label: usize) -> Option<Self> {
        let labels = self.labels.as_ref()?;
        let mut vectors = Vec::new();
        let mut kept = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if l == label {
                vectors.extend_from_slice(self.row(i));
                kept.push(l);
            }
        }
        if kept.is_empty() {
            return None;
        }
        Some(Self {
            dim: self.dim,
            vectors,
            labels: Some(kept),
        })
    }

    pub fn translated(&self, delta: &[f64]) -> Self {
        let mut out = self.clone();
        for row in out.vectors.chunks_exact_mut(self.dim) {
            for (x, d) in row.iter_mut().zip(delta) {
                *x += d;
            }
        }
        out
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.len() as f64;
        let mut mu = DVector::zeros(self.dim);
        for i in 0..self.len() {
            for (j, v) in self.row(i).iter().enumerate() {
                mu[j] += v;
            }
        }
        mu / n
    }

    /// Sample covariance with the `n − 1` normalizer.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let n = self.len();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for i in 0..n {
            let r = self.row(i);
            for a in 0..self.dim {
                let da = r[a] - mu[a];
                for b in a..self.dim {
                    cov[(a, b)] += da * (r[b] - mu[b]);
                }
            }
        }
        for a in 0..self.dim {
            for b in a..self.dim {
                let v = cov[(a, b)] / (n as f64 - 1.0);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        cov
    }
}

fn check_dims(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::Dimension {
            op: "feature sets",
            lhs: vec![a.len(), a.dim],
            rhs: vec![b.len(), b.dim],
        });
    }
    Ok(())
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between `N(mu_r, cov_r)` and `N(mu_f, cov_f)`, using the
/// symmetric form `Σr^½ Σf Σr^½` with negative eigenvalues clamped to 0.
pub fn fid_from_moments(
    mu_r: &DVector<f64>,
    cov_r: &DMatrix<f64>,
    mu_f: &DVector<f64>,
    cov_f: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_r.len();
    if mu_f.len() != d || cov_r.shape() != (d, d) || cov_f.shape() != (d, d) {
        return Err(Error::Dimension {
            op: "fid moments",
            lhs: vec![mu_r.len(), cov_r.nrows(), cov_r.ncols()],
            rhs: vec![mu_f.len(), cov_f.nrows(), cov_f.ncols()],
        });
    }
    let diff = mu_r - mu_f;
    let root_r = symmetric_sqrt(cov_r);
    let inner = &root_r * cov_f * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let value = diff.norm_squared() + cov_r.trace() + cov_f.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// FID between two feature sets; each needs more samples than dimensions.
pub fn fid(real: &FeatureSet, fake: &FeatureSet) -> Result<f64> {
    check_dims(real, fake)?;
    for (name, s) in [("real", real), ("fake", fake)] {
        if s.len() <= s.dim {
            return Err(Error::contract(format!(
                "fid needs at least {} {name} samples for dimension {}, got {}",
                s.dim + 1,
                s.dim,
                s.len()
            )));
        }
    }
    fid_from_moments(&real.mean(), &real.covariance(), &fake.mean(), &fake.covariance())
}

/// `k(x, y) = (xᵀy / d + 1)³`.
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

fn unbiased_mmd2(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let m = x.len() as f64;
    let n = y.len() as f64;
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    acc += polynomial_kernel(s[i], s[j]);
                }
            }
        }
        acc
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += polynomial_kernel(a, b);
        }
    }
    within(x) / (m * (m - 1.0)) + within(y) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Default KID block size: `min(n, m, 100)`.
pub fn default_block_size(real: &FeatureSet, fake: &FeatureSet) -> usize {
    real.len().min(fake.len()).min(DEFAULT_KID_BLOCK)
}

/// Unbiased KID: mean of the block MMD² estimates over
/// `min(n, m) / block_size` disjoint blocks. Points are assigned to blocks
/// through a fixed-seed permutation so a block is not biased by storage order.
pub fn kid(real: &FeatureSet, fake: &FeatureSet, block_size: usize) -> Result<f64> {
    check_dims(real, fake)?;
    if block_size < 2 {
        return Err(Error::contract(format!("kid block_size must be >= 2, got {block_size}")));
    }
    if real.len() < block_size || fake.len() < block_size {
        return Err(Error::contract(format!(
            "kid needs at least {block_size} samples per set, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(KID_BLOCK_SEED);
    let mut real_order: Vec<usize> = (0..real.len()).collect();
    let mut fake_order: Vec<usize> = (0..fake.len()).collect();
    real_order.shuffle(&mut rng);
    fake_order.shuffle(&mut rng);

    let blocks = real.len().min(fake.len()) / block_size;
    let mut total = 0.0;
    for b in 0..blocks {
        let xs: Vec<&[f64]> = real_order[b * block_size..(b + 1) * block_size]
            .iter()
            .map(|&i| real.row(i))
            .collect();
        let ys: Vec<&[f64]> = fake_order[b * block_size..(b + 1) * block_size]
            .iter()
            .map(|&i| fake.row(i))
            .collect();
        total += unbiased_mmd2(&xs, &ys);
    }
    Ok(total / blocks as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point to its k-th nearest other point.
fn knn_radii_sq(set: &FeatureSet, k: usize) -> Vec<f64> {
    let n = set.len();
    let mut buf = Vec::with_capacity(n - 1);
    (0..n)
        .map(|i| {
            buf.clear();
            let p = set.row(i);
            buf.extend((0..n).filter(|&j| j != i).map(|j| sq_dist(p, set.row(j))));
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

fn manifold_share(reference: &FeatureSet, radii_sq: &[f64], queries: &FeatureSet) -> f64 {
    let inside = (0..queries.len())
        .filter(|&q| {
            let p = queries.row(q);
            (0..reference.len()).any(|r| sq_dist(p, reference.row(r)) <= radii_sq[r])
        })
        .count();
    inside as f64 / queries.len() as f64
}

/// k-NN manifold precision (fakes inside the real manifold) and recall
/// (reals inside the fake manifold).
pub fn precision_recall(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    check_dims(real, fake)?;
    if k == 0 {
        return Err(Error::contract("k must be >= 1"));
    }
    for (name, s) in [("real", real), ("fake", fake)] {
        if k >= s.len() {
            return Err(Error::contract(format!(
                "k = {k} requires more than {k} {name} samples, got {}",
                s.len()
            )));
        }
    }
    let real_radii = knn_radii_sq(real, k);
    let fake_radii = knn_radii_sq(fake, k);
    Ok((
        manifold_share(real, &real_radii, fake),
        manifold_share(fake, &fake_radii, real),
    ))
}

/// `(mode_coverage, class_fidelity)` of labeled fakes against a dataset.
///
/// A mode counts as covered when some fake of its class lies within
/// `radius_multiple · mode_sigma` of its center. Fidelity is the share of
/// fakes whose nearest center (over all classes) belongs to their label.
pub fn mode_coverage(fake: &FeatureSet, dataset: &ClassConditionalDataset, radius_multiple: f64) -> Result<(f64, f64)> {
    let labels = fake
        .labels()
        .ok_or_else(|| Error::contract("mode_coverage needs labeled fakes"))?;
    if fake.dim() != dataset.dim() {
        return Err(Error::Dimension {
            op: "mode_coverage",
            lhs: vec![fake.dim()],
            rhs: vec![dataset.dim()],
        });
    }
    let nc = dataset.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= nc) {
        return Err(Error::Index {
            what: "fake label",
            index: bad,
            len: nc,
        });
    }
    let radius_sq = (radius_multiple * dataset.mode_sigma()).powi(2);
    let centers = dataset.mode_centers();
    let mut covered: Vec<Vec<bool>> = centers.iter().map(|c| vec![false; c.len()]).collect();
    let mut faithful = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let p = fake.row(i);
        for (j, c) in centers[label].iter().enumerate() {
            if sq_dist(p, c) <= radius_sq {
                covered[label][j] = true;
            }
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for (k, class_centers) in centers.iter().enumerate() {
            for c in class_centers {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, k);
                }
            }
        }
        if best.1 == label {
            faithful += 1;
        }
    }
    let total = dataset.total_modes();
    let hit = covered.iter().flatten().filter(|&&c| c).count();
    Ok((hit as f64 / total as f64, faithful as f64 / fake.len() as f64))
}

/// Metric evaluated per class by [`classwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Fid,
    /// KID with the given maximum block size, shrunk to the class sizes.
    Kid(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classwise {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Metric per class label (classes `0..=max label`), with the unweighted mean.
pub fn classwise(kind: MetricKind, real: &FeatureSet, fake: &FeatureSet) -> Result<Classwise> {
    let (Some(rl), Some(fl)) = (real.labels(), fake.labels()) else {
        return Err(Error::contract("classwise metrics need labeled sets"));
    };
    let classes = rl.iter().chain(fl).copied().max().unwrap_or(0) + 1;
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let r = real
            .restrict(c)
            .ok_or_else(|| Error::contract(format!("class {c} missing from the real set")))?;
        let f = fake
            .restrict(c)
            .ok_or_else(|| Error::contract(format!("class {c} missing from the fake set")))?;
        let v = match kind {
            MetricKind::Fid => fid(&r, &f),
            MetricKind::Kid(block) => kid(&r, &f, block.min(r.len()).min(f.len())),
        }
        .map_err(|e| Error::contract(format!("class {c}: {e}")))?;
        per_class.push(v);
    }
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(Classwise { per_class, mean })
}

/// Options for [`evaluate_sets`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub k: usize,
    /// `None` selects `min(n, m, 100)`.
    pub block_size: Option<usize>,
    pub radius_multiple: f64,
    pub classwise: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            block_size: None,
            radius_multiple: DEFAULT_RADIUS_MULTIPLE,
            classwise: false,
        }
    }
}

/// All metrics at one evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub step: u64,
    pub fid: f64,
    pub kid: f64,
    pub precision: f64,
    pub recall: f64,
    pub classwise_fid: Option<Classwise>,
    pub classwise_kid: Option<Classwise>,
    pub mode_coverage: f64,
    pub class_fidelity: f64,
}

/// Computes every metric of a [`MetricsReport`] for labeled fakes against a dataset.
pub fn evaluate_sets(
    dataset: &ClassConditionalDataset,
    fake: &FeatureSet,
    options: &MetricOptions,
    step: u64,
) -> Result<MetricsReport> {
    let real = FeatureSet::from_dataset(dataset);
    let block = options.block_size.unwrap_or_else(|| default_block_size(&real, fake));
    let fid_v = fid(&real, fake)?;
    let kid_v = kid(&real, fake, block)?;
    let (precision, recall) = precision_recall(&real, fake, options.k)?;
    let (coverage, fidelity) = mode_coverage(fake, dataset, options.radius_multiple)?;
    let (classwise_fid, classwise_kid) = if options.classwise {
        (
            Some(classwise(MetricKind::Fid, &real, fake)?),
            Some(classwise(MetricKind::Kid(block), &real, fake)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        step,
        fid: fid_v,
        kid: kid_v,
        precision,
        recall,
        classwise_fid,
        classwise_kid,
        mode_coverage: coverage,
        class_fidelity: fidelity,
    })
}
