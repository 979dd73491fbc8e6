//! Intensity clustering segmenters: K-Means, Gaussian mixture EM, Fuzzy
//! C-Means and its spatial-distance-weighted variant, plus selection of the
//! most intense clusters as the lesion label.
//!
//! KM/GMM/FCM operate on the flattened 1D intensity vector; the spatial
//! variant also sees the voxel grid and reweights each point-to-cluster
//! distance by the point's distance to the cluster's spatial centroid.

mod fuzzy;
mod gmm;
mod kmeans;

pub use fuzzy::{fcm, sdwfcm};
pub use gmm::gmm_em;
pub use kmeans::kmeans;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3, Dims};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    /// Number of clusters (k / n / c depending on the method).
    pub n_clusters: usize,
    /// How many of the most intense clusters form the lesion label.
    pub f_select: usize,
    /// Fuzziness exponent for FCM-family methods, > 1.
    pub fuzziness_m: f64,
    /// Spatial weight in [0, 1] for the spatially weighted variant.
    pub spatial_lambda: f64,
    /// Membership smoothing radius (box neighborhood (2nb+1)^3).
    pub neighborhood_nb: usize,
    pub max_iter: usize,
    /// Convergence tolerance on the maximum center shift.
    pub tol: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            n_clusters: 2,
            f_select: 1,
            fuzziness_m: 2.0,
            spatial_lambda: 0.5,
            neighborhood_nb: 1,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Parameter("n_clusters must be >= 1".into()));
        }
        if self.f_select == 0 || self.f_select > self.n_clusters {
            return Err(Error::Parameter(format!(
                "f_select must satisfy 1 <= f <= n_clusters, got {} of {}",
                self.f_select, self.n_clusters
            )));
        }
        if self.fuzziness_m <= 1.0 {
            return Err(Error::Parameter(format!(
                "fuzziness_m must be > 1, got {}",
                self.fuzziness_m
            )));
        }
        if !(0.0..=1.0).contains(&self.spatial_lambda) {
            return Err(Error::Parameter(format!(
                "spatial_lambda must be in [0, 1], got {}",
                self.spatial_lambda
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-point, per-cluster coefficients in [0, 1]; each row (point) sums to 1.
#[derive(Debug, Clone)]
pub struct Membership {
    n_points: usize,
    n_clusters: usize,
    u: Vec<f64>,
}

impl Membership {
    pub fn new(n_points: usize, n_clusters: usize) -> Self {
        Self {
            n_points,
            n_clusters,
            u: vec![0.0; n_points * n_clusters],
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    #[inline]
    pub fn get(&self, point: usize, cluster: usize) -> f64 {
        self.u[point * self.n_clusters + cluster]
    }

    #[inline]
    pub fn set(&mut self, point: usize, cluster: usize, value: f64) {
        self.u[point * self.n_clusters + cluster] = value;
    }

    pub fn row(&self, point: usize) -> &[f64] {
        &self.u[point * self.n_clusters..(point + 1) * self.n_clusters]
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    /// Hard label per point: argmax membership, ties to the lower index.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n_points)
            .map(|p| {
                let row = self.row(p);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Checks that every entry is in [0, 1] and every row sums to 1.
    pub fn check_rows(&self, tol: f64) -> Result<()> {
        for p in 0..self.n_points {
            let row = self.row(p);
            if row.iter().any(|&v| !(0.0..=1.0 + tol).contains(&v)) {
                return Err(Error::Numeric(format!("membership out of [0,1] at point {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Numeric(format!(
                    "membership row {p} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Point-to-cluster assignment produced by a clustering run.
#[derive(Debug, Clone)]
pub enum Assignment {
    Hard(Vec<usize>),
    Fuzzy(Membership),
}

impl Assignment {
    pub fn hard_labels(&self) -> Vec<usize> {
        match self {
            Assignment::Hard(labels) => labels.clone(),
            Assignment::Fuzzy(membership) => membership.hard_labels(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Per-cluster intensity center (mean for KM/GMM, prototype for FCM).
    pub centers: Vec<f64>,
    pub assignment: Assignment,
    /// Per-iteration objective: WCSS (kmeans), mean log-likelihood (GMM),
    /// weighted squared-distance objective (FCM family).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl ClusterResult {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }
}

/// k-means++ seeding: first center uniform, then each next center drawn
/// with probability proportional to the squared distance to the nearest
/// already-chosen center.
pub fn kmeans_pp_centers(values: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Input("cannot seed centers from empty data".into()));
    }
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.gen_range(0..values.len())]);
    let mut d2: Vec<f64> = values
        .iter()
        .map(|v| {
            let d = v - centers[0];
            d * d
        })
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateInput(
                "fewer distinct values than requested centers".into(),
            ));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = values.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        let c = values[chosen];
        centers.push(c);
        for (i, &v) in values.iter().enumerate() {
            let d = v - c;
            d2[i] = d2[i].min(d * d);
        }
    }
    Ok(centers)
}

/// Count distinct values, stopping early once `at_least` are found.
pub(crate) fn has_distinct_values(values: &[f64], at_least: usize) -> bool {
    let mut seen: Vec<u64> = Vec::with_capacity(at_least);
    for &v in values {
        let bits = v.to_bits();
        if !seen.contains(&bits) {
            seen.push(bits);
            if seen.len() >= at_least {
                return true;
            }
        }
    }
    false
}

/// Lesion mask from a clustering result: clusters ranked by center intensity
/// descending; a voxel is foreground iff its hard label lands in the top
/// `f` clusters.
pub fn select_tumor_clusters(result: &ClusterResult, f: usize, dims: Dims) -> Result<BinaryMask3> {
    let n_clusters = result.centers.len();
    if f == 0 || f > n_clusters {
        return Err(Error::Parameter(format!(
            "f must satisfy 1 <= f <= {n_clusters}, got {f}"
        )));
    }
    let n_points = dims.0 * dims.1 * dims.2;
    let labels = result.assignment.hard_labels();
    if labels.len() != n_points {
        return Err(Error::Dimension(format!(
            "assignment covers {} points but dims {:?} contain {}",
            labels.len(),
            dims,
            n_points
        )));
    }
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&a, &b| {
        result.centers[b]
            .partial_cmp(&result.centers[a])
            .expect("finite centers")
    });
    let mut selected = vec![false; n_clusters];
    for &c in order.iter().take(f) {
        selected[c] = true;
    }
    let data: Vec<u8> = labels.iter().map(|&l| u8::from(selected[l])).collect();
    BinaryMask3::new(dims, data)
}
