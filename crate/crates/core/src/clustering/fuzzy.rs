//! Fuzzy C-Means and its spatial-distance-weighted variant.
//!
//! Both run the same alternating loop; the spatial variant additionally
//! multiplies each point-to-cluster distance by `(1-λ) + λ·s`, where `s` is
//! the point's Euclidean voxel-index distance to the cluster's
//! membership-weighted spatial centroid, normalized by the volume diagonal.
//! With `λ = 0` and `nb = 0` the two are identical in control flow and
//! values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{kmeans_pp_centers, Assignment, ClusterParams, ClusterResult, Membership};
use crate::error::{Error, Result};
use crate::preprocess::convolve_axis_replicate;
use crate::volume::{Dims, Volume3};

#[inline]
fn pow_m(u: f64, m: f64) -> f64 {
    if m == 2.0 {
        u * u
    } else {
        u.powf(m)
    }
}

/// Memberships from a per-point distance row via the inverse-power formula;
/// a point coincident with a center (distance exactly 0) gets membership 1
/// there (first such cluster) and 0 elsewhere.
fn memberships_from_distances(dist: &[f64], exponent: f64, out: &mut [f64]) {
    debug_assert_eq!(dist.len(), out.len());
    if let Some(zero) = dist.iter().position(|&d| d == 0.0) {
        out.iter_mut().for_each(|u| *u = 0.0);
        out[zero] = 1.0;
        return;
    }
    let mut total = 0.0;
    for (o, &d) in out.iter_mut().zip(dist) {
        let inv = if exponent == 2.0 {
            1.0 / (d * d)
        } else {
            d.powf(-exponent)
        };
        *o = inv;
        total += inv;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

struct SpatialContext {
    dims: Dims,
    lambda: f64,
    nb: usize,
    /// Voxel coordinates per point, (z, y, x) as f64.
    coords: Vec<[f64; 3]>,
    /// Volume diagonal in voxel-index units (at least 1).
    diagonal: f64,
}

impl SpatialContext {
    fn new(dims: Dims, lambda: f64, nb: usize) -> Self {
        let mut coords = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for z in 0..dims.0 {
            for y in 0..dims.1 {
                for x in 0..dims.2 {
                    coords.push([z as f64, y as f64, x as f64]);
                }
            }
        }
        let diag = (((dims.0 - 1) * (dims.0 - 1)
            + (dims.1 - 1) * (dims.1 - 1)
            + (dims.2 - 1) * (dims.2 - 1)) as f64)
            .sqrt()
            .max(1.0);
        Self {
            dims,
            lambda,
            nb,
            coords,
            diagonal: diag,
        }
    }

    /// Membership^m-weighted mean voxel coordinate per cluster.
    fn centroids(&self, u: &Membership, m: f64) -> Vec<[f64; 3]> {
        let c = u.n_clusters();
        let mut num = vec![[0.0f64; 3]; c];
        let mut den = vec![0.0f64; c];
        for (p, coord) in self.coords.iter().enumerate() {
            let row = u.row(p);
            for (k, &uv) in row.iter().enumerate() {
                let w = pow_m(uv, m);
                num[k][0] += w * coord[0];
                num[k][1] += w * coord[1];
                num[k][2] += w * coord[2];
                den[k] += w;
            }
        }
        num.iter()
            .zip(&den)
            .map(|(n, &d)| {
                if d > 0.0 {
                    [n[0] / d, n[1] / d, n[2] / d]
                } else {
                    // Cluster with no mass anywhere: park its centroid at
                    // the volume center.
                    [
                        (self.dims.0 - 1) as f64 / 2.0,
                        (self.dims.1 - 1) as f64 / 2.0,
                        (self.dims.2 - 1) as f64 / 2.0,
                    ]
                }
            })
            .collect()
    }

    /// Box-averages each cluster's membership field over the
    /// `(2nb+1)^3` neighborhood with replicate borders, then renormalizes
    /// every row.
    fn smooth(&self, u: &mut Membership) {
        if self.nb == 0 {
            return;
        }
        let c = u.n_clusters();
        let n = u.n_points();
        let width = 2 * self.nb + 1;
        let kernel = vec![1.0 / width as f64; width];
        let mut field = vec![0.0f64; n];
        let mut smoothed = vec![0.0f64; n * c];
        for k in 0..c {
            for p in 0..n {
                field[p] = u.get(p, k);
            }
            for axis in 0..3 {
                convolve_axis_replicate(&mut field, self.dims, &kernel, axis);
            }
            for p in 0..n {
                smoothed[p * c + k] = field[p];
            }
        }
        let values = u.values_mut();
        values.copy_from_slice(&smoothed);
        for p in 0..n {
            let row = &mut values[p * c..(p + 1) * c];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for v in row {
                    *v /= sum;
                }
            }
        }
    }
}

/// The shared alternating loop. Each iteration: distances from the current
/// centers (spatially reweighted when a context is present), membership
/// update, optional smoothing, center update, objective record, shift test.
fn fuzzy_core(
    intensities: &[f64],
    spatial: Option<SpatialContext>,
    params: &ClusterParams,
    seed: u64,
) -> Result<ClusterResult> {
    params.validate()?;
    let c = params.n_clusters;
    if c < 2 {
        return Err(Error::Parameter("fuzzy clustering needs n_clusters >= 2".into()));
    }
    let m = params.fuzziness_m;
    let exponent = 2.0 / (m - 1.0);
    let n = intensities.len();
    if n == 0 {
        return Err(Error::Input("empty intensity vector".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_centers(intensities, c, &mut rng)?;

    // Memberships ahead of the first iteration (plain formula, no spatial
    // weight) so the first spatial centroid is defined.
    let mut u = Membership::new(n, c);
    {
        let mut dist = vec![0.0f64; c];
        let mut row = vec![0.0f64; c];
        for (p, &x) in intensities.iter().enumerate() {
            for (k, &v) in centers.iter().enumerate() {
                dist[k] = (x - v).abs();
            }
            memberships_from_distances(&dist, exponent, &mut row);
            for (k, &val) in row.iter().enumerate() {
                u.set(p, k, val);
            }
        }
    }

    let mut modified = vec![0.0f64; n * c];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iter {
        // Distances for this iteration, spatially reweighted if requested.
        match &spatial {
            Some(ctx) => {
                let centroids = ctx.centroids(&u, m);
                for (p, coord) in ctx.coords.iter().enumerate() {
                    let x = intensities[p];
                    for (k, &v) in centers.iter().enumerate() {
                        let dz = coord[0] - centroids[k][0];
                        let dy = coord[1] - centroids[k][1];
                        let dx = coord[2] - centroids[k][2];
                        let s = (dz * dz + dy * dy + dx * dx).sqrt() / ctx.diagonal;
                        let weight = (1.0 - ctx.lambda) + ctx.lambda * s;
                        modified[p * c + k] = (x - v).abs() * weight;
                    }
                }
            }
            None => {
                for (p, &x) in intensities.iter().enumerate() {
                    for (k, &v) in centers.iter().enumerate() {
                        modified[p * c + k] = (x - v).abs();
                    }
                }
            }
        }

        // Membership update.
        {
            let mut row = vec![0.0f64; c];
            for p in 0..n {
                memberships_from_distances(&modified[p * c..(p + 1) * c], exponent, &mut row);
                for (k, &val) in row.iter().enumerate() {
                    u.set(p, k, val);
                }
            }
        }

        if let Some(ctx) = &spatial {
            ctx.smooth(&mut u);
        }

        // Center update: weighted intensity means.
        let mut num = vec![0.0f64; c];
        let mut den = vec![0.0f64; c];
        for (p, &x) in intensities.iter().enumerate() {
            let row = u.row(p);
            for (k, &uv) in row.iter().enumerate() {
                let w = pow_m(uv, m);
                num[k] += w * x;
                den[k] += w;
            }
        }
        let mut shift = 0.0f64;
        for k in 0..c {
            if den[k] > 0.0 {
                let new = num[k] / den[k];
                shift = shift.max((new - centers[k]).abs());
                centers[k] = new;
            }
        }

        // Objective with the distances the memberships were computed from.
        let mut objective = 0.0;
        for p in 0..n {
            let row = u.row(p);
            for (k, &uv) in row.iter().enumerate() {
                let d = modified[p * c + k];
                objective += pow_m(uv, m) * d * d;
            }
        }
        trace.push(objective);

        if shift < params.tol {
            converged = true;
            break;
        }
    }

    Ok(ClusterResult {
        centers,
        assignment: Assignment::Fuzzy(u),
        objective_trace: trace,
        converged,
    })
}

/// Fuzzy C-Means on a 1D intensity vector.
pub fn fcm(intensities: &[f64], params: &ClusterParams, seed: u64) -> Result<ClusterResult> {
    fuzzy_core(intensities, None, params, seed)
}

/// Spatial-distance-weighted FCM on a volume: the distance matrix is
/// modified by each voxel's distance to the cluster's spatial centroid, and
/// memberships are box-averaged over the `(2nb+1)^3` neighborhood.
pub fn sdwfcm(volume: &Volume3, params: &ClusterParams, seed: u64) -> Result<ClusterResult> {
    let intensities: Vec<f64> = volume.data().iter().map(|&v| f64::from(v)).collect();
    let ctx = SpatialContext::new(volume.dims(), params.spatial_lambda, params.neighborhood_nb);
    fuzzy_core(&intensities, Some(ctx), params, seed)
}
