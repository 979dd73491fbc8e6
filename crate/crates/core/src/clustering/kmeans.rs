//! Lloyd's algorithm on 1D intensities with k-means++ seeding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{has_distinct_values, kmeans_pp_centers, Assignment, ClusterParams, ClusterResult};
use crate::error::{Error, Result};

/// Runs Lloyd iterations until the assignment reaches a fixpoint or
/// `max_iter`. The recorded objective (within-cluster sum of squares after
/// each center update) is non-increasing. An emptied cluster is reseeded to
/// the point farthest from its current center.
pub fn kmeans(intensities: &[f64], params: &ClusterParams, seed: u64) -> Result<ClusterResult> {
    params.validate()?;
    let k = params.n_clusters;
    if intensities.len() < k || !has_distinct_values(intensities, k) {
        return Err(Error::DegenerateInput(format!(
            "kmeans needs at least {k} distinct values"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_centers(intensities, k, &mut rng)?;
    let mut labels = vec![0usize; intensities.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iter {
        // Assignment step; ties go to the lower cluster index.
        let mut changed = false;
        for (i, &x) in intensities.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &center) in centers.iter().enumerate() {
                let d = (x - center).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        // Update step.
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in intensities.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                // Reseed an empty cluster to the point farthest from its
                // assigned center (lowest index on ties).
                let mut far_i = 0;
                let mut far_d = -1.0;
                for (i, &x) in intensities.iter().enumerate() {
                    let d = (x - centers[labels[i]]).abs();
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centers[c] = intensities[far_i];
                labels[far_i] = c;
                changed = true;
            }
        }

        let wcss: f64 = intensities
            .iter()
            .zip(&labels)
            .map(|(&x, &l)| {
                let d = x - centers[l];
                d * d
            })
            .sum();
        trace.push(wcss);

        if !changed {
            converged = true;
            break;
        }
    }

    Ok(ClusterResult {
        centers,
        assignment: Assignment::Hard(labels),
        objective_trace: trace,
        converged,
    })
}
