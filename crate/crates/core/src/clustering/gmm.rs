//! 1D Gaussian mixture fitted by expectation-maximization.

use super::{has_distinct_values, kmeans, Assignment, ClusterParams, ClusterResult};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837877066409345;

/// Relative variance floor: variances never drop below
/// `1e-6 * (data range)^2`.
const VAR_FLOOR_FRACTION: f64 = 1e-6;

struct Mixture {
    means: Vec<f64>,
    vars: Vec<f64>,
    weights: Vec<f64>,
}

fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// EM on scalar intensities: per-component mean, variance and weight.
/// Initialization comes from a k-means run with the same seed; hard labels
/// are by maximum responsibility. The objective trace records the mean
/// log-likelihood per point, non-decreasing across iterations.
pub fn gmm_em(intensities: &[f64], params: &ClusterParams, seed: u64) -> Result<ClusterResult> {
    params.validate()?;
    let k = params.n_clusters;
    let n = intensities.len();
    if n < k {
        return Err(Error::DegenerateInput(format!(
            "gmm needs at least {k} samples, got {n}"
        )));
    }
    if !has_distinct_values(intensities, 2) {
        return Err(Error::DegenerateInput("gmm needs data with positive variance".into()));
    }

    let lo = intensities.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let var_floor = VAR_FLOOR_FRACTION * range * range;

    // Seed from k-means: component means are the centers, variances the
    // within-cluster variances, weights the cluster fractions.
    let km = kmeans(intensities, params, seed)?;
    let labels = km.assignment.hard_labels();
    let mut mix = Mixture {
        means: km.centers.clone(),
        vars: vec![var_floor; k],
        weights: vec![0.0; k],
    };
    {
        let mut counts = vec![0usize; k];
        let mut ss = vec![0.0f64; k];
        for (&x, &l) in intensities.iter().zip(&labels) {
            counts[l] += 1;
            let d = x - mix.means[l];
            ss[l] += d * d;
        }
        for c in 0..k {
            mix.weights[c] = counts[c] as f64 / n as f64;
            if counts[c] > 0 {
                mix.vars[c] = (ss[c] / counts[c] as f64).max(var_floor);
            }
        }
    }

    let mut resp = vec![0.0f64; n * k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut log_terms = vec![0.0f64; k];

    for _ in 0..params.max_iter {
        // E step, accumulating the mean log-likelihood of the current
        // parameters.
        let mut loglik = 0.0;
        for (i, &x) in intensities.iter().enumerate() {
            for c in 0..k {
                log_terms[c] = if mix.weights[c] > 0.0 {
                    mix.weights[c].ln() + log_gauss(x, mix.means[c], mix.vars[c])
                } else {
                    f64::NEG_INFINITY
                };
            }
            let lse = log_sum_exp(&log_terms);
            loglik += lse;
            for c in 0..k {
                resp[i * k + c] = (log_terms[c] - lse).exp();
            }
        }
        trace.push(loglik / n as f64);

        // M step.
        let mut changed = 0.0f64;
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk <= f64::EPSILON * n as f64 {
                // Dead component: keep its parameters, zero its weight.
                mix.weights[c] = 0.0;
                continue;
            }
            let mean: f64 = (0..n).map(|i| resp[i * k + c] * intensities[i]).sum::<f64>() / nk;
            let var: f64 = (0..n)
                .map(|i| {
                    let d = intensities[i] - mean;
                    resp[i * k + c] * d * d
                })
                .sum::<f64>()
                / nk;
            changed = changed.max((mean - mix.means[c]).abs());
            mix.means[c] = mean;
            mix.vars[c] = var.max(var_floor);
            mix.weights[c] = nk / n as f64;
        }

        if changed < params.tol {
            converged = true;
            break;
        }
    }

    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let row = &resp[i * k..(i + 1) * k];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();

    Ok(ClusterResult {
        centers: mix.means,
        assignment: Assignment::Hard(labels),
        objective_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(k: usize) -> ClusterParams {
        ClusterParams {
            n_clusters: k,
            f_select: 1,
            ..ClusterParams::default()
        }
    }

    fn two_blob_data(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n0 = Normal::new(0.0, 1.0).unwrap();
        let n1 = Normal::new(100.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(400);
        for _ in 0..200 {
            data.push(n0.sample(&mut rng));
        }
        for _ in 0..200 {
            data.push(n1.sample(&mut rng));
        }
        data
    }

    #[test]
    fn recovers_separated_means() {
        let data = two_blob_data(17);
        let result = gmm_em(&data, &params(2), 3).unwrap();
        let mut means = result.centers.clone();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(means[0].abs() < 0.5, "low mean {}", means[0]);
        assert!((means[1] - 100.0).abs() < 0.5, "high mean {}", means[1]);
    }

    #[test]
    fn loglik_trace_non_decreasing() {
        let data = two_blob_data(23);
        for k in [2, 3, 4] {
            let result = gmm_em(&data, &params(k), 5).unwrap();
            for w in result.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    // Once EM reaches its fixpoint, further iterations must not move the
    // objective. tol = 0 disables the convergence break so the loop keeps
    // re-running the update from the converged state.
    #[test]
    fn em_fixpoint_is_stable() {
        let data = [0.0, 0.001, -0.001, 10.0, 10.001, 9.999];
        let pinned = ClusterParams {
            n_clusters: 2,
            max_iter: 50,
            tol: 0.0,
            ..ClusterParams::default()
        };
        let result = gmm_em(&data, &pinned, 2).unwrap();
        assert_eq!(result.objective_trace.len(), 50);
        let last = *result.objective_trace.last().unwrap();
        let prev = result.objective_trace[result.objective_trace.len() - 2];
        assert!((last - prev).abs() < 1e-9, "{prev} -> {last}");
    }

    #[test]
    fn constant_data_is_degenerate() {
        let data = [2.0; 16];
        assert!(matches!(
            gmm_em(&data, &params(2), 0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = two_blob_data(31);
        let a = gmm_em(&data, &params(4), 9).unwrap();
        let b = gmm_em(&data, &params(4), 9).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.objective_trace, b.objective_trace);
    }
}
