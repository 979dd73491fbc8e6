//! Input consistency step: Laplacian sharpness detection followed by
//! conditional Gaussian smoothing.
//!
//! Volumes whose variance-of-Laplacian exceeds a threshold are considered
//! sharp and get a mild separable Gaussian blur; everything else passes
//! through untouched. Border handling is replicate throughout this module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    /// Variance-of-Laplacian value above which a volume counts as sharp.
    /// Calibrated for intensities in [0, 1].
    pub sharpness_threshold: f64,
    /// Blur strength in voxels.
    pub blur_sigma: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            sharpness_threshold: 0.02,
            blur_sigma: 0.8,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma <= 0.0 {
            return Err(Error::Parameter(format!(
                "blur_sigma must be > 0, got {}",
                self.blur_sigma
            )));
        }
        if self.sharpness_threshold < 0.0 {
            return Err(Error::Parameter(format!(
                "sharpness_threshold must be >= 0, got {}",
                self.sharpness_threshold
            )));
        }
        Ok(())
    }
}

/// Convolution with the 7-point discrete Laplacian (center -6, six face
/// neighbors +1), replicate borders.
pub fn laplacian_response(volume: &Volume3) -> Result<Volume3> {
    let (nz, ny, nx) = volume.dims();
    if nz < 3 || ny < 3 || nx < 3 {
        return Err(Error::Dimension(format!(
            "laplacian needs at least 3 voxels per axis, got {:?}",
            volume.dims()
        )));
    }
    let data = volume.data();
    let mut out = Vec::with_capacity(data.len());
    let clamp = |i: isize, n: usize| -> usize { i.clamp(0, n as isize - 1) as usize };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = f64::from(volume.get(z, y, x));
                let zi = z as isize;
                let yi = y as isize;
                let xi = x as isize;
                let sum = f64::from(volume.get(clamp(zi - 1, nz), y, x))
                    + f64::from(volume.get(clamp(zi + 1, nz), y, x))
                    + f64::from(volume.get(z, clamp(yi - 1, ny), x))
                    + f64::from(volume.get(z, clamp(yi + 1, ny), x))
                    + f64::from(volume.get(z, y, clamp(xi - 1, nx)))
                    + f64::from(volume.get(z, y, clamp(xi + 1, nx)));
                out.push((sum - 6.0 * c) as f32);
            }
        }
    }
    Volume3::new(volume.dims(), volume.spacing(), out)
}

/// Variance of the Laplacian response over all voxels (the sharpness focus
/// measure).
pub fn sharpness_score(volume: &Volume3) -> Result<f64> {
    let response = laplacian_response(volume)?;
    let n = response.len() as f64;
    let mean: f64 = response.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var: f64 = response
        .data()
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(var)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// One replicate-border 1D convolution pass along the given axis
/// (0 = z, 1 = y, 2 = x). Shared by the Gaussian blur and the membership
/// box smoothing.
pub(crate) fn convolve_axis_replicate(
    data: &mut Vec<f64>,
    dims: (usize, usize, usize),
    kernel: &[f64],
    axis: usize,
) {
    let (nz, ny, nx) = dims;
    let radius = kernel.len() / 2;
    let n_axis = [nz, ny, nx][axis];
    let idx = |z: usize, y: usize, x: usize| (z * ny + y) * nx + x;
    let mut out = vec![0.0f64; data.len()];
    let mut line = vec![0.0f64; n_axis];
    let (outer_a, outer_b) = match axis {
        0 => (ny, nx),
        1 => (nz, nx),
        _ => (nz, ny),
    };
    for a in 0..outer_a {
        for b in 0..outer_b {
            for i in 0..n_axis {
                let (z, y, x) = match axis {
                    0 => (i, a, b),
                    1 => (a, i, b),
                    _ => (a, b, i),
                };
                line[i] = data[idx(z, y, x)];
            }
            for i in 0..n_axis {
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let j = (i as isize + k as isize - radius as isize)
                        .clamp(0, n_axis as isize - 1) as usize;
                    acc += w * line[j];
                }
                let (z, y, x) = match axis {
                    0 => (i, a, b),
                    1 => (a, i, b),
                    _ => (a, b, i),
                };
                out[idx(z, y, x)] = acc;
            }
        }
    }
    *data = out;
}

/// Separable 3-pass Gaussian smoothing, kernel truncated at radius
/// `ceil(3*sigma)` and renormalized to sum 1, replicate borders.
pub fn gaussian_blur(volume: &Volume3, sigma: f64) -> Result<Volume3> {
    if sigma <= 0.0 {
        return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let mut data: Vec<f64> = volume.data().iter().map(|&v| f64::from(v)).collect();
    for axis in 0..3 {
        convolve_axis_replicate(&mut data, volume.dims(), &kernel, axis);
    }
    Volume3::new(
        volume.dims(),
        volume.spacing(),
        data.into_iter().map(|v| v as f32).collect(),
    )
}

/// Blurs the volume only when its sharpness score exceeds the threshold.
/// Returns the (possibly untouched) volume and whether the blur ran.
pub fn conditional_blur(volume: &Volume3, params: &PreprocessParams) -> Result<(Volume3, bool)> {
    params.validate()?;
    let score = sharpness_score(volume)?;
    if score > params.sharpness_threshold {
        Ok((gaussian_blur(volume, params.blur_sigma)?, true))
    } else {
        Ok((volume.clone(), false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume_from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f32) -> Volume3 {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for z in 0..dims.0 {
            for y in 0..dims.1 {
                for x in 0..dims.2 {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume3::new(dims, (1.0, 1.0, 1.0), data).unwrap()
    }

    fn random_volume(dims: (usize, usize, usize), seed: u64) -> Volume3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        volume_from_fn(dims, |_, _, _| rng.gen::<f32>())
    }

    /// Direct (non-separable) 3D Gaussian convolution with replicate
    /// borders, the oracle for the separable implementation.
    fn direct_blur_oracle(volume: &Volume3, sigma: f64) -> Vec<f64> {
        let kernel = gaussian_kernel(sigma);
        let radius = (kernel.len() / 2) as isize;
        let (nz, ny, nx) = volume.dims();
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let mut out = Vec::with_capacity(volume.len());
        for z in 0..nz as isize {
            for y in 0..ny as isize {
                for x in 0..nx as isize {
                    let mut acc = 0.0;
                    for dz in -radius..=radius {
                        for dy in -radius..=radius {
                            for dx in -radius..=radius {
                                let w = kernel[(dz + radius) as usize]
                                    * kernel[(dy + radius) as usize]
                                    * kernel[(dx + radius) as usize];
                                acc += w
                                    * f64::from(volume.get(
                                        clamp(z + dz, nz),
                                        clamp(y + dy, ny),
                                        clamp(x + dx, nx),
                                    ));
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let v = Volume3::filled((4, 4, 4), (1.0, 1.0, 1.0), 3.5).unwrap();
        let r = laplacian_response(&v).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_impulse_response() {
        let dims = (5, 5, 5);
        let v = volume_from_fn(dims, |z, y, x| if (z, y, x) == (2, 2, 2) { 1.0 } else { 0.0 });
        let r = laplacian_response(&v).unwrap();
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let expected = match (z, y, x) {
                        (2, 2, 2) => -6.0,
                        (1, 2, 2) | (3, 2, 2) | (2, 1, 2) | (2, 3, 2) | (2, 2, 1) | (2, 2, 3) => 1.0,
                        _ => 0.0,
                    };
                    assert_eq!(r.get(z, y, x), expected, "at ({z},{y},{x})");
                }
            }
        }
    }

    #[test]
    fn laplacian_annihilates_linear_ramp_interior() {
        let v = volume_from_fn((5, 5, 5), |_, _, x| x as f32);
        let r = laplacian_response(&v).unwrap();
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    assert_eq!(r.get(z, y, x), 0.0);
                }
            }
        }
    }

    #[test]
    fn laplacian_needs_three_voxels_per_axis() {
        let v = Volume3::filled((2, 4, 4), (1.0, 1.0, 1.0), 0.0).unwrap();
        assert!(matches!(laplacian_response(&v), Err(Error::Dimension(_))));
    }

    #[test]
    fn laplacian_is_linear() {
        let u = random_volume((6, 6, 6), 11);
        let v = random_volume((6, 6, 6), 12);
        let (a, b) = (2.5f32, -1.25f32);
        let combo = volume_from_fn((6, 6, 6), |z, y, x| a * u.get(z, y, x) + b * v.get(z, y, x));
        let ru = laplacian_response(&u).unwrap();
        let rv = laplacian_response(&v).unwrap();
        let rc = laplacian_response(&combo).unwrap();
        for i in 0..combo.len() {
            let expected = f64::from(a) * f64::from(ru.data()[i]) + f64::from(b) * f64::from(rv.data()[i]);
            assert!((f64::from(rc.data()[i]) - expected).abs() < 1e-4);
        }
    }

    #[test]
    fn sharpness_of_constant_is_zero() {
        let v = Volume3::filled((4, 4, 4), (1.0, 1.0, 1.0), 0.7).unwrap();
        assert_eq!(sharpness_score(&v).unwrap(), 0.0);
    }

    // Checkerboard sharpness cross-checked against an independent direct
    // convolution + variance computation.
    #[test]
    fn sharpness_of_checkerboard_matches_oracle() {
        let v = volume_from_fn((8, 8, 8), |z, y, x| ((z + y + x) % 2) as f32);
        let score = sharpness_score(&v).unwrap();
        assert!(score > 0.0);

        let (nz, ny, nx) = v.dims();
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let mut resp = Vec::new();
        for z in 0..nz as isize {
            for y in 0..ny as isize {
                for x in 0..nx as isize {
                    let mut acc = -6.0 * f64::from(v.get(z as usize, y as usize, x as usize));
                    for (dz, dy, dx) in [
                        (-1, 0, 0),
                        (1, 0, 0),
                        (0, -1, 0),
                        (0, 1, 0),
                        (0, 0, -1),
                        (0, 0, 1),
                    ] {
                        acc += f64::from(v.get(clamp(z + dz, nz), clamp(y + dy, ny), clamp(x + dx, nx)));
                    }
                    resp.push(acc);
                }
            }
        }
        let n = resp.len() as f64;
        let mean = resp.iter().sum::<f64>() / n;
        let var = resp.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        assert!((score - var).abs() < 1e-9 * var.max(1.0));
    }

    #[test]
    fn sharpness_is_sign_invariant() {
        let v = random_volume((6, 6, 6), 3);
        let neg = volume_from_fn((6, 6, 6), |z, y, x| -v.get(z, y, x));
        let a = sharpness_score(&v).unwrap();
        let b = sharpness_score(&neg).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn blur_keeps_constant_volumes() {
        let v = Volume3::filled((6, 6, 6), (1.0, 1.0, 1.0), 0.42).unwrap();
        let b = gaussian_blur(&v, 1.0).unwrap();
        for &x in b.data() {
            assert!((f64::from(x) - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let v = Volume3::filled((3, 3, 3), (1.0, 1.0, 1.0), 0.0).unwrap();
        assert!(matches!(gaussian_blur(&v, 0.0), Err(Error::Parameter(_))));
    }

    // Impulse response of the separable blur must match the full 3D
    // product-kernel convolution.
    #[test]
    fn blur_impulse_matches_direct_oracle() {
        let dims = (7, 7, 7);
        let v = volume_from_fn(dims, |z, y, x| if (z, y, x) == (3, 3, 3) { 1.0 } else { 0.0 });
        let blurred = gaussian_blur(&v, 1.0).unwrap();
        let oracle = direct_blur_oracle(&v, 1.0);
        for (got, want) in blurred.data().iter().zip(&oracle) {
            assert!((f64::from(*got) - want).abs() < 1e-5);
        }
    }

    #[test]
    fn blur_matches_direct_oracle_on_random_volumes() {
        for seed in 0..3 {
            let v = random_volume((8, 8, 8), seed);
            let blurred = gaussian_blur(&v, 0.9).unwrap();
            let oracle = direct_blur_oracle(&v, 0.9);
            for (got, want) in blurred.data().iter().zip(&oracle) {
                assert!((f64::from(*got) - want).abs() < 1e-5);
            }
        }
    }

    // Mass conservation holds for interior-supported images (the replicate
    // border never sees nonzero values).
    #[test]
    fn blur_preserves_total_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = volume_from_fn((14, 14, 14), |z, y, x| {
            if (4..10).contains(&z) && (4..10).contains(&y) && (4..10).contains(&x) {
                rng.gen::<f32>()
            } else {
                0.0
            }
        });
        let b = gaussian_blur(&v, 1.2).unwrap();
        let s0: f64 = v.data().iter().map(|&x| f64::from(x)).sum();
        let s1: f64 = b.data().iter().map(|&x| f64::from(x)).sum();
        assert!((s1 - s0).abs() <= 1e-4 * s0.abs(), "{s0} vs {s1}");
    }

    #[test]
    fn blur_reduces_sharpness() {
        for seed in 0..5 {
            let v = random_volume((8, 8, 8), 100 + seed);
            let before = sharpness_score(&v).unwrap();
            let after = sharpness_score(&gaussian_blur(&v, 0.8).unwrap()).unwrap();
            assert!(after < before, "seed {seed}: {after} !< {before}");
        }
    }

    #[test]
    fn conditional_blur_gate() {
        let constant = Volume3::filled((4, 4, 4), (1.0, 1.0, 1.0), 0.3).unwrap();
        let params = PreprocessParams {
            sharpness_threshold: 0.01,
            blur_sigma: 0.8,
        };
        let (out, applied) = conditional_blur(&constant, &params).unwrap();
        assert!(!applied);
        assert_eq!(out.data(), constant.data());

        let checker = volume_from_fn((6, 6, 6), |z, y, x| ((z + y + x) % 2) as f32);
        let zero_threshold = PreprocessParams {
            sharpness_threshold: 0.0,
            blur_sigma: 0.8,
        };
        let (_, applied) = conditional_blur(&checker, &zero_threshold).unwrap();
        assert!(applied);

        let huge_threshold = PreprocessParams {
            sharpness_threshold: f64::MAX,
            blur_sigma: 0.8,
        };
        let (_, applied) = conditional_blur(&checker, &huge_threshold).unwrap();
        assert!(!applied);
    }

    // If the gate does not fire, running the step again must not fire either.
    #[test]
    fn conditional_blur_gate_is_idempotent() {
        let v = random_volume((8, 8, 8), 42);
        let params = PreprocessParams::default();
        let (out, applied) = conditional_blur(&v, &params).unwrap();
        if !applied {
            let (_, again) = conditional_blur(&out, &params).unwrap();
            assert!(!again);
        } else {
            // After one blur the score should have dropped; a second pass on
            // an already-smoothed volume of this size stays below threshold.
            let (out2, applied2) = conditional_blur(&out, &params).unwrap();
            if applied2 {
                let (_, applied3) = conditional_blur(&out2, &params).unwrap();
                assert!(sharpness_score(&out2).unwrap() < sharpness_score(&out).unwrap() || !applied3);
            }
        }
    }
}
