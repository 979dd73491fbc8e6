//! Deterministic synthetic test volumes with exact ground truth.
//!
//! A phantom is a set of ellipsoidal lesions on a uniform background; the
//! clean geometry is blurred by a Gaussian point-spread function and
//! corrupted with additive Gaussian noise. The ground-truth mask is the
//! pre-blur ellipsoid union, so boundary voxels exhibit the partial-volume
//! structure segmentation methods have to cope with.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::gaussian_blur;
use crate::volume::{BinaryMask3, Volume3};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lesion {
    /// Center in voxel coordinates (z, y, x).
    pub center: [f64; 3],
    /// Per-axis radii in voxels (z, y, x).
    pub radii: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub background_intensity: f64,
    pub lesions: Vec<Lesion>,
    /// Point-spread blur in voxels; 0 disables blurring.
    pub psf_sigma: f64,
    /// Additive Gaussian noise standard deviation in intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.psf_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::PhantomSpec(
                "psf_sigma and noise_sigma must be non-negative".into(),
            ));
        }
        for (i, lesion) in self.lesions.iter().enumerate() {
            if lesion.radii.iter().any(|&r| r <= 0.0) {
                return Err(Error::PhantomSpec(format!("lesion {i} has non-positive radius")));
            }
            if lesion.intensity <= self.background_intensity {
                return Err(Error::PhantomSpec(format!(
                    "lesion {i} intensity {} must exceed background {}",
                    lesion.intensity, self.background_intensity
                )));
            }
            for axis in 0..3 {
                let lo = lesion.center[axis] - lesion.radii[axis];
                let hi = lesion.center[axis] + lesion.radii[axis];
                if lo < 0.0 || hi > (self.dims[axis] - 1) as f64 {
                    return Err(Error::PhantomSpec(format!(
                        "lesion {i} extends outside the volume on axis {axis}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders the spec: returns the noisy volume and the exact pre-blur mask.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3, BinaryMask3)> {
    spec.validate()?;
    let dims = (spec.dims[0], spec.dims[1], spec.dims[2]);
    let spacing = (spec.spacing[0], spec.spacing[1], spec.spacing[2]);
    let n = dims.0 * dims.1 * dims.2;

    let mut mask = BinaryMask3::zeros(dims);
    let mut clean = vec![spec.background_intensity as f32; n];
    for z in 0..dims.0 {
        for y in 0..dims.1 {
            for x in 0..dims.2 {
                let mut intensity: Option<f64> = None;
                for lesion in &spec.lesions {
                    let dz = (z as f64 - lesion.center[0]) / lesion.radii[0];
                    let dy = (y as f64 - lesion.center[1]) / lesion.radii[1];
                    let dx = (x as f64 - lesion.center[2]) / lesion.radii[2];
                    if dz * dz + dy * dy + dx * dx < 1.0 {
                        intensity = Some(intensity.map_or(lesion.intensity, |v: f64| v.max(lesion.intensity)));
                    }
                }
                if let Some(v) = intensity {
                    mask.set(z, y, x, 1);
                    clean[(z * dims.1 + y) * dims.2 + x] = v as f32;
                }
            }
        }
    }

    let clean_volume = Volume3::new(dims, spacing, clean)?;
    let blurred = if spec.psf_sigma > 0.0 {
        gaussian_blur(&clean_volume, spec.psf_sigma)?
    } else {
        clean_volume
    };

    let volume = if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0f64, spec.noise_sigma).expect("positive sigma");
        let data: Vec<f32> = blurred
            .data()
            .iter()
            .map(|&v| (f64::from(v) + normal.sample(&mut rng)) as f32)
            .collect();
        Volume3::new(dims, spacing, data)?
    } else {
        blurred
    };

    Ok((volume, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Noisy,
}

/// A generated suite case: volume, exact ground truth and a group tag for
/// per-group reporting.
pub struct SuiteCase {
    pub name: String,
    pub group: String,
    pub volume: Volume3,
    pub mask: BinaryMask3,
}

const SUITE_DIMS: [usize; 3] = [64, 64, 64];
const SUITE_SPACING: [f64; 3] = [2.0, 2.0, 2.0];

fn suite_geometries() -> Vec<(&'static str, &'static str, Vec<([f64; 3], [f64; 3])>)> {
    // (name, group, lesions as (center, radii)); intensities filled in per
    // difficulty. Lesion fractions all sit between 0.1% and 10% of 64^3.
    vec![
        (
            "spheres_single",
            "spheres",
            vec![([32.0, 32.0, 32.0], [13.0, 13.0, 13.0])],
        ),
        (
            "spheres_pair",
            "spheres",
            vec![
                ([24.0, 22.0, 22.0], [11.0, 11.0, 11.0]),
                ([42.0, 44.0, 44.0], [8.0, 8.0, 8.0]),
            ],
        ),
        (
            "ellipsoids_single",
            "ellipsoids",
            vec![([32.0, 30.0, 34.0], [9.0, 15.0, 12.0])],
        ),
        (
            "ellipsoids_pair",
            "ellipsoids",
            vec![
                ([26.0, 36.0, 28.0], [13.0, 10.0, 10.0]),
                ([44.0, 22.0, 44.0], [8.0, 8.0, 8.0]),
            ],
        ),
        (
            "lobed_double",
            "lobed",
            vec![
                ([30.0, 30.0, 30.0], [11.0, 11.0, 11.0]),
                ([36.0, 37.0, 36.0], [10.0, 10.0, 10.0]),
            ],
        ),
        (
            "lobed_triple",
            "lobed",
            vec![
                ([28.0, 32.0, 30.0], [10.0, 10.0, 10.0]),
                ([36.0, 36.0, 36.0], [9.0, 11.0, 9.0]),
                ([38.0, 26.0, 30.0], [8.0, 8.0, 10.0]),
            ],
        ),
    ]
}

/// Fixed specs behind [`standard_suite`], exposed so cases can be rendered
/// or persisted individually.
pub fn standard_suite_specs(difficulty: Difficulty) -> Vec<(String, String, PhantomSpec)> {
    let (background, lesion_intensity, psf_sigma, noise_sigma, seed_base) = match difficulty {
        // 5:1 contrast, mild blur, light noise.
        Difficulty::Easy => (0.12, 0.60, 1.0, 0.02, 0xEA5E_0000u64),
        // 2:1 contrast, heavier blur and noise.
        Difficulty::Noisy => (0.25, 0.50, 1.5, 0.08, 0x2015_E000u64),
    };
    suite_geometries()
        .into_iter()
        .enumerate()
        .map(|(i, (name, group, lesions))| {
            let spec = PhantomSpec {
                dims: SUITE_DIMS,
                spacing: SUITE_SPACING,
                background_intensity: background,
                lesions: lesions
                    .into_iter()
                    .map(|(center, radii)| Lesion {
                        center,
                        radii,
                        intensity: lesion_intensity,
                    })
                    .collect(),
                psf_sigma,
                noise_sigma,
                seed: seed_base + i as u64,
            };
            (name.to_string(), group.to_string(), spec)
        })
        .collect()
}

/// The fixed six-case benchmark suite for the given difficulty.
pub fn standard_suite(difficulty: Difficulty) -> Vec<SuiteCase> {
    standard_suite_specs(difficulty)
        .into_iter()
        .map(|(name, group, spec)| {
            let (volume, mask) = generate_phantom(&spec).expect("suite specs are valid");
            SuiteCase {
                name,
                group,
                volume,
                mask,
            }
        })
        .collect()
}
