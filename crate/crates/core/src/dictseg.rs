//! Patch-dictionary segmentation: a set of intensity/label patch pairs is
//! seeded by label-similarity clustering, refined by vector quantization,
//! and applied by sliding-window nearest-atom labeling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::volume::{patch_origins, BinaryMask3, Dims, Patch3, Volume3};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictParams {
    pub patch_shape: (usize, usize, usize),
    /// Fraction of the training patches used to seed the dictionary.
    pub seed_fraction: f64,
    /// Minimum label similarity for merging a patch into its nearest atom.
    pub label_sim_threshold: f64,
    pub train_iterations: usize,
    /// Vector-quantization step size.
    pub step_tau: f64,
    /// Final binarization threshold on the accumulated soft label.
    pub label_threshold_th: f64,
}

impl Default for DictParams {
    fn default() -> Self {
        Self {
            patch_shape: (3, 3, 3),
            seed_fraction: 0.1,
            label_sim_threshold: 0.5,
            train_iterations: 10,
            step_tau: 0.05,
            label_threshold_th: 0.5,
        }
    }
}

impl DictParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.seed_fraction && self.seed_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "seed_fraction must be in (0, 1], got {}",
                self.seed_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.label_sim_threshold) {
            return Err(Error::Parameter(format!(
                "label_sim_threshold must be in [0, 1], got {}",
                self.label_sim_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.step_tau) {
            return Err(Error::Parameter(format!(
                "step_tau must be in [0, 1], got {}",
                self.step_tau
            )));
        }
        if !(0.0 < self.label_threshold_th && self.label_threshold_th < 1.0) {
            return Err(Error::Parameter(format!(
                "label_threshold_th must be in (0, 1), got {}",
                self.label_threshold_th
            )));
        }
        if self.patch_shape.0 == 0 || self.patch_shape.1 == 0 || self.patch_shape.2 == 0 {
            return Err(Error::Parameter("patch_shape components must be >= 1".into()));
        }
        Ok(())
    }
}

/// One dictionary entry: an intensity patch paired with a real-valued label
/// patch in [0, 1] and the number of seeding patches merged into it.
#[derive(Debug, Clone)]
pub struct DictionaryAtom {
    pub intensity: Vec<f32>,
    pub label: Vec<f32>,
    pub member_count: u32,
}

#[derive(Debug, Clone)]
pub struct PatchDictionary {
    pub atoms: Vec<DictionaryAtom>,
    pub params: DictParams,
}

/// Mean squared difference between an atom's intensities and a patch.
#[inline]
fn intensity_distance(atom: &[f32], patch: &[f32], abandon_above: f64) -> f64 {
    let n = atom.len() as f64;
    let mut acc = 0.0f64;
    // Early abandon once the partial sum can no longer beat the best.
    let limit = abandon_above * n;
    for (chunk_a, chunk_p) in atom.chunks(16).zip(patch.chunks(16)) {
        for (&a, &p) in chunk_a.iter().zip(chunk_p) {
            let d = f64::from(a) - f64::from(p);
            acc += d * d;
        }
        if acc > limit {
            return f64::INFINITY;
        }
    }
    acc / n
}

/// 1 - mean absolute label difference, mapping agreement into [0, 1].
fn label_similarity(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum();
    1.0 - sum / n
}

/// Index of the atom with the smallest intensity distance; ties break to
/// the lowest index.
fn nearest_atom(atoms: &[DictionaryAtom], patch: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, atom) in atoms.iter().enumerate() {
        let d = intensity_distance(&atom.intensity, patch, best_d);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn check_training(
    training: &[(Patch3, Vec<f32>)],
    patch_shape: (usize, usize, usize),
) -> Result<()> {
    for (patch, label) in training {
        if patch.shape != patch_shape {
            return Err(Error::Dimension(format!(
                "training patch shape {:?} does not match configured {:?}",
                patch.shape, patch_shape
            )));
        }
        if label.len() != patch.len() {
            return Err(Error::Dimension(format!(
                "label grid length {} does not match patch size {}",
                label.len(),
                patch.len()
            )));
        }
    }
    Ok(())
}

/// Seeds the dictionary from a uniform sample of `ceil(seed_fraction * N)`
/// training pairs, processed in draw order: each patch merges into its
/// nearest atom (running average weighted by member count) when the atom's
/// label similarity passes the threshold, and starts a new atom otherwise.
pub fn seed_dictionary(
    training: &[(Patch3, Vec<f32>)],
    params: &DictParams,
    seed: u64,
) -> Result<PatchDictionary> {
    params.validate()?;
    if training.is_empty() {
        return Err(Error::Input("cannot seed a dictionary from an empty training set".into()));
    }
    check_training(training, params.patch_shape)?;

    let sample_size = ((params.seed_fraction * training.len() as f64).ceil() as usize)
        .clamp(1, training.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..training.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(sample_size);

    let mut atoms: Vec<DictionaryAtom> = Vec::new();
    for &i in &indices {
        let (patch, label) = &training[i];
        if atoms.is_empty() {
            atoms.push(DictionaryAtom {
                intensity: patch.intensities.clone(),
                label: label.clone(),
                member_count: 1,
            });
            continue;
        }
        let nearest = nearest_atom(&atoms, &patch.intensities);
        let similarity = label_similarity(&atoms[nearest].label, label);
        if similarity >= params.label_sim_threshold {
            let atom = &mut atoms[nearest];
            let count = f64::from(atom.member_count);
            let new_count = count + 1.0;
            for (a, &p) in atom.intensity.iter_mut().zip(&patch.intensities) {
                *a = ((f64::from(*a) * count + f64::from(p)) / new_count) as f32;
            }
            for (l, &y) in atom.label.iter_mut().zip(label) {
                *l = ((f64::from(*l) * count + f64::from(y)) / new_count) as f32;
            }
            atom.member_count += 1;
        } else {
            atoms.push(DictionaryAtom {
                intensity: patch.intensities.clone(),
                label: label.clone(),
                member_count: 1,
            });
        }
    }

    Ok(PatchDictionary {
        atoms,
        params: *params,
    })
}

/// Vector-quantization refinement: for each training pass (fixed order),
/// every pair pulls its nearest atom toward itself by `tau` in both
/// intensity and label space.
pub fn train_dictionary(
    mut dict: PatchDictionary,
    training: &[(Patch3, Vec<f32>)],
    params: &DictParams,
) -> Result<PatchDictionary> {
    params.validate()?;
    if dict.atoms.is_empty() {
        return Err(Error::Input("dictionary has no atoms".into()));
    }
    check_training(training, params.patch_shape)?;

    let tau = params.step_tau;
    for _ in 0..params.train_iterations {
        for (patch, label) in training {
            let nearest = nearest_atom(&dict.atoms, &patch.intensities);
            let atom = &mut dict.atoms[nearest];
            for (a, &p) in atom.intensity.iter_mut().zip(&patch.intensities) {
                *a += (tau * (f64::from(p) - f64::from(*a))) as f32;
            }
            for (l, &y) in atom.label.iter_mut().zip(label) {
                *l += (tau * (f64::from(y) - f64::from(*l))) as f32;
            }
        }
    }
    dict.params = *params;
    Ok(dict)
}

/// Mean intensity distance from each training patch to its nearest atom
/// (the quantization error the VQ pass is meant to shrink).
pub fn quantization_error(dict: &PatchDictionary, training: &[(Patch3, Vec<f32>)]) -> f64 {
    if training.is_empty() {
        return 0.0;
    }
    let total: f64 = training
        .iter()
        .map(|(patch, _)| {
            let nearest = nearest_atom(&dict.atoms, &patch.intensities);
            intensity_distance(&dict.atoms[nearest].intensity, &patch.intensities, f64::INFINITY)
        })
        .sum();
    total / training.len() as f64
}

/// Labels a volume: the window walks every patch position at stride 1
/// (edge-aligned), each position contributes its nearest atom's label patch
/// to the covered voxels, and each voxel's accumulated mean is binarized at
/// `label_threshold_th` (strict greater-than).
pub fn dict_label_volume(
    dict: &PatchDictionary,
    volume: &Volume3,
    params: &DictParams,
) -> Result<BinaryMask3> {
    params.validate()?;
    if dict.atoms.is_empty() {
        return Err(Error::Input("dictionary has no atoms".into()));
    }
    let shape = params.patch_shape;
    let dims = volume.dims();
    if shape.0 > dims.0 || shape.1 > dims.1 || shape.2 > dims.2 {
        return Err(Error::Dimension(format!(
            "volume dims {:?} smaller than patch shape {:?}",
            dims, shape
        )));
    }
    let origins = patch_origins(dims, shape, (1, 1, 1))?;
    let n = dims.0 * dims.1 * dims.2;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    let mut window = vec![0.0f32; shape.0 * shape.1 * shape.2];
    for (oz, oy, ox) in origins {
        // Copy the window once; reused for the nearest-atom search.
        let mut w = 0;
        for z in 0..shape.0 {
            for y in 0..shape.1 {
                let row = volume.index(oz + z, oy + y, ox);
                window[w..w + shape.2].copy_from_slice(&volume.data()[row..row + shape.2]);
                w += shape.2;
            }
        }
        let atom = &dict.atoms[nearest_atom(&dict.atoms, &window)];
        let mut p = 0;
        for z in 0..shape.0 {
            for y in 0..shape.1 {
                let dst = ((oz + z) * dims.1 + (oy + y)) * dims.2 + ox;
                for x in 0..shape.2 {
                    sum[dst + x] += f64::from(atom.label[p]);
                    count[dst + x] += 1;
                    p += 1;
                }
            }
        }
    }
    let data: Vec<u8> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| u8::from(s / f64::from(c) > params.label_threshold_th))
        .collect();
    BinaryMask3::new(dims, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct DictHeader {
    params: DictParams,
    atom_count: usize,
    patch_shape: [usize; 3],
    member_counts: Vec<u32>,
    payload: String,
}

/// Persists the dictionary: JSON header plus a little-endian f32 payload of
/// `intensity` then `label` per atom. Roundtrip is bit-exact.
pub fn save_dictionary(dict: &PatchDictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dictionary".into());
    let payload_name = format!("{stem}.raw");
    let header = DictHeader {
        params: dict.params,
        atom_count: dict.atoms.len(),
        patch_shape: [
            dict.params.patch_shape.0,
            dict.params.patch_shape.1,
            dict.params.patch_shape.2,
        ],
        member_counts: dict.atoms.iter().map(|a| a.member_count).collect(),
        payload: payload_name.clone(),
    };
    let mut bytes = Vec::new();
    for atom in &dict.atoms {
        for v in atom.intensity.iter().chain(&atom.label) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    write_atomic(&dir.join(&payload_name), &bytes)?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(path, text.as_bytes())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<PatchDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: DictHeader = serde_json::from_str(&text).map_err(|e| Error::HeaderParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let patch_len = header.patch_shape.iter().product::<usize>();
    let expected = header.atom_count * patch_len * 2 * 4;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }
    if header.member_counts.len() != header.atom_count {
        return Err(Error::HeaderParse {
            path: path.to_path_buf(),
            reason: format!(
                "member_counts length {} does not match atom_count {}",
                header.member_counts.len(),
                header.atom_count
            ),
        });
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let atoms = (0..header.atom_count)
        .map(|i| {
            let base = i * patch_len * 2;
            DictionaryAtom {
                intensity: floats[base..base + patch_len].to_vec(),
                label: floats[base + patch_len..base + 2 * patch_len].to_vec(),
                member_count: header.member_counts[i],
            }
        })
        .collect();
    Ok(PatchDictionary {
        atoms,
        params: header.params,
    })
}

/// Extracts aligned (intensity patch, label patch) training pairs from a
/// volume and its ground-truth mask at the given stride.
pub fn training_pairs(
    volume: &Volume3,
    mask: &BinaryMask3,
    shape: Dims,
    stride: Dims,
) -> Result<Vec<(Patch3, Vec<f32>)>> {
    if volume.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "volume dims {:?} do not match mask dims {:?}",
            volume.dims(),
            mask.dims()
        )));
    }
    let origins = patch_origins(volume.dims(), shape, stride)?;
    let mut out = Vec::with_capacity(origins.len());
    for origin in origins {
        let patch = crate::volume::copy_patch(volume, origin, shape);
        let mut label = Vec::with_capacity(patch.len());
        for z in 0..shape.0 {
            for y in 0..shape.1 {
                for x in 0..shape.2 {
                    label.push(f32::from(mask.get(origin.0 + z, origin.1 + y, origin.2 + x)));
                }
            }
        }
        out.push((patch, label));
    }
    Ok(out)
}
