//! Config-driven end-to-end runs: segment, train, evaluate and k-fold
//! splitting, with the method-conditional preprocessing and cleanup gates
//! and a JSON manifest per run.
//!
//! Gates: the sharpness-conditional blur is skipped for `gmm` and `cnn`;
//! morphological cleanup is skipped for `cnn`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{fcm, gmm_em, kmeans, sdwfcm, select_tumor_clusters, ClusterParams};
use crate::cnn::{cnn_segment_volume, cnn_train, load_model, save_model, CnnModel, CnnParams};
use crate::dictseg::{
    dict_label_volume, load_dictionary, save_dictionary, seed_dictionary, train_dictionary,
    training_pairs, DictParams,
};
use crate::error::{Error, Result};
use crate::io::{read_mask, read_spacing, read_volume, write_atomic, write_mask};
use crate::metrics::{aggregate, evaluate_case, EvalReport};
use crate::morphology::{cleanup_labels, StructuringElement};
use crate::preprocess::{conditional_blur, PreprocessParams};
use crate::volume::{BinaryMask3, Volume3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Km,
    Gmm,
    Fcm,
    Sdwfcm,
    Dict,
    Cnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Km => "km",
            Method::Gmm => "gmm",
            Method::Fcm => "fcm",
            Method::Sdwfcm => "sdwfcm",
            Method::Dict => "dict",
            Method::Cnn => "cnn",
        }
    }

    /// The sharpness-conditional blur is omitted for GMM and CNN.
    pub fn uses_preprocessing(self) -> bool {
        !matches!(self, Method::Gmm | Method::Cnn)
    }

    /// Morphological cleanup is omitted for CNN.
    pub fn uses_postprocessing(self) -> bool {
        !matches!(self, Method::Cnn)
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Dict | Method::Cnn)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingCase {
    pub volume: PathBuf,
    pub mask: PathBuf,
}

/// Full pipeline configuration; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Input volume for `segment`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Output mask path for `segment`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_mask: Option<PathBuf>,
    /// Model file: consumed by `segment`, produced by `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Training volume/mask pairs for `train`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub training: Vec<TrainingCase>,
    #[serde(default)]
    pub cluster: ClusterParams,
    #[serde(default, rename = "dict")]
    pub dict_params: DictParams,
    #[serde(default, rename = "cnn")]
    pub cnn_params: CnnParams,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub postprocess: StructuringElement,
    #[serde(default)]
    pub kfold: usize,
}

fn default_seed() -> u64 {
    0
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.dict_params.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.cnn_params.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.preprocess.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Deterministic sub-seed for a named pipeline stage: FNV-1a over the stage
/// name folded into the master seed. One config seed drives every
/// stochastic stage through this derivation.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in stage.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h ^ master.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Everything a segment run did, written next to the mask as
/// `<mask>.manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub seed: u64,
    pub input: PathBuf,
    pub output_mask: PathBuf,
    pub preprocess_applied: bool,
    /// Sharpness score of the input; absent when preprocessing is gated off.
    pub sharpness_score: Option<f64>,
    /// Whether the conditional blur actually fired.
    pub blur_applied: bool,
    pub postprocess_applied: bool,
    /// Iterations the clustering loop ran (absent for dict/cnn).
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_time_s: f64,
    pub config: PipelineConfig,
}

fn segment_with_method(
    config: &PipelineConfig,
    volume: &Volume3,
) -> Result<(BinaryMask3, Option<usize>, Option<bool>)> {
    let seed = derive_seed(config.seed, config.method.name());
    match config.method {
        Method::Km => {
            let intensities: Vec<f64> = volume.data().iter().map(|&v| f64::from(v)).collect();
            let result = kmeans(&intensities, &config.cluster, seed)?;
            let mask = select_tumor_clusters(&result, config.cluster.f_select, volume.dims())?;
            Ok((mask, Some(result.iterations()), Some(result.converged)))
        }
        Method::Gmm => {
            let intensities: Vec<f64> = volume.data().iter().map(|&v| f64::from(v)).collect();
            let result = gmm_em(&intensities, &config.cluster, seed)?;
            let mask = select_tumor_clusters(&result, config.cluster.f_select, volume.dims())?;
            Ok((mask, Some(result.iterations()), Some(result.converged)))
        }
        Method::Fcm => {
            let intensities: Vec<f64> = volume.data().iter().map(|&v| f64::from(v)).collect();
            let result = fcm(&intensities, &config.cluster, seed)?;
            let mask = select_tumor_clusters(&result, config.cluster.f_select, volume.dims())?;
            Ok((mask, Some(result.iterations()), Some(result.converged)))
        }
        Method::Sdwfcm => {
            let result = sdwfcm(volume, &config.cluster, seed)?;
            let mask = select_tumor_clusters(&result, config.cluster.f_select, volume.dims())?;
            Ok((mask, Some(result.iterations()), Some(result.converged)))
        }
        Method::Dict => {
            let model_path = config
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("dict segmentation requires a model file".into()))?;
            let dict = load_dictionary(model_path)?;
            let mask = dict_label_volume(&dict, volume, &dict.params.clone())?;
            Ok((mask, None, None))
        }
        Method::Cnn => {
            let model_path = config
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("cnn segmentation requires a model file".into()))?;
            let model = load_model(model_path)?;
            let params = model.params.clone();
            let mask = cnn_segment_volume(&model, volume, &params)?;
            Ok((mask, None, None))
        }
    }
}

/// Segments one volume end to end: conditional blur (unless gated off),
/// the configured method, cleanup (unless gated off); writes the mask and a
/// manifest and returns the manifest.
pub fn run_segment(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let start = Instant::now();
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("segment requires an input volume path".into()))?;
    let output_mask = config
        .output_mask
        .as_ref()
        .ok_or_else(|| Error::Config("segment requires an output mask path".into()))?;
    if config.method.needs_model() && config.model.is_none() {
        return Err(Error::Config(format!(
            "method {} requires a model file",
            config.method.name()
        )));
    }

    let volume = read_volume(input)?;

    let preprocess_applied = config.method.uses_preprocessing();
    let (working, sharpness, blur_applied) = if preprocess_applied {
        let score = crate::preprocess::sharpness_score(&volume)?;
        let (v, applied) = conditional_blur(&volume, &config.preprocess)?;
        (v, Some(score), applied)
    } else {
        (volume.clone(), None, false)
    };

    let (mask, iterations, converged) = segment_with_method(config, &working)?;

    let postprocess_applied = config.method.uses_postprocessing();
    let mask = if postprocess_applied {
        cleanup_labels(&mask, config.postprocess)
    } else {
        mask
    };

    write_mask(&mask, volume.spacing(), output_mask)?;
    let manifest = RunManifest {
        method: config.method.name().into(),
        seed: config.seed,
        input: input.clone(),
        output_mask: output_mask.clone(),
        preprocess_applied,
        sharpness_score: sharpness,
        blur_applied,
        postprocess_applied,
        iterations,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    let manifest_path = manifest_path_for(output_mask);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(manifest)
}

pub fn manifest_path_for(mask_path: &Path) -> PathBuf {
    let mut name = mask_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mask".into());
    name.push_str(".manifest.json");
    mask_path.with_file_name(name)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub model: PathBuf,
    pub cases: usize,
    /// Per-epoch mean loss (cnn) or per-pass quantization error (dict).
    pub trace: Vec<f64>,
    pub wall_time_s: f64,
}

/// Trains a dict or cnn model from the configured volume/mask pairs and
/// persists it; the training trace is written as
/// `<model>.training.json`.
pub fn run_train(config: &PipelineConfig) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    if !config.method.needs_model() {
        return Err(Error::Config(format!(
            "method {} has no training phase",
            config.method.name()
        )));
    }
    let model_path = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("train requires a model output path".into()))?;
    if config.training.is_empty() {
        return Err(Error::Config("train requires at least one volume/mask pair".into()));
    }

    let mut cases = Vec::with_capacity(config.training.len());
    for tc in &config.training {
        let volume = read_volume(&tc.volume)?;
        let mask = read_mask(&tc.mask)?;
        cases.push((volume, mask));
    }

    let trace = match config.method {
        Method::Dict => {
            let params = config.dict_params;
            let mut training = Vec::new();
            for (volume, mask) in &cases {
                training.extend(training_pairs(volume, mask, params.patch_shape, (1, 1, 1))?);
            }
            // Decorrelate the extraction sweep: consecutive windows overlap
            // almost entirely, and the sequential VQ update chases such
            // bursts. A seeded shuffle fixes the processing order instead.
            {
                use rand::seq::SliceRandom;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dict-order"));
                training.shuffle(&mut rng);
            }
            let seed = derive_seed(config.seed, "dict-seed");
            let dict = seed_dictionary(&training, &params, seed)?;
            let before = crate::dictseg::quantization_error(&dict, &training);
            let dict = train_dictionary(dict, &training, &params)?;
            let after = crate::dictseg::quantization_error(&dict, &training);
            save_dictionary(&dict, model_path)?;
            vec![before, after]
        }
        Method::Cnn => {
            let params = config.cnn_params.clone();
            let mut model: CnnModel<f32> =
                CnnModel::new(&params, derive_seed(config.seed, "cnn-init"))?;
            let refs: Vec<(&Volume3, &BinaryMask3)> =
                cases.iter().map(|(v, m)| (v, m)).collect();
            let trace = cnn_train(&mut model, &refs, &params, derive_seed(config.seed, "cnn-train"))?;
            save_model(&model, model_path)?;
            trace
        }
        _ => unreachable!("guarded above"),
    };

    let report = TrainReport {
        method: config.method.name().into(),
        seed: config.seed,
        model: model_path.clone(),
        cases: cases.len(),
        trace,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut trace_name = model_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    trace_name.push_str(".training.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&model_path.with_file_name(trace_name), text.as_bytes())?;
    Ok(report)
}

/// Evaluates prediction/ground-truth mask file pairs and writes the report
/// as JSON and an aligned text table. Cases whose masks cannot be compared
/// are recorded and skipped; it is an error if every case fails.
pub fn run_evaluate(
    pred_paths: &[PathBuf],
    gt_paths: &[PathBuf],
    groups: &[String],
    label: Option<String>,
    out_dir: &Path,
) -> Result<(EvalReport, Vec<String>)> {
    if pred_paths.len() != gt_paths.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} ground-truth paths",
            pred_paths.len(),
            gt_paths.len()
        )));
    }
    if !groups.is_empty() && groups.len() != pred_paths.len() {
        return Err(Error::Input(format!(
            "{} group tags for {} cases",
            groups.len(),
            pred_paths.len()
        )));
    }
    let mut names = Vec::new();
    let mut used_groups = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, (pred_path, gt_path)) in pred_paths.iter().zip(gt_paths).enumerate() {
        let attempt = (|| -> Result<_> {
            let pred = read_mask(pred_path)?;
            let gt = read_mask(gt_path)?;
            let spacing = read_spacing(gt_path)?;
            evaluate_case(&pred, &gt, spacing)
        })();
        match attempt {
            Ok(record) => {
                names.push(
                    pred_path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("case{i}")),
                );
                used_groups.push(groups.get(i).cloned().unwrap_or_else(|| "all".into()));
                records.push(record);
            }
            Err(e) => failures.push(format!("{}: {e}", pred_path.display())),
        }
    }
    if records.is_empty() {
        return Err(Error::Input(format!(
            "no case could be evaluated ({} failures)",
            failures.len()
        )));
    }
    let report = aggregate(&names, &used_groups, &records, label)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out_dir.join("report.json"), json.as_bytes())?;
    write_atomic(&out_dir.join("report.txt"), report.to_table().as_bytes())?;
    Ok((report, failures))
}

/// Deterministic k-fold partition: cases are shuffled by the seed and dealt
/// into k near-equal folds; each case appears in exactly one test fold.
pub fn kfold_split(
    cases: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(Error::Input(format!("k must be >= 2, got {k}")));
    }
    if cases.len() < k {
        return Err(Error::Input(format!(
            "cannot split {} cases into {k} folds",
            cases.len()
        )));
    }
    let mut indices: Vec<usize> = (0..cases.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let base = cases.len() / k;
    let extra = cases.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let test_idx: Vec<usize> = indices[cursor..cursor + size].to_vec();
        cursor += size;
        let test: Vec<String> = test_idx.iter().map(|&i| cases[i].clone()).collect();
        let train: Vec<String> = indices
            .iter()
            .filter(|i| !test_idx.contains(i))
            .map(|&i| cases[i].clone())
            .collect();
        folds.push((train, test));
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, Lesion, PhantomSpec};

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("voxseg-pipe-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_phantom(seed: u64) -> (Volume3, BinaryMask3) {
        generate_phantom(&PhantomSpec {
            dims: [24, 24, 24],
            spacing: [2.0, 2.0, 2.0],
            background_intensity: 0.1,
            lesions: vec![Lesion {
                center: [12.0, 12.0, 12.0],
                radii: [6.0, 6.0, 6.0],
                intensity: 0.7,
            }],
            psf_sigma: 0.8,
            noise_sigma: 0.02,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn seed_derivation_is_stage_dependent() {
        assert_ne!(derive_seed(1, "kmeans"), derive_seed(1, "gmm"));
        assert_ne!(derive_seed(1, "kmeans"), derive_seed(2, "kmeans"));
        assert_eq!(derive_seed(7, "cnn-init"), derive_seed(7, "cnn-init"));
    }

    #[test]
    fn preprocessing_gates() {
        assert!(Method::Km.uses_preprocessing());
        assert!(Method::Fcm.uses_preprocessing());
        assert!(Method::Sdwfcm.uses_preprocessing());
        assert!(Method::Dict.uses_preprocessing());
        assert!(!Method::Gmm.uses_preprocessing());
        assert!(!Method::Cnn.uses_preprocessing());
        assert!(Method::Km.uses_postprocessing());
        assert!(Method::Gmm.uses_postprocessing());
        assert!(!Method::Cnn.uses_postprocessing());
    }

    #[test]
    fn segment_km_roundtrip_with_manifest() {
        let dir = tmpdir("km");
        let (volume, gt) = small_phantom(5);
        let vol_path = dir.join("vol.json");
        crate::io::write_volume(&volume, &vol_path).unwrap();
        let config = PipelineConfig {
            method: Method::Km,
            seed: 11,
            input: Some(vol_path),
            output_mask: Some(dir.join("mask.json")),
            model: None,
            training: vec![],
            cluster: ClusterParams::default(),
            dict_params: DictParams::default(),
            cnn_params: CnnParams::default(),
            preprocess: PreprocessParams::default(),
            postprocess: StructuringElement::Cross,
            kfold: 0,
        };
        let manifest = run_segment(&config).unwrap();
        assert!(manifest.preprocess_applied);
        assert!(manifest.postprocess_applied);
        assert!(manifest.sharpness_score.is_some());
        let mask = read_mask(dir.join("mask.json")).unwrap();
        assert!(mask.count_ones() > 0);
        let dice = crate::metrics::dice(&mask, &gt).unwrap();
        assert!(dice > 0.8, "km dice {dice}");
        // Manifest readable back.
        let text = fs::read_to_string(manifest_path_for(&dir.join("mask.json"))).unwrap();
        let parsed: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.method, "km");
    }

    #[test]
    fn gmm_manifest_shows_skipped_preprocessing() {
        let dir = tmpdir("gmm");
        let (volume, _) = small_phantom(6);
        let vol_path = dir.join("vol.json");
        crate::io::write_volume(&volume, &vol_path).unwrap();
        let config = PipelineConfig {
            method: Method::Gmm,
            seed: 3,
            input: Some(vol_path),
            output_mask: Some(dir.join("mask.json")),
            model: None,
            training: vec![],
            cluster: ClusterParams {
                n_clusters: 4,
                f_select: 1,
                ..ClusterParams::default()
            },
            dict_params: DictParams::default(),
            cnn_params: CnnParams::default(),
            preprocess: PreprocessParams::default(),
            postprocess: StructuringElement::Cross,
            kfold: 0,
        };
        let manifest = run_segment(&config).unwrap();
        assert!(!manifest.preprocess_applied);
        assert!(manifest.sharpness_score.is_none());
        assert!(!manifest.blur_applied);
        assert!(manifest.postprocess_applied);
    }

    #[test]
    fn missing_model_is_config_error() {
        let dir = tmpdir("nomodel");
        let (volume, _) = small_phantom(7);
        let vol_path = dir.join("vol.json");
        crate::io::write_volume(&volume, &vol_path).unwrap();
        let config = PipelineConfig {
            method: Method::Dict,
            seed: 0,
            input: Some(vol_path),
            output_mask: Some(dir.join("mask.json")),
            model: None,
            training: vec![],
            cluster: ClusterParams::default(),
            dict_params: DictParams::default(),
            cnn_params: CnnParams::default(),
            preprocess: PreprocessParams::default(),
            postprocess: StructuringElement::Cross,
            kfold: 0,
        };
        assert!(matches!(run_segment(&config), Err(Error::Config(_))));
    }

    #[test]
    fn strict_config_rejects_unknown_keys() {
        let dir = tmpdir("strict");
        let path = dir.join("config.json");
        fs::write(&path, r#"{"method":"km","seed":1,"tpyo":true}"#).unwrap();
        assert!(matches!(
            PipelineConfig::from_file(&path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kfold_partitions() {
        let cases: Vec<String> = (0..10).map(|i| format!("case{i}")).collect();
        let folds = kfold_split(&cases, 5, 42).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = Vec::new();
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 8);
            for t in test {
                assert!(!train.contains(t));
                seen.push(t.clone());
            }
        }
        seen.sort();
        let mut all = cases.clone();
        all.sort();
        assert_eq!(seen, all);
        // Determinism.
        assert_eq!(folds, kfold_split(&cases, 5, 42).unwrap());
        assert_ne!(folds, kfold_split(&cases, 5, 43).unwrap());
    }

    #[test]
    fn kfold_too_few_cases() {
        let cases: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        assert!(matches!(kfold_split(&cases, 5, 0), Err(Error::Input(_))));
        assert!(matches!(kfold_split(&cases, 1, 0), Err(Error::Input(_))));
    }

    #[test]
    fn evaluate_self_is_perfect() {
        let dir = tmpdir("eval");
        let (_, gt) = small_phantom(9);
        let gt_path = dir.join("gt.json");
        write_mask(&gt, (2.0, 2.0, 2.0), &gt_path).unwrap();
        let (report, failures) = run_evaluate(
            &[gt_path.clone()],
            &[gt_path],
            &["g".into()],
            Some("self".into()),
            &dir.join("out"),
        )
        .unwrap();
        assert!(failures.is_empty());
        assert_eq!(report.dice.mean, Some(1.0));
        assert!(dir.join("out/report.json").exists());
        assert!(dir.join("out/report.txt").exists());
    }

    #[test]
    fn train_rejects_clustering_methods() {
        let config = PipelineConfig {
            method: Method::Km,
            seed: 0,
            input: None,
            output_mask: None,
            model: Some(PathBuf::from("/tmp/m.json")),
            training: vec![],
            cluster: ClusterParams::default(),
            dict_params: DictParams::default(),
            cnn_params: CnnParams::default(),
            preprocess: PreprocessParams::default(),
            postprocess: StructuringElement::Cross,
            kfold: 0,
        };
        assert!(matches!(run_train(&config), Err(Error::Config(_))));
    }
}
