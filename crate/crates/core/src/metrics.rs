//! Segmentation evaluation: Dice, sensitivity, precision, signed volume
//! error and symmetric contour mean distance, plus report aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::BinaryMask3;

fn check_dims(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Dimension(format!(
            "mask dims differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

fn confusion(pred: &BinaryMask3, gt: &BinaryMask3) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fnv = 0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fnv += 1,
            _ => {}
        }
    }
    (tp, fp, fnv)
}

/// Overlap coefficient `2|P∩G| / (|P|+|G|)`; both masks empty counts as
/// perfect agreement (1.0).
pub fn dice(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    check_dims(pred, gt)?;
    let (tp, fp, fnv) = confusion(pred, gt);
    let denom = 2 * tp + fp + fnv;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// `TP / (TP + FN)`; undefined when the ground truth is empty.
pub fn sensitivity(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    check_dims(pred, gt)?;
    let (tp, _, fnv) = confusion(pred, gt);
    if tp + fnv == 0 {
        return Err(Error::UndefinedMetric("sensitivity with empty ground truth".into()));
    }
    Ok(tp as f64 / (tp + fnv) as f64)
}

/// `TP / (TP + FP)`; undefined when the prediction is empty.
pub fn precision(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    check_dims(pred, gt)?;
    let (tp, fp, _) = confusion(pred, gt);
    if tp + fp == 0 {
        return Err(Error::UndefinedMetric("precision with empty prediction".into()));
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

/// Signed fraction `(|P| - |G|) / |G|`; positive means overestimation.
pub fn volume_error(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    check_dims(pred, gt)?;
    let p = pred.count_ones();
    let g = gt.count_ones();
    if g == 0 {
        return Err(Error::UndefinedMetric("volume error with empty ground truth".into()));
    }
    Ok((p as f64 - g as f64) / g as f64)
}

/// Surface voxels: foreground with at least one face neighbor that is
/// background, where the volume border counts as background.
pub fn surface_voxels(mask: &BinaryMask3) -> Vec<(usize, usize, usize)> {
    let (nz, ny, nx) = mask.dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(z, y, x) == 0 {
                    continue;
                }
                let mut boundary = false;
                for (dz, dy, dx) in [(-1isize, 0isize, 0isize), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)] {
                    let zz = z as isize + dz;
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if zz < 0 || yy < 0 || xx < 0
                        || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize
                        || mask.get(zz as usize, yy as usize, xx as usize) == 0
                    {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    out.push((z, y, x));
                }
            }
        }
    }
    out
}

fn mean_nearest_distance(
    from: &[(usize, usize, usize)],
    to: &[(usize, usize, usize)],
    spacing: (f64, f64, f64),
) -> f64 {
    let mut total = 0.0;
    for &(az, ay, ax) in from {
        let mut best = f64::INFINITY;
        for &(bz, by, bx) in to {
            let dz = (az as f64 - bz as f64) * spacing.0;
            let dy = (ay as f64 - by as f64) * spacing.1;
            let dx = (ax as f64 - bx as f64) * spacing.2;
            let d2 = dz * dz + dy * dy + dx * dx;
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Symmetric mean surface distance in millimeters: the average of the two
/// directed mean nearest-surface distances.
pub fn contour_mean_distance(
    pred: &BinaryMask3,
    gt: &BinaryMask3,
    spacing: (f64, f64, f64),
) -> Result<f64> {
    check_dims(pred, gt)?;
    if pred.count_ones() == 0 || gt.count_ones() == 0 {
        return Err(Error::UndefinedMetric("contour distance with an empty mask".into()));
    }
    let sp = surface_voxels(pred);
    let sg = surface_voxels(gt);
    let a = mean_nearest_distance(&sp, &sg, spacing);
    let b = mean_nearest_distance(&sg, &sp, spacing);
    Ok(0.5 * (a + b))
}

/// One directed mean surface distance (prediction surface to ground-truth
/// surface), kept for comparison against the symmetric convention.
pub fn contour_mean_distance_directed(
    pred: &BinaryMask3,
    gt: &BinaryMask3,
    spacing: (f64, f64, f64),
) -> Result<f64> {
    check_dims(pred, gt)?;
    if pred.count_ones() == 0 || gt.count_ones() == 0 {
        return Err(Error::UndefinedMetric("contour distance with an empty mask".into()));
    }
    let sp = surface_voxels(pred);
    let sg = surface_voxels(gt);
    Ok(mean_nearest_distance(&sp, &sg, spacing))
}

/// Per-case metric record; metrics whose denominator set was empty are
/// absent and excluded from aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dice: f64,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub volume_error: Option<f64>,
    pub contour_mean_distance_mm: Option<f64>,
}

pub fn evaluate_case(
    pred: &BinaryMask3,
    gt: &BinaryMask3,
    spacing: (f64, f64, f64),
) -> Result<CaseMetrics> {
    check_dims(pred, gt)?;
    Ok(CaseMetrics {
        dice: dice(pred, gt)?,
        sensitivity: sensitivity(pred, gt).ok(),
        precision: precision(pred, gt).ok(),
        volume_error: volume_error(pred, gt).ok(),
        contour_mean_distance_mm: contour_mean_distance(pred, gt, spacing).ok(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Group name -> mean over that group's defined values.
    pub group_means: Vec<(String, Option<f64>)>,
    /// Mean of the per-group means.
    pub balanced: Option<f64>,
    /// Cases where this metric was undefined.
    pub undefined_count: usize,
}

/// Aggregated evaluation over a list of cases with group tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Free-form label for the table header (method / parameters).
    pub label: Option<String>,
    pub cases: Vec<(String, String, CaseMetrics)>,
    pub dice: MetricAggregate,
    pub sensitivity: MetricAggregate,
    pub precision: MetricAggregate,
    pub volume_error: MetricAggregate,
    pub contour_mean_distance_mm: MetricAggregate,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn median_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn aggregate_metric(
    records: &[CaseMetrics],
    groups: &[String],
    select: impl Fn(&CaseMetrics) -> Option<f64>,
) -> MetricAggregate {
    let defined: Vec<f64> = records.iter().filter_map(&select).collect();
    let undefined_count = records.len() - defined.len();

    let mut group_names: Vec<String> = Vec::new();
    for g in groups {
        if !group_names.contains(g) {
            group_names.push(g.clone());
        }
    }
    let group_means: Vec<(String, Option<f64>)> = group_names
        .iter()
        .map(|name| {
            let vals: Vec<f64> = records
                .iter()
                .zip(groups)
                .filter(|(_, g)| *g == name)
                .filter_map(|(r, _)| select(r))
                .collect();
            (name.clone(), mean_of(&vals))
        })
        .collect();
    let balanced_vals: Vec<f64> = group_means.iter().filter_map(|(_, m)| *m).collect();

    MetricAggregate {
        mean: mean_of(&defined),
        median: median_of(&defined),
        balanced: mean_of(&balanced_vals),
        group_means,
        undefined_count,
    }
}

/// Builds the full report. `names`, `groups` and `records` are aligned by
/// index; groups drive the per-group and balanced columns.
pub fn aggregate(
    names: &[String],
    groups: &[String],
    records: &[CaseMetrics],
    label: Option<String>,
) -> Result<EvalReport> {
    if names.len() != records.len() || groups.len() != records.len() {
        return Err(Error::Input(format!(
            "aggregate inputs misaligned: {} names, {} groups, {} records",
            names.len(),
            groups.len(),
            records.len()
        )));
    }
    Ok(EvalReport {
        label,
        cases: names
            .iter()
            .zip(groups)
            .zip(records)
            .map(|((n, g), r)| (n.clone(), g.clone(), r.clone()))
            .collect(),
        dice: aggregate_metric(records, groups, |r| Some(r.dice)),
        sensitivity: aggregate_metric(records, groups, |r| r.sensitivity),
        precision: aggregate_metric(records, groups, |r| r.precision),
        volume_error: aggregate_metric(records, groups, |r| r.volume_error),
        contour_mean_distance_mm: aggregate_metric(records, groups, |r| r.contour_mean_distance_mm),
    })
}

impl EvalReport {
    /// Renders an aligned plain-text table: one row per metric with avg,
    /// median, per-group means and the balanced column.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:8.4}"),
            None => format!("{:>8}", "-"),
        };
        let groups: Vec<&str> = self
            .dice
            .group_means
            .iter()
            .map(|(g, _)| g.as_str())
            .collect();
        let mut s = String::new();
        if let Some(label) = &self.label {
            s.push_str(label);
            s.push('\n');
        }
        s.push_str(&format!("{:<26} {:>8} {:>8}", "metric", "avg", "med."));
        for g in &groups {
            s.push_str(&format!(" {:>8}", g));
        }
        s.push_str(&format!(" {:>8}\n", "balanced"));
        for (name, agg) in [
            ("dice", &self.dice),
            ("sensitivity", &self.sensitivity),
            ("precision", &self.precision),
            ("volume_error", &self.volume_error),
            ("contour_mean_distance_mm", &self.contour_mean_distance_mm),
        ] {
            s.push_str(&format!("{:<26} {} {}", name, fmt(agg.mean), fmt(agg.median)));
            for (_, m) in &agg.group_means {
                s.push_str(&format!(" {}", fmt(*m)));
            }
            s.push_str(&format!(" {}", fmt(agg.balanced)));
            if agg.undefined_count > 0 {
                s.push_str(&format!("  [{} undefined]", agg.undefined_count));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> bool) -> BinaryMask3 {
        let mut m = BinaryMask3::zeros(dims);
        for z in 0..dims.0 {
            for y in 0..dims.1 {
                for x in 0..dims.2 {
                    if f(z, y, x) {
                        m.set(z, y, x, 1);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn dice_identity_and_disjoint() {
        let a = mask_from_fn((4, 4, 4), |z, _, _| z < 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask_from_fn((4, 4, 4), |z, _, _| z >= 2);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dice_shifted_cube() {
        // 2x2x2 cube against the same cube shifted by 1 in x:
        // overlap 4, sizes 8 and 8 -> 2*4/16 = 0.5.
        let a = mask_from_fn((4, 4, 4), |z, y, x| z < 2 && y < 2 && x < 2);
        let b = mask_from_fn((4, 4, 4), |z, y, x| z < 2 && y < 2 && (1..3).contains(&x));
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn dice_both_empty_is_one() {
        let a = BinaryMask3::zeros((3, 3, 3));
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dims_mismatch_is_error() {
        let a = BinaryMask3::zeros((3, 3, 3));
        let b = BinaryMask3::zeros((3, 3, 4));
        assert!(matches!(dice(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn sensitivity_precision_counting() {
        let gt = mask_from_fn((4, 4, 4), |z, y, x| z < 2 && y < 2 && x < 2);
        assert_eq!(gt.count_ones(), 8);
        // Prediction = gt plus 8 false positives.
        let pred = mask_from_fn((4, 4, 4), |z, y, x| (z < 2 && y < 2 && x < 2) || (z >= 2 && y >= 2 && x >= 2));
        assert_eq!(sensitivity(&pred, &gt).unwrap(), 1.0);
        assert_eq!(precision(&pred, &gt).unwrap(), 0.5);
        assert_eq!(sensitivity(&gt, &gt).unwrap(), 1.0);
        assert_eq!(precision(&gt, &gt).unwrap(), 1.0);
    }

    #[test]
    fn sensitivity_empty_gt_undefined() {
        let empty = BinaryMask3::zeros((3, 3, 3));
        let pred = mask_from_fn((3, 3, 3), |_, _, _| true);
        assert!(matches!(
            sensitivity(&pred, &empty),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            precision(&empty, &pred),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn sensitivity_precision_dual() {
        let a = mask_from_fn((5, 5, 5), |z, y, x| (z + y + x) % 3 == 0);
        let b = mask_from_fn((5, 5, 5), |z, y, x| (z * y + x) % 4 == 1);
        assert_eq!(
            sensitivity(&a, &b).unwrap(),
            precision(&b, &a).unwrap()
        );
    }

    #[test]
    fn volume_error_signs() {
        let gt = mask_from_fn((4, 4, 4), |z, _, _| z == 0);
        let double = mask_from_fn((4, 4, 4), |z, _, _| z < 2);
        let empty = BinaryMask3::zeros((4, 4, 4));
        assert_eq!(volume_error(&gt, &gt).unwrap(), 0.0);
        assert_eq!(volume_error(&double, &gt).unwrap(), 1.0);
        assert_eq!(volume_error(&empty, &gt).unwrap(), -1.0);
        assert!(matches!(volume_error(&gt, &empty), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn contour_distance_zero_for_identical() {
        let a = mask_from_fn((6, 6, 6), |z, y, x| (1..4).contains(&z) && (1..4).contains(&y) && (1..4).contains(&x));
        assert_eq!(contour_mean_distance(&a, &a, (1.0, 1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn contour_distance_single_voxels() {
        let a = mask_from_fn((3, 3, 8), |z, y, x| (z, y, x) == (1, 1, 1));
        let b = mask_from_fn((3, 3, 8), |z, y, x| (z, y, x) == (1, 1, 4));
        assert_eq!(contour_mean_distance(&a, &b, (1.0, 1.0, 1.0)).unwrap(), 3.0);
        // Spacing scales the answer.
        assert_eq!(contour_mean_distance(&a, &b, (1.0, 1.0, 2.5)).unwrap(), 7.5);
    }

    #[test]
    fn contour_distance_empty_is_undefined() {
        let a = mask_from_fn((3, 3, 3), |z, y, x| (z, y, x) == (1, 1, 1));
        let empty = BinaryMask3::zeros((3, 3, 3));
        assert!(matches!(
            contour_mean_distance(&a, &empty, (1.0, 1.0, 1.0)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn metrics_invariant_under_translation() {
        // Translating both masks inside a padded grid changes nothing.
        let base = |z: usize, y: usize, x: usize| (2..5).contains(&z) && (2..4).contains(&y) && (2..6).contains(&x);
        let pred0 = mask_from_fn((12, 12, 12), |z, y, x| base(z, y, x));
        let gt0 = mask_from_fn((12, 12, 12), |z, y, x| base(z, y, x.wrapping_sub(1)));
        let (tz, ty, tx) = (3usize, 2usize, 1usize);
        let pred1 = mask_from_fn((12, 12, 12), |z, y, x| {
            z >= tz && y >= ty && x >= tx && base(z - tz, y - ty, x - tx)
        });
        let gt1 = mask_from_fn((12, 12, 12), |z, y, x| {
            z >= tz && y >= ty && x >= tx && base(z - tz, y - ty, (x - tx).wrapping_sub(1))
        });
        let spacing = (2.0, 1.0, 1.5);
        assert_eq!(dice(&pred0, &gt0).unwrap(), dice(&pred1, &gt1).unwrap());
        assert_eq!(
            sensitivity(&pred0, &gt0).unwrap(),
            sensitivity(&pred1, &gt1).unwrap()
        );
        let d0 = contour_mean_distance(&pred0, &gt0, spacing).unwrap();
        let d1 = contour_mean_distance(&pred1, &gt1, spacing).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_case_and_groups() {
        let gt = mask_from_fn((4, 4, 4), |z, y, x| z < 2 && y < 2 && x < 2);
        let rec = evaluate_case(&gt, &gt, (1.0, 1.0, 1.0)).unwrap();
        let report = aggregate(
            &["case0".into()],
            &["g0".into()],
            &[rec],
            Some("demo".into()),
        )
        .unwrap();
        assert_eq!(report.dice.mean, Some(1.0));
        assert_eq!(report.dice.median, Some(1.0));
        assert_eq!(report.dice.balanced, Some(1.0));
        assert_eq!(report.sensitivity.mean, Some(1.0));
    }

    #[test]
    fn balanced_is_mean_of_group_means() {
        let mk = |d: f64| CaseMetrics {
            dice: d,
            sensitivity: None,
            precision: None,
            volume_error: None,
            contour_mean_distance_mm: None,
        };
        let report = aggregate(
            &["a".into(), "b".into(), "c".into(), "d".into()],
            &["g0".into(), "g0".into(), "g1".into(), "g1".into()],
            &[mk(0.7), mk(0.9), mk(0.85), mk(0.95)],
            None,
        )
        .unwrap();
        // Group means 0.8 and 0.9 -> balanced 0.85.
        assert!((report.dice.balanced.unwrap() - 0.85).abs() < 1e-12);
        assert!((report.dice.mean.unwrap() - 0.85).abs() < 1e-12);
        assert_eq!(report.sensitivity.undefined_count, 4);
        assert_eq!(report.sensitivity.mean, None);
    }

    #[test]
    fn mean_and_median_of_three() {
        let mk = |d: f64| CaseMetrics {
            dice: d,
            sensitivity: None,
            precision: None,
            volume_error: None,
            contour_mean_distance_mm: None,
        };
        let report = aggregate(
            &["a".into(), "b".into(), "c".into()],
            &["g".into(), "g".into(), "g".into()],
            &[mk(0.9), mk(0.7), mk(0.8)],
            None,
        )
        .unwrap();
        assert!((report.dice.mean.unwrap() - 0.8).abs() < 1e-12);
        assert!((report.dice.median.unwrap() - 0.8).abs() < 1e-12);
        let table = report.to_table();
        assert!(table.contains("dice"));
        assert!(table.contains("balanced"));
    }
}
