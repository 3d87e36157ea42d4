//! Detection evaluation: greedy IoU matching, precision/recall and VOC AP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::geometry::BoxGeometry;
use crate::postproc::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Matched only a difficult GT; neither TP nor FP.
    Ignored,
}

/// A ground-truth object for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject<B> {
    pub bbox: B,
    pub class: usize,
    #[serde(default)]
    pub difficult: bool,
}

impl<B> GtObject<B> {
    pub fn new(bbox: B, class: usize) -> Self {
        Self {
            bbox,
            class,
            difficult: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// 11-point interpolation.
    Voc07,
    /// Area under the monotone precision envelope.
    AllPoint,
}

/// Match one detection against an image's GTs, updating `taken`.
///
/// Best IoU among untaken non-difficult GTs at or above `iou_thr` wins
/// (lower index on ties). Otherwise a difficult GT at or above the threshold
/// makes the detection `Ignored`.
fn match_one<B, F>(det: &B, gts: &[B], difficult: &[bool], taken: &mut [bool], iou_fn: &F, iou_thr: f64) -> MatchFlag
where
    F: Fn(&B, &B) -> f64,
{
    let mut best: Option<(f64, usize)> = None;
    let mut hits_difficult = false;
    for (g, gt) in gts.iter().enumerate() {
        if difficult[g] {
            if !hits_difficult && iou_fn(det, gt) >= iou_thr {
                hits_difficult = true;
            }
            continue;
        }
        if taken[g] {
            continue;
        }
        let iou = iou_fn(det, gt);
        if iou >= iou_thr && best.is_none_or(|(b, _)| iou > b) {
            best = Some((iou, g));
        }
    }
    match best {
        Some((_, g)) => {
            taken[g] = true;
            MatchFlag::TruePositive
        }
        None if hits_difficult => MatchFlag::Ignored,
        None => MatchFlag::FalsePositive,
    }
}

/// Greedy matching of detections, given in descending score order.
pub fn match_detections<B, F>(dets: &[B], gts: &[B], difficult: &[bool], iou_fn: F, iou_thr: f64) -> Result<Vec<MatchFlag>>
where
    F: Fn(&B, &B) -> f64,
{
    check_len("difficult flags", gts.len(), difficult.len())?;
    let mut taken = vec![false; gts.len()];
    Ok(dets
        .iter()
        .map(|d| match_one(d, gts, difficult, &mut taken, &iou_fn, iou_thr))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    /// One point per counted (non-ignored) detection, in score order.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub num_tp: usize,
    pub num_fp: usize,
    pub num_gt: usize,
}

impl PRCurve {
    /// Build from flags in descending score order. `Ignored` entries are
    /// skipped.
    pub fn from_flags(flags: &[MatchFlag], num_gt: usize) -> Self {
        let mut curve = PRCurve {
            recall: Vec::new(),
            precision: Vec::new(),
            num_tp: 0,
            num_fp: 0,
            num_gt,
        };
        for f in flags {
            match f {
                MatchFlag::TruePositive => curve.num_tp += 1,
                MatchFlag::FalsePositive => curve.num_fp += 1,
                MatchFlag::Ignored => continue,
            }
            let tp = curve.num_tp as f64;
            curve.recall.push(if num_gt == 0 { 0.0 } else { tp / num_gt as f64 });
            curve.precision.push(tp / (curve.num_tp + curve.num_fp) as f64);
        }
        curve
    }

    /// Curve from explicit points (recall must be non-decreasing).
    pub fn from_points(recall: Vec<f64>, precision: Vec<f64>, num_gt: usize) -> Result<Self> {
        check_len("precision points", recall.len(), precision.len())?;
        Ok(PRCurve {
            recall,
            precision,
            num_tp: 0,
            num_fp: 0,
            num_gt,
        })
    }
}

/// Mean over recall thresholds {0, 0.1, …, 1} of the best precision at
/// recall ≥ threshold.
pub fn voc07_ap(pr: &PRCurve) -> f64 {
    let mut sum = 0.0;
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let p = pr
            .recall
            .iter()
            .zip(&pr.precision)
            .filter(|(r, _)| **r >= t)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / 11.0
}

pub fn all_point_ap(pr: &PRCurve) -> f64 {
    let n = pr.recall.len();
    if n == 0 {
        return 0.0;
    }
    let mut mrec = Vec::with_capacity(n + 2);
    let mut mpre = Vec::with_capacity(n + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(&pr.recall);
    mpre.extend_from_slice(&pr.precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

pub fn average_precision(pr: &PRCurve, mode: ApMode) -> f64 {
    match mode {
        ApMode::Voc07 => voc07_ap(pr),
        ApMode::AllPoint => all_point_ap(pr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    /// Non-difficult GT count.
    pub num_gt: usize,
    pub num_dets: usize,
    pub num_tp: usize,
    /// `None` when the class has no counted GT.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub per_class: Vec<ClassAp>,
    /// Mean over classes with at least one counted GT.
    pub map: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thr: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thr: 0.5,
            ap_mode: ApMode::Voc07,
        }
    }
}

/// Per-class AP over a dataset. Detections of a class are pooled across
/// images and processed by descending score (ties: image, then detection
/// index).
pub fn dataset_map_by<B, F>(
    dets: &[Vec<Detection<B>>],
    gts: &[Vec<GtObject<B>>],
    num_classes: usize,
    cfg: &EvalConfig,
    iou_fn: F,
) -> Result<MapResult>
where
    B: Sync,
    F: Fn(&B, &B) -> f64 + Sync,
{
    check_len("per-image detections", gts.len(), dets.len())?;
    let per_class: Vec<ClassAp> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let mut pool: Vec<(f64, usize, usize)> = Vec::new();
            for (img, ds) in dets.iter().enumerate() {
                for (k, d) in ds.iter().enumerate().filter(|(_, d)| d.class == c) {
                    pool.push((d.score, img, k));
                }
            }
            pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

            let class_gts: Vec<(Vec<&B>, Vec<bool>)> = gts
                .iter()
                .map(|g| {
                    g.iter()
                        .filter(|o| o.class == c)
                        .map(|o| (&o.bbox, o.difficult))
                        .unzip()
                })
                .collect();
            let num_gt = class_gts
                .iter()
                .map(|(_, d)| d.iter().filter(|x| !**x).count())
                .sum();
            let mut taken: Vec<Vec<bool>> = class_gts.iter().map(|(b, _)| vec![false; b.len()]).collect();
            let ref_iou = |a: &&B, b: &&B| iou_fn(a, b);
            let flags: Vec<MatchFlag> = pool
                .iter()
                .map(|&(_, img, k)| {
                    let (boxes, diff) = &class_gts[img];
                    match_one(&&dets[img][k].bbox, boxes, diff, &mut taken[img], &ref_iou, cfg.iou_thr)
                })
                .collect();
            let pr = PRCurve::from_flags(&flags, num_gt);
            ClassAp {
                class: c,
                num_gt,
                num_dets: pool.len(),
                num_tp: pr.num_tp,
                ap: (num_gt > 0).then(|| average_precision(&pr, cfg.ap_mode)),
            }
        })
        .collect();
    let counted: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(MapResult { per_class, map })
}

pub fn dataset_map<B: BoxGeometry>(
    dets: &[Vec<Detection<B>>],
    gts: &[Vec<GtObject<B>>],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<MapResult> {
    dataset_map_by(dets, gts, num_classes, cfg, B::iou)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_aabb, AABox};
    use MatchFlag::*;

    fn b(x: f64) -> AABox {
        AABox::new(x, 0.0, x + 10.0, 10.0)
    }

    #[test]
    fn matching_examples() {
        let gts = [b(0.0), b(20.0)];
        let f = match_detections(&[b(0.0), b(20.0)], &gts, &[false, false], iou_aabb, 0.5).unwrap();
        assert_eq!(f, vec![TruePositive, TruePositive]);
        let f = match_detections(&[b(0.0), b(0.5)], &gts, &[false, false], iou_aabb, 0.5).unwrap();
        assert_eq!(f, vec![TruePositive, FalsePositive]);
        let f = match_detections(&[b(0.0)], &gts, &[true, false], iou_aabb, 0.5).unwrap();
        assert_eq!(f, vec![Ignored]);
        assert!(match_detections(&[b(0.0)], &gts, &[true], iou_aabb, 0.5).is_err());
    }

    #[test]
    fn duplicate_takes_next_unmatched() {
        // second detection overlaps both GTs; the first GT is taken
        let gts = [b(0.0), b(3.0)];
        let f = match_detections(&[b(0.0), b(1.0)], &gts, &[false, false], iou_aabb, 0.5).unwrap();
        assert_eq!(f, vec![TruePositive, TruePositive]);
    }

    #[test]
    fn voc07_examples() {
        let perfect = PRCurve::from_flags(&[TruePositive; 4], 4);
        assert_eq!(voc07_ap(&perfect), 1.0);
        let step = PRCurve::from_points(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5], vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0], 10).unwrap();
        assert!((voc07_ap(&step) - 6.0 / 11.0).abs() < 1e-12);
        assert_eq!(voc07_ap(&PRCurve::from_flags(&[], 3)), 0.0);
    }

    #[test]
    fn all_point_examples() {
        let perfect = PRCurve::from_flags(&[TruePositive; 2], 2);
        assert!((all_point_ap(&perfect) - 1.0).abs() < 1e-15);
        // TP, FP, TP over 2 GTs: 0.5·1 + 0.5·(2/3)
        let pr = PRCurve::from_flags(&[TruePositive, FalsePositive, TruePositive], 2);
        assert!((all_point_ap(&pr) - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn map_examples() {
        let gts = vec![vec![GtObject::new(b(0.0), 0), GtObject::new(b(30.0), 1)]];
        let dets = vec![vec![Detection::new(b(0.0), 0, 0.9)]];
        let r = dataset_map(&dets, &gts, 2, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.per_class[1].ap, Some(0.0));
        let r = dataset_map(&dets, &gts[..1], 3, &EvalConfig::default()).unwrap();
        assert_eq!(r.per_class[2].ap, None);
        assert_eq!(r.map, 0.5);
    }
}
