use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use rtmdet::archspec::Task;
use rtmdet::assign::{build_cost_matrix, dynamic_k_match, grid_priors, AssignerConfig, GroundTruth, Prior, DEFAULT_STRIDES};
use rtmdet::augment::sample_rng;
use rtmdet::dataio::{Annotation, ImageInfo};
use rtmdet::{AABox, AnyBox, RBox};

use crate::common::{ensure_invariant, load_dataset, render_table, usage, Common, Outputs};
use crate::Report;

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Dataset: COCO JSON file or DOTA directory
    pub data: PathBuf,
    /// Prediction dump; synthetic jittered-GT predictions when absent
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub lambda_cls: Option<f64>,
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    #[arg(long)]
    pub lambda_center: Option<f64>,
    /// IoU candidates summed for the dynamic k
    #[arg(long)]
    pub topk: Option<usize>,
}

/// Predictions of one image, aligned with its prior grid (strides 8, 16,
/// 32; level-major, row-major).
#[derive(Debug, Deserialize)]
struct PredictionDump {
    image_id: u64,
    boxes: Vec<AnyBox>,
    scores: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct PairRow {
    gt: usize,
    prior: usize,
    x: f64,
    y: f64,
    stride: f64,
    iou: f64,
    cost: f64,
    cls_cost: f64,
    reg_cost: f64,
    center_cost: f64,
}

#[derive(Debug, Serialize)]
struct ImageReport {
    image_id: u64,
    file_name: String,
    num_priors: usize,
    num_gts: usize,
    dynamic_k: Vec<usize>,
    positives_per_gt: Vec<usize>,
    pairs: Vec<PairRow>,
}

/// Jittered copies of the nearest GT, centered near each prior.
fn synthetic_predictions(
    priors: &[Prior],
    gts: &[GroundTruth<AnyBox>],
    num_classes: usize,
    seed: u64,
    image: usize,
) -> (Vec<AnyBox>, Vec<Vec<f64>>) {
    let mut rng = sample_rng(seed, image as u64);
    let mut boxes = Vec::with_capacity(priors.len());
    let mut scores = Vec::with_capacity(priors.len());
    for p in priors {
        let mut s: Vec<f64> = (0..num_classes).map(|_| rng.random_range(0.0..0.2)).collect();
        let nearest = gts.iter().min_by(|a, b| {
            let da = p.point().distance(&a.bbox.center());
            let db = p.point().distance(&b.bbox.center());
            da.total_cmp(&db)
        });
        let cx = p.x + rng.random_range(-0.5..0.5) * p.stride;
        let cy = p.y + rng.random_range(-0.5..0.5) * p.stride;
        let (sw, sh) = (rng.random_range(0.7..1.3), rng.random_range(0.7..1.3));
        let b = match nearest.map(|g| g.bbox) {
            Some(AnyBox::Rotated(r)) => {
                AnyBox::Rotated(RBox::new(cx, cy, r.w * sw, r.h * sh, r.theta + rng.random_range(-0.2..0.2)))
            }
            Some(AnyBox::Axis(a)) => AnyBox::Axis(AABox::from_center(cx, cy, a.width() * sw, a.height() * sh)),
            None => AnyBox::Axis(AABox::from_center(cx, cy, 4.0 * p.stride * sw, 4.0 * p.stride * sh)),
        };
        if let Some(g) = nearest {
            s[g.class] = rng.random_range(0.2..0.9);
        }
        boxes.push(b);
        scores.push(s);
    }
    (boxes, scores)
}

fn ground_truths(info: &ImageInfo, anns: &[Annotation], task: Task) -> Vec<GroundTruth<AnyBox>> {
    anns.iter()
        .map(|a| {
            let g = GroundTruth::new(a.bbox, a.class);
            if task == Task::Ins && !a.polygons.is_empty() {
                g.with_mask(a.rasterize(info.width as usize, info.height as usize))
            } else {
                g
            }
        })
        .collect()
}

fn histogram(values: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

pub fn run(args: &AssignArgs, common: &Common, _out: &mut Outputs) -> Result<Report> {
    let mut cfg = AssignerConfig::default();
    cfg.lambda_cls = args.lambda_cls.unwrap_or(cfg.lambda_cls);
    cfg.lambda_reg = args.lambda_reg.unwrap_or(cfg.lambda_reg);
    cfg.lambda_center = args.lambda_center.unwrap_or(cfg.lambda_center);
    cfg.topk_candidates = args.topk.unwrap_or(cfg.topk_candidates);
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let ds = load_dataset(&args.data)?;
    let num_classes = ds.class_names.len();
    let mut dumps: BTreeMap<u64, PredictionDump> = BTreeMap::new();
    if let Some(p) = &args.predictions {
        let raw = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let list: Vec<PredictionDump> = serde_json::from_slice(&raw).with_context(|| format!("parsing {}", p.display()))?;
        for d in list {
            let id = d.image_id;
            if dumps.insert(id, d).is_some() {
                bail!("duplicate predictions for image id {id}");
            }
        }
    }

    let reports: Vec<ImageReport> = ds
        .images
        .par_iter()
        .enumerate()
        .map(|(i, info)| -> Result<ImageReport> {
            if info.width == 0 || info.height == 0 {
                bail!("image {} has unknown size", info.file_name);
            }
            let priors = grid_priors(info.width, info.height, &DEFAULT_STRIDES, 0.0);
            let gts = ground_truths(info, &ds.annotations[i], common.task);
            let (boxes, scores) = match dumps.get(&info.id) {
                Some(d) => (d.boxes.clone(), d.scores.clone()),
                None if args.predictions.is_some() => {
                    return Err(anyhow!("no predictions for image id {}", info.id));
                }
                None => synthetic_predictions(&priors, &gts, num_classes, common.seed, i),
            };
            let costs = build_cost_matrix(&priors, &boxes, &scores, &gts, &cfg)
                .with_context(|| format!("image {}", info.file_name))?;
            let result = dynamic_k_match(&costs);
            ensure_invariant(result.soft_labels.iter().all(|v| (0.0..=1.0).contains(v)), || {
                format!("soft label outside [0, 1] in {}", info.file_name)
            })?;
            let pairs = result
                .pairs
                .iter()
                .map(|p| {
                    let k = p.gt * costs.num_priors + p.prior;
                    let pr = priors[p.prior];
                    PairRow {
                        gt: p.gt,
                        prior: p.prior,
                        x: pr.x,
                        y: pr.y,
                        stride: pr.stride,
                        iou: p.iou,
                        cost: p.cost,
                        cls_cost: costs.cls_cost[k],
                        reg_cost: costs.reg_cost[k],
                        center_cost: costs.center_cost[k],
                    }
                })
                .collect();
            Ok(ImageReport {
                image_id: info.id,
                file_name: info.file_name.clone(),
                num_priors: priors.len(),
                num_gts: gts.len(),
                positives_per_gt: (0..gts.len()).map(|g| result.priors_of(g).count()).collect(),
                dynamic_k: result.dynamic_k,
                pairs,
            })
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mean_k = if r.num_gts == 0 {
                0.0
            } else {
                r.dynamic_k.iter().sum::<usize>() as f64 / r.num_gts as f64
            };
            let mean_iou = if r.pairs.is_empty() {
                0.0
            } else {
                r.pairs.iter().map(|p| p.iou).sum::<f64>() / r.pairs.len() as f64
            };
            vec![
                r.file_name.clone(),
                r.num_gts.to_string(),
                r.num_priors.to_string(),
                r.pairs.len().to_string(),
                format!("{mean_k:.2}"),
                format!("{mean_iou:.3}"),
            ]
        })
        .collect();
    let k_hist = histogram(reports.iter().flat_map(|r| r.dynamic_k.iter().copied()));
    let pos_hist = histogram(reports.iter().flat_map(|r| r.positives_per_gt.iter().copied()));
    let mut text = format!(
        "weights cls={} reg={} center={} | alpha={} beta={} topk={} | predictions: {}\n",
        cfg.lambda_cls,
        cfg.lambda_reg,
        cfg.lambda_center,
        cfg.alpha,
        cfg.beta,
        cfg.topk_candidates,
        if args.predictions.is_some() { "dump" } else { "synthetic" }
    );
    text.push_str(&render_table(&["image", "gts", "priors", "positives", "mean k", "mean IoU"], &rows));
    let hist_line = |h: &BTreeMap<usize, usize>| h.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" ");
    text.push_str(&format!("dynamic k histogram: {}\n", hist_line(&k_hist)));
    text.push_str(&format!("positives per GT histogram: {}\n", hist_line(&pos_hist)));

    let json = json!({
        "config": cfg,
        "synthetic": args.predictions.is_none(),
        "images": reports,
        "summary": {
            "num_positive": reports.iter().map(|r| r.pairs.len()).sum::<usize>(),
            "dynamic_k_histogram": k_hist,
            "positives_per_gt_histogram": pos_hist,
        },
    });
    Ok(Report { text, json })
}
