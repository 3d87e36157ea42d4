use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use rtmdet::metrics::{dataset_map, ApMode, EvalConfig, GtObject};
use rtmdet::postproc::Detection;
use rtmdet::{AABox, AnyBox, Polygon, RBox};

use crate::common::{ensure_invariant, file_stem, load_dataset, render_table, Common};
use crate::Report;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApModeArg {
    Voc07,
    AllPoint,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth: COCO JSON file or DOTA directory
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection dump (JSON list of records)
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, value_enum, default_value = "voc07")]
    pub ap_mode: ApModeArg,
}

/// One detection record. Images are referenced by `image_id` or
/// `file_name`, classes by COCO `category_id` or `category` name, and the
/// box by `bbox` (`[x, y, w, h]`), `rbox` (`[cx, cy, w, h, theta]`) or
/// `poly` (8 corner coordinates).
#[derive(Debug, Deserialize)]
struct DetRecord {
    image_id: Option<u64>,
    file_name: Option<String>,
    category_id: Option<u64>,
    category: Option<String>,
    bbox: Option<[f64; 4]>,
    rbox: Option<[f64; 5]>,
    poly: Option<Vec<f64>>,
    score: f64,
}

#[derive(Debug, Deserialize)]
struct CocoCategories {
    categories: Vec<IdOnly>,
}

#[derive(Debug, Deserialize)]
struct IdOnly {
    id: u64,
}

pub fn run(args: &EvalArgs, common: &Common) -> Result<Report> {
    let ds = load_dataset(&args.gt)?;
    // COCO category ids map to class indices in id order
    let cat_ids: BTreeMap<u64, usize> = if args.gt.is_dir() {
        BTreeMap::new()
    } else {
        let c: CocoCategories = serde_json::from_slice(&fs::read(&args.gt)?)?;
        let mut ids: Vec<u64> = c.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
    };
    let by_id: BTreeMap<u64, usize> = ds.images.iter().enumerate().map(|(i, im)| (im.id, i)).collect();
    let by_stem: BTreeMap<String, usize> = ds.images.iter().enumerate().map(|(i, im)| (file_stem(&im.file_name), i)).collect();

    let raw = fs::read(&args.dets).with_context(|| format!("reading {}", args.dets.display()))?;
    let records: Vec<DetRecord> = serde_json::from_slice(&raw).with_context(|| format!("parsing {}", args.dets.display()))?;
    let score_thr = common.score_thr.unwrap_or(0.0);
    let mut dets: Vec<Vec<Detection<AnyBox>>> = vec![Vec::new(); ds.images.len()];
    for (k, r) in records.iter().enumerate() {
        let img = match (&r.file_name, r.image_id) {
            (Some(f), _) => by_stem.get(&file_stem(f)).copied(),
            (None, Some(id)) => by_id.get(&id).copied(),
            (None, None) => None,
        }
        .ok_or_else(|| anyhow!("detection #{k} references an unknown image"))?;
        let class = match (&r.category, r.category_id) {
            (Some(name), _) => ds.class_index(name),
            (None, Some(id)) if cat_ids.is_empty() => Some(id as usize).filter(|&c| c < ds.class_names.len()),
            (None, Some(id)) => cat_ids.get(&id).copied(),
            (None, None) => None,
        }
        .ok_or_else(|| anyhow!("detection #{k} references an unknown category"))?;
        let bbox = match (r.bbox, r.rbox, &r.poly) {
            (Some([x, y, w, h]), _, _) => AnyBox::Axis(AABox::from_xywh(x, y, w, h)),
            (None, Some([cx, cy, w, h, t]), _) => AnyBox::Rotated(RBox::new(cx, cy, w, h, t)),
            (None, None, Some(p)) => AnyBox::Rotated(
                Polygon::from_flat(p)?
                    .min_area_rect()
                    .ok_or_else(|| anyhow!("detection #{k} has a degenerate polygon"))?,
            ),
            _ => bail!("detection #{k} has no bbox, rbox or poly"),
        };
        if !r.score.is_finite() {
            bail!("detection #{k} has a non-finite score");
        }
        if r.score >= score_thr {
            dets[img].push(Detection::new(bbox, class, r.score));
        }
    }
    if let Some(m) = common.max_dets {
        for d in &mut dets {
            d.sort_by(|a, b| b.score.total_cmp(&a.score));
            d.truncate(m);
        }
    }

    let gts: Vec<Vec<GtObject<AnyBox>>> = ds
        .annotations
        .iter()
        .map(|anns| {
            anns.iter()
                .map(|a| GtObject {
                    bbox: a.bbox,
                    class: a.class,
                    difficult: a.difficult,
                })
                .collect()
        })
        .collect();
    let cfg = EvalConfig {
        iou_thr: common.iou_thr.unwrap_or(0.5),
        ap_mode: match args.ap_mode {
            ApModeArg::Voc07 => ApMode::Voc07,
            ApModeArg::AllPoint => ApMode::AllPoint,
        },
    };
    let result = dataset_map(&dets, &gts, ds.class_names.len(), &cfg)?;
    ensure_invariant((0.0..=1.0).contains(&result.map), || format!("mAP {} outside [0, 1]", result.map))?;

    let rows: Vec<Vec<String>> = result
        .per_class
        .iter()
        .map(|c| {
            vec![
                ds.class_names[c.class].clone(),
                c.num_gt.to_string(),
                c.num_dets.to_string(),
                c.num_tp.to_string(),
                c.ap.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut text = render_table(&["class", "gts", "dets", "tp", "AP"], &rows);
    text.push_str(&format!("mAP@{} ({:?}): {:.4}\n", cfg.iou_thr, cfg.ap_mode, result.map));
    let json = json!({
        "iou_thr": cfg.iou_thr,
        "ap_mode": cfg.ap_mode,
        "map": result.map,
        "classes": result.per_class.iter().map(|c| json!({
            "class": ds.class_names[c.class],
            "num_gt": c.num_gt,
            "num_dets": c.num_dets,
            "num_tp": c.num_tp,
            "ap": c.ap,
        })).collect::<Vec<_>>(),
    });
    Ok(Report { text, json })
}
