use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use rtmdet::augment::{
    plan_stream, render_stream, stage_pipeline, AugSchedule, AugmentConfig, CacheConfig, PipelineId, Sample,
    SamplePlan,
};
use rtmdet::dataio::load_image;

use crate::common::{encode_png, ensure_invariant, image_dir, load_dataset, render_table, usage, Common, Outputs};
use crate::Report;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PipelineArg {
    MosaicMixup,
    LsjFlip,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dataset: COCO JSON file or DOTA directory
    pub data: PathBuf,
    /// Image directory (default: images/ beside the annotations)
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output side length
    #[arg(long, default_value_t = 640)]
    pub size: u32,
    /// Training epoch, selects the pipeline from the two-stage schedule
    #[arg(long, default_value_t = 0)]
    pub epoch: u32,
    /// Force a pipeline regardless of --epoch
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Passes over the dataset (later passes see warm caches)
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

fn box_json(s: &Sample, names: &[String]) -> serde_json::Value {
    json!({
        "width": s.image.width(),
        "height": s.image.height(),
        "boxes": s.boxes,
        "classes": s.classes.iter().map(|&c| names[c].clone()).collect::<Vec<_>>(),
    })
}

pub fn run(args: &AugmentArgs, common: &Common, out: &mut Outputs) -> Result<Report> {
    if args.size == 0 || args.repeat == 0 {
        return Err(usage("--size and --repeat must be at least 1"));
    }
    let schedule = AugSchedule::default();
    if args.epoch >= schedule.total_epochs {
        return Err(usage(format!("--epoch must be below {}", schedule.total_epochs)));
    }
    let pipeline = match args.pipeline {
        Some(PipelineArg::MosaicMixup) => PipelineId::MosaicMixUp,
        Some(PipelineArg::LsjFlip) => PipelineId::LsjFlip,
        None => stage_pipeline(args.epoch, &schedule),
    };
    let mut mosaic_cache = CacheConfig::MOSAIC;
    let mut mixup_cache = CacheConfig::MIXUP;
    if let Some(n) = common.cache_size {
        mosaic_cache.capacity = n;
        mixup_cache.capacity = (n / 2).max(1);
    }
    if let Some(p) = common.cache_policy {
        mosaic_cache.policy = p;
        mixup_cache.policy = p;
    }
    let scale_range = common
        .scale_range
        .map(|r| (r.0, r.1))
        .unwrap_or_else(|| common.preset.mosaic_scale_range());
    let cfg = AugmentConfig {
        seed: common.seed,
        out_size: (args.size, args.size),
        scale_range,
        mosaic_cache,
        mixup_cache,
        ..Default::default()
    };

    let ds = load_dataset(&args.data)?;
    let dir = image_dir(&args.data, args.images.as_deref());
    let sources: Vec<Sample> = ds
        .images
        .par_iter()
        .zip(&ds.annotations)
        .map(|(info, anns)| -> Result<Sample> {
            let img = load_image(&dir.join(&info.file_name)).with_context(|| format!("image {}", info.file_name))?;
            Ok(Sample::new(img, anns.iter().map(|a| a.bbox).collect(), anns.iter().map(|a| a.class).collect())?)
        })
        .collect::<Result<_>>()?;
    let stream: Vec<Sample> = (0..args.repeat).flat_map(|_| sources.iter().cloned()).collect();
    let dims: Vec<(u32, u32)> = stream.iter().map(Sample::dims).collect();
    let plans = plan_stream(&dims, pipeline, &cfg);
    let outputs = render_stream(&stream, &plans, &cfg)?;

    let encoded: Vec<Vec<u8>> = outputs.par_iter().map(|s| encode_png(&s.image)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (i, (s, png)) in outputs.iter().zip(encoded).enumerate() {
        ensure_invariant(s.dims() == cfg.out_size && s.boxes.len() == s.classes.len(), || {
            format!("sample {i} has size {:?} and {} boxes / {} classes", s.dims(), s.boxes.len(), s.classes.len())
        })?;
        let source = &ds.images[i % ds.images.len()].file_name;
        out.write(format!("augment/{i:06}.png"), &png)?;
        let mut sidecar = box_json(s, &ds.class_names);
        sidecar["source"] = json!(source);
        out.write_json(format!("augment/{i:06}.json"), &sidecar)?;
        let (kind, detail) = match &plans[i] {
            SamplePlan::MosaicMixUp { tiles, mixup, .. } => (
                "mosaic-mixup",
                format!(
                    "tiles={} mixup={}",
                    tiles.map(|t| format!("{t:?}")).unwrap_or_else(|| "-".into()),
                    mixup.map(|(p, _)| p.to_string()).unwrap_or_else(|| "-".into())
                ),
            ),
            SamplePlan::LsjFlip { lsj, flip } => ("lsj-flip", format!("scale={:.3} flip={flip}", lsj.scale)),
        };
        rows.push(vec![format!("{i:06}"), source.clone(), s.boxes.len().to_string(), kind.to_string(), detail]);
        entries.push(json!({
            "index": i,
            "source": source,
            "file_name": format!("augment/{i:06}.png"),
            "num_boxes": s.boxes.len(),
            "plan": plans[i],
        }));
    }

    let mut text = format!(
        "pipeline {} | out {}x{} | mosaic cache {} {:?} | mixup cache {} {:?} | scale range {:?}\n",
        match pipeline {
            PipelineId::MosaicMixUp => "mosaic-mixup",
            PipelineId::LsjFlip => "lsj-flip",
        },
        args.size,
        args.size,
        mosaic_cache.capacity,
        mosaic_cache.policy,
        mixup_cache.capacity,
        mixup_cache.policy,
        scale_range
    );
    text.push_str(&render_table(&["sample", "source", "boxes", "pipeline", "draws"], &rows));
    let json = json!({
        "pipeline": pipeline,
        "config": cfg,
        "samples": entries,
    });
    Ok(Report { text, json })
}
