use anyhow::Result;
use clap::Args;
use serde_json::json;

use rtmdet::augment::{stage_pipeline, AugSchedule, PipelineId};
use rtmdet::sched::{flat_cosine_lr, LrConfig, DEFAULT_WARMUP_STEPS};

use crate::common::{ensure_invariant, render_table, usage, Outputs};
use crate::Report;

#[derive(Debug, Args)]
pub struct LrArgs {
    #[arg(long, default_value_t = 0.004)]
    pub base_lr: f64,
    /// Floor reached at the last step (default 0.05 × base)
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long, default_value_t = 300_000)]
    pub total_steps: u64,
    #[arg(long, default_value_t = DEFAULT_WARMUP_STEPS)]
    pub warmup_steps: u64,
    /// Training epochs spanned by the steps, for the augmentation stage column
    #[arg(long, default_value_t = 300)]
    pub epochs: u32,
    /// Epochs of the final LSJ stage
    #[arg(long, default_value_t = 20)]
    pub stage2_epochs: u32,
    /// Emit every N-th step (the last step is always included)
    #[arg(long, default_value_t = 1000)]
    pub every: u64,
}

fn pipeline_name(p: PipelineId) -> &'static str {
    match p {
        PipelineId::MosaicMixUp => "mosaic-mixup",
        PipelineId::LsjFlip => "lsj-flip",
    }
}

pub fn run(args: &LrArgs, out: &mut Outputs) -> Result<Report> {
    let mut cfg = LrConfig::new(args.base_lr, args.total_steps, args.warmup_steps);
    if let Some(m) = args.min_lr {
        cfg.min_lr = m;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if args.every == 0 || args.epochs == 0 || args.stage2_epochs > args.epochs {
        return Err(usage("need --every >= 1, --epochs >= 1 and --stage2-epochs <= --epochs"));
    }
    let schedule = AugSchedule {
        total_epochs: args.epochs,
        stage1_epochs: args.epochs - args.stage2_epochs,
        ..Default::default()
    };
    let t = args.total_steps;
    let epoch_of = |step: u64| ((step as u128 * args.epochs as u128) / t as u128).min(args.epochs as u128 - 1) as u32;

    let mut steps: Vec<u64> = (0..=t).step_by(args.every as usize).collect();
    if steps.last() != Some(&t) {
        steps.push(t);
    }
    let mut csv = String::from("step,epoch,lr,pipeline\n");
    for &s in &steps {
        let lr = flat_cosine_lr(s, &cfg);
        ensure_invariant(lr.is_finite() && lr >= 0.0 && lr <= cfg.base_lr, || format!("lr {lr} at step {s}"))?;
        let e = epoch_of(s);
        csv.push_str(&format!("{s},{e},{lr},{}\n", pipeline_name(stage_pipeline(e, &schedule))));
    }
    out.write("lr-curve.csv", csv.as_bytes())?;

    let landmarks: Vec<(&str, u64)> = vec![
        ("start", 0),
        ("warmup end", t.min(args.warmup_steps)),
        ("T/2", t / 2),
        ("3T/4", t * 3 / 4),
        ("T", t),
    ];
    let rows: Vec<Vec<String>> = landmarks
        .iter()
        .map(|&(name, s)| {
            let e = epoch_of(s);
            vec![
                name.to_string(),
                s.to_string(),
                e.to_string(),
                format!("{:.6e}", flat_cosine_lr(s, &cfg)),
                pipeline_name(stage_pipeline(e, &schedule)).to_string(),
            ]
        })
        .collect();
    let mut text = format!(
        "flat-cosine: base_lr={} min_lr={} total_steps={} warmup_steps={}\n",
        cfg.base_lr, cfg.min_lr, t, cfg.warmup_steps
    );
    text.push_str(&render_table(&["point", "step", "epoch", "lr", "pipeline"], &rows));
    text.push_str(&format!("{} rows written to lr-curve.csv\n", steps.len()));

    let json = json!({
        "config": cfg,
        "epochs": args.epochs,
        "stage1_epochs": schedule.stage1_epochs,
        "csv": "lr-curve.csv",
        "rows": steps.len(),
        "landmarks": landmarks.iter().map(|&(name, s)| json!({
            "point": name,
            "step": s,
            "lr": flat_cosine_lr(s, &cfg),
        })).collect::<Vec<_>>(),
    });
    Ok(Report { text, json })
}
