use anyhow::Result;
use clap::Args;
use serde_json::json;

use rtmdet::archspec::{build_model_spec_with, count_flops, count_params, ModelConfig, Part};

use crate::common::{ensure_invariant, fmt_giga, fmt_millions, render_table, usage, Common};
use crate::Report;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Square input side for FLOP counting (multiple of 32)
    #[arg(long, default_value_t = 640)]
    pub size: usize,
    /// Number of object classes
    #[arg(long, default_value_t = 80)]
    pub num_classes: usize,
}

pub fn run(args: &AnalyzeArgs, common: &Common) -> Result<Report> {
    if args.size == 0 || !args.size.is_multiple_of(32) {
        return Err(usage(format!("--size must be a positive multiple of 32, got {}", args.size)));
    }
    let mut cfg = ModelConfig::new(common.task, common.preset, common.head);
    cfg.num_classes = args.num_classes;
    let spec = build_model_spec_with(&cfg).map_err(|e| usage(e.to_string()))?;
    let (h, w) = (args.size, args.size);
    let groups = spec.group_summary(h, w)?;
    let params = count_params(&spec);
    let flops = count_flops(&spec, h, w)?;
    ensure_invariant(groups.last().map(|g| g.cumulative_params) == Some(params), || {
        "group totals disagree with the parameter count".into()
    })?;

    let mut rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            vec![
                g.name.clone(),
                g.params.to_string(),
                fmt_giga(g.flops),
                fmt_millions(g.cumulative_params),
                fmt_giga(g.cumulative_flops),
            ]
        })
        .collect();
    rows.push(vec!["total".into(), params.to_string(), fmt_giga(flops), fmt_millions(params), fmt_giga(flops)]);
    let mut text = format!(
        "model: task={} preset={} head={} input={}x{}\n",
        common.task, common.preset, common.head, h, w
    );
    text.push_str(&render_table(&["group", "params", "FLOPs", "cum params", "cum FLOPs"], &rows));
    text.push_str(&format!("total params {} ({}), FLOPs {}\n", params, fmt_millions(params), fmt_giga(flops)));

    let mut parts = serde_json::Map::new();
    for (name, part) in [("backbone", Part::Backbone), ("neck", Part::Neck), ("head", Part::Head)] {
        parts.insert(
            name.into(),
            json!({ "params": spec.part_params(part), "flops": spec.part_flops(part, h, w)? }),
        );
    }
    let json = json!({
        "task": common.task,
        "preset": common.preset,
        "head": common.head,
        "num_classes": args.num_classes,
        "input": [h, w],
        "params": params,
        "flops": flops,
        "parts": parts,
        "groups": groups,
    });
    Ok(Report { text, json })
}
