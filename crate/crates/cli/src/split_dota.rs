use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use rtmdet::dataio::{
    crop_annotations, crop_image, dota_label_text, load_image, split_windows, Dataset, ImageInfo,
    DEFAULT_MIN_VISIBILITY, DEFAULT_PATCH_OVERLAP, DEFAULT_PATCH_SIZE, MULTI_SCALE_OVERLAP,
};

use crate::common::{encode_png, file_stem, image_dir, load_dataset, render_table, usage, Common, Outputs};
use crate::Report;

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// DOTA directory (labelTxt/ and images/)
    pub data: PathBuf,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: u32,
    #[arg(long)]
    pub overlap: Option<u32>,
    /// Use the multi-scale overlap
    #[arg(long)]
    pub multi_scale: bool,
    /// Minimum visible fraction of a box to keep it in a patch
    #[arg(long, default_value_t = DEFAULT_MIN_VISIBILITY)]
    pub min_visibility: f64,
}

#[derive(Debug, Serialize)]
struct PatchEntry {
    source: String,
    file_name: String,
    x0: u32,
    y0: u32,
    size: u32,
    num_objects: usize,
}

pub fn run(args: &SplitArgs, _common: &Common, out: &mut Outputs) -> Result<Report> {
    let overlap = args
        .overlap
        .unwrap_or(if args.multi_scale { MULTI_SCALE_OVERLAP } else { DEFAULT_PATCH_OVERLAP });
    if args.patch_size == 0 || overlap >= args.patch_size {
        return Err(usage(format!("--patch-size {} must exceed the overlap {overlap}", args.patch_size)));
    }
    if !(0.0..=1.0).contains(&args.min_visibility) {
        return Err(usage("--min-visibility must lie in [0, 1]"));
    }
    if !args.data.is_dir() {
        bail!("{} is not a DOTA directory", args.data.display());
    }
    let ds = load_dataset(&args.data)?;
    let img_dir = image_dir(&args.data, args.images.as_deref());

    let mut manifest = Vec::new();
    let mut rows = Vec::new();
    for (i, info) in ds.images.iter().enumerate() {
        let path = img_dir.join(&info.file_name);
        let img = load_image(&path).with_context(|| format!("image for {}", info.file_name))?;
        let (w, h) = img.dimensions();
        let windows = split_windows(w, h, args.patch_size, overlap)?;
        let stem = file_stem(&info.file_name);
        // crop and encode in parallel, write in window order
        let patches: Vec<(String, Vec<u8>, String, usize)> = windows
            .par_iter()
            .map(|win| -> Result<_> {
                let name = format!("{stem}__{}__{}___{}", win.size, win.x0, win.y0);
                let anns = crop_annotations(&ds.annotations[i], win, args.min_visibility);
                let n = anns.len();
                let one = Dataset {
                    class_names: ds.class_names.clone(),
                    images: vec![ImageInfo {
                        id: 0,
                        file_name: format!("{name}.png"),
                        width: win.size,
                        height: win.size,
                    }],
                    annotations: vec![anns],
                };
                Ok((name, encode_png(&crop_image(&img, win))?, dota_label_text(&one, 0), n))
            })
            .collect::<Result<_>>()?;
        for (win, (name, png, labels, n)) in windows.iter().zip(patches) {
            out.write(format!("split-dota/images/{name}.png"), &png)?;
            out.write(format!("split-dota/labelTxt/{name}.txt"), labels.as_bytes())?;
            manifest.push(PatchEntry {
                source: info.file_name.clone(),
                file_name: format!("{name}.png"),
                x0: win.x0,
                y0: win.y0,
                size: win.size,
                num_objects: n,
            });
        }
        rows.push(vec![
            info.file_name.clone(),
            format!("{w}x{h}"),
            ds.annotations[i].len().to_string(),
            windows.len().to_string(),
        ]);
    }
    out.write_json("split-dota/manifest.json", &manifest)?;

    let mut text = format!("patch size {} overlap {overlap}\n", args.patch_size);
    text.push_str(&render_table(&["image", "size", "objects", "patches"], &rows));
    text.push_str(&format!("{} patches written\n", manifest.len()));
    let json = json!({
        "patch_size": args.patch_size,
        "overlap": overlap,
        "min_visibility": args.min_visibility,
        "num_patches": manifest.len(),
        "manifest": "split-dota/manifest.json",
        "patches": manifest,
    });
    Ok(Report { text, json })
}
