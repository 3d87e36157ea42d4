use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::Args;
use image::{ImageFormat, RgbImage};
use serde::Serialize;

use rtmdet::archspec::{HeadMode, Preset, Task};
use rtmdet::augment::CachePolicy;
use rtmdet::dataio::{load_coco_file, load_dota, Dataset};

pub const DEFAULT_SEED: u64 = 20221214;

/// Bad flags or arguments (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A result that breaks an internal guarantee (exit code 3).
#[derive(Debug)]
pub struct InvariantError(pub String);

impl fmt::Display for InvariantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn ensure_invariant(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(InvariantError(msg()).into())
    }
}

fn enum_parser<T: std::str::FromStr + Clone + Send + Sync + 'static>(
    values: &'static [&'static str],
) -> impl TypedValueParser<Value = T> {
    PossibleValuesParser::new(values).map(|s| s.parse::<T>().ok().expect("value restricted by parser"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRange(pub f64, pub f64);

impl std::str::FromStr for ScaleRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
        let lo: f64 = a.trim().parse().map_err(|_| format!("'{a}' is not a number"))?;
        let hi: f64 = b.trim().parse().map_err(|_| format!("'{b}' is not a number"))?;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err("need 0 < LO <= HI".into());
        }
        Ok(ScaleRange(lo, hi))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed for every random draw
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads; results do not depend on it
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, global = true, default_value = "s", value_parser = enum_parser::<Preset>(&["tiny", "s", "m", "l", "x"]))]
    pub preset: Preset,
    #[arg(long, global = true, default_value = "det", value_parser = enum_parser::<Task>(&["det", "ins", "rot"]))]
    pub task: Task,
    #[arg(long, global = true, default_value = "sepbn", value_parser = enum_parser::<HeadMode>(&["shared", "separate", "sepbn"]))]
    pub head: HeadMode,
    #[arg(long, global = true)]
    pub score_thr: Option<f64>,
    #[arg(long, global = true)]
    pub iou_thr: Option<f64>,
    #[arg(long, global = true)]
    pub max_dets: Option<usize>,
    /// Mosaic cache capacity (the MixUp cache gets half)
    #[arg(long, global = true)]
    pub cache_size: Option<usize>,
    #[arg(long, global = true, value_parser = enum_parser::<CachePolicy>(&["fifo", "random"]))]
    pub cache_policy: Option<CachePolicy>,
    /// Mosaic tile scale range as LO,HI
    #[arg(long, global = true)]
    pub scale_range: Option<ScaleRange>,
    /// Output directory
    #[arg(long, global = true, default_value = "rtmdet-out")]
    pub out: PathBuf,
}

impl Common {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        for (name, v) in [("--score-thr", self.score_thr), ("--iou-thr", self.iou_thr)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(usage(format!("{name} must lie in [0, 1], got {v}")));
                }
            }
        }
        if self.cache_size == Some(0) {
            return Err(usage("--cache-size must be at least 1"));
        }
        Ok(())
    }
}

/// Files written by one run. Unless [`Outputs::commit`] is called, dropping
/// it removes every file and directory it created.
pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn create(root: &Path) -> Result<Self> {
        let mut out = Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        };
        out.mkdir_all(root)?;
        Ok(out)
    }

    fn mkdir_all(&mut self, dir: &Path) -> Result<()> {
        let missing: Vec<PathBuf> = dir.ancestors().take_while(|p| !p.as_os_str().is_empty() && !p.exists()).map(Path::to_path_buf).collect();
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.mkdir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Aligned plain-text table; numeric-looking cells are right-aligned.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let n = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let numeric = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit() || ".-+eEMG%".contains(c));
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if numeric(c) {
                    format!("{:>w$}", c, w = widths[i])
                } else {
                    format!("{:<w$}", c, w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        let cells: Vec<&str> = (0..n).map(|i| r.get(i).map(String::as_str).unwrap_or("")).collect();
        out.push_str(&line(cells));
        out.push('\n');
    }
    out
}

/// A dataset path: a COCO JSON file or a DOTA directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        anyhow::bail!("{} does not exist", path.display());
    }
    let ds = if path.is_dir() {
        load_dota(path).with_context(|| format!("loading DOTA directory {}", path.display()))?
    } else {
        load_coco_file(path).with_context(|| format!("loading COCO file {}", path.display()))?
    };
    ds.validate()?;
    Ok(ds)
}

/// Where the images of a dataset live: the explicit flag, else `images/`
/// next to a COCO file or inside a DOTA directory.
pub fn image_dir(data: &Path, explicit: Option<&Path>) -> PathBuf {
    if let Some(d) = explicit {
        return d.to_path_buf();
    }
    let base = if data.is_dir() {
        data.to_path_buf()
    } else {
        data.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let images = base.join("images");
    if images.is_dir() {
        images
    } else {
        base
    }
}

pub fn fmt_millions(v: u64) -> String {
    format!("{:.3}M", v as f64 / 1e6)
}

pub fn fmt_giga(v: u64) -> String {
    format!("{:.2}G", v as f64 / 1e9)
}

pub fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}
