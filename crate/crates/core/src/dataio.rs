//! Annotation I/O (COCO JSON subset, DOTA text), image loading and the
//! sliding-window patch splitter.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AABox, AnyBox, BitMask, Polygon};

/// Gray used for padding.
pub const PAD_VALUE: u8 = 114;
pub const DEFAULT_PATCH_SIZE: u32 = 1024;
pub const DEFAULT_PATCH_OVERLAP: u32 = 256;
/// Overlap used with multi-scale splitting.
pub const MULTI_SCALE_OVERLAP: u32 = 500;
pub const DEFAULT_MIN_VISIBILITY: f64 = 0.4;

/// DOTA v1.0 categories in their conventional order.
pub const DOTA_CLASSES: [&str; 15] = [
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
];

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    /// 0 when the image was not available at load time.
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: AnyBox,
    pub class: usize,
    #[serde(default)]
    pub difficult: bool,
    #[serde(default)]
    pub polygons: Vec<Polygon>,
}

impl Annotation {
    pub fn new(bbox: impl Into<AnyBox>, class: usize) -> Self {
        Self {
            bbox: bbox.into(),
            class,
            difficult: false,
            polygons: Vec::new(),
        }
    }

    pub fn rasterize(&self, width: usize, height: usize) -> BitMask {
        BitMask::from_polygons(width, height, &self.polygons)
    }
}

/// Images with their annotations (`annotations[i]` belongs to `images[i]`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Vec<Annotation>>,
}

impl Dataset {
    pub fn num_annotations(&self) -> usize {
        self.annotations.iter().map(Vec::len).sum()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.annotations.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} annotation lists",
                self.images.len(),
                self.annotations.len()
            )));
        }
        for (img, anns) in self.images.iter().zip(&self.annotations) {
            if let Some(a) = anns.iter().find(|a| a.class >= self.class_names.len()) {
                return Err(Error::InvalidInput(format!(
                    "image {} has class index {} of {}",
                    img.file_name,
                    a.class,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// COCO
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<serde_json::Value>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Parse the COCO subset: images, annotations (bbox, category, polygon
/// segmentation) and categories. Categories map to contiguous indices in id
/// order. Boxes are clipped to their image and dropped if empty; RLE
/// segmentations are skipped; `iscrowd` marks the annotation difficult.
pub fn load_coco(bytes: &[u8]) -> Result<Dataset> {
    let file: CocoFile = serde_json::from_slice(bytes)?;
    let mut cats: Vec<&CocoCategory> = file.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    let cat_index: BTreeMap<u64, usize> = cats.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    if cat_index.len() != cats.len() {
        return Err(Error::Coco("duplicate category id".into()));
    }
    let mut image_index = BTreeMap::new();
    for (i, img) in file.images.iter().enumerate() {
        if image_index.insert(img.id, i).is_some() {
            return Err(Error::Coco(format!("duplicate image id {}", img.id)));
        }
    }

    let mut annotations: Vec<Vec<Annotation>> = vec![Vec::new(); file.images.len()];
    for (k, ann) in file.annotations.iter().enumerate() {
        let &img = image_index.get(&ann.image_id).ok_or_else(|| {
            Error::Coco(format!("annotation #{k} references missing image id {}", ann.image_id))
        })?;
        let &class = cat_index.get(&ann.category_id).ok_or_else(|| {
            Error::Coco(format!(
                "annotation #{k} references missing category id {}",
                ann.category_id
            ))
        })?;
        if ann.bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::Coco(format!("annotation #{k} has a non-finite bbox")));
        }
        let info = &file.images[img];
        let [x, y, w, h] = ann.bbox;
        let b = AABox::from_xywh(x, y, w, h).clip_to(0.0, 0.0, info.width as f64, info.height as f64);
        if !(b.width() > 0.0 && b.height() > 0.0) {
            continue;
        }
        let polygons = match &ann.segmentation {
            Some(serde_json::Value::Array(parts)) => parts
                .iter()
                .map(|p| {
                    let coords: Vec<f64> = serde_json::from_value(p.clone())
                        .map_err(|e| Error::Coco(format!("annotation #{k} segmentation: {e}")))?;
                    Polygon::from_flat(&coords)
                })
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        annotations[img].push(Annotation {
            bbox: AnyBox::Axis(b),
            class,
            difficult: ann.iscrowd != 0,
            polygons,
        });
    }
    Ok(Dataset {
        class_names: cats.iter().map(|c| c.name.clone()).collect(),
        images: file
            .images
            .into_iter()
            .map(|i| ImageInfo {
                id: i.id,
                file_name: i.file_name,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
    })
}

pub fn load_coco_file(path: &Path) -> Result<Dataset> {
    load_coco(&fs::read(path)?)
}

/// Serialize as COCO JSON. Category ids are `index + 1`. Rotated boxes have
/// no COCO form and are rejected.
pub fn save_coco(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut anns = Vec::new();
    for (img, list) in ds.images.iter().zip(&ds.annotations) {
        for a in list {
            let b = a.bbox.as_axis().ok_or_else(|| {
                Error::InvalidInput("rotated boxes cannot be written as COCO".into())
            })?;
            let segmentation = (!a.polygons.is_empty()).then(|| {
                serde_json::Value::from(a.polygons.iter().map(|p| p.to_flat()).collect::<Vec<_>>())
            });
            anns.push(CocoAnnotation {
                id: anns.len() as u64 + 1,
                image_id: img.id,
                category_id: a.class as u64 + 1,
                bbox: [b.x1, b.y1, b.width(), b.height()],
                segmentation,
                iscrowd: a.difficult as u8,
            });
        }
    }
    let file = CocoFile {
        images: ds
            .images
            .iter()
            .map(|i| CocoImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: anns,
        categories: ds
            .class_names
            .iter()
            .enumerate()
            .map(|(i, n)| CocoCategory {
                id: i as u64 + 1,
                name: n.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_vec_pretty(&file)?)
}

// ---------------------------------------------------------------------------
// DOTA
// ---------------------------------------------------------------------------

/// One parsed DOTA label line.
#[derive(Debug, Clone, PartialEq)]
pub struct DotaObject {
    pub quad: Polygon,
    pub class_name: String,
    pub difficult: bool,
}

/// Parse a DOTA label file: `x1 y1 x2 y2 x3 y3 x4 y4 class [difficulty]`
/// per line, with optional `imagesource:` / `gsd:` header lines.
pub fn parse_dota_labels(text: &str, path: &Path) -> Result<Vec<DotaObject>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("imagesource:") || line.starts_with("gsd:") {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !(9..=10).contains(&tokens.len()) {
            return Err(err(
                n + 1,
                format!("expected 8 coordinates, a class and a difficulty, got {} fields", tokens.len()),
            ));
        }
        let mut coords = [0.0; 8];
        for (c, t) in coords.iter_mut().zip(&tokens) {
            *c = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(n + 1, format!("'{t}' is not a number")))?;
        }
        let difficult = match tokens.get(9) {
            None | Some(&"0") => false,
            Some(&"1") => true,
            Some(t) => return Err(err(n + 1, format!("difficulty must be 0 or 1, got '{t}'"))),
        };
        out.push(DotaObject {
            quad: Polygon::from_flat(&coords)?,
            class_name: tokens[8].to_string(),
            difficult,
        });
    }
    Ok(out)
}

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Load a DOTA directory: labels from `labelTxt/` (or the directory itself),
/// images from `images/` (or the directory itself). Each quad becomes its
/// minimum-area rotated box; the quad is kept as the polygon. Classes are
/// the DOTA v1.0 list followed by any other names found, sorted.
pub fn load_dota(dir: &Path) -> Result<Dataset> {
    let label_dir = Some(dir.join("labelTxt")).filter(|p| p.is_dir()).unwrap_or_else(|| dir.to_path_buf());
    let image_dir = Some(dir.join("images")).filter(|p| p.is_dir()).unwrap_or_else(|| dir.to_path_buf());

    let mut parsed = Vec::new();
    for path in sorted_files(&label_dir, "txt")? {
        let text = fs::read_to_string(&path)?;
        let objects = parse_dota_labels(&text, &path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        parsed.push((path, stem, objects));
    }

    let mut class_names: Vec<String> = DOTA_CLASSES.iter().map(|s| s.to_string()).collect();
    let mut extra: Vec<String> = parsed
        .iter()
        .flat_map(|(_, _, objs)| objs.iter().map(|o| o.class_name.clone()))
        .filter(|c| !DOTA_CLASSES.contains(&c.as_str()))
        .collect();
    extra.sort();
    extra.dedup();
    class_names.extend(extra);

    let mut ds = Dataset {
        class_names,
        ..Default::default()
    };
    for (id, (path, stem, objects)) in parsed.into_iter().enumerate() {
        let (file_name, width, height) = match find_image(&image_dir, &stem) {
            Some(p) => {
                let (w, h) = image::image_dimensions(&p)?;
                (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), w, h)
            }
            None => (format!("{stem}.png"), 0, 0),
        };
        let mut anns = Vec::with_capacity(objects.len());
        for (k, o) in objects.into_iter().enumerate() {
            let rb = o.quad.min_area_rect().ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: k + 1,
                message: "quadrilateral is degenerate".into(),
            })?;
            anns.push(Annotation {
                bbox: AnyBox::Rotated(rb),
                class: ds.class_index(&o.class_name).expect("class registered above"),
                difficult: o.difficult,
                polygons: vec![o.quad],
            });
        }
        ds.images.push(ImageInfo {
            id: id as u64,
            file_name,
            width,
            height,
        });
        ds.annotations.push(anns);
    }
    Ok(ds)
}

/// The label-file text for one image. Annotations with a 4-point polygon
/// write it back verbatim, others write their box corners.
pub fn dota_label_text(ds: &Dataset, image: usize) -> String {
    let mut s = String::new();
    for a in &ds.annotations[image] {
        let quad = match a.polygons.first() {
            Some(p) if p.len() == 4 => p.clone(),
            _ => a.bbox.to_polygon(),
        };
        let coords: Vec<String> = quad.to_flat().iter().map(|v| v.to_string()).collect();
        s.push_str(&format!(
            "{} {} {}\n",
            coords.join(" "),
            ds.class_names[a.class],
            a.difficult as u8
        ));
    }
    s
}

/// Write `labelTxt/<stem>.txt` for every image under `dir`.
pub fn save_dota(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let label_dir = dir.join("labelTxt");
    fs::create_dir_all(&label_dir)?;
    for (i, img) in ds.images.iter().enumerate() {
        let stem = Path::new(&img.file_name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| img.file_name.clone());
        fs::write(label_dir.join(format!("{stem}.txt")), dota_label_text(ds, i))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Patch splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub x0: u32,
    pub y0: u32,
    pub size: u32,
}

impl Window {
    pub fn rect(&self) -> AABox {
        let (x, y, s) = (self.x0 as f64, self.y0 as f64, self.size as f64);
        AABox::new(x, y, x + s, y + s)
    }
}

/// Start offsets along one axis: multiples of `size - overlap`, the last
/// one clamped to `dim - size`.
pub fn window_starts(dim: u32, size: u32, overlap: u32) -> Vec<u32> {
    if dim <= size {
        return vec![0];
    }
    let stride = size - overlap;
    let last = dim - size;
    let mut out = Vec::new();
    let mut s = 0u32;
    loop {
        let c = s.min(last);
        if out.last() != Some(&c) {
            out.push(c);
        }
        if c >= last {
            break;
        }
        s += stride;
    }
    out
}

/// Row-major grid of square windows covering a `w × h` image.
pub fn split_windows(w: u32, h: u32, size: u32, overlap: u32) -> Result<Vec<Window>> {
    if size == 0 || size <= overlap {
        return Err(Error::InvalidInput(format!(
            "patch size {size} must exceed overlap {overlap}"
        )));
    }
    let xs = window_starts(w, size, overlap);
    let ys = window_starts(h, size, overlap);
    Ok(ys
        .iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| Window { x0, y0, size }))
        .collect())
}

/// Annotations visible in a window, in window coordinates. A box survives
/// when at least `min_visibility` of its area lies inside; rotated boxes cut
/// by the border are re-fit to the clipped polygon.
pub fn crop_annotations(anns: &[Annotation], window: &Window, min_visibility: f64) -> Vec<Annotation> {
    let r = window.rect();
    let win_poly = r.to_polygon();
    let mut out = Vec::new();
    for a in anns {
        let area = a.bbox.area();
        let Some((clipped, visible)) = a.bbox.clip_to_window(r.x1, r.y1, r.x2, r.y2) else {
            continue;
        };
        if area <= 0.0 || visible < min_visibility * area {
            continue;
        }
        let polygons = a
            .polygons
            .iter()
            .map(|p| p.clip_convex(&win_poly))
            .filter(|p| p.len() >= 3)
            .map(|p| p.translate(-r.x1, -r.y1))
            .collect();
        out.push(Annotation {
            bbox: clipped.translate(-r.x1, -r.y1),
            class: a.class,
            difficult: a.difficult,
            polygons,
        });
    }
    out
}

/// The window's pixels, padded with [`PAD_VALUE`] past the image border.
pub fn crop_image(img: &RgbImage, window: &Window) -> RgbImage {
    let mut out = RgbImage::from_pixel(window.size, window.size, Rgb([PAD_VALUE; 3]));
    let w = img.width().saturating_sub(window.x0).min(window.size);
    let h = img.height().saturating_sub(window.y0).min(window.size);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x, y, *img.get_pixel(window.x0 + x, window.y0 + y));
        }
    }
    out
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RBox;
    use std::f64::consts::FRAC_PI_4;

    const COCO: &str = r#"{
        "images": [{"id": 7, "file_name": "a.jpg", "width": 100, "height": 80}],
        "annotations": [{"id": 1, "image_id": 7, "category_id": 3, "bbox": [10, 20, 30, 40],
                         "segmentation": [[10, 20, 40, 20, 40, 60]]}],
        "categories": [{"id": 3, "name": "cat"}, {"id": 1, "name": "dog"}]
    }"#;

    #[test]
    fn coco_minimal() {
        let ds = load_coco(COCO.as_bytes()).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.num_annotations(), 1);
        assert_eq!(ds.class_names, vec!["dog", "cat"]);
        let a = &ds.annotations[0][0];
        assert_eq!(a.bbox, AnyBox::Axis(AABox::new(10.0, 20.0, 40.0, 60.0)));
        assert_eq!(a.class, 1);
        assert_eq!(a.polygons[0].len(), 3);
    }

    #[test]
    fn coco_errors() {
        let missing = COCO.replace("\"image_id\": 7", "\"image_id\": 8");
        assert!(matches!(load_coco(missing.as_bytes()), Err(Error::Coco(_))));
        let missing = COCO.replace("\"category_id\": 3", "\"category_id\": 4");
        assert!(matches!(load_coco(missing.as_bytes()), Err(Error::Coco(_))));
        assert!(matches!(load_coco(b"{\"images\": 1}"), Err(Error::Json(_))));
    }

    #[test]
    fn coco_round_trip() {
        let ds = load_coco(COCO.as_bytes()).unwrap();
        let again = load_coco(&save_coco(&ds).unwrap()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn dota_parse() {
        let text = "imagesource:GoogleEarth\ngsd:0.1\n0 0 4 0 4 2 0 2 plane 0\n1 0 2 1 1 2 0 1 ship 1\n";
        let objs = parse_dota_labels(text, Path::new("x.txt")).unwrap();
        assert_eq!(objs.len(), 2);
        let r = objs[0].quad.min_area_rect().unwrap();
        assert!(r.theta.abs() < 1e-12 && (r.w - 4.0).abs() < 1e-12 && (r.h - 2.0).abs() < 1e-12);
        assert!(objs[1].difficult);
        let r = objs[1].quad.min_area_rect().unwrap();
        assert!((r.theta.abs() - FRAC_PI_4).abs() < 1e-12);

        let bad = parse_dota_labels("0 0 4 0 4 two 0 2 plane 0", Path::new("x.txt"));
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
        let bad = parse_dota_labels("\n0 0 4 0 4 2 0 2", Path::new("x.txt"));
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_starts(2048, 1024, 256), vec![0, 768, 1024]);
        assert_eq!(split_windows(2048, 2048, 1024, 256).unwrap().len(), 9);
        assert_eq!(split_windows(500, 300, 1024, 256).unwrap(), vec![Window { x0: 0, y0: 0, size: 1024 }]);
        assert_eq!(window_starts(3000, 1024, 500), vec![0, 524, 1048, 1572, 1976]);
        assert_eq!(window_starts(1024, 1024, 256), vec![0]);
        assert!(split_windows(10, 10, 256, 256).is_err());
    }

    #[test]
    fn crop_examples() {
        let w = Window { x0: 100, y0: 100, size: 100 };
        let inside = Annotation::new(AABox::new(110.0, 120.0, 130.0, 140.0), 0);
        let outside = Annotation::new(AABox::new(0.0, 0.0, 10.0, 10.0), 0);
        let out = crop_annotations(&[inside, outside], &w, 0.4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, AnyBox::Axis(AABox::new(10.0, 20.0, 30.0, 40.0)));

        // rotated box half inside the left border
        let half = Annotation::new(RBox::new(100.0, 150.0, 40.0, 20.0, 0.3), 2);
        let out = crop_annotations(std::slice::from_ref(&half), &w, 0.4);
        assert_eq!(out.len(), 1);
        let rb = out[0].bbox.as_rotated().unwrap();
        assert!(rb.area() < 800.0 && rb.area() > 300.0);
        assert!(rb.cx > 0.0 && rb.cx < 20.0);
        assert!(crop_annotations(&[half], &w, 0.6).is_empty());
    }

    #[test]
    fn crop_image_pads() {
        let img = RgbImage::from_pixel(10, 10, Rgb([1, 2, 3]));
        let out = crop_image(&img, &Window { x0: 5, y0: 0, size: 8 });
        assert_eq!(out.get_pixel(4, 7), &Rgb([1, 2, 3]));
        assert_eq!(out.get_pixel(5, 0), &Rgb([PAD_VALUE; 3]));
    }
}
