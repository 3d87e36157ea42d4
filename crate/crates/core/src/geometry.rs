//! Box representations and overlap metrics.
//!
//! Axis-aligned boxes use continuous pixel coordinates `[x1, y1, x2, y2]`.
//! Rotated boxes follow the long-edge convention: `w >= h` and
//! `theta ∈ [-π/2, π/2)`, measured from the +x axis. Rotated overlap is
//! computed exactly by clipping one rectangle against the four half-planes of
//! the other and taking the shoelace area of the result.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length below which a rotated box is treated as collapsed.
pub const DEGENERATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Common surface of the two box kinds, used wherever the overlap function is
/// selected by box type (assignment, NMS, evaluation).
pub trait BoxGeometry: Copy + Send + Sync + std::fmt::Debug {
    fn iou(&self, other: &Self) -> f64;
    fn center(&self) -> Point;
    fn area(&self) -> f64;
    /// Smallest axis-aligned box containing this one.
    fn bounds(&self) -> AABox;
}

// ---------------------------------------------------------------------------
// Axis-aligned boxes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AABox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl AABox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Validating constructor: coordinates must be finite and ordered.
    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self::new(x1, y1, x2, y2);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidInput(format!(
                "box [{x1}, {y1}, {x2}, {y2}] is not finite and ordered"
            )))
        }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x2 >= self.x1
            && self.y2 >= self.y1
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn intersection_area(&self, other: &AABox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box enclosing both.
    pub fn enclosing(&self, other: &AABox) -> AABox {
        AABox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AABox {
        AABox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, s: f64) -> AABox {
        AABox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// Clamp to the rectangle `[x0, x1] × [y0, y1]`.
    pub fn clip_to(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> AABox {
        AABox::new(
            self.x1.clamp(x0, x1),
            self.y1.clamp(y0, y1),
            self.x2.clamp(x0, x1),
            self.y2.clamp(y0, y1),
        )
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn to_rbox(&self) -> RBox {
        let c = self.center();
        RBox::new(c.x, c.y, self.width(), self.height(), 0.0)
    }

    /// Corners in counter-clockwise order (positive shoelace area).
    pub fn to_polygon(&self) -> Polygon {
        Polygon::new(vec![
            Point::new(self.x1, self.y1),
            Point::new(self.x2, self.y1),
            Point::new(self.x2, self.y2),
            Point::new(self.x1, self.y2),
        ])
    }
}

impl BoxGeometry for AABox {
    fn iou(&self, other: &Self) -> f64 {
        iou_aabb(self, other)
    }
    fn center(&self) -> Point {
        AABox::center(self)
    }
    fn area(&self) -> f64 {
        AABox::area(self)
    }
    fn bounds(&self) -> AABox {
        *self
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou_aabb(a: &AABox, b: &AABox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Generalized IoU: `IoU - (area(enclosure) - area(union)) / area(enclosure)`.
pub fn giou_aabb(a: &AABox, b: &AABox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    let enclosure = a.enclosing(b).area();
    if enclosure <= 0.0 {
        return iou;
    }
    iou - (enclosure - union) / enclosure
}

// ---------------------------------------------------------------------------
// Rotated boxes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RBox {
    /// Raw constructor; see [`RBox::normalized`] for the canonical form.
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { cx, cy, w, h, theta }
    }

    /// Long-edge form: `w >= h`, `theta ∈ [-π/2, π/2)`. Describes the same
    /// rectangle.
    pub fn normalized(&self) -> RBox {
        let (mut w, mut h, mut theta) = (self.w, self.h, self.theta);
        if h > w {
            std::mem::swap(&mut w, &mut h);
            theta += FRAC_PI_2;
        }
        RBox::new(self.cx, self.cy, w, h, wrap_angle(theta))
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w >= DEGENERATE_EPS && self.h >= DEGENERATE_EPS)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn corners(&self) -> Polygon {
        rbox_to_corners(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> RBox {
        RBox::new(self.cx + dx, self.cy + dy, self.w, self.h, self.theta)
    }

    pub fn scale(&self, s: f64) -> RBox {
        RBox::new(self.cx * s, self.cy * s, self.w * s, self.h * s, self.theta)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    fn circumradius(&self) -> f64 {
        0.5 * self.w.hypot(self.h)
    }
}

impl BoxGeometry for RBox {
    fn iou(&self, other: &Self) -> f64 {
        iou_rbox(self, other)
    }
    fn center(&self) -> Point {
        RBox::center(self)
    }
    fn area(&self) -> f64 {
        RBox::area(self)
    }
    fn bounds(&self) -> AABox {
        self.corners().bounds()
    }
}

/// Wrap an angle into `[-π/2, π/2)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can return exactly PI for tiny negative inputs
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

/// The four corners of a rotated box, counter-clockwise.
pub fn rbox_to_corners(b: &RBox) -> Polygon {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    Polygon::new(
        local
            .iter()
            .map(|&(lx, ly)| Point::new(b.cx + lx * c - ly * s, b.cy + lx * s + ly * c))
            .collect(),
    )
}

/// Rotated IoU by convex clipping. Collapsed boxes (a side below
/// [`DEGENERATE_EPS`]) give 0.
pub fn iou_rbox(a: &RBox, b: &RBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    if a.center().distance(&b.center()) > a.circumradius() + b.circumradius() {
        return 0.0;
    }
    // canonical argument order makes the result exactly symmetric
    let (a, b) = if rbox_key_cmp(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let inter = a.corners().clip_convex(&b.corners()).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn rbox_key_cmp(a: &RBox, b: &RBox) -> Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

// ---------------------------------------------------------------------------
// Polygons
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    /// From a flat `[x0, y0, x1, y1, ...]` list (COCO / DOTA layout).
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "polygon coordinate list has odd length {}",
                coords.len()
            )));
        }
        Ok(Self::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        ))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            acc += p.x * q.y - q.x * p.y;
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn to_ccw(mut self) -> Polygon {
        if self.signed_area() < 0.0 {
            self.vertices.reverse();
        }
        self
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon::new(
            self.vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        )
    }

    pub fn bounds(&self) -> AABox {
        let mut b = AABox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            b.x1 = b.x1.min(p.x);
            b.y1 = b.y1.min(p.y);
            b.x2 = b.x2.max(p.x);
            b.y2 = b.y2.max(p.y);
        }
        b
    }

    /// Sutherland–Hodgman clipping of `self` by a convex polygon. Either
    /// orientation of `clip` is accepted.
    pub fn clip_convex(&self, clip: &Polygon) -> Polygon {
        let clip_ccw = clip.clone().to_ccw();
        let m = clip_ccw.vertices.len();
        if m < 3 || self.vertices.len() < 3 {
            return Polygon::default();
        }
        let mut output = self.vertices.clone();
        for i in 0..m {
            if output.is_empty() {
                break;
            }
            let a = clip_ccw.vertices[i];
            let b = clip_ccw.vertices[(i + 1) % m];
            let side = |p: &Point| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            let input = std::mem::take(&mut output);
            let n = input.len();
            for j in 0..n {
                let p = input[(j + n - 1) % n];
                let q = input[j];
                let (dp, dq) = (side(&p), side(&q));
                if dq >= 0.0 {
                    if dp < 0.0 {
                        output.push(segment_point(p, q, dp, dq));
                    }
                    output.push(q);
                } else if dp >= 0.0 {
                    output.push(segment_point(p, q, dp, dq));
                }
            }
        }
        if output.len() < 3 {
            Polygon::default()
        } else {
            Polygon::new(output)
        }
    }

    /// Convex hull (Andrew's monotone chain), counter-clockwise, without
    /// collinear points.
    pub fn convex_hull(&self) -> Polygon {
        let mut pts = self.vertices.clone();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Polygon::new(pts);
        }
        let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
        for &p in &pts {
            while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        let lower_len = hull.len() + 1;
        for &p in pts.iter().rev().skip(1) {
            while hull.len() >= lower_len
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
        Polygon::new(hull)
    }

    /// Minimum-area enclosing rectangle via rotating calipers over the hull
    /// edges, returned in long-edge form. `None` for fewer than 3 distinct
    /// non-collinear points.
    pub fn min_area_rect(&self) -> Option<RBox> {
        let hull = self.convex_hull();
        let n = hull.vertices.len();
        if n < 3 {
            return None;
        }
        let mut best: Option<(f64, RBox)> = None;
        for i in 0..n {
            let a = hull.vertices[i];
            let b = hull.vertices[(i + 1) % n];
            let len = a.distance(&b);
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
            let (mut umin, mut umax, mut vmin, mut vmax) =
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for p in &hull.vertices {
                let u = p.x * ux + p.y * uy;
                let v = -p.x * uy + p.y * ux;
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
            let area = (umax - umin) * (vmax - vmin);
            if best.as_ref().is_none_or(|(a, _)| area < *a) {
                let (uc, vc) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
                let cx = uc * ux - vc * uy;
                let cy = uc * uy + vc * ux;
                let rect = RBox::new(cx, cy, umax - umin, vmax - vmin, uy.atan2(ux));
                best = Some((area, rect.normalized()));
            }
        }
        best.map(|(_, r)| r)
    }

    /// Even-odd point containment.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + n - 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn segment_point(p: Point, q: Point, dp: f64, dq: f64) -> Point {
    let t = dp / (dp - dq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Row-major binary mask. Pixel `(row i, col j)` covers `[j, j+1) × [i, i+1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        crate::error::check_len("mask data", width * height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Rasterize polygons by pixel-center containment (even-odd per polygon,
    /// union across polygons).
    pub fn from_polygons(width: usize, height: usize, polygons: &[Polygon]) -> Self {
        let mut m = Self::new(width, height);
        for poly in polygons.iter().filter(|p| p.len() >= 3) {
            let b = poly.bounds();
            let r0 = b.y1.floor().max(0.0) as usize;
            let r1 = (b.y2.ceil().max(0.0) as usize).min(height);
            let c0 = b.x1.floor().max(0.0) as usize;
            let c1 = (b.x2.ceil().max(0.0) as usize).min(width);
            for i in r0..r1 {
                for j in c0..c1 {
                    if poly.contains(Point::new(j as f64 + 0.5, i as f64 + 0.5)) {
                        m.data[i * width + j] = true;
                    }
                }
            }
        }
        m
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn mass_center(&self) -> Result<Point> {
        mass_center(self)
    }

    /// Tight box around set pixels, `None` if empty.
    pub fn bounding_box(&self) -> Option<AABox> {
        let mut out: Option<AABox> = None;
        for (idx, _) in self.data.iter().enumerate().filter(|(_, &v)| v) {
            let (i, j) = ((idx / self.width) as f64, (idx % self.width) as f64);
            let px = AABox::new(j, i, j + 1.0, i + 1.0);
            out = Some(out.map_or(px, |b| b.enclosing(&px)));
        }
        out
    }
}

/// Mean of set-pixel centers; pixel `(i, j)` contributes `(j + 0.5, i + 0.5)`.
pub fn mass_center(m: &BitMask) -> Result<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for i in 0..m.height {
        let row = &m.data[i * m.width..(i + 1) * m.width];
        for (j, _) in row.iter().enumerate().filter(|(_, &v)| v) {
            sx += j as f64 + 0.5;
            sy += i as f64 + 0.5;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Point::new(sx / n as f64, sy / n as f64))
}

// ---------------------------------------------------------------------------
// Either box kind, for annotations and samples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyBox {
    Axis(AABox),
    Rotated(RBox),
}

impl AnyBox {
    pub fn center(&self) -> Point {
        match self {
            AnyBox::Axis(b) => b.center(),
            AnyBox::Rotated(r) => r.center(),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            AnyBox::Axis(b) => b.area(),
            AnyBox::Rotated(r) => r.area(),
        }
    }

    pub fn to_polygon(&self) -> Polygon {
        match self {
            AnyBox::Axis(b) => b.to_polygon(),
            AnyBox::Rotated(r) => r.corners(),
        }
    }

    pub fn bounds(&self) -> AABox {
        match self {
            AnyBox::Axis(b) => *b,
            AnyBox::Rotated(r) => r.bounds(),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AnyBox {
        match self {
            AnyBox::Axis(b) => AnyBox::Axis(b.translate(dx, dy)),
            AnyBox::Rotated(r) => AnyBox::Rotated(r.translate(dx, dy)),
        }
    }

    pub fn scale(&self, s: f64) -> AnyBox {
        match self {
            AnyBox::Axis(b) => AnyBox::Axis(b.scale(s)),
            AnyBox::Rotated(r) => AnyBox::Rotated(r.scale(s)),
        }
    }

    pub fn as_axis(&self) -> Option<&AABox> {
        match self {
            AnyBox::Axis(b) => Some(b),
            AnyBox::Rotated(_) => None,
        }
    }

    pub fn as_rotated(&self) -> Option<&RBox> {
        match self {
            AnyBox::Rotated(r) => Some(r),
            AnyBox::Axis(_) => None,
        }
    }

    /// Rotated view of either kind (axis boxes become `theta = 0`).
    pub fn to_rbox(&self) -> RBox {
        match self {
            AnyBox::Axis(b) => b.to_rbox(),
            AnyBox::Rotated(r) => *r,
        }
    }

    /// Clip against the axis-aligned window `[x0, x1] × [y0, y1]`.
    ///
    /// Returns the clipped box and the visible area. Axis boxes are clamped;
    /// rotated boxes that lie entirely inside are returned unchanged,
    /// otherwise the clipped polygon is re-fit with its minimum-area
    /// rectangle.
    pub fn clip_to_window(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(AnyBox, f64)> {
        match self {
            AnyBox::Axis(b) => {
                let c = b.clip_to(x0, y0, x1, y1);
                let a = c.area();
                (a > 0.0).then_some((AnyBox::Axis(c), a))
            }
            AnyBox::Rotated(r) => {
                let window = AABox::new(x0, y0, x1, y1);
                let corners = r.corners();
                if corners.vertices.iter().all(|p| window.contains_point(*p)) {
                    return Some((*self, r.area()));
                }
                let clipped = corners.clip_convex(&window.to_polygon());
                let a = clipped.area();
                if a <= 0.0 {
                    return None;
                }
                clipped.min_area_rect().map(|rb| (AnyBox::Rotated(rb), a))
            }
        }
    }
}

/// Two axis boxes use the axis-aligned IoU; any rotated operand promotes
/// both to rotated boxes.
impl BoxGeometry for AnyBox {
    fn iou(&self, other: &Self) -> f64 {
        match (self, other) {
            (AnyBox::Axis(a), AnyBox::Axis(b)) => iou_aabb(a, b),
            _ => iou_rbox(&self.to_rbox(), &other.to_rbox()),
        }
    }
    fn center(&self) -> Point {
        AnyBox::center(self)
    }
    fn area(&self) -> f64 {
        AnyBox::area(self)
    }
    fn bounds(&self) -> AABox {
        AnyBox::bounds(self)
    }
}

impl From<AABox> for AnyBox {
    fn from(b: AABox) -> Self {
        AnyBox::Axis(b)
    }
}

impl From<RBox> for AnyBox {
    fn from(r: RBox) -> Self {
        AnyBox::Rotated(r)
    }
}
