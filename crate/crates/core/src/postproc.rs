//! Box decoding, score filtering, NMS and dynamic-conv mask decoding.

use serde::{Deserialize, Serialize};

use crate::archspec::{dynamic_kernel_dims, DEFAULT_KERNEL_CHANNELS};
use crate::assign::Prior;
use crate::dataio::Window;
use crate::error::{check_len, Error, Result};
use crate::geometry::{AABox, AnyBox, BitMask, BoxGeometry, RBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<B> {
    pub bbox: B,
    pub class: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BitMask>,
}

impl<B> Detection<B> {
    pub fn new(bbox: B, class: usize, score: f64) -> Self {
        Self {
            bbox,
            class,
            score,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    pub score_thr: f64,
    pub iou_thr: f64,
    pub max_dets: usize,
    pub class_agnostic: bool,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            score_thr: 0.001,
            iou_thr: 0.65,
            max_dets: 300,
            class_agnostic: false,
        }
    }
}

impl PostprocConfig {
    /// Faster setting used for ablations.
    pub fn ablation() -> Self {
        Self {
            score_thr: 0.05,
            max_dets: 100,
            ..Self::default()
        }
    }
}

/// One prior's raw head output. Regression distances are in stride units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub scores: Vec<f64>,
    pub ltrb: [f64; 4],
    #[serde(default)]
    pub angle: Option<f64>,
    #[serde(default)]
    pub kernel: Option<Vec<f64>>,
}

pub fn decode_dist_point(prior: &Prior, ltrb: [f64; 4]) -> AABox {
    let s = prior.stride;
    AABox::new(
        prior.x - ltrb[0] * s,
        prior.y - ltrb[1] * s,
        prior.x + ltrb[2] * s,
        prior.y + ltrb[3] * s,
    )
}

pub fn encode_dist_point(prior: &Prior, b: &AABox) -> [f64; 4] {
    let s = prior.stride;
    [
        (prior.x - b.x1) / s,
        (prior.y - b.y1) / s,
        (b.x2 - prior.x) / s,
        (b.y2 - prior.y) / s,
    ]
}

/// Distances measured along the box axes rotated by `theta`.
pub fn decode_rbox(prior: &Prior, ltrb: [f64; 4], theta: f64) -> RBox {
    let s = prior.stride;
    let [l, t, r, b] = ltrb;
    let (dx, dy) = ((r - l) * 0.5 * s, (b - t) * 0.5 * s);
    let (sin, cos) = theta.sin_cos();
    RBox::new(
        prior.x + dx * cos - dy * sin,
        prior.y + dx * sin + dy * cos,
        (l + r) * s,
        (t + b) * s,
        theta,
    )
    .normalized()
}

/// Inverse of [`decode_rbox`] for the box's own angle.
pub fn encode_rbox(prior: &Prior, rb: &RBox) -> ([f64; 4], f64) {
    let s = prior.stride;
    let (sin, cos) = rb.theta.sin_cos();
    let (ox, oy) = (rb.cx - prior.x, rb.cy - prior.y);
    let dx = ox * cos + oy * sin;
    let dy = -ox * sin + oy * cos;
    let (hw, hh) = (rb.w * 0.5, rb.h * 0.5);
    (
        [(hw - dx) / s, (hh - dy) / s, (hw + dx) / s, (hh + dy) / s],
        rb.theta,
    )
}

fn score_order<B>(dets: &[Detection<B>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(a.cmp(&b))
    });
    order
}

fn bounds_overlap(a: &AABox, b: &AABox) -> bool {
    a.x1 <= b.x2 && b.x1 <= a.x2 && a.y1 <= b.y2 && b.y1 <= a.y2
}

/// Greedy NMS with a caller-supplied IoU. Returns kept indices in
/// descending score order (ties to the lower index).
pub fn nms_by<B, F>(dets: &[Detection<B>], iou_thr: f64, class_aware: bool, iou_fn: F) -> Vec<usize>
where
    B: BoxGeometry,
    F: Fn(&B, &B) -> f64,
{
    let bounds: Vec<AABox> = dets.iter().map(|d| d.bbox.bounds()).collect();
    // disjoint bounds imply IoU 0, which can only suppress at a negative threshold
    let prefilter = iou_thr >= 0.0;
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let suppressed = kept.iter().any(|&k| {
            (!class_aware || dets[k].class == dets[i].class)
                && (!prefilter || bounds_overlap(&bounds[k], &bounds[i]))
                && iou_fn(&dets[k].bbox, &dets[i].bbox) > iou_thr
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Class-wise greedy NMS using the box kind's IoU.
pub fn nms<B: BoxGeometry>(dets: &[Detection<B>], iou_thr: f64) -> Vec<usize> {
    nms_by(dets, iou_thr, true, B::iou)
}

pub fn nms_class_agnostic<B: BoxGeometry>(dets: &[Detection<B>], iou_thr: f64) -> Vec<usize> {
    nms_by(dets, iou_thr, false, B::iou)
}

/// Drop scores below `score_thr`, then keep the `max_dets` best (stable on
/// ties).
pub fn filter_and_rank<B>(dets: Vec<Detection<B>>, score_thr: f64, max_dets: usize) -> Vec<Detection<B>> {
    let mut kept: Vec<Detection<B>> = dets.into_iter().filter(|d| d.score >= score_thr).collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept.truncate(max_dets);
    kept
}

/// Score filter, NMS, then the top `max_dets`.
pub fn postprocess<B: BoxGeometry>(dets: Vec<Detection<B>>, cfg: &PostprocConfig) -> Vec<Detection<B>> {
    let cand: Vec<Detection<B>> = dets.into_iter().filter(|d| d.score >= cfg.score_thr).collect();
    let keep = nms_by(&cand, cfg.iou_thr, !cfg.class_agnostic, B::iou);
    let mut slots: Vec<Option<Detection<B>>> = cand.into_iter().map(Some).collect();
    keep.into_iter()
        .take(cfg.max_dets)
        .filter_map(|i| slots[i].take())
        .collect()
}

/// Per-class detections from raw outputs: one detection for every class
/// score at or above `score_thr`. Rotated boxes when an angle is present.
pub fn decode_predictions(
    priors: &[Prior],
    preds: &[RawPrediction],
    score_thr: f64,
) -> Result<Vec<Detection<AnyBox>>> {
    check_len("raw predictions", priors.len(), preds.len())?;
    let mut out = Vec::new();
    for (p, raw) in priors.iter().zip(preds) {
        if raw.ltrb.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("regression distances must be finite and >= 0".into()));
        }
        let bbox = match raw.angle {
            Some(theta) => AnyBox::Rotated(decode_rbox(p, raw.ltrb, theta)),
            None => AnyBox::Axis(decode_dist_point(p, raw.ltrb)),
        };
        for (c, &s) in raw.scores.iter().enumerate() {
            if s >= score_thr {
                out.push(Detection::new(bbox, c, s));
            }
        }
    }
    Ok(out)
}

/// Merge per-patch detections of a split image: shift each patch's boxes
/// by its window origin, then run class-wise NMS over the whole image.
/// Survivors come back in descending score order.
pub fn merge_patch_detections(
    patches: &[(Window, Vec<Detection<AnyBox>>)],
    iou_thr: f64,
) -> Vec<Detection<AnyBox>> {
    let all: Vec<Detection<AnyBox>> = patches
        .iter()
        .flat_map(|(w, dets)| {
            dets.iter().map(move |d| Detection {
                bbox: d.bbox.translate(w.x0 as f64, w.y0 as f64),
                class: d.class,
                score: d.score,
                mask: None,
            })
        })
        .collect();
    let keep = nms(&all, iou_thr);
    keep.into_iter().map(|i| all[i].clone()).collect()
}

/// Prototype mask features, channel-major (`C × H × W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFeatures {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Stride of the feature map relative to the image.
    pub stride: f64,
    pub data: Vec<f64>,
}

impl MaskFeatures {
    pub fn new(channels: usize, height: usize, width: usize, stride: f64, data: Vec<f64>) -> Result<Self> {
        check_len("mask features", channels * height * width, data.len())?;
        Ok(Self {
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Pixels with probability `> thr`.
    pub fn binarize(&self, thr: f64) -> BitMask {
        let data = self.data.iter().map(|&v| v > thr).collect();
        BitMask::from_data(self.width, self.height, data).expect("same shape")
    }
}

/// Weights (`out × in`, row-major) and bias of one dynamic 1×1 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct DynConv<'a> {
    pub cin: usize,
    pub cout: usize,
    pub weight: &'a [f64],
    pub bias: &'a [f64],
}

/// Split a kernel vector into its three convs, each laid out as weights then
/// bias.
pub fn split_kernel(kernel: &[f64], mask_ch: usize, coord_ch: usize, hidden: usize) -> Result<[DynConv<'_>; 3]> {
    let (d1, d2, d3) = dynamic_kernel_dims(mask_ch, coord_ch, hidden);
    check_len("dynamic kernel", d1 + d2 + d3, kernel.len())?;
    let cin = mask_ch + coord_ch;
    let (k1, rest) = kernel.split_at(d1);
    let (k2, k3) = rest.split_at(d2);
    fn layer(k: &[f64], cin: usize, cout: usize) -> DynConv<'_> {
        let (weight, bias) = k.split_at(cin * cout);
        DynConv { cin, cout, weight, bias }
    }
    Ok([layer(k1, cin, hidden), layer(k2, hidden, hidden), layer(k3, hidden, 1)])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Apply the instance's dynamic convs to the mask features. Inputs per pixel
/// are the two relative coordinates followed by the feature channels.
pub fn decode_mask(kernel: &[f64], feats: &MaskFeatures, prior: &Prior) -> Result<SoftMask> {
    let (mask_ch, coord_ch, hidden) = DEFAULT_KERNEL_CHANNELS;
    if feats.channels != mask_ch {
        return Err(Error::InvalidInput(format!(
            "expected {mask_ch} mask feature channels, got {}",
            feats.channels
        )));
    }
    let convs = split_kernel(kernel, mask_ch, coord_ch, hidden)?;
    let (h, w) = (feats.height, feats.width);
    let norm_x = feats.stride * w as f64;
    let norm_y = feats.stride * h as f64;
    let mut data = Vec::with_capacity(h * w);
    let mut x = vec![0.0; mask_ch + coord_ch];
    let mut a = vec![0.0; hidden];
    let mut b = vec![0.0; hidden];
    for i in 0..h {
        for j in 0..w {
            x[0] = (j as f64 * feats.stride - prior.x) / norm_x;
            x[1] = (i as f64 * feats.stride - prior.y) / norm_y;
            for c in 0..mask_ch {
                x[coord_ch + c] = feats.get(c, i, j);
            }
            apply(&convs[0], &x, &mut a);
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            apply(&convs[1], &a, &mut b);
            b.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut o = [0.0];
            apply(&convs[2], &b, &mut o);
            data.push(sigmoid(o[0]));
        }
    }
    Ok(SoftMask {
        width: w,
        height: h,
        data,
    })
}

fn apply(conv: &DynConv<'_>, input: &[f64], out: &mut [f64]) {
    for (o, slot) in out.iter_mut().enumerate().take(conv.cout) {
        let row = &conv.weight[o * conv.cin..(o + 1) * conv.cin];
        *slot = conv.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}
