//! Training losses with analytic gradients.
//!
//! The soft classification loss is the quality-focal form
//! `|y - p|^2 * CE(p, y)`; the same function backs the assignment's
//! classification cost so the two never drift apart.

use crate::error::{check_len, Result};
use crate::geometry::{iou_rbox, AABox, RBox};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Smoothing term in the dice denominator.
pub const DICE_EPS: f64 = 1e-5;
/// Floor for areas entering a division in the GIoU loss.
const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    /// Gradient over the loss input parameterization.
    pub grad: Vec<f64>,
}

/// Soft binary cross-entropy `-[y ln p + (1-y) ln(1-p)]`, with `p` clamped
/// into `[PROB_EPS, 1 - PROB_EPS]`.
pub fn soft_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `CE(p, y) * (y - p)^2`.
pub fn quality_focal(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let d = y - pc;
    soft_bce(pc, y) * d * d
}

pub fn soft_cls_loss(p: f64, y_soft: f64) -> LossValueGrad {
    let value = quality_focal(p, y_soft);
    let grad = if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        0.0
    } else {
        let d = y_soft - p;
        let ce = soft_bce(p, y_soft);
        let dce = -y_soft / p + (1.0 - y_soft) / (1.0 - p);
        -2.0 * d * ce + d * d * dce
    };
    LossValueGrad {
        value,
        grad: vec![grad],
    }
}

/// `1 - GIoU(pred, gt)` with the gradient over `(x1, y1, x2, y2)` of `pred`.
///
/// At the kinks (coincident edges) the one-sided derivative that treats the
/// predicted edge as the active one is used.
pub fn giou_loss(pred: &AABox, gt: &AABox) -> LossValueGrad {
    let pw = pred.x2 - pred.x1;
    let ph = pred.y2 - pred.y1;
    let (pw_pos, ph_pos) = (pw > 0.0, ph > 0.0);
    let (pw, ph) = (pw.max(0.0), ph.max(0.0));
    let area_p = pw * ph;
    let area_g = gt.area();

    let ix1 = pred.x1.max(gt.x1);
    let iy1 = pred.y1.max(gt.y1);
    let ix2 = pred.x2.min(gt.x2);
    let iy2 = pred.y2.min(gt.y2);
    let iw_raw = ix2 - ix1;
    let ih_raw = iy2 - iy1;
    let overlap = iw_raw > 0.0 && ih_raw > 0.0;
    let (iw, ih) = if overlap { (iw_raw, ih_raw) } else { (0.0, 0.0) };
    let inter = iw * ih;

    let union = (area_p + area_g - inter).max(AREA_EPS);
    let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
    let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);
    let enclosure = (cw * ch).max(AREA_EPS);

    let giou = inter / union - (enclosure - union) / enclosure;
    let value = 1.0 - giou;

    // d(area_p)/d(x1, y1, x2, y2)
    let da_p = [
        if pw_pos { -ph } else { 0.0 },
        if ph_pos { -pw } else { 0.0 },
        if pw_pos { ph } else { 0.0 },
        if ph_pos { pw } else { 0.0 },
    ];
    // d(inter)/d(coords): only when this coordinate is the active bound
    let di = if overlap {
        [
            if pred.x1 >= gt.x1 { -ih } else { 0.0 },
            if pred.y1 >= gt.y1 { -iw } else { 0.0 },
            if pred.x2 <= gt.x2 { ih } else { 0.0 },
            if pred.y2 <= gt.y2 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let dc = [
        if pred.x1 <= gt.x1 { -ch } else { 0.0 },
        if pred.y1 <= gt.y1 { -cw } else { 0.0 },
        if pred.x2 >= gt.x2 { ch } else { 0.0 },
        if pred.y2 >= gt.y2 { cw } else { 0.0 },
    ];

    let mut grad = vec![0.0; 4];
    for k in 0..4 {
        let du = da_p[k] - di[k];
        // GIoU = I/U - 1 + U/C
        let dg = di[k] / union - inter * du / (union * union) + du / enclosure
            - union * dc[k] / (enclosure * enclosure);
        grad[k] = -dg;
    }
    LossValueGrad { value, grad }
}

/// `1 - IoU` for rotated boxes. Value only.
pub fn riou_loss(pred: &RBox, gt: &RBox) -> f64 {
    1.0 - iou_rbox(pred, gt)
}

/// V-Net dice loss `1 - 2 Σ(p g) / (Σp² + Σg² + eps)` with the gradient over
/// `pred`.
pub fn dice_loss(pred: &[f64], gt: &[bool]) -> Result<LossValueGrad> {
    check_len("dice target", pred.len(), gt.len())?;
    let mut spg = 0.0;
    let mut spp = 0.0;
    let mut sgg = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        let g = if g { 1.0 } else { 0.0 };
        spg += p * g;
        spp += p * p;
        sgg += g * g;
    }
    let denom = spp + sgg + DICE_EPS;
    let value = 1.0 - 2.0 * spg / denom;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let g = if g { 1.0 } else { 0.0 };
            -2.0 * (g * denom - spg * 2.0 * p) / (denom * denom)
        })
        .collect();
    Ok(LossValueGrad { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn soft_cls_examples() {
        let l = soft_cls_loss(0.7, 0.7);
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grad[0], 0.0);

        // CE(0.2, 0.8) = -(0.8 ln 0.2 + 0.2 ln 0.8), times 0.6^2
        let ce = -(0.8 * 0.2f64.ln() + 0.2 * 0.8f64.ln());
        assert!((ce - 1.33217).abs() < 1e-5);
        assert!((soft_cls_loss(0.2, 0.8).value - ce * 0.36).abs() < 1e-12);
        assert!((soft_cls_loss(0.2, 0.8).value - 0.47958).abs() < 1e-5);
    }

    #[test]
    fn soft_cls_grad_matches_fd() {
        let (p, y) = (0.3, 0.9);
        let g = soft_cls_loss(p, y).grad[0];
        let fd = central_diff(|x| quality_focal(x, y), p, 1e-6);
        assert!(((g - fd) / fd).abs() < 1e-5, "{g} vs {fd}");
    }

    #[test]
    fn giou_loss_examples() {
        let b = AABox::new(0.0, 0.0, 1.0, 1.0);
        let l = giou_loss(&b, &b);
        assert!(l.value.abs() < 1e-15);
        let l = giou_loss(&b, &AABox::new(2.0, 2.0, 3.0, 3.0));
        assert!((l.value - (1.0 + 7.0 / 9.0)).abs() < 1e-12);
        assert!(l.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn giou_loss_grad_matches_fd() {
        let pred = AABox::new(0.3, 0.1, 2.2, 1.7);
        let gt = AABox::new(0.9, -0.4, 2.9, 1.3);
        let l = giou_loss(&pred, &gt);
        for k in 0..4 {
            let f = |v: f64| {
                let mut c = pred.to_array();
                c[k] = v;
                giou_loss(&AABox::new(c[0], c[1], c[2], c[3]), &gt).value
            };
            let fd = central_diff(f, pred.to_array()[k], 1e-6);
            assert!((l.grad[k] - fd).abs() / fd.abs().max(1e-8) < 1e-4, "coord {k}");
        }
    }

    #[test]
    fn giou_loss_degenerate_pred_is_finite() {
        let l = giou_loss(&AABox::new(1.0, 1.0, 1.0, 1.0), &AABox::new(0.0, 0.0, 2.0, 2.0));
        assert!(l.value.is_finite());
        assert!(l.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn riou_loss_examples() {
        let r = RBox::new(1.0, 2.0, 3.0, 1.0, 0.3);
        assert!(riou_loss(&r, &r).abs() < 1e-12);
        let a = RBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = RBox::new(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        assert!((riou_loss(&a, &b) - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        let (p, g) = (AABox::new(0.0, 0.0, 2.0, 2.0), AABox::new(1.0, 1.0, 3.0, 3.0));
        let expect = 1.0 - crate::geometry::iou_aabb(&p, &g);
        assert!((riou_loss(&p.to_rbox(), &g.to_rbox()) - expect).abs() < 1e-12);
    }

    #[test]
    fn dice_examples() {
        let gt = [true, false, true];
        let l = dice_loss(&[1.0, 0.0, 1.0], &gt).unwrap();
        assert!(l.value.abs() < 1e-5);
        let l = dice_loss(&[0.0, 1.0, 0.0], &gt).unwrap();
        assert!((l.value - 1.0).abs() < 1e-5);
        let l = dice_loss(&[1.0, 0.0], &[true, true]).unwrap();
        assert!((l.value - 1.0 / 3.0).abs() < 1e-5);
        for k in 0..2 {
            let f = |v: f64| {
                let mut p = [1.0, 0.0];
                p[k] = v;
                dice_loss(&p, &[true, true]).unwrap().value
            };
            let fd = central_diff(f, [1.0, 0.0][k], 1e-6);
            assert!((l.grad[k] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn dice_length_mismatch() {
        assert!(dice_loss(&[0.5], &[true, false]).is_err());
    }
}
