//! Dynamic soft label assignment.
//!
//! Every GT–prior pair gets the cost
//! `λ_cls · C_cls + λ_reg · C_reg + λ_center · C_center` where
//!
//! * `C_cls = CE(p, IoU) · (IoU − p)²` uses the pair IoU as a soft label,
//! * `C_reg = −ln IoU`,
//! * `C_center = α^(d − β)` with `d` the prior-to-GT-center distance in
//!   units of the prior's stride.
//!
//! Matching follows the SimOTA dynamic-k rule: GT `g` claims its
//! `k_g = max(1, ⌊Σ top-10 IoUs⌋)` cheapest priors, a prior claimed by
//! several GTs keeps only the cheapest one, and a GT left with nothing takes
//! its cheapest prior that is either free or held by a GT with spare
//! priors. Ties always go to the lower index.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{BitMask, BoxGeometry, Point};
use crate::loss;

/// Clamp applied to IoU before the logarithm.
pub const IOU_EPS: f64 = 1e-7;

/// A head grid point at which one prediction is made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub x: f64,
    pub y: f64,
    pub stride: f64,
}

impl Prior {
    pub const fn new(x: f64, y: f64, stride: f64) -> Self {
        Self { x, y, stride }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Default pyramid strides of the three head levels.
pub const DEFAULT_STRIDES: [u32; 3] = [8, 16, 32];

/// Grid points for every level, level-major then row-major. Points sit at
/// `(j + offset) · stride`.
pub fn grid_priors(width: u32, height: u32, strides: &[u32], offset: f64) -> Vec<Prior> {
    let mut out = Vec::new();
    for &s in strides {
        let fw = width.div_ceil(s);
        let fh = height.div_ceil(s);
        let sf = s as f64;
        for i in 0..fh {
            for j in 0..fw {
                out.push(Prior::new(
                    (j as f64 + offset) * sf,
                    (i as f64 + offset) * sf,
                    sf,
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignerConfig {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_center: f64,
    pub alpha: f64,
    pub beta: f64,
    pub topk_candidates: usize,
}

impl Default for AssignerConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_reg: 3.0,
            lambda_center: 1.0,
            alpha: 10.0,
            beta: 3.0,
            topk_candidates: 10,
        }
    }
}

impl AssignerConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_cls, self.lambda_reg, self.lambda_center];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("cost weights must be finite and >= 0".into()));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) || !self.beta.is_finite() {
            return Err(Error::InvalidInput("alpha must be > 1 and beta finite".into()));
        }
        if self.topk_candidates == 0 {
            return Err(Error::InvalidInput("topk_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// A ground-truth object. When a non-empty mask is present its mass center
/// replaces the box center in the center cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<B> {
    pub bbox: B,
    pub class: usize,
    pub mask: Option<BitMask>,
}

impl<B: BoxGeometry> GroundTruth<B> {
    pub fn new(bbox: B, class: usize) -> Self {
        Self {
            bbox,
            class,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: BitMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn center(&self) -> Point {
        self.mask
            .as_ref()
            .and_then(|m| m.mass_center().ok())
            .unwrap_or_else(|| self.bbox.center())
    }
}

pub fn classification_cost(p: f64, y_soft: f64) -> f64 {
    loss::quality_focal(p, y_soft)
}

pub fn regression_cost(iou: f64) -> f64 {
    -iou.clamp(IOU_EPS, 1.0).ln()
}

pub fn center_cost(prior: &Prior, gt_center: Point, cfg: &AssignerConfig) -> f64 {
    let d = prior.point().distance(&gt_center) / prior.stride;
    cfg.alpha.powf(d - cfg.beta)
}

/// Pairwise costs, rows = GTs, columns = priors, with the IoUs and the three
/// weighted cost terms kept alongside for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub num_gts: usize,
    pub num_priors: usize,
    pub topk_candidates: usize,
    pub cost: Vec<f64>,
    pub iou: Vec<f64>,
    pub cls_cost: Vec<f64>,
    pub reg_cost: Vec<f64>,
    pub center_cost: Vec<f64>,
}

impl CostMatrix {
    pub fn empty(num_priors: usize, topk_candidates: usize) -> Self {
        Self {
            num_gts: 0,
            num_priors,
            topk_candidates,
            cost: Vec::new(),
            iou: Vec::new(),
            cls_cost: Vec::new(),
            reg_cost: Vec::new(),
            center_cost: Vec::new(),
        }
    }

    /// Build from raw total costs and IoUs (component columns left at zero).
    pub fn from_costs(
        num_gts: usize,
        num_priors: usize,
        cost: Vec<f64>,
        iou: Vec<f64>,
        topk_candidates: usize,
    ) -> Result<Self> {
        check_len("cost matrix", num_gts * num_priors, cost.len())?;
        check_len("iou matrix", num_gts * num_priors, iou.len())?;
        let zeros = vec![0.0; cost.len()];
        Ok(Self {
            num_gts,
            num_priors,
            topk_candidates,
            cost,
            iou,
            cls_cost: zeros.clone(),
            reg_cost: zeros.clone(),
            center_cost: zeros,
        })
    }

    pub fn cost(&self, gt: usize, prior: usize) -> f64 {
        self.cost[gt * self.num_priors + prior]
    }

    pub fn iou(&self, gt: usize, prior: usize) -> f64 {
        self.iou[gt * self.num_priors + prior]
    }

    pub fn cost_row(&self, gt: usize) -> &[f64] {
        &self.cost[gt * self.num_priors..(gt + 1) * self.num_priors]
    }

    pub fn iou_row(&self, gt: usize) -> &[f64] {
        &self.iou[gt * self.num_priors..(gt + 1) * self.num_priors]
    }
}

pub fn build_cost_matrix<B: BoxGeometry>(
    priors: &[Prior],
    pred_boxes: &[B],
    pred_scores: &[Vec<f64>],
    gts: &[GroundTruth<B>],
    cfg: &AssignerConfig,
) -> Result<CostMatrix> {
    cfg.validate()?;
    check_len("predicted boxes", priors.len(), pred_boxes.len())?;
    check_len("predicted scores", priors.len(), pred_scores.len())?;
    let n = priors.len();
    if gts.is_empty() {
        return Ok(CostMatrix::empty(n, cfg.topk_candidates));
    }
    for (g, gt) in gts.iter().enumerate() {
        if let Some(row) = pred_scores.iter().find(|s| gt.class >= s.len()) {
            return Err(Error::InvalidInput(format!(
                "GT {g} has class {} but a score vector has only {} classes",
                gt.class,
                row.len()
            )));
        }
    }

    struct Row {
        cost: Vec<f64>,
        iou: Vec<f64>,
        cls: Vec<f64>,
        reg: Vec<f64>,
        ctr: Vec<f64>,
    }
    let rows: Vec<Row> = gts
        .par_iter()
        .map(|gt| {
            let center = gt.center();
            let mut row = Row {
                cost: Vec::with_capacity(n),
                iou: Vec::with_capacity(n),
                cls: Vec::with_capacity(n),
                reg: Vec::with_capacity(n),
                ctr: Vec::with_capacity(n),
            };
            for i in 0..n {
                let iou = pred_boxes[i].iou(&gt.bbox);
                let cls = cfg.lambda_cls * classification_cost(pred_scores[i][gt.class], iou);
                let reg = cfg.lambda_reg * regression_cost(iou);
                let ctr = cfg.lambda_center * center_cost(&priors[i], center, cfg);
                row.cost.push(cls + reg + ctr);
                row.iou.push(iou);
                row.cls.push(cls);
                row.reg.push(reg);
                row.ctr.push(ctr);
            }
            row
        })
        .collect();

    let mut m = CostMatrix::empty(n, cfg.topk_candidates);
    m.num_gts = gts.len();
    for r in rows {
        m.cost.extend(r.cost);
        m.iou.extend(r.iou);
        m.cls_cost.extend(r.cls);
        m.reg_cost.extend(r.reg);
        m.center_cost.extend(r.ctr);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt: usize,
    pub prior: usize,
    pub iou: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResult {
    /// Per prior: matched GT index, `None` for background.
    pub assigned_gt: Vec<Option<usize>>,
    /// Per prior: IoU with its matched GT (the soft target), 0 for background.
    pub soft_labels: Vec<f64>,
    /// Matched pairs in prior order.
    pub pairs: Vec<MatchedPair>,
    /// The dynamic k of every GT.
    pub dynamic_k: Vec<usize>,
}

impl AssignResult {
    pub fn background(num_priors: usize) -> Self {
        Self {
            assigned_gt: vec![None; num_priors],
            soft_labels: vec![0.0; num_priors],
            pairs: Vec::new(),
            dynamic_k: Vec::new(),
        }
    }

    pub fn num_positive(&self) -> usize {
        self.pairs.len()
    }

    pub fn priors_of(&self, gt: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().filter(move |p| p.gt == gt).map(|p| p.prior)
    }
}

/// `max(1, ⌊sum of the top-min(topk, n) IoUs⌋)`.
pub fn dynamic_k(iou_row: &[f64], topk: usize) -> usize {
    let mut sorted: Vec<f64> = iou_row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let take = topk.min(sorted.len());
    let sum: f64 = sorted[..take].iter().sum();
    (sum.floor() as usize).max(1)
}

fn cost_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

pub fn dynamic_k_match(costs: &CostMatrix) -> AssignResult {
    let n = costs.num_priors;
    let mut result = AssignResult::background(n);
    if costs.num_gts == 0 || n == 0 {
        result.dynamic_k = vec![0; costs.num_gts];
        return result;
    }

    // claims: per prior, the cheapest claiming GT so far
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut ks = Vec::with_capacity(costs.num_gts);
    for g in 0..costs.num_gts {
        let row = costs.cost_row(g);
        let mut cand: Vec<(f64, usize)> = row
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_finite())
            .map(|(i, &c)| (c, i))
            .collect();
        let k = dynamic_k(costs.iou_row(g), costs.topk_candidates).min(cand.len());
        ks.push(k);
        if k == 0 {
            continue;
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, |a, b| cost_order(*a, *b));
        }
        for &(c, i) in &cand[..k] {
            let better = match owner[i] {
                None => true,
                // earlier GTs win ties
                Some((oc, _)) => c < oc,
            };
            if better {
                owner[i] = Some((c, g));
            }
        }
    }

    let mut held = vec![0usize; costs.num_gts];
    let mut assigned: Vec<Option<usize>> = owner.iter().map(|o| o.map(|(_, g)| g)).collect();
    for g in assigned.iter().flatten() {
        held[*g] += 1;
    }

    // GTs that lost every claim take their cheapest free or spare prior
    for g in 0..costs.num_gts {
        if held[g] > 0 {
            continue;
        }
        let row = costs.cost_row(g);
        let pick = (0..n)
            .filter(|&i| row[i].is_finite())
            .filter(|&i| assigned[i].is_none_or(|h| held[h] >= 2))
            .min_by(|&a, &b| cost_order((row[a], a), (row[b], b)));
        if let Some(i) = pick {
            if let Some(prev) = assigned[i] {
                held[prev] -= 1;
            }
            assigned[i] = Some(g);
            held[g] += 1;
        }
    }

    for (i, a) in assigned.iter().enumerate() {
        if let Some(g) = *a {
            let iou = costs.iou(g, i);
            result.assigned_gt[i] = Some(g);
            result.soft_labels[i] = iou.clamp(0.0, 1.0);
            result.pairs.push(MatchedPair {
                gt: g,
                prior: i,
                iou,
                cost: costs.cost(g, i),
            });
        }
    }
    result.dynamic_k = ks;
    result
}

/// Cost construction followed by dynamic-k matching.
pub fn assign<B: BoxGeometry>(
    priors: &[Prior],
    pred_boxes: &[B],
    pred_scores: &[Vec<f64>],
    gts: &[GroundTruth<B>],
    cfg: &AssignerConfig,
) -> Result<AssignResult> {
    let costs = build_cost_matrix(priors, pred_boxes, pred_scores, gts, cfg)?;
    Ok(dynamic_k_match(&costs))
}
