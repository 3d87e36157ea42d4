//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rtmdet::assign::CostMatrix;
use rtmdet::postproc::Detection;
use rtmdet::RBox;

/// All `k`-element index subsets of `0..n`, each ascending.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// `max(1, ⌊max over m-subsets of the IoU sum⌋)`, `m = min(topk, n)`.
pub fn oracle_dynamic_k(iou_row: &[f64], topk: usize) -> usize {
    let m = topk.min(iou_row.len());
    let best = k_subsets(iou_row.len(), m)
        .into_iter()
        .map(|s| {
            let mut v: Vec<f64> = s.iter().map(|&i| iou_row[i]).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v.iter().sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (best.floor() as usize).max(1)
}

/// Exhaustive dynamic-k assignment: every GT claims the `k`-subset of its
/// finite-cost priors with the least total cost (smallest index set on
/// ties); a prior claimed twice goes to the cheaper GT (earlier GT on ties);
/// GTs left empty then take, in GT order, their cheapest prior that is free
/// or held by a GT owning two or more.
pub fn assign_oracle(costs: &CostMatrix) -> Vec<Option<usize>> {
    let n = costs.num_priors;
    let ng = costs.num_gts;
    let mut claims: Vec<Vec<usize>> = Vec::with_capacity(ng);
    for g in 0..ng {
        let row = costs.cost_row(g);
        let finite: Vec<usize> = (0..n).filter(|&i| row[i].is_finite()).collect();
        let k = oracle_dynamic_k(costs.iou_row(g), costs.topk_candidates).min(finite.len());
        let mut best: Option<(f64, Vec<usize>)> = None;
        for s in k_subsets(finite.len(), k) {
            let set: Vec<usize> = s.iter().map(|&j| finite[j]).collect();
            let mut cs: Vec<f64> = set.iter().map(|&i| row[i]).collect();
            cs.sort_by(f64::total_cmp);
            let total: f64 = cs.iter().sum();
            let better = match &best {
                None => true,
                Some((bt, bs)) => total < *bt || (total == *bt && set < *bs),
            };
            if better {
                best = Some((total, set));
            }
        }
        claims.push(best.map(|b| b.1).unwrap_or_default());
    }

    let mut assigned: Vec<Option<usize>> = (0..n)
        .map(|i| {
            (0..ng)
                .filter(|&g| claims[g].contains(&i))
                .min_by(|&a, &b| costs.cost(a, i).total_cmp(&costs.cost(b, i)).then(a.cmp(&b)))
        })
        .collect();

    for g in 0..ng {
        let holds = |a: &[Option<usize>], h: usize| a.iter().filter(|x| **x == Some(h)).count();
        if holds(&assigned, g) > 0 {
            continue;
        }
        let pick = (0..n)
            .filter(|&i| costs.cost(g, i).is_finite())
            .filter(|&i| match assigned[i] {
                None => true,
                Some(h) => holds(&assigned, h) >= 2,
            })
            .min_by(|&a, &b| costs.cost(g, a).total_cmp(&costs.cost(g, b)).then(a.cmp(&b)));
        if let Some(i) = pick {
            assigned[i] = Some(g);
        }
    }
    assigned
}

/// Greedy NMS as a fixed point over the full pairwise IoU matrix: a
/// detection survives iff no surviving higher-ranked detection (same class
/// when `class_aware`) overlaps it above `thr`. Returns survivors by rank.
pub fn nms_reference<B, F>(dets: &[Detection<B>], thr: f64, class_aware: bool, iou: F) -> Vec<usize>
where
    F: Fn(&B, &B) -> f64,
{
    let n = dets.len();
    let ious: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| iou(&dets[i].bbox, &dets[j].bbox)).collect())
        .collect();
    let outranks = |j: usize, i: usize| dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i);
    let mut keep = vec![true; n];
    loop {
        let next: Vec<bool> = (0..n)
            .map(|i| {
                !(0..n).any(|j| {
                    j != i
                        && outranks(j, i)
                        && keep[j]
                        && (!class_aware || dets[j].class == dets[i].class)
                        && ious[j][i] > thr
                })
            })
            .collect();
        if next == keep {
            break;
        }
        keep = next;
    }
    let mut out: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    out.sort_by_key(|&i| (0..n).filter(|&j| j != i && outranks(j, i)).count());
    out
}

pub fn rbox_contains(b: &RBox, x: f64, y: f64) -> bool {
    let (s, c) = b.theta.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    (dx * c + dy * s).abs() <= b.w / 2.0 && (-dx * s + dy * c).abs() <= b.h / 2.0
}

fn rbox_extent(b: &RBox) -> (f64, f64, f64, f64) {
    let (s, c) = b.theta.sin_cos();
    let ex = (b.w / 2.0 * c).abs() + (b.h / 2.0 * s).abs();
    let ey = (b.w / 2.0 * s).abs() + (b.h / 2.0 * c).abs();
    (b.cx - ex, b.cy - ey, b.cx + ex, b.cy + ey)
}

#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub iou: f64,
    /// Binomial standard error of `iou` given the union hits.
    pub sigma: f64,
    pub union_hits: u64,
}

/// Monte Carlo IoU from `grid²` jittered samples over the joint bounding box.
pub fn mc_iou_rbox<R: Rng>(a: &RBox, b: &RBox, grid: usize, rng: &mut R) -> McEstimate {
    let ea = rbox_extent(a);
    let eb = rbox_extent(b);
    let (x0, y0) = (ea.0.min(eb.0), ea.1.min(eb.1));
    let (x1, y1) = (ea.2.max(eb.2), ea.3.max(eb.3));
    let (cw, ch) = ((x1 - x0) / grid as f64, (y1 - y0) / grid as f64);
    let (mut both, mut union) = (0u64, 0u64);
    for i in 0..grid {
        for j in 0..grid {
            let x = x0 + (j as f64 + rng.random::<f64>()) * cw;
            let y = y0 + (i as f64 + rng.random::<f64>()) * ch;
            let (ia, ib) = (rbox_contains(a, x, y), rbox_contains(b, x, y));
            both += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    let iou = if union == 0 { 0.0 } else { both as f64 / union as f64 };
    McEstimate {
        iou,
        sigma: (iou * (1.0 - iou) / union.max(1) as f64).sqrt(),
        union_hits: union,
    }
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// The committed three-image toy evaluation: (classes, per-image GT boxes as
/// `(class, [x1, y1, x2, y2], difficult)`, per-image detections as
/// `(class, box, score)`).
pub struct ToyEval {
    pub gts: Vec<Vec<(usize, [f64; 4], bool)>>,
    pub dets: Vec<Vec<(usize, [f64; 4], f64)>>,
}

pub fn toy_eval() -> ToyEval {
    ToyEval {
        gts: vec![
            vec![(0, [0.0, 0.0, 10.0, 10.0], false), (1, [20.0, 20.0, 30.0, 30.0], false)],
            vec![(0, [0.0, 0.0, 10.0, 10.0], false), (0, [50.0, 50.0, 60.0, 60.0], true)],
            vec![(1, [0.0, 0.0, 10.0, 10.0], false)],
        ],
        dets: vec![
            vec![
                (0, [0.0, 0.0, 10.0, 10.0], 0.9),
                (0, [1.0, 0.0, 11.0, 10.0], 0.7),
                (1, [20.0, 20.0, 26.0, 30.0], 0.5),
            ],
            vec![(0, [50.0, 50.0, 60.0, 60.0], 0.8), (0, [0.0, 0.0, 10.0, 10.0], 0.6)],
            vec![(1, [0.0, 0.0, 10.0, 10.0], 0.95), (1, [40.0, 40.0, 50.0, 50.0], 0.3)],
        ],
    }
}

/// Hand-computed VOC07 table for [`toy_eval`] at IoU 0.5.
///
/// class 0: TP, ignored (difficult), FP (duplicate), TP over 2 GTs; the PR
/// points are (0.5, 1), (0.5, 1/2), (1, 2/3), so six thresholds see 1 and
/// five see 2/3: AP = (6 + 10/3) / 11 = 28/33.
/// class 1: TP, TP, FP over 2 GTs: AP = 1.
pub const TOY_AP: [f64; 2] = [28.0 / 33.0, 1.0];
pub const TOY_MAP: f64 = 61.0 / 66.0;
