//! AP₃D / AR₃D over IoU thresholds and the relative-layout variant with a
//! fitted global scale.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::iou::iou3d;
use super::MetricsError;
use crate::geometry::Box3D;

/// Recall sample points of the interpolated precision curve.
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub category: String,
    pub score: f64,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box3D,
    pub category: String,
    pub image_id: String,
    pub ignore: bool,
}

/// IoU thresholds 0.05, 0.10, …, 0.50.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|i| (i * 5) as f64 / 100.0).collect()
}

/// Parses `start:step:end` (inclusive) into thresholds rounded to 1e-9.
pub fn parse_thresholds(text: &str) -> Result<Vec<f64>, MetricsError> {
    let bad = || MetricsError::InvalidThresholds(text.to_string());
    let parts: Vec<f64> = text.split(':').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let [start, step, end] = parts[..] else { return Err(bad()) };
    if !(step > 0.0 && start > 0.0 && end >= start && end <= 1.0) {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub ap: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub ap: f64,
    pub ar: f64,
    pub per_threshold: Vec<ThresholdResult>,
}

/// All values are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ar: f64,
    pub per_category: BTreeMap<String, CategoryResult>,
    /// Category-mean AP/AR at each threshold.
    pub per_threshold: Vec<ThresholdResult>,
    /// No detections or no (non-ignored) ground truth.
    pub empty: bool,
}

impl EvalResult {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold.iter().find(|t| (t.threshold - threshold).abs() < 1e-9).map(|t| t.ap)
    }

    fn empty(thresholds: &[f64]) -> Self {
        Self {
            ap: 0.0,
            ar: 0.0,
            per_category: BTreeMap::new(),
            per_threshold: thresholds.iter().map(|&threshold| ThresholdResult { threshold, ap: 0.0, ar: 0.0 }).collect(),
            empty: true,
        }
    }
}

/// Outcome of greedy matching for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched an ignored ground truth; excluded from the curve.
    Ignored,
}

/// Detections of one category in one image with their IoU against every
/// ground truth of that category in that image.
struct ImageBlock {
    det_idx: Vec<usize>,
    gt_ignore: Vec<bool>,
    ious: Vec<Vec<f64>>,
}

/// Greedy matching at `threshold` for detections already sorted by
/// descending score. Non-ignored ground truths are preferred; ignored ones
/// may absorb any number of detections.
pub fn greedy_match(ious: &[Vec<f64>], gt_ignore: &[bool], threshold: f64) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gt_ignore.len()];
    ious.iter()
        .map(|row| {
            let best = |want_ignored: bool, taken: &[bool]| {
                row.iter().enumerate().filter(|&(g, &v)| gt_ignore[g] == want_ignored && !taken[g] && v >= threshold).fold(
                    None,
                    |acc: Option<(usize, f64)>, (g, &v)| match acc {
                        Some((_, bv)) if bv >= v => acc,
                        _ => Some((g, v)),
                    },
                )
            };
            if let Some((g, _)) = best(false, &taken) {
                taken[g] = true;
                MatchOutcome::TruePositive
            } else if best(true, &vec![false; gt_ignore.len()]).is_some() {
                MatchOutcome::Ignored
            } else {
                MatchOutcome::FalsePositive
            }
        })
        .collect()
}

/// Interpolated AP (fraction) and final recall from ranked outcomes.
pub fn ap_from_outcomes(outcomes: &[MatchOutcome], n_gt: usize) -> (f64, f64) {
    if n_gt == 0 {
        return (0.0, 0.0);
    }
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in outcomes {
        match o {
            MatchOutcome::TruePositive => tp += 1,
            MatchOutcome::FalsePositive => fp += 1,
            MatchOutcome::Ignored => continue,
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let target = r as f64 / (RECALL_POINTS - 1) as f64;
        let i = recall.partition_point(|&x| x < target);
        if i < precision.len() {
            sum += precision[i];
        }
    }
    (sum / RECALL_POINTS as f64, recall.last().copied().unwrap_or(0.0))
}

/// COCO-style AP₃D / AR₃D averaged over `thresholds` and categories.
pub fn evaluate_ap(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> EvalResult {
    let n_valid_gt = gts.iter().filter(|g| !g.ignore).count();
    if dets.is_empty() || n_valid_gt == 0 || thresholds.is_empty() {
        return EvalResult::empty(thresholds);
    }
    let categories: BTreeSet<&str> = gts.iter().filter(|g| !g.ignore).map(|g| g.category.as_str()).collect();

    let per_category: BTreeMap<String, CategoryResult> = categories
        .into_par_iter()
        .map(|cat| {
            let mut cat_dets: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].category == cat).collect();
            cat_dets.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
            let rank: HashMap<usize, usize> = cat_dets.iter().enumerate().map(|(r, &i)| (i, r)).collect();
            let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
            for &i in &cat_dets {
                by_image.entry(dets[i].image_id.as_str()).or_default().0.push(i);
            }
            for (j, g) in gts.iter().enumerate().filter(|(_, g)| g.category == cat) {
                by_image.entry(g.image_id.as_str()).or_default().1.push(j);
            }
            let n_gt = gts.iter().filter(|g| g.category == cat && !g.ignore).count();
            let blocks: Vec<ImageBlock> = by_image
                .into_values()
                .map(|(d, g)| ImageBlock {
                    ious: d.iter().map(|&i| g.iter().map(|&j| iou3d(&dets[i].bbox, &gts[j].bbox)).collect()).collect(),
                    gt_ignore: g.iter().map(|&j| gts[j].ignore).collect(),
                    det_idx: d,
                })
                .collect();

            let per_threshold: Vec<ThresholdResult> = thresholds
                .iter()
                .map(|&t| {
                    let mut outcomes = vec![MatchOutcome::FalsePositive; cat_dets.len()];
                    for b in &blocks {
                        for (k, o) in greedy_match(&b.ious, &b.gt_ignore, t).into_iter().enumerate() {
                            outcomes[rank[&b.det_idx[k]]] = o;
                        }
                    }
                    let (ap, ar) = ap_from_outcomes(&outcomes, n_gt);
                    ThresholdResult { threshold: t, ap: 100.0 * ap, ar: 100.0 * ar }
                })
                .collect();
            let n = per_threshold.len() as f64;
            let ap = per_threshold.iter().map(|t| t.ap).sum::<f64>() / n;
            let ar = per_threshold.iter().map(|t| t.ar).sum::<f64>() / n;
            (cat.to_string(), CategoryResult { ap, ar, per_threshold })
        })
        .collect();

    let n_cat = per_category.len() as f64;
    let per_threshold = thresholds
        .iter()
        .enumerate()
        .map(|(k, &threshold)| ThresholdResult {
            threshold,
            ap: per_category.values().map(|c| c.per_threshold[k].ap).sum::<f64>() / n_cat,
            ar: per_category.values().map(|c| c.per_threshold[k].ar).sum::<f64>() / n_cat,
        })
        .collect();
    EvalResult {
        ap: per_category.values().map(|c| c.ap).sum::<f64>() / n_cat,
        ar: per_category.values().map(|c| c.ar).sum::<f64>() / n_cat,
        per_category,
        per_threshold,
        empty: false,
    }
}

/// Log-uniform scale grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub n_points: usize,
}

impl Default for ScaleGrid {
    fn default() -> Self {
        Self { s_min: 0.1, s_max: 10.0, n_points: 201 }
    }
}

impl ScaleGrid {
    pub fn points(&self) -> Result<Vec<f64>, MetricsError> {
        if !(self.s_min > 0.0 && self.s_max >= self.s_min && self.s_max.is_finite() && self.n_points >= 1) {
            return Err(MetricsError::InvalidGrid(*self));
        }
        if self.n_points == 1 {
            return Ok(vec![self.s_min]);
        }
        let ratio = self.s_max / self.s_min;
        let last = self.n_points - 1;
        Ok((0..self.n_points).map(|i| if i == last { self.s_max } else { self.s_min * ratio.powf(i as f64 / last as f64) }).collect())
    }

    /// Parses `s_min:s_max:n_points`.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let bad = || MetricsError::InvalidThresholds(format!("scale grid {text:?}"));
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let [lo, hi, n] = parts[..] else { return Err(bad()) };
        let grid = Self { s_min: lo.parse().map_err(|_| bad())?, s_max: hi.parse().map_err(|_| bad())?, n_points: n.parse().map_err(|_| bad())? };
        grid.points()?;
        Ok(grid)
    }

    /// Multiplicative spacing between neighbouring grid points.
    pub fn step_ratio(&self) -> f64 {
        if self.n_points < 2 {
            return 1.0;
        }
        (self.s_max / self.s_min).powf(1.0 / (self.n_points - 1) as f64)
    }
}

/// `argmax_s mean IoU(scale(pred, s), gt)` over the grid; ties keep the smaller `s`.
pub fn fit_global_scale(pairs: &[(Box3D, Box3D)], grid: &ScaleGrid) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let points = grid.points()?;
    let scores: Vec<f64> = points.par_iter().map(|&s| pairs.iter().map(|(p, g)| iou3d(&p.scaled(s), g)).sum::<f64>() / pairs.len() as f64).collect();
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(points[best])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEvalResult {
    pub scale: f64,
    pub n_pairs: usize,
    pub result: EvalResult,
}

/// Greedy one-to-one pairing on `‖c_det − c_gt‖ / diag(gt)` within each
/// image and category, with detections pre-scaled by `s`.
fn pair_by_center(dets: &[Detection], gts: &[GroundTruth], s: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            if !g.ignore && d.image_id == g.image_id && d.category == g.category {
                cand.push(((d.bbox.center * s - g.bbox.center).norm() / g.bbox.diagonal(), i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !used_d[i] && !used_g[j] {
            used_d[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Relative-layout AP: pair, fit one global scale over all pairs, rescale
/// every detection, then [`evaluate_ap`].
///
/// Pairing runs on detections pre-scaled by the ratio of summed centre
/// distances to the camera, then repeats at the fitted scale until the
/// pairing is stable, so the result does not depend on the detections'
/// global scale.
pub fn evaluate_relative(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64], grid: &ScaleGrid) -> Result<RelativeEvalResult, MetricsError> {
    grid.points()?;
    let det_norm: f64 = dets.iter().map(|d| d.bbox.center.norm()).sum();
    let gt_norm: f64 = gts.iter().filter(|g| !g.ignore).map(|g| g.bbox.center.norm()).sum();
    let mut pre = if det_norm > 0.0 && gt_norm > 0.0 { gt_norm / det_norm } else { 1.0 };
    let mut pairs = pair_by_center(dets, gts, pre);
    if pairs.is_empty() {
        return Ok(RelativeEvalResult { scale: 1.0, n_pairs: 0, result: evaluate_ap(dets, gts, thresholds) });
    }
    let mut scale = 1.0;
    for _ in 0..5 {
        let boxes: Vec<(Box3D, Box3D)> = pairs.iter().map(|&(i, j)| (dets[i].bbox, gts[j].bbox)).collect();
        scale = fit_global_scale(&boxes, grid)?;
        if scale == pre {
            break;
        }
        let next = pair_by_center(dets, gts, scale);
        pre = scale;
        if next == pairs {
            break;
        }
        pairs = next;
    }
    let scaled: Vec<Detection> = dets.iter().map(|d| Detection { bbox: d.bbox.scaled(scale), ..d.clone() }).collect();
    Ok(RelativeEvalResult { scale, n_pairs: pairs.len(), result: evaluate_ap(&scaled, gts, thresholds) })
}
