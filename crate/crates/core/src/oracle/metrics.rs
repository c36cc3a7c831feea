//! Exhaustive evaluations of the assignment problem and the tracking
//! metrics, for instances small enough to enumerate.
//!
//! Nothing here is incremental: every score is recomputed from its
//! definition over explicit lists of detections and matches.

use std::collections::{BTreeMap, BTreeSet};

use crate::metrics::tie_tolerance;
use crate::mot_io::{BoundingBox, TrackSet};

/// Best partial injection of rows into columns: most allowed (finite)
/// pairs, then least cost, then lexicographically smallest row vector with
/// "unassigned" after every column.
pub fn assignment(cost: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    let mut search = Search {
        cost,
        used: vec![false; m],
        current: vec![None; n],
        best: (0, f64::INFINITY),
        accept: None,
        found: None,
    };
    search.run(0, 0, 0.0);
    let (size, min) = search.best;
    // Candidates are visited in increasing lexicographic order, so the first
    // optimal one is the answer.
    search.accept = Some((size, min + tie_tolerance(cost)));
    search.run(0, 0, 0.0);
    let rows = search.found.unwrap_or_else(|| vec![None; n]);
    let total = rows
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost[i][c]))
        .fold(0.0, |a, b| a + b);
    (rows, total)
}

/// Smallest total over maximum-cardinality injections, summed in row order.
/// No tolerance is involved: this is the plain enumeration minimum.
pub fn min_cost(cost: &[Vec<f64>]) -> f64 {
    let mut search = Search {
        cost,
        used: vec![false; cost.first().map_or(0, Vec::len)],
        current: vec![None; cost.len()],
        best: (0, f64::INFINITY),
        accept: None,
        found: None,
    };
    search.run(0, 0, 0.0);
    search.best.1
}

struct Search<'a> {
    cost: &'a [Vec<f64>],
    used: Vec<bool>,
    current: Vec<Option<usize>>,
    best: (usize, f64),
    accept: Option<(usize, f64)>,
    found: Option<Vec<Option<usize>>>,
}

impl Search<'_> {
    fn run(&mut self, row: usize, size: usize, total: f64) {
        if self.found.is_some() {
            return;
        }
        if row == self.cost.len() {
            match self.accept {
                None => {
                    if size > self.best.0 || (size == self.best.0 && total < self.best.1) {
                        self.best = (size, total);
                    }
                }
                Some((want, limit)) => {
                    if size == want && total <= limit {
                        self.found = Some(self.current.clone());
                    }
                }
            }
            return;
        }
        for j in 0..self.used.len() {
            if !self.used[j] && self.cost[row][j].is_finite() {
                self.used[j] = true;
                self.current[row] = Some(j);
                self.run(row + 1, size + 1, total + self.cost[row][j]);
                self.used[j] = false;
            }
        }
        self.current[row] = None;
        self.run(row + 1, size, total);
    }
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.left + a.width).min(b.left + b.width) - a.left.max(b.left);
    let iy = (a.top + a.height).min(b.top + b.height) - a.top.max(b.top);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.width * a.height + b.width * b.height - inter)
}

struct Frame {
    gt: Vec<(i64, BoundingBox)>,
    pred: Vec<(i64, BoundingBox)>,
}

impl Frame {
    fn sim(&self, g: usize, p: usize) -> f64 {
        overlap(&self.gt[g].1, &self.pred[p].1)
    }
}

fn frames(gt: &TrackSet, pred: &TrackSet) -> Vec<Frame> {
    let keys: BTreeSet<i64> = gt
        .tracks
        .values()
        .chain(pred.tracks.values())
        .flat_map(|t| t.keys().copied())
        .collect();
    let at = |ts: &TrackSet, f: i64| -> Vec<(i64, BoundingBox)> {
        ts.tracks.iter().filter_map(|(id, t)| t.get(&f).map(|(b, _)| (*id, *b))).collect()
    };
    keys.into_iter()
        .map(|f| Frame {
            gt: at(gt, f),
            pred: at(pred, f),
        })
        .collect()
}

/// `(hota, deta, assa)` as fractions, averaged over the 19 thresholds.
pub fn hota(gt: &TrackSet, pred: &TrackSet) -> (f64, f64, f64) {
    let frames = frames(gt, pred);
    let gt_len = |id: i64| frames.iter().filter(|f| f.gt.iter().any(|d| d.0 == id)).count() as f64;
    let pred_len = |id: i64| frames.iter().filter(|f| f.pred.iter().any(|d| d.0 == id)).count() as f64;

    // Soft co-occurrence of each identity pair, normalised within frames.
    let mut alignment: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for &g in gt.tracks.keys() {
        for &p in pred.tracks.keys() {
            let mut potential = 0.0;
            for f in &frames {
                let (Some(gi), Some(pi)) = (f.gt.iter().position(|d| d.0 == g), f.pred.iter().position(|d| d.0 == p))
                else {
                    continue;
                };
                let row: f64 = (0..f.pred.len()).map(|j| f.sim(gi, j)).sum();
                let col: f64 = (0..f.gt.len()).map(|i| f.sim(i, pi)).sum();
                let s = f.sim(gi, pi);
                let denom = row + col - s;
                if denom > f64::EPSILON {
                    potential += s / denom;
                }
            }
            alignment.insert((g, p), potential / (gt_len(g) + pred_len(p) - potential));
        }
    }

    let assignments: Vec<Vec<(usize, usize)>> = frames
        .iter()
        .map(|f| {
            if f.gt.is_empty() || f.pred.is_empty() {
                return Vec::new();
            }
            let cost: Vec<Vec<f64>> = (0..f.gt.len())
                .map(|i| (0..f.pred.len()).map(|j| -(alignment[&(f.gt[i].0, f.pred[j].0)] * f.sim(i, j))).collect())
                .collect();
            let (rows, _) = assignment(&cost);
            rows.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c))).collect()
        })
        .collect();

    let total_gt: usize = frames.iter().map(|f| f.gt.len()).sum();
    let total_pred: usize = frames.iter().map(|f| f.pred.len()).sum();
    let (mut h, mut d, mut a) = (0.0, 0.0, 0.0);
    for step in 1..=19 {
        let alpha = step as f64 / 20.0;
        let tps: Vec<(i64, i64)> = frames
            .iter()
            .zip(&assignments)
            .flat_map(|(f, pairs)| {
                pairs
                    .iter()
                    .filter(|&&(i, j)| f.sim(i, j) >= alpha - f64::EPSILON)
                    .map(|&(i, j)| (f.gt[i].0, f.pred[j].0))
                    .collect::<Vec<_>>()
            })
            .collect();
        let tp = tps.len() as f64;
        let fn_ = total_gt as f64 - tp;
        let fp = total_pred as f64 - tp;
        let deta = if tp + fn_ + fp > 0.0 { tp / (tp + fn_ + fp) } else { 0.0 };
        let assa = if tps.is_empty() {
            0.0
        } else {
            tps.iter()
                .map(|&(g, p)| {
                    let tpa = tps.iter().filter(|&&c| c == (g, p)).count() as f64;
                    let fna = gt_len(g) - tpa;
                    let fpa = pred_len(p) - tpa;
                    tpa / (tpa + fna + fpa)
                })
                .sum::<f64>()
                / tp
        };
        h += (deta * assa).sqrt();
        d += deta;
        a += assa;
    }
    (h / 19.0, d / 19.0, a / 19.0)
}

/// CLEAR accuracy as a fraction, with the given IoU threshold.
pub fn mota(gt: &TrackSet, pred: &TrackSet, threshold: f64) -> f64 {
    let frames = frames(gt, pred);
    let (mut misses, mut false_pos, mut switches, mut objects) = (0usize, 0usize, 0usize, 0usize);
    let mut previous: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last_ever: BTreeMap<i64, i64> = BTreeMap::new();
    for f in &frames {
        objects += f.gt.len();
        if f.gt.is_empty() || f.pred.is_empty() {
            misses += f.gt.len();
            false_pos += f.pred.len();
            continue;
        }
        let score = |i: usize, j: usize| {
            let s = f.sim(i, j);
            if s < threshold - f64::EPSILON {
                0.0
            } else if previous.get(&f.gt[i].0) == Some(&f.pred[j].0) {
                1000.0 + s
            } else {
                s
            }
        };
        let cost: Vec<Vec<f64>> =
            (0..f.gt.len()).map(|i| (0..f.pred.len()).map(|j| -score(i, j)).collect()).collect();
        let (rows, _) = assignment(&cost);
        let matches: Vec<(i64, i64)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.filter(|&j| score(i, j) > f64::EPSILON).map(|j| (f.gt[i].0, f.pred[j].0)))
            .collect();
        previous.clear();
        for &(g, p) in &matches {
            if last_ever.get(&g).is_some_and(|&q| q != p) {
                switches += 1;
            }
            last_ever.insert(g, p);
            previous.insert(g, p);
        }
        misses += f.gt.len() - matches.len();
        false_pos += f.pred.len() - matches.len();
    }
    1.0 - (misses + false_pos + switches) as f64 / objects as f64
}

/// Identity F1 as a fraction: best identity bijection by exhaustive search.
pub fn idf1(gt: &TrackSet, pred: &TrackSet, threshold: f64) -> f64 {
    let frames = frames(gt, pred);
    let gids: Vec<i64> = gt.tracks.keys().copied().collect();
    let pids: Vec<i64> = pred.tracks.keys().copied().collect();
    let shared = |g: i64, p: i64| -> f64 {
        frames
            .iter()
            .filter(|f| {
                let a = f.gt.iter().find(|d| d.0 == g);
                let b = f.pred.iter().find(|d| d.0 == p);
                matches!((a, b), (Some(a), Some(b)) if overlap(&a.1, &b.1) >= threshold - f64::EPSILON)
            })
            .count() as f64
    };
    let cost: Vec<Vec<f64>> = gids.iter().map(|&g| pids.iter().map(|&p| -shared(g, p)).collect()).collect();
    let idtp = if gids.is_empty() || pids.is_empty() { 0.0 } else { -min_cost(&cost) };
    let total_gt: f64 = frames.iter().map(|f| f.gt.len() as f64).sum();
    let total_pred: f64 = frames.iter().map(|f| f.pred.len() as f64).sum();
    2.0 * idtp / (total_gt + total_pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_examples() {
        assert_eq!(assignment(&[vec![1.0, 2.0], vec![3.0, 0.0]]), (vec![Some(0), Some(1)], 1.0));
        let inf = f64::INFINITY;
        assert_eq!(assignment(&[vec![0.0, 50.0], vec![1.0, inf]]), (vec![Some(1), Some(0)], 51.0));
        assert_eq!(assignment(&[vec![1.0, 1.0], vec![1.0, 1.0]]).0, vec![Some(0), Some(1)]);
    }

    #[test]
    fn overlap_examples() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0).unwrap();
        assert!((overlap(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }
}
