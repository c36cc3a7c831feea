use serde::{Deserialize, Serialize};

use super::{frame_data, hungarian, id_index, FrameData, MetricsError};
use crate::mot_io::TrackSet;

pub const ALPHA_STEPS: usize = 19;

/// Localisation thresholds `0.05, 0.10, ..., 0.95`.
pub fn alpha_grid() -> [f64; ALPHA_STEPS] {
    std::array::from_fn(|i| (i + 1) as f64 / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotaPoint {
    pub alpha: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
}

/// Fractions in `[0, 1]`; the headline values are means over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HotaScores {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub curve: Vec<HotaPoint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatches {
    pub frame: i64,
    /// `(gt id, pred id, IoU)`.
    pub matched: Vec<(i64, i64, f64)>,
    pub unmatched_gt: Vec<i64>,
    pub unmatched_pred: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub frames: Vec<FrameMatches>,
}

impl MatchResult {
    pub fn matched_count(&self) -> usize {
        self.frames.iter().map(|f| f.matched.len()).sum()
    }
}

/// Alignment-weighted per-frame assignment shared by every threshold.
struct Matching {
    /// Per frame, `(gt index, pred index)` pairs within that frame's lists.
    pairs: Vec<Vec<(usize, usize)>>,
    gt_count: Vec<f64>,
    pred_count: Vec<f64>,
    gt_index: std::collections::BTreeMap<i64, usize>,
    pred_index: std::collections::BTreeMap<i64, usize>,
}

fn jaccard_overlap(sim: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..sim.first().map_or(0, Vec::len))
        .map(|j| sim.iter().map(|r| r[j]).sum())
        .collect();
    sim.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, s)| {
                    let denom = rows[i] + cols[j] - s;
                    if denom > f64::EPSILON {
                        s / denom
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn build_matching(frames: &[FrameData]) -> Matching {
    let gt_index = id_index(frames.iter().flat_map(|f| f.gt_ids.iter().copied()));
    let pred_index = id_index(frames.iter().flat_map(|f| f.pred_ids.iter().copied()));
    let (g, p) = (gt_index.len(), pred_index.len());
    let mut potential = vec![vec![0.0; p]; g];
    let mut gt_count = vec![0.0; g];
    let mut pred_count = vec![0.0; p];
    for f in frames {
        let overlap = jaccard_overlap(&f.sim);
        let gi: Vec<usize> = f.gt_ids.iter().map(|id| gt_index[id]).collect();
        let pi: Vec<usize> = f.pred_ids.iter().map(|id| pred_index[id]).collect();
        for (r, &a) in gi.iter().enumerate() {
            for (c, &b) in pi.iter().enumerate() {
                potential[a][b] += overlap[r][c];
            }
        }
        gi.iter().for_each(|&a| gt_count[a] += 1.0);
        pi.iter().for_each(|&b| pred_count[b] += 1.0);
    }
    let align: Vec<Vec<f64>> = (0..g)
        .map(|a| (0..p).map(|b| potential[a][b] / (gt_count[a] + pred_count[b] - potential[a][b])).collect())
        .collect();

    let pairs = frames
        .iter()
        .map(|f| {
            if f.gt_ids.is_empty() || f.pred_ids.is_empty() {
                return Vec::new();
            }
            let cost: Vec<Vec<f64>> = f
                .gt_ids
                .iter()
                .enumerate()
                .map(|(r, gid)| {
                    f.pred_ids
                        .iter()
                        .enumerate()
                        .map(|(c, pid)| -(align[gt_index[gid]][pred_index[pid]] * f.sim[r][c]))
                        .collect()
                })
                .collect();
            hungarian(&cost).pairs().collect()
        })
        .collect();
    Matching {
        pairs,
        gt_count,
        pred_count,
        gt_index,
        pred_index,
    }
}

fn matched_at(sim: f64, alpha: f64) -> bool {
    sim >= alpha - f64::EPSILON
}

/// Per-frame matches at one threshold, from the same assignment HOTA uses.
pub fn match_frames(gt: &TrackSet, pred: &TrackSet, alpha: f64) -> MatchResult {
    let frames = frame_data(gt, pred);
    let m = build_matching(&frames);
    MatchResult {
        frames: frames
            .iter()
            .zip(&m.pairs)
            .map(|(f, pairs)| {
                let kept: Vec<(usize, usize)> =
                    pairs.iter().copied().filter(|&(r, c)| matched_at(f.sim[r][c], alpha)).collect();
                FrameMatches {
                    frame: f.frame,
                    matched: kept.iter().map(|&(r, c)| (f.gt_ids[r], f.pred_ids[c], f.sim[r][c])).collect(),
                    unmatched_gt: (0..f.gt_ids.len())
                        .filter(|r| !kept.iter().any(|k| k.0 == *r))
                        .map(|r| f.gt_ids[r])
                        .collect(),
                    unmatched_pred: (0..f.pred_ids.len())
                        .filter(|c| !kept.iter().any(|k| k.1 == *c))
                        .map(|c| f.pred_ids[c])
                        .collect(),
                }
            })
            .collect(),
    }
}

pub fn hota(gt: &TrackSet, pred: &TrackSet) -> Result<HotaScores, MetricsError> {
    hota_frames(&frame_data(gt, pred))
}

pub(crate) fn hota_frames(frames: &[FrameData]) -> Result<HotaScores, MetricsError> {
    if frames.iter().all(|f| f.gt_ids.is_empty()) {
        return Err(MetricsError::NoGroundTruth);
    }
    let m = build_matching(frames);
    let (g, p) = (m.gt_index.len(), m.pred_index.len());
    let total_gt: usize = frames.iter().map(|f| f.gt_ids.len()).sum();
    let total_pred: usize = frames.iter().map(|f| f.pred_ids.len()).sum();

    let mut curve = Vec::with_capacity(ALPHA_STEPS);
    for alpha in alpha_grid() {
        let mut counts = vec![vec![0.0; p]; g];
        let mut tp = 0usize;
        for (f, pairs) in frames.iter().zip(&m.pairs) {
            for &(r, c) in pairs {
                if matched_at(f.sim[r][c], alpha) {
                    tp += 1;
                    counts[m.gt_index[&f.gt_ids[r]]][m.pred_index[&f.pred_ids[c]]] += 1.0;
                }
            }
        }
        let (fn_, fp) = (total_gt - tp, total_pred - tp);
        let mut ass = 0.0;
        for (a, row) in counts.iter().enumerate() {
            for (b, &n) in row.iter().enumerate() {
                if n > 0.0 {
                    ass += n * n / (m.gt_count[a] + m.pred_count[b] - n).max(1.0);
                }
            }
        }
        let assa = ass / tp.max(1) as f64;
        let deta = tp as f64 / (tp + fn_ + fp).max(1) as f64;
        curve.push(HotaPoint {
            alpha,
            hota: (deta * assa).sqrt(),
            deta,
            assa,
        });
    }
    let mean = |f: fn(&HotaPoint) -> f64| curve.iter().map(f).sum::<f64>() / ALPHA_STEPS as f64;
    Ok(HotaScores {
        hota: mean(|p| p.hota),
        deta: mean(|p| p.deta),
        assa: mean(|p| p.assa),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testutil::ts;

    #[test]
    fn grid_has_nineteen_points() {
        let g = alpha_grid();
        assert_eq!(g[0], 0.05);
        assert_eq!(g[9], 0.5);
        assert_eq!(g[18], 0.95);
    }

    #[test]
    fn half_overlap_closed_case() {
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0)]);
        let pred = ts(&[(1, 2, 0.0, 0.0, 10.0, 20.0)]);
        let s = hota(&gt, &pred).unwrap();
        assert!((s.hota - 10.0 / 19.0).abs() < 1e-12);
        assert!((s.deta - 10.0 / 19.0).abs() < 1e-12);
        assert!((s.assa - 10.0 / 19.0).abs() < 1e-12);
        assert_eq!(match_frames(&gt, &pred, 0.5).matched_count(), 1);
        assert_eq!(match_frames(&gt, &pred, 0.55).matched_count(), 0);
    }

    #[test]
    fn empty_prediction() {
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0), (2, 1, 0.0, 0.0, 10.0, 10.0)]);
        let s = hota(&gt, &TrackSet::default()).unwrap();
        assert_eq!((s.hota, s.deta, s.assa), (0.0, 0.0, 0.0));
        let m = match_frames(&gt, &TrackSet::default(), 0.5);
        assert_eq!(m.matched_count(), 0);
        assert_eq!(m.frames.iter().map(|f| f.unmatched_gt.len()).sum::<usize>(), 2);
    }

    #[test]
    fn identity_switch_halves_association() {
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0), (2, 1, 0.0, 0.0, 10.0, 10.0)]);
        let pred = ts(&[(1, 5, 0.0, 0.0, 10.0, 10.0), (2, 6, 0.0, 0.0, 10.0, 10.0)]);
        let s = hota(&gt, &pred).unwrap();
        // Every detection matches; each pair shares 1 of 2 gt and 1 of 1 pred frames.
        assert!((s.deta - 1.0).abs() < 1e-12);
        assert!((s.assa - 0.5).abs() < 1e-12);
        assert!((s.hota - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn association_prefers_the_consistent_identity() {
        // Frame 2 has two equally good predictions; the one that tracked the
        // object in frame 1 must win.
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0), (2, 1, 0.0, 0.0, 10.0, 10.0)]);
        let pred = ts(&[
            (1, 9, 0.0, 0.0, 10.0, 10.0),
            (2, 3, 0.0, 0.0, 10.0, 10.0),
            (2, 9, 0.0, 0.0, 10.0, 10.0),
        ]);
        let m = match_frames(&gt, &pred, 0.5);
        assert_eq!(m.frames[1].matched, vec![(1, 9, 1.0)]);
    }
}
