use std::collections::BTreeMap;

use super::{frame_data, hungarian, FrameData, MetricsError};
use crate::mot_io::TrackSet;

/// Bonus that makes continuing last frame's match beat any IoU gain.
const CONTINUITY_BONUS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearScores {
    /// Fraction; may be negative.
    pub mota: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub gt: usize,
}

pub fn mota(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<ClearScores, MetricsError> {
    mota_frames(&frame_data(gt, pred), iou_threshold)
}

pub(crate) fn mota_frames(frames: &[FrameData], iou_threshold: f64) -> Result<ClearScores, MetricsError> {
    let mut s = ClearScores {
        mota: 0.0,
        tp: 0,
        fp: 0,
        fn_: 0,
        idsw: 0,
        gt: 0,
    };
    // Prediction matched to each gt identity in the last frame that had
    // both sides, and the last prediction it was ever matched to.
    let mut previous: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last_ever: BTreeMap<i64, i64> = BTreeMap::new();
    for f in frames {
        s.gt += f.gt_ids.len();
        if f.gt_ids.is_empty() || f.pred_ids.is_empty() {
            s.fp += f.pred_ids.len();
            s.fn_ += f.gt_ids.len();
            continue;
        }
        let score: Vec<Vec<f64>> = f
            .gt_ids
            .iter()
            .zip(&f.sim)
            .map(|(g, row)| {
                f.pred_ids
                    .iter()
                    .zip(row)
                    .map(|(p, &iou)| {
                        if iou < iou_threshold - f64::EPSILON {
                            0.0
                        } else if previous.get(g) == Some(p) {
                            CONTINUITY_BONUS + iou
                        } else {
                            iou
                        }
                    })
                    .collect()
            })
            .collect();
        let cost: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let matched: Vec<(usize, usize)> = hungarian(&cost)
            .pairs()
            .filter(|&(r, c)| score[r][c] > f64::EPSILON)
            .collect();

        previous.clear();
        for &(r, c) in &matched {
            let (g, p) = (f.gt_ids[r], f.pred_ids[c]);
            if last_ever.get(&g).is_some_and(|&q| q != p) {
                s.idsw += 1;
            }
            last_ever.insert(g, p);
            previous.insert(g, p);
        }
        s.tp += matched.len();
        s.fn_ += f.gt_ids.len() - matched.len();
        s.fp += f.pred_ids.len() - matched.len();
    }
    if s.gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    s.mota = 1.0 - (s.fn_ + s.fp + s.idsw) as f64 / s.gt as f64;
    Ok(s)
}
