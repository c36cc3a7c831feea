use super::{frame_data, hungarian, id_index, FrameData, MetricsError};
use crate::mot_io::TrackSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityScores {
    /// Fraction in `[0, 1]`.
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

pub fn idf1(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<IdentityScores, MetricsError> {
    idf1_frames(&frame_data(gt, pred), iou_threshold)
}

pub(crate) fn idf1_frames(frames: &[FrameData], iou_threshold: f64) -> Result<IdentityScores, MetricsError> {
    let gt_index = id_index(frames.iter().flat_map(|f| f.gt_ids.iter().copied()));
    let pred_index = id_index(frames.iter().flat_map(|f| f.pred_ids.iter().copied()));
    let total_gt: usize = frames.iter().map(|f| f.gt_ids.len()).sum();
    let total_pred: usize = frames.iter().map(|f| f.pred_ids.len()).sum();
    if total_gt == 0 && total_pred == 0 {
        return Err(MetricsError::NothingToCompare);
    }
    // Frames in which each (gt, pred) identity pair overlaps enough.
    let mut overlap = vec![vec![0.0; pred_index.len()]; gt_index.len()];
    for f in frames {
        for (g, row) in f.gt_ids.iter().zip(&f.sim) {
            for (p, &iou) in f.pred_ids.iter().zip(row) {
                if iou >= iou_threshold - f64::EPSILON {
                    overlap[gt_index[g]][pred_index[p]] += 1.0;
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let idtp = (-hungarian(&cost).cost).round() as usize;
    let (idfp, idfn) = (total_pred - idtp, total_gt - idtp);
    Ok(IdentityScores {
        idf1: 2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64,
        idtp,
        idfp,
        idfn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testutil::ts;

    #[test]
    fn examples() {
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0), (2, 1, 0.0, 0.0, 10.0, 10.0)]);
        assert_eq!(idf1(&gt, &gt, 0.5).unwrap().idf1, 1.0);
        assert_eq!(idf1(&gt, &TrackSet::default(), 0.5).unwrap().idf1, 0.0);
        let pred = ts(&[(1, 5, 0.0, 0.0, 10.0, 10.0), (2, 6, 0.0, 0.0, 10.0, 10.0)]);
        let s = idf1(&gt, &pred, 0.5).unwrap();
        assert_eq!((s.idtp, s.idfp, s.idfn), (1, 1, 1));
        assert_eq!(s.idf1, 0.5);
        assert_eq!(
            idf1(&TrackSet::default(), &TrackSet::default(), 0.5),
            Err(MetricsError::NothingToCompare)
        );
    }

    #[test]
    fn one_prediction_cannot_serve_two_identities() {
        let gt = ts(&[(1, 1, 0.0, 0.0, 10.0, 10.0), (2, 2, 0.0, 0.0, 10.0, 10.0)]);
        let pred = ts(&[(1, 4, 0.0, 0.0, 10.0, 10.0), (2, 4, 0.0, 0.0, 10.0, 10.0)]);
        let s = idf1(&gt, &pred, 0.5).unwrap();
        assert_eq!((s.idtp, s.idfp, s.idfn), (1, 1, 1));
    }
}
