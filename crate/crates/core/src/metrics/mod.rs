//! Tracking metrics: HOTA (with DetA/AssA), CLEAR MOTA and IDF1.
//!
//! Conventions follow the community evaluator: a 19-point localisation grid
//! `0.05..=0.95`, a 0.5 IoU threshold for CLEAR and identity metrics, no
//! clamping of negative MOTA. Frames present on only one side count as empty
//! on the other.

mod assignment;
mod clear;
mod hota;
mod identity;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mot_io::{BoundingBox, TrackSet};

pub use assignment::{hungarian, tie_tolerance, Assignment};
pub use clear::{mota, ClearScores};
pub use hota::{alpha_grid, hota, match_frames, FrameMatches, HotaPoint, HotaScores, MatchResult, ALPHA_STEPS};
pub use identity::{idf1, IdentityScores};

/// IoU threshold shared by CLEAR and the identity metrics.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth is empty; the metric is undefined")]
    NoGroundTruth,
    #[error("ground truth and prediction are both empty; the metric is undefined")]
    NothingToCompare,
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.right().min(b.right()) - a.left.max(b.left)).max(0.0);
    let h = (a.bottom().min(b.bottom()) - a.top.max(b.top)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// One frame of a gt/pred pair: identities in ascending order and their
/// pairwise IoU (`sim[g][p]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub frame: i64,
    pub gt_ids: Vec<i64>,
    pub pred_ids: Vec<i64>,
    pub sim: Vec<Vec<f64>>,
}

/// Frames in the union of both sets, ascending.
pub fn frame_data(gt: &TrackSet, pred: &TrackSet) -> Vec<FrameData> {
    let frames: BTreeSet<i64> = gt.frames().union(&pred.frames()).copied().collect();
    let index = |ts: &TrackSet| {
        let mut per_frame: std::collections::BTreeMap<i64, Vec<(i64, BoundingBox)>> = Default::default();
        for (id, track) in &ts.tracks {
            for (frame, (bbox, _)) in track {
                per_frame.entry(*frame).or_default().push((*id, *bbox));
            }
        }
        per_frame
    };
    let (g, p) = (index(gt), index(pred));
    frames
        .into_iter()
        .map(|frame| {
            let gs = g.get(&frame).map_or(&[][..], Vec::as_slice);
            let ps = p.get(&frame).map_or(&[][..], Vec::as_slice);
            FrameData {
                frame,
                gt_ids: gs.iter().map(|(id, _)| *id).collect(),
                pred_ids: ps.iter().map(|(id, _)| *id).collect(),
                sim: gs.iter().map(|(_, a)| ps.iter().map(|(_, b)| iou(a, b)).collect()).collect(),
            }
        })
        .collect()
}

/// Dense 0-based indices for the identities of one side.
pub(crate) fn id_index(ids: impl Iterator<Item = i64>) -> std::collections::BTreeMap<i64, usize> {
    let set: BTreeSet<i64> = ids.collect();
    set.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub gt: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Scores in percent. `counts` carries the CLEAR and identity tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub mota: f64,
    pub idf1: f64,
    pub counts: Counts,
    pub curve: Vec<HotaPoint>,
}

impl MetricsReport {
    /// Column header and one row of scores, one decimal place.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>6} {:>6}", "HOTA", "DetA", "AssA", "MOTA", "IDF1");
        let _ = writeln!(
            out,
            "{:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>6.1}",
            self.hota, self.deta, self.assa, self.mota, self.idf1
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }

    pub fn columns(&self) -> [f64; 5] {
        [self.hota, self.deta, self.assa, self.mota, self.idf1]
    }
}

pub fn evaluate(gt: &TrackSet, pred: &TrackSet) -> Result<MetricsReport, MetricsError> {
    let frames = frame_data(gt, pred);
    let h = hota::hota_frames(&frames)?;
    let c = clear::mota_frames(&frames, MATCH_THRESHOLD)?;
    let i = identity::idf1_frames(&frames, MATCH_THRESHOLD)?;
    Ok(MetricsReport {
        hota: 100.0 * h.hota,
        deta: 100.0 * h.deta,
        assa: 100.0 * h.assa,
        mota: 100.0 * c.mota,
        idf1: 100.0 * i.idf1,
        counts: Counts {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            idsw: c.idsw,
            gt: c.gt,
            idtp: i.idtp,
            idfp: i.idfp,
            idfn: i.idfn,
        },
        curve: h
            .curve
            .iter()
            .map(|p| HotaPoint {
                alpha: p.alpha,
                hota: 100.0 * p.hota,
                deta: 100.0 * p.deta,
                assa: 100.0 * p.assa,
            })
            .collect(),
    })
}
