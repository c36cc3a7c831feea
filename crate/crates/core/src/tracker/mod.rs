//! Query-propagation tracker.
//!
//! Each frame, detections become proposal queries pooled from the frame's
//! semantic map. Live track queries are refined by the fusion graph against
//! that map, scored against the proposals by a mix of box overlap and
//! embedding similarity, and matched by minimum-cost assignment. Unmatched
//! proposals start new identities; tracks that stop matching age out.

mod embedder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::{DegradeError, ImageBuffer};
use crate::fusion::{fuse, FusionParams, FusionShape};
use crate::metrics::{hungarian, iou};
use crate::mot_io::{group_by_frame, BoundingBox, DetectionRecord, Sequence};
use crate::nncore::{NnError, Tensor};

pub use embedder::{pool_box, FrameEmbedder, GridEmbedder, GRID_CHANNELS, ORIENTATION_BINS};

/// Scale applied to the fusion extractor's output layer at initialisation.
/// Untrained, the fused correction stays a small perturbation of the track
/// embedding instead of swamping it.
pub const FUSION_OUTPUT_GAIN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error("embedder/fusion mismatch: {0}")]
    Shape(#[from] NnError),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: DegradeError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Detections must score strictly above this to become proposals.
    pub proposal_threshold: f64,
    /// Tracks are reported and kept on confidence strictly above this.
    pub propagate_threshold: f64,
    /// Weight of box IoU against embedding cosine similarity.
    pub lambda: f64,
    /// Frames an unconfirmed track is kept alive without being reported.
    pub max_age: usize,
    /// Minimum combined score for a track/proposal pair to match.
    pub match_floor: f64,
    /// Share of the old embedding kept when a track matches.
    pub ema_momentum: f64,
    /// Track queries fused per pass; shorter batches are zero padded.
    pub query_capacity: usize,
    pub fusion_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            proposal_threshold: 0.05,
            propagate_threshold: 0.5,
            lambda: 0.5,
            max_age: 10,
            match_floor: 0.3,
            ema_momentum: 0.9,
            query_capacity: 16,
            fusion_seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let unit = [
            ("proposal_threshold", self.proposal_threshold),
            ("propagate_threshold", self.propagate_threshold),
            ("lambda", self.lambda),
            ("match_floor", self.match_floor),
            ("ema_momentum", self.ema_momentum),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(TrackerError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.query_capacity == 0 {
            return Err(TrackerError::Config("query_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Fusion and the embedder are only consulted when similarity matters.
    pub fn uses_embeddings(&self) -> bool {
        self.lambda < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Proposal,
    Track,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub kind: QueryKind,
    pub identity: Option<i64>,
    pub embedding: Vec<f64>,
    pub bbox: BoundingBox,
    pub score: f64,
    /// Frames since the last match with confidence above the propagation
    /// threshold.
    pub age: usize,
}

impl Query {
    /// Reported this frame: confirmed by a confident match.
    pub fn is_reported(&self, cfg: &TrackerConfig) -> bool {
        self.kind == QueryKind::Track && self.age == 0 && self.score > cfg.propagate_threshold
    }
}

/// One proposal per detection scoring strictly above the threshold. With
/// `features` absent the embeddings are empty.
pub fn make_proposals(
    dets: &[DetectionRecord],
    features: Option<&Tensor>,
    image_size: (usize, usize),
    cfg: &TrackerConfig,
) -> Vec<Query> {
    dets.iter()
        .filter(|d| d.confidence > cfg.proposal_threshold)
        .map(|d| Query {
            kind: QueryKind::Proposal,
            identity: None,
            embedding: features.map_or_else(Vec::new, |f| pool_box(f, &d.bbox, image_size.0, image_size.1)),
            bbox: d.bbox,
            score: d.confidence,
            age: 0,
        })
        .collect()
}

/// Keeps confident tracks, and unconfirmed ones up to `max_age` frames.
pub fn propagate_tracks(tracks: Vec<Query>, cfg: &TrackerConfig) -> Vec<Query> {
    tracks
        .into_iter()
        .filter(|t| t.score > cfg.propagate_threshold || t.age <= cfg.max_age)
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Rows of `F_fq` for each track, fused against `features` in batches.
pub fn fused_track_embeddings(
    tracks: &[Query],
    features: &Tensor,
    fusion: &FusionParams,
) -> Result<Vec<Vec<f64>>, TrackerError> {
    let shape = fusion.shape();
    let (cap, m) = (shape.queries, shape.query_dim);
    let mut out = Vec::with_capacity(tracks.len());
    for chunk in tracks.chunks(cap) {
        let mut x_q = Tensor::zeros(&[cap, m]);
        for (i, t) in chunk.iter().enumerate() {
            if t.embedding.len() != m {
                return Err(NnError::Shape(format!("track embedding has {} values, fusion expects {m}", t.embedding.len())).into());
            }
            x_q.data_mut()[i * m..(i + 1) * m].copy_from_slice(&t.embedding);
        }
        let trace = fuse(features, &x_q, fusion, None)?;
        let f = trace.vsfm.f_fq.data();
        out.extend((0..chunk.len()).map(|i| f[i * m..(i + 1) * m].to_vec()));
    }
    Ok(out)
}

/// Outcome of one association step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, proposal index)` into the inputs.
    pub matches: Vec<(usize, usize)>,
    /// Identities created from unmatched proposals.
    pub births: Vec<i64>,
}

/// Pairwise score `lambda * IoU + (1 - lambda) * cos(fused track, proposal)`.
pub fn association_scores(
    tracks: &[Query],
    proposals: &[Query],
    fused: Option<&[Vec<f64>]>,
    cfg: &TrackerConfig,
) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            proposals
                .iter()
                .map(|p| {
                    let overlap = iou(&t.bbox, &p.bbox);
                    let similarity = match fused {
                        Some(f) if cfg.uses_embeddings() => cosine(&f[i], &p.embedding),
                        _ => 0.0,
                    };
                    cfg.lambda * overlap + (1.0 - cfg.lambda) * similarity
                })
                .collect()
        })
        .collect()
}

/// Matches proposals to tracks and updates `tracks` in place: matched tracks
/// take the proposal's box and score, unmatched ones age, unmatched
/// proposals are appended as new tracks.
pub fn associate(
    tracks: &mut Vec<Query>,
    proposals: Vec<Query>,
    features: Option<&Tensor>,
    fusion: Option<&FusionParams>,
    next_identity: &mut i64,
    cfg: &TrackerConfig,
) -> Result<Association, TrackerError> {
    let fused = match (features, fusion) {
        (Some(f), Some(p)) if cfg.uses_embeddings() && !tracks.is_empty() => {
            Some(fused_track_embeddings(tracks, f, p)?)
        }
        _ => None,
    };
    let scores = association_scores(tracks, &proposals, fused.as_deref(), cfg);
    let cost: Vec<Vec<f64>> = scores
        .iter()
        .map(|r| {
            r.iter()
                .map(|&s| if s >= cfg.match_floor { 1.0 - s } else { f64::INFINITY })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);

    let mut out = Association::default();
    let mut taken = vec![false; proposals.len()];
    for (ti, t) in tracks.iter_mut().enumerate() {
        match assignment.rows.get(ti).copied().flatten() {
            Some(pi) => {
                let p = &proposals[pi];
                taken[pi] = true;
                out.matches.push((ti, pi));
                t.bbox = p.bbox;
                t.score = p.score;
                if t.embedding.len() == p.embedding.len() {
                    for (e, n) in t.embedding.iter_mut().zip(&p.embedding) {
                        *e = cfg.ema_momentum * *e + (1.0 - cfg.ema_momentum) * n;
                    }
                }
                t.age = if p.score > cfg.propagate_threshold { 0 } else { t.age + 1 };
            }
            None => {
                t.score = 0.0;
                t.age += 1;
            }
        }
    }
    for (p, _) in proposals.into_iter().zip(taken).filter(|(_, t)| !t) {
        let identity = *next_identity;
        *next_identity += 1;
        out.births.push(identity);
        let age = if p.score > cfg.propagate_threshold { 0 } else { 1 };
        tracks.push(Query {
            kind: QueryKind::Track,
            identity: Some(identity),
            age,
            ..p
        });
    }
    Ok(out)
}

/// Per-frame counts, one JSON line each in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frame: i64,
    pub detections: usize,
    pub proposals: usize,
    pub matches: usize,
    pub births: usize,
    pub deaths: usize,
    pub active: usize,
    pub reported: usize,
}

/// Tracker state carried across frames.
pub struct Tracker {
    cfg: TrackerConfig,
    fusion: Option<FusionParams>,
    tracks: Vec<Query>,
    next_identity: i64,
}

impl Tracker {
    /// `embedder_shape` is `[C, H, W]` of the semantic map; track embeddings
    /// have `C` values.
    pub fn new(cfg: TrackerConfig, embedder_shape: [usize; 3]) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let fusion = if cfg.uses_embeddings() {
            let [c, h, w] = embedder_shape;
            let shape = FusionShape::new(c, h, w, cfg.query_capacity, c);
            shape.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.fusion_seed);
            let mut params = FusionParams::init(shape, &mut rng)?;
            params.vsfm.extract_fc.scale(FUSION_OUTPUT_GAIN);
            Some(params)
        } else {
            None
        };
        Ok(Tracker {
            cfg,
            fusion,
            tracks: Vec::new(),
            next_identity: 1,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Query] {
        &self.tracks
    }

    /// One frame: proposals, association, propagation. Returns the reported
    /// records and the frame's log line.
    pub fn step(
        &mut self,
        frame: i64,
        dets: &[DetectionRecord],
        features: Option<&Tensor>,
        image_size: (usize, usize),
    ) -> Result<(Vec<DetectionRecord>, FrameLog), TrackerError> {
        let features = features.filter(|_| self.cfg.uses_embeddings());
        let proposals = make_proposals(dets, features, image_size, &self.cfg);
        let proposal_count = proposals.len();
        let a = associate(
            &mut self.tracks,
            proposals,
            features,
            self.fusion.as_ref(),
            &mut self.next_identity,
            &self.cfg,
        )?;
        let before = self.tracks.len();
        self.tracks = propagate_tracks(std::mem::take(&mut self.tracks), &self.cfg);
        let reported: Vec<DetectionRecord> = self
            .tracks
            .iter()
            .filter(|t| t.is_reported(&self.cfg))
            .map(|t| DetectionRecord {
                frame,
                identity: t.identity,
                bbox: t.bbox,
                confidence: t.score,
            })
            .collect();
        let log = FrameLog {
            frame,
            detections: dets.len(),
            proposals: proposal_count,
            matches: a.matches.len(),
            births: a.births.len(),
            deaths: before - self.tracks.len(),
            active: self.tracks.len(),
            reported: reported.len(),
        };
        Ok((reported, log))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerOutput {
    /// Sorted by frame, then identity.
    pub records: Vec<DetectionRecord>,
    pub log: Vec<FrameLog>,
}

impl TrackerOutput {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log lines serialise") + "\n")
            .collect()
    }
}

/// Runs every frame of `seq` in order. Detections outside the sequence's
/// frame range are ignored. Images are only read when embeddings are used.
pub fn run_sequence(
    seq: &Sequence,
    dets: &[DetectionRecord],
    embedder: &dyn FrameEmbedder,
    cfg: &TrackerConfig,
) -> Result<TrackerOutput, TrackerError> {
    let mut tracker = Tracker::new(cfg.clone(), embedder.output_shape())?;
    let by_frame = group_by_frame(dets);
    let mut out = TrackerOutput::default();
    for (i, path) in seq.frames.iter().enumerate() {
        let frame = i as i64 + 1;
        let frame_dets = by_frame.get(&frame).map_or(&[][..], Vec::as_slice);
        let (features, size) = if cfg.uses_embeddings() {
            let img = ImageBuffer::load(path).map_err(|source| TrackerError::Frame { frame: i + 1, source })?;
            (Some(embedder.embed(&img)), (img.width(), img.height()))
        } else {
            (None, (seq.info.image_width as usize, seq.info.image_height as usize))
        };
        let (mut records, log) = tracker.step(frame, frame_dets, features.as_ref(), size)?;
        records.sort_by_key(|r| r.identity);
        out.records.extend(records);
        out.log.push(log);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: i64, l: f64, t: f64, conf: f64) -> DetectionRecord {
        DetectionRecord {
            frame,
            identity: None,
            bbox: BoundingBox::new(l, t, 10.0, 10.0).unwrap(),
            confidence: conf,
        }
    }

    fn track(id: i64, l: f64, score: f64, age: usize) -> Query {
        Query {
            kind: QueryKind::Track,
            identity: Some(id),
            embedding: vec![],
            bbox: BoundingBox::new(l, 0.0, 10.0, 10.0).unwrap(),
            score,
            age,
        }
    }

    fn iou_only() -> TrackerConfig {
        TrackerConfig {
            lambda: 1.0,
            ..TrackerConfig::default()
        }
    }

    #[test]
    fn proposals_use_a_strict_threshold() {
        let cfg = TrackerConfig::default();
        let dets = [det(1, 0.0, 0.0, 0.04), det(1, 0.0, 0.0, 0.05), det(1, 0.0, 0.0, 0.9)];
        let p = make_proposals(&dets, None, (100, 100), &cfg);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].score, 0.9);
        assert!(make_proposals(&[], None, (100, 100), &cfg).is_empty());
        let all = [det(1, 0.0, 0.0, 1.0), det(1, 20.0, 0.0, 1.0)];
        assert_eq!(make_proposals(&all, None, (100, 100), &cfg).len(), 2);
    }

    #[test]
    fn propagation_rules() {
        let cfg = TrackerConfig {
            max_age: 0,
            ..TrackerConfig::default()
        };
        let kept = propagate_tracks(vec![track(1, 0.0, 0.6, 0), track(2, 0.0, 0.4, 1)], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].identity, Some(1));
        let cfg = TrackerConfig::default();
        let kept = propagate_tracks(vec![track(3, 0.0, 0.4, 3)], &cfg);
        assert_eq!(kept.len(), 1);
        assert!(!kept[0].is_reported(&cfg));
        assert!(propagate_tracks(vec![], &cfg).is_empty());
    }

    #[test]
    fn iou_only_association() {
        let cfg = iou_only();
        let mut next = 5;
        let mut tracks = vec![track(1, 0.0, 1.0, 0)];
        let props = make_proposals(&[det(2, 0.0, 0.0, 1.0)], None, (100, 100), &cfg);
        let a = associate(&mut tracks, props, None, None, &mut next, &cfg).unwrap();
        assert_eq!(a.matches, vec![(0, 0)]);
        assert!(a.births.is_empty());

        let props = make_proposals(&[det(3, 50.0, 50.0, 1.0)], None, (100, 100), &cfg);
        let a = associate(&mut tracks, props, None, None, &mut next, &cfg).unwrap();
        assert!(a.matches.is_empty());
        assert_eq!(a.births, vec![5]);
        assert_eq!(next, 6);
        assert_eq!(tracks[0].age, 1);
    }

    #[test]
    fn crossed_overlaps_match_diagonally() {
        let cfg = iou_only();
        let tracks = [track(1, 0.0, 1.0, 0), track(2, 100.0, 1.0, 0)];
        let props = make_proposals(&[det(1, 0.5, 0.0, 1.0), det(1, 100.5, 0.0, 1.0)], None, (200, 100), &cfg);
        let s = association_scores(&tracks, &props, None, &cfg);
        assert!(s[0][0] > 0.9 && s[0][1] == 0.0 && s[1][0] == 0.0 && s[1][1] > 0.9);
        let mut tracks = tracks.to_vec();
        let mut next = 3;
        let a = associate(&mut tracks, props, None, None, &mut next, &cfg).unwrap();
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn withheld_detection_resumes_identity() {
        let cfg = iou_only();
        let mut tracker = Tracker::new(cfg, [16, 14, 14]).unwrap();
        let mut ids = Vec::new();
        for frame in 1..=8 {
            let dets = if frame == 5 { vec![] } else { vec![det(frame, frame as f64, 0.0, 1.0)] };
            let (recs, _) = tracker.step(frame, &dets, None, (100, 100)).unwrap();
            ids.extend(recs.iter().map(|r| r.identity.unwrap()));
            assert_eq!(recs.len(), usize::from(frame != 5));
        }
        assert_eq!(ids, vec![1; 7]);
    }

    #[test]
    fn unconfirmed_tracks_die_after_max_age() {
        let cfg = TrackerConfig {
            max_age: 2,
            ..iou_only()
        };
        let mut tracker = Tracker::new(cfg, [16, 14, 14]).unwrap();
        tracker.step(1, &[det(1, 0.0, 0.0, 1.0)], None, (100, 100)).unwrap();
        let mut deaths = Vec::new();
        for frame in 2..=5 {
            let (_, log) = tracker.step(frame, &[], None, (100, 100)).unwrap();
            deaths.push(log.deaths);
        }
        assert_eq!(deaths, vec![0, 0, 1, 0]);
        assert!(tracker.tracks().is_empty());
    }

    #[test]
    fn identities_strictly_increase_and_are_never_reused() {
        let mut tracker = Tracker::new(iou_only(), [16, 14, 14]).unwrap();
        let mut all = Vec::new();
        for frame in 1..=12 {
            // A box that jumps every frame forces a birth each time.
            let x = if frame % 2 == 0 { 0.0 } else { 50.0 };
            let conf = if frame % 3 == 0 { 0.3 } else { 0.9 };
            let before = tracker.next_identity;
            tracker.step(frame, &[det(frame, x, 0.0, conf)], None, (100, 100)).unwrap();
            all.extend(before..tracker.next_identity);
        }
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        let live: Vec<i64> = tracker.tracks().iter().filter_map(|t| t.identity).collect();
        assert!(live.iter().all(|id| all.contains(id)));
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        let bad = TrackerConfig {
            lambda: 1.5,
            ..TrackerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
