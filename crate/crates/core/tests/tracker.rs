use std::fs;
use std::path::Path;

use lqtrack::degrade::ImageBuffer;
use lqtrack::metrics::{evaluate, mota};
use lqtrack::mot_io::{
    load_sequence, records_to_trackset, write_mot_file, BoundingBox, DetectionRecord, SequenceInfo, TrackSet,
    SEQINFO_FILE,
};
use lqtrack::synth::MovingBoxes;
use lqtrack::tracker::{run_sequence, GridEmbedder, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a sequence whose frame `f` shows `boxes(f)` as solid colours on gray.
fn write_sequence(dir: &Path, frames: usize, (w, h): (usize, usize), boxes: impl Fn(i64) -> Vec<(BoundingBox, [f32; 3])>) {
    let info = SequenceInfo {
        name: "fixture".into(),
        frame_rate: 10,
        image_width: w as u32,
        image_height: h as u32,
        length: frames,
        image_dir: "img1".into(),
        image_ext: ".png".into(),
    };
    fs::create_dir_all(dir.join("img1")).unwrap();
    fs::write(dir.join(SEQINFO_FILE), info.to_ini()).unwrap();
    for f in 1..=frames {
        let bs = boxes(f as i64);
        let img = ImageBuffer::from_fn(h, w, |y, x, c| {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            bs.iter()
                .find(|(b, _)| fx >= b.left && fx < b.right() && fy >= b.top && fy < b.bottom())
                .map_or(0.4, |(_, col)| col[c])
        });
        fs::write(dir.join("img1").join(info.frame_file_name(f)), img.encode_png().unwrap()).unwrap();
    }
}

fn gt_to_dets(gt: &TrackSet) -> Vec<DetectionRecord> {
    gt.to_records().into_iter().map(|r| DetectionRecord { identity: None, ..r }).collect()
}

fn track(dir: &Path, dets: &[DetectionRecord], cfg: &TrackerConfig) -> TrackSet {
    let seq = load_sequence(dir).unwrap();
    let out = run_sequence(&seq, dets, &GridEmbedder::default(), cfg).unwrap();
    records_to_trackset(&out.records).unwrap()
}

#[test]
fn static_box_keeps_one_identity() {
    let dir = tempfile::tempdir().unwrap();
    let b = BoundingBox::new(10.0, 12.0, 20.0, 16.0).unwrap();
    write_sequence(dir.path(), 10, (64, 48), |_| vec![(b, [0.9, 0.1, 0.1])]);
    let mut gt = TrackSet::default();
    for f in 1..=10 {
        gt.tracks.entry(1).or_default().insert(f, (b, 1.0));
    }
    let pred = track(dir.path(), &gt_to_dets(&gt), &TrackerConfig::default());
    assert_eq!(pred.len(), 1);
    assert_eq!(pred.detection_count(), 10);
    assert_eq!(mota(&gt, &pred, 0.5).unwrap().mota, 1.0);
}

#[test]
fn perfect_detections_score_100_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let gt = MovingBoxes::default().write(dir.path()).unwrap();
    for lambda in [0.5, 1.0] {
        let cfg = TrackerConfig { lambda, ..TrackerConfig::default() };
        let pred = track(dir.path(), &gt_to_dets(&gt), &cfg);
        let report = evaluate(&gt, &pred).unwrap();
        assert_eq!(report.columns(), [100.0; 5], "lambda {lambda}");
    }
}

#[test]
fn swapped_objects_follow_their_appearance() {
    let dir = tempfile::tempdir().unwrap();
    let left = BoundingBox::new(8.0, 16.0, 20.0, 20.0).unwrap();
    let right = BoundingBox::new(60.0, 16.0, 20.0, 20.0).unwrap();
    let (red, blue) = ([0.9, 0.1, 0.1], [0.1, 0.2, 0.9]);
    // Object 1 is red, object 2 is blue; they trade places every other frame.
    let place = |f: i64| if f % 2 == 1 { (left, right) } else { (right, left) };
    write_sequence(dir.path(), 6, (96, 48), |f| {
        let (a, b) = place(f);
        vec![(a, red), (b, blue)]
    });
    let mut gt = TrackSet::default();
    for f in 1..=6 {
        let (a, b) = place(f);
        gt.tracks.entry(1).or_default().insert(f, (a, 1.0));
        gt.tracks.entry(2).or_default().insert(f, (b, 1.0));
    }
    let cfg = TrackerConfig { lambda: 0.0, ..TrackerConfig::default() };
    let pred = track(dir.path(), &gt_to_dets(&gt), &cfg);
    let s = mota(&gt, &pred, 0.5).unwrap();
    assert_eq!(s.idsw, 0);
    assert_eq!(pred.len(), 2);

    // Box overlap alone hands each position to whichever track was there.
    let iou_only = TrackerConfig { lambda: 1.0, ..TrackerConfig::default() };
    let pred = track(dir.path(), &gt_to_dets(&gt), &iou_only);
    assert!(mota(&gt, &pred, 0.5).unwrap().idsw > 0);
}

#[test]
fn output_is_deterministic_and_conservative() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MovingBoxes { frames: 8, ..MovingBoxes::default() };
    let gt = spec.write(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dets: Vec<DetectionRecord> = gt_to_dets(&gt)
        .into_iter()
        .map(|d| DetectionRecord { confidence: rng.random_range(0.0..1.0), ..d })
        .collect();
    let cfg = TrackerConfig::default();
    let seq = load_sequence(dir.path()).unwrap();
    let a = run_sequence(&seq, &dets, &GridEmbedder::default(), &cfg).unwrap();
    let b = run_sequence(&seq, &dets, &GridEmbedder::default(), &cfg).unwrap();
    assert_eq!(write_mot_file(&a.records), write_mot_file(&b.records));
    assert_eq!(a.log_jsonl(), b.log_jsonl());

    for r in &a.records {
        assert!(r.confidence > cfg.propagate_threshold);
        assert!(dets.iter().any(|d| d.frame == r.frame && d.bbox == r.bbox && d.confidence == r.confidence));
    }
    // Identities come from a counter and are never reused.
    let births: usize = a.log.iter().map(|l| l.births).sum();
    assert!(a.records.iter().all(|r| r.identity.unwrap() as usize <= births));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

    #[test]
    fn thresholds_hold_for_random_confidences(seed in 0u64..1000, lambda in proptest::sample::select(vec![0.0, 0.5, 1.0])) {
        let dir = tempfile::tempdir().unwrap();
        let spec = MovingBoxes { frames: 6, ..MovingBoxes::default() };
        let gt = spec.write(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets: Vec<DetectionRecord> = gt_to_dets(&gt)
            .into_iter()
            .map(|d| DetectionRecord { confidence: rng.random_range(0.0..1.0), ..d })
            .collect();
        let cfg = TrackerConfig { lambda, ..TrackerConfig::default() };
        let seq = load_sequence(dir.path()).unwrap();
        let out = run_sequence(&seq, &dets, &GridEmbedder::default(), &cfg).unwrap();
        for (log, frame) in out.log.iter().zip(1..) {
            let eligible = dets.iter().filter(|d| d.frame == frame && d.confidence > cfg.proposal_threshold).count();
            proptest::prop_assert_eq!(log.proposals, eligible);
        }
        for r in &out.records {
            proptest::prop_assert!(r.confidence > cfg.propagate_threshold);
            proptest::prop_assert!(dets.iter().any(|d| d.frame == r.frame && d.bbox == r.bbox));
        }
    }
}
