//! Synthetic fixtures: random track sets for metric checks and small
//! rendered sequences with known ground truth.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{DegradeError, ImageBuffer};
use crate::mot_io::{write_mot_file, BoundingBox, DetectionRecord, SequenceInfo, TrackSet, SEQINFO_FILE};

/// Upper limits for [`random_scenario`].
#[derive(Debug, Clone, Copy)]
pub struct ScenarioLimits {
    pub frames: usize,
    pub identities: usize,
    pub boxes_per_frame: usize,
}

impl Default for ScenarioLimits {
    fn default() -> Self {
        ScenarioLimits {
            frames: 5,
            identities: 4,
            boxes_per_frame: 4,
        }
    }
}

fn random_box<R: Rng + ?Sized>(rng: &mut R) -> BoundingBox {
    // Half-pixel grid on a small canvas: overlaps are frequent and exact ties happen.
    let half = |rng: &mut R, lo: u32, hi: u32| rng.random_range(lo..=hi) as f64 / 2.0;
    BoundingBox {
        left: half(rng, 0, 40),
        top: half(rng, 0, 40),
        width: half(rng, 4, 24),
        height: half(rng, 4, 24),
    }
}

/// A ground-truth set and a prediction derived from it by jitter, identity
/// shuffles, drops and spurious boxes. Either side may come out empty, but
/// the ground truth always holds at least one box.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, limits: ScenarioLimits) -> (TrackSet, TrackSet) {
    let frames = rng.random_range(1..=limits.frames) as i64;
    let identities = rng.random_range(1..=limits.identities);
    let mut gt = TrackSet::default();
    let mut pred = TrackSet::default();
    let mut relabel: Vec<i64> = (1..=limits.identities as i64).collect();
    for frame in 1..=frames {
        let mut ids: Vec<i64> = (1..=identities as i64).collect();
        ids.shuffle(rng);
        let count = rng.random_range(0..=identities.min(limits.boxes_per_frame));
        ids.truncate(count);
        if rng.random_bool(0.2) {
            relabel.shuffle(rng);
        }
        let mut taken = Vec::new();
        for id in ids {
            let b = random_box(rng);
            gt.tracks.entry(id).or_default().insert(frame, (b, 1.0));
            if rng.random_bool(0.2) {
                continue;
            }
            let p = relabel[(id - 1) as usize];
            if taken.contains(&p) {
                continue;
            }
            let jitter = |rng: &mut R| rng.random_range(-4i32..=4) as f64 / 2.0;
            let moved = BoundingBox {
                left: b.left + jitter(rng),
                top: b.top + jitter(rng),
                width: (b.width + jitter(rng)).max(1.0),
                height: (b.height + jitter(rng)).max(1.0),
            };
            taken.push(p);
            pred.tracks.entry(p).or_default().insert(frame, (moved, 1.0));
        }
        if taken.len() < limits.boxes_per_frame && rng.random_bool(0.3) {
            let free: Vec<i64> = (1..=limits.identities as i64).filter(|p| !taken.contains(p)).collect();
            if let Some(&p) = free.choose(rng) {
                pred.tracks.entry(p).or_default().insert(frame, (random_box(rng), 1.0));
            }
        }
    }
    if gt.is_empty() {
        gt.tracks.entry(1).or_default().insert(1, (random_box(rng), 1.0));
    }
    (gt, pred)
}

/// A rendered sequence of solid boxes sliding over a textured background.
#[derive(Debug, Clone, Copy)]
pub struct MovingBoxes {
    pub frames: usize,
    pub objects: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for MovingBoxes {
    fn default() -> Self {
        MovingBoxes {
            frames: 20,
            objects: 3,
            width: 128,
            height: 96,
            seed: 0,
        }
    }
}

const PALETTE: [[f32; 3]; 6] = [
    [0.9, 0.15, 0.1],
    [0.1, 0.3, 0.9],
    [0.15, 0.8, 0.2],
    [0.95, 0.85, 0.1],
    [0.8, 0.2, 0.85],
    [0.1, 0.85, 0.85],
];

impl MovingBoxes {
    /// Ground truth: each object keeps to its own horizontal lane, so boxes
    /// never overlap, and moves at most 2 px per frame.
    pub fn ground_truth(&self) -> TrackSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lane = self.height as f64 / self.objects as f64;
        let size = (lane * 0.7).floor().max(4.0);
        let mut gt = TrackSet::default();
        for k in 0..self.objects {
            let span = (self.width as f64 - size).max(1.0);
            let mut x = rng.random_range(0.0..span).floor();
            let mut vx = if rng.random_bool(0.5) { 2.0 } else { -2.0 };
            let y = (k as f64 * lane + (lane - size) / 2.0).floor();
            for frame in 1..=self.frames as i64 {
                let b = BoundingBox {
                    left: x,
                    top: y,
                    width: size,
                    height: size,
                };
                gt.tracks.entry(k as i64 + 1).or_default().insert(frame, (b, 1.0));
                if x + vx < 0.0 || x + vx > span {
                    vx = -vx;
                }
                x += vx;
            }
        }
        gt
    }

    pub fn render(&self, gt: &TrackSet, frame: i64) -> ImageBuffer {
        let boxes = gt.at_frame(frame);
        ImageBuffer::from_fn(self.height, self.width, |y, x, c| {
            for (id, b) in &boxes {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                if fx >= b.left && fx < b.right() && fy >= b.top && fy < b.bottom() {
                    return PALETTE[(*id as usize - 1) % PALETTE.len()][c];
                }
            }
            let checker = ((x / 8 + y / 8) % 2) as f32;
            0.35 + 0.08 * checker + 0.02 * c as f32
        })
    }

    /// Writes `seqinfo.ini`, `img1/*.png`, `gt/gt.txt` and `det/det.txt`
    /// (ground-truth boxes without identity, confidence 1).
    pub fn write(&self, dir: &Path) -> Result<TrackSet, DegradeError> {
        let gt = self.ground_truth();
        let info = SequenceInfo {
            name: dir
                .file_name()
                .map_or_else(|| "synthetic".to_string(), |n| n.to_string_lossy().into_owned()),
            frame_rate: 10,
            image_width: self.width as u32,
            image_height: self.height as u32,
            length: self.frames,
            image_dir: "img1".into(),
            image_ext: ".png".into(),
        };
        fs::create_dir_all(dir.join("img1"))?;
        fs::create_dir_all(dir.join("gt"))?;
        fs::create_dir_all(dir.join("det"))?;
        fs::write(dir.join(SEQINFO_FILE), info.to_ini())?;
        for frame in 1..=self.frames {
            let png = self.render(&gt, frame as i64).encode_png()?;
            fs::write(dir.join("img1").join(info.frame_file_name(frame)), png)?;
        }
        let records = gt.to_records();
        fs::write(dir.join("gt").join("gt.txt"), write_mot_file(&records))?;
        let dets: Vec<DetectionRecord> = records
            .iter()
            .map(|r| DetectionRecord {
                identity: None,
                ..*r
            })
            .collect();
        fs::write(dir.join("det").join("det.txt"), write_mot_file(&dets))?;
        Ok(gt)
    }
}
