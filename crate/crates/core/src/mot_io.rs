//! MOTChallenge-style sequence I/O.
//!
//! Detection, ground-truth and tracker-output files share one CSV grammar:
//! `frame,id,left,top,width,height,conf[,x,y,z]`. An identity of `-1` marks
//! a record without identity (raw detections). Sequence metadata lives in a
//! `seqinfo.ini` file with a single `[Sequence]` section.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEQINFO_FILE: &str = "seqinfo.ini";

#[derive(Debug, Error)]
pub enum MotIoError {
    #[error("line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("sequence metadata file not found: {0}")]
    MissingMetadata(PathBuf),
    #[error("sequence metadata is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("sequence metadata key `{key}` has invalid value `{value}`")]
    InvalidValue { key: &'static str, value: String },
    #[error("image directory not found: {0}")]
    MissingImageDir(PathBuf),
    #[error("sequence declares {declared} frames but {found} images were found")]
    CountMismatch { declared: usize, found: usize },
    #[error("frame {frame} has no image (expected {path})")]
    MissingFrame { frame: usize, path: PathBuf },
    #[error("record {index} has no identity")]
    MissingIdentity { index: usize },
    #[error("duplicate record for identity {identity} at frame {frame}")]
    DuplicateKey { identity: i64, frame: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MotIoError>;

/// Axis-aligned box in pixel coordinates, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        let b = BoundingBox {
            left,
            top,
            width,
            height,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.left, self.top, self.width, self.height]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(MotIoError::InvalidBox("non-finite coordinate".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(MotIoError::InvalidBox(format!(
                "width and height must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// One line of a MOT file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: i64,
    pub identity: Option<i64>,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.frame < 1 {
            return Err(format!("frame must be >= 1, got {}", self.frame));
        }
        if let Some(id) = self.identity {
            if id < 1 {
                return Err(format!("identity must be >= 1 or -1, got {id}"));
            }
        }
        if !self.confidence.is_finite() {
            return Err("confidence must be finite".into());
        }
        self.bbox.validate().map_err(|e| e.to_string())
    }
}

/// Parse a MOT-format text. Blank lines are skipped; every other line must
/// match the grammar or the whole parse fails.
pub fn parse_mot_file(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(line, line_no)?);
    }
    Ok(records)
}

fn parse_line(line: &str, line_no: usize) -> Result<DetectionRecord> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 7 {
        return Err(MotIoError::Parse {
            line: line_no,
            field: fields.len() + 1,
            message: format!("expected at least 7 fields, found {}", fields.len()),
        });
    }
    let int_field = |i: usize| -> Result<i64> {
        fields[i].parse::<i64>().map_err(|_| MotIoError::Parse {
            line: line_no,
            field: i + 1,
            message: format!("`{}` is not an integer", fields[i]),
        })
    };
    let real_field = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| MotIoError::Parse {
                line: line_no,
                field: i + 1,
                message: format!("`{}` is not a finite number", fields[i]),
            })
    };

    let frame = int_field(0)?;
    let raw_id = int_field(1)?;
    let (left, top, width, height) = (real_field(2)?, real_field(3)?, real_field(4)?, real_field(5)?);
    let confidence = real_field(6)?;
    for i in 7..fields.len() {
        real_field(i)?;
    }

    if frame < 1 {
        return Err(MotIoError::Validation {
            line: line_no,
            message: format!("frame must be >= 1, got {frame}"),
        });
    }
    let identity = match raw_id {
        -1 => None,
        id if id >= 1 => Some(id),
        id => {
            return Err(MotIoError::Validation {
                line: line_no,
                message: format!("identity must be >= 1 or -1, got {id}"),
            })
        }
    };
    let bbox = BoundingBox::new(left, top, width, height).map_err(|e| MotIoError::Validation {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(DetectionRecord {
        frame,
        identity,
        bbox,
        confidence,
    })
}

/// Canonical MOT text: fixed field order, shortest round-trip decimals,
/// `-1,-1,-1` world coordinates, `\n` line endings.
pub fn write_mot_file(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame,
            r.identity.unwrap_or(-1),
            r.bbox.left,
            r.bbox.top,
            r.bbox.width,
            r.bbox.height,
            r.confidence
        );
    }
    out
}

pub fn read_mot_path(path: &Path) -> Result<Vec<DetectionRecord>> {
    parse_mot_file(&fs::read_to_string(path)?)
}

/// Records grouped per frame, frames ascending.
pub fn group_by_frame(records: &[DetectionRecord]) -> BTreeMap<i64, Vec<DetectionRecord>> {
    let mut out: BTreeMap<i64, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push(*r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frame_rate: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub length: usize,
    pub image_dir: String,
    pub image_ext: String,
}

impl SequenceInfo {
    pub fn parse_ini(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('[') || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &'static str| kv.get(key).cloned().ok_or(MotIoError::MissingKey(key));
        let num = |key: &'static str| -> Result<u64> {
            let v = get(key)?;
            v.parse::<u64>()
                .map_err(|_| MotIoError::InvalidValue { key, value: v })
        };
        let info = SequenceInfo {
            name: get("name")?,
            frame_rate: num("frameRate")? as u32,
            image_width: num("imWidth")? as u32,
            image_height: num("imHeight")? as u32,
            length: num("seqLength")? as usize,
            image_dir: get("imDir")?,
            image_ext: get("imExt")?,
        };
        if info.length < 1 {
            return Err(MotIoError::InvalidValue {
                key: "seqLength",
                value: "0".into(),
            });
        }
        if info.image_width < 1 {
            return Err(MotIoError::InvalidValue {
                key: "imWidth",
                value: "0".into(),
            });
        }
        if info.image_height < 1 {
            return Err(MotIoError::InvalidValue {
                key: "imHeight",
                value: "0".into(),
            });
        }
        Ok(info)
    }

    pub fn to_ini(&self) -> String {
        format!(
            "[Sequence]\nname={}\nimDir={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\nimExt={}\n",
            self.name,
            self.image_dir,
            self.frame_rate,
            self.length,
            self.image_width,
            self.image_height,
            self.image_ext
        )
    }

    /// File name of a 1-based frame, e.g. `000001.png`.
    pub fn frame_file_name(&self, frame: usize) -> String {
        format!("{:06}{}", frame, self.image_ext)
    }
}

/// A loaded sequence directory.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub root: PathBuf,
    pub info: SequenceInfo,
    /// Index `i` holds frame `i + 1`.
    pub frames: Vec<PathBuf>,
}

impl Sequence {
    pub fn image_dir(&self) -> PathBuf {
        self.root.join(&self.info.image_dir)
    }
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join(SEQINFO_FILE);
    if !meta_path.is_file() {
        return Err(MotIoError::MissingMetadata(meta_path));
    }
    let info = SequenceInfo::parse_ini(&fs::read_to_string(&meta_path)?)?;
    let image_dir = dir.join(&info.image_dir);
    if !image_dir.is_dir() {
        return Err(MotIoError::MissingImageDir(image_dir));
    }

    let ext = info.image_ext.trim_start_matches('.').to_ascii_lowercase();
    let mut found = 0usize;
    for entry in fs::read_dir(&image_dir)? {
        let path = entry?.path();
        let matches = path.is_file()
            && path
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase() == ext)
                .unwrap_or(false);
        if matches {
            found += 1;
        }
    }
    if found != info.length {
        return Err(MotIoError::CountMismatch {
            declared: info.length,
            found,
        });
    }

    let mut frames = Vec::with_capacity(info.length);
    for frame in 1..=info.length {
        let path = image_dir.join(info.frame_file_name(frame));
        if !path.is_file() {
            return Err(MotIoError::MissingFrame { frame, path });
        }
        frames.push(path);
    }
    Ok(Sequence {
        root: dir.to_path_buf(),
        info,
        frames,
    })
}

/// One identity's trajectory: frame → (box, confidence), frames ascending.
pub type Track = BTreeMap<i64, (BoundingBox, f64)>;

/// Trajectories keyed by identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: BTreeMap<i64, Track>,
}

impl TrackSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn detection_count(&self) -> usize {
        self.tracks.values().map(BTreeMap::len).sum()
    }

    /// Every frame that holds at least one box, ascending.
    pub fn frames(&self) -> std::collections::BTreeSet<i64> {
        self.tracks.values().flat_map(|t| t.keys().copied()).collect()
    }

    /// Boxes present at `frame`, ordered by identity.
    pub fn at_frame(&self, frame: i64) -> Vec<(i64, BoundingBox)> {
        self.tracks
            .iter()
            .filter_map(|(id, t)| t.get(&frame).map(|(b, _)| (*id, *b)))
            .collect()
    }

    pub fn to_records(&self) -> Vec<DetectionRecord> {
        let mut out: Vec<DetectionRecord> = self
            .tracks
            .iter()
            .flat_map(|(id, t)| {
                t.iter().map(move |(frame, (bbox, conf))| DetectionRecord {
                    frame: *frame,
                    identity: Some(*id),
                    bbox: *bbox,
                    confidence: *conf,
                })
            })
            .collect();
        out.sort_by_key(|r| (r.frame, r.identity));
        out
    }
}

pub fn records_to_trackset(records: &[DetectionRecord]) -> Result<TrackSet> {
    let mut set = TrackSet::default();
    for (index, r) in records.iter().enumerate() {
        let identity = r.identity.ok_or(MotIoError::MissingIdentity { index })?;
        let track = set.tracks.entry(identity).or_default();
        if track.insert(r.frame, (r.bbox, r.confidence)).is_some() {
            return Err(MotIoError::DuplicateKey {
                identity,
                frame: r.frame,
            });
        }
    }
    Ok(set)
}
