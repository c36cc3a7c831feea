//! Whole-sequence degradation with a replayable manifest.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{degrade_image, run_stages, DegradationConfig, DegradationStageSample, DegradeError, ImageBuffer};
use crate::mot_io::{load_sequence, SEQINFO_FILE};

pub const MANIFEST_FILE: &str = "degrade_manifest.jsonl";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub frame: usize,
    pub degraded: bool,
    pub seed: u64,
    pub frame_key: u64,
    pub restore_original_size: bool,
    pub stages: Vec<DegradationStageSample>,
    /// Path relative to the output sequence root.
    pub output: String,
    pub sha256: String,
}

/// Frames `1..=n` of a sequence of `length` frames are degraded.
pub fn selected_frame_count(fraction: f64, length: usize) -> usize {
    // The slack keeps e.g. 2/3 of 6 at 4 despite rounding of the fraction.
    ((fraction * length as f64 + 1e-9).floor() as usize).min(length)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    if src.is_dir() {
        fs::create_dir_all(dst)?;
        let mut entries: Vec<_> = fs::read_dir(src)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            copy_tree(&e.path(), &dst.join(e.file_name()))?;
        }
    } else {
        fs::copy(src, dst)?;
    }
    Ok(())
}

/// Degrade the leading `config.fraction` of a sequence into `out_dir`.
///
/// Everything except the image directory (metadata, annotations, detections)
/// is copied byte for byte. The manifest is written to `out_dir` and returned.
pub fn degrade_sequence(
    seq_dir: &Path,
    out_dir: &Path,
    config: &DegradationConfig,
) -> Result<Vec<FrameManifest>, DegradeError> {
    config.validate()?;
    let seq = load_sequence(seq_dir)?;
    if !seq.info.image_ext.eq_ignore_ascii_case(".png") {
        return Err(DegradeError::Config(format!(
            "frames must be PNG, sequence uses `{}`",
            seq.info.image_ext
        )));
    }
    fs::create_dir_all(out_dir)?;
    let mut entries: Vec<_> = fs::read_dir(seq_dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        if e.file_name() == seq.info.image_dir.as_str() || e.file_name() == MANIFEST_FILE {
            continue;
        }
        copy_tree(&e.path(), &out_dir.join(e.file_name()))?;
    }
    let out_images = out_dir.join(&seq.info.image_dir);
    fs::create_dir_all(&out_images)?;

    let selected = selected_frame_count(config.fraction, seq.info.length);
    let manifest: Vec<FrameManifest> = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, src)| -> Result<FrameManifest, DegradeError> {
            let frame = i + 1;
            let name = seq.info.frame_file_name(frame);
            let rel = format!("{}/{}", seq.info.image_dir, name);
            let (bytes, stages) = if frame <= selected {
                let img = ImageBuffer::load(src)?;
                let out = degrade_image(&img, config, frame as u64)?;
                (out.image.encode_png()?, out.stages)
            } else {
                (fs::read(src)?, Vec::new())
            };
            fs::write(out_images.join(&name), &bytes)?;
            Ok(FrameManifest {
                frame,
                degraded: frame <= selected,
                seed: config.seed,
                frame_key: frame as u64,
                restore_original_size: config.restore_original_size,
                stages,
                output: rel,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut text = String::new();
    for m in &manifest {
        text.push_str(&serde_json::to_string(m).map_err(|e| DegradeError::Manifest(e.to_string()))?);
        text.push('\n');
    }
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<FrameManifest>, DegradeError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| DegradeError::Manifest(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayReport {
    pub frames_checked: usize,
    /// Frames whose regenerated bytes differ from the manifest checksum.
    pub mismatches: Vec<usize>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Regenerate every frame listed in `out_dir`'s manifest from the clean
/// sequence and compare against the recorded checksums.
pub fn replay_manifest(seq_dir: &Path, out_dir: &Path) -> Result<ReplayReport, DegradeError> {
    let seq = load_sequence(seq_dir)?;
    let manifest = read_manifest(&out_dir.join(MANIFEST_FILE))?;
    if !out_dir.join(SEQINFO_FILE).is_file() {
        return Err(DegradeError::Manifest("output sequence has no metadata".into()));
    }
    let results: Vec<(usize, bool)> = manifest
        .par_iter()
        .map(|m| -> Result<(usize, bool), DegradeError> {
            let src = seq.frames.get(m.frame.wrapping_sub(1)).ok_or_else(|| {
                DegradeError::Manifest(format!("frame {} not in sequence", m.frame))
            })?;
            let bytes = if m.degraded {
                let img = ImageBuffer::load(src)?;
                let (out, _) = run_stages(&img, &m.stages, m.seed, m.frame_key, m.restore_original_size)?;
                out.encode_png()?
            } else {
                fs::read(src)?
            };
            let stored = fs::read(out_dir.join(&m.output))?;
            let hash = sha256_hex(&bytes);
            Ok((m.frame, hash == m.sha256 && bytes == stored))
        })
        .collect::<Result<_, _>>()?;
    Ok(ReplayReport {
        frames_checked: results.len(),
        mismatches: results.into_iter().filter(|(_, ok)| !ok).map(|(f, _)| f).collect(),
    })
}
