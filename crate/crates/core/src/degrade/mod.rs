//! Synthetic low-quality frames: a cascade of blur, resample, noise and JPEG
//! stages, each fully determined by `(master seed, frame key, stage index)`.

mod image_buffer;
mod kernel;
mod ops;
pub mod rng;
mod sampling;
mod sequence;

use rand::Rng;
use thiserror::Error;

pub use image_buffer::{psnr, quantize, ImageBuffer};
pub use kernel::{make_kernel, BlurKernel, KernelFamily, KernelShape};
pub use ops::{
    add_noise, convolve, jpeg_roundtrip, reflect_index, resample, NoiseKind, NoiseSpec,
    ResampleFilter,
};
pub use sampling::{sample_stage, DegradationConfig, DegradationStageSample, Range};
pub use sequence::{
    degrade_sequence, read_manifest, replay_manifest, selected_frame_count, FrameManifest,
    ReplayReport, MANIFEST_FILE,
};

use rng::{substream, Lane};

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("resampling to {height}x{width} is degenerate")]
    DegenerateSize { height: usize, width: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("image codec error: {0}")]
    Image(String),
    #[error("jpeg error: {0}")]
    Jpeg(String),
    #[error(transparent)]
    Sequence(#[from] crate::mot_io::MotIoError),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `JPEG_q(clamp(resample_r(img * k) + n))`.
pub fn apply_stage<R: Rng + ?Sized>(
    img: &ImageBuffer,
    sample: &DegradationStageSample,
    rng: &mut R,
) -> Result<ImageBuffer, DegradeError> {
    let pre = apply_stage_without_jpeg(img, sample, rng)?;
    jpeg_roundtrip(&pre, sample.jpeg_quality)
}

/// Blur, resample and noise of a stage, stopping before the JPEG codec.
pub fn apply_stage_without_jpeg<R: Rng + ?Sized>(
    img: &ImageBuffer,
    sample: &DegradationStageSample,
    rng: &mut R,
) -> Result<ImageBuffer, DegradeError> {
    let kernel = sample.kernel()?;
    let (h, w) = stage_output_size(img.height(), img.width(), sample.scale);
    let blurred = convolve(img, &kernel);
    let mut out = resample(&blurred, h, w, sample.resample_filter)?;
    add_noise(&mut out, sample.noise, rng);
    out.clamp_in_place();
    Ok(out)
}

pub fn stage_output_size(height: usize, width: usize, scale: f64) -> (usize, usize) {
    (
        (height as f64 * scale).round() as usize,
        (width as f64 * scale).round() as usize,
    )
}

/// Result of [`degrade_image`] with the record needed to replay it.
#[derive(Debug, Clone)]
pub struct DegradedImage {
    pub image: ImageBuffer,
    pub stages: Vec<DegradationStageSample>,
    pub jpeg_passes: usize,
}

pub fn degrade_image(
    img: &ImageBuffer,
    config: &DegradationConfig,
    frame_key: u64,
) -> Result<DegradedImage, DegradeError> {
    config.validate()?;
    let mut stages = Vec::with_capacity(config.stages as usize);
    for stage in 0..config.stages {
        let mut rng = substream(config.seed, frame_key, stage, Lane::Sample)?;
        stages.push(sample_stage(&mut rng, config)?);
    }
    let (image, jpeg_passes) = run_stages(
        img,
        &stages,
        config.seed,
        frame_key,
        config.restore_original_size,
    )?;
    Ok(DegradedImage {
        image,
        stages,
        jpeg_passes,
    })
}

/// Applies recorded stage samples; shared by generation and manifest replay.
pub(crate) fn run_stages(
    img: &ImageBuffer,
    stages: &[DegradationStageSample],
    seed: u64,
    frame_key: u64,
    restore: bool,
) -> Result<(ImageBuffer, usize), DegradeError> {
    let mut current = img.clone();
    let mut jpeg_passes = 0;
    for (stage, sample) in stages.iter().enumerate() {
        let mut rng = substream(seed, frame_key, stage as u32, Lane::Noise)?;
        current = apply_stage(&current, sample, &mut rng)?;
        jpeg_passes += 1;
    }
    if restore {
        current = resample(&current, img.height(), img.width(), ResampleFilter::Bicubic)?;
    }
    Ok((current, jpeg_passes))
}
