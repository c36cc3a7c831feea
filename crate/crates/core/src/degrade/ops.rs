//! The four operators of one degradation stage.

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BlurKernel, DegradeError, ImageBuffer};

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// 2D convolution with reflect padding; output keeps the input size.
pub fn convolve(img: &ImageBuffer, kernel: &BlurKernel) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let half = (kernel.size / 2) as isize;
    let mut out = ImageBuffer::new(h, w);
    // The kernel is symmetric under point reflection for every family, so
    // correlation and convolution coincide; indexing follows convolution.
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for ky in 0..kernel.size {
                let sy = reflect_index(y as isize + half - ky as isize, h);
                for kx in 0..kernel.size {
                    let wgt = kernel.at(ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let sx = reflect_index(x as isize + half - kx as isize, w);
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wgt * img.get(sy, sx, c) as f64;
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(y, x, c, *a as f32);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleFilter {
    Area,
    Bilinear,
    Bicubic,
}

impl ResampleFilter {
    pub const ALL: [ResampleFilter; 3] = [
        ResampleFilter::Area,
        ResampleFilter::Bilinear,
        ResampleFilter::Bicubic,
    ];
}

/// Source taps `(index, weight)` for every output position along one axis.
fn axis_taps(src: usize, dst: usize, filter: ResampleFilter) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let clamp = |i: isize| i.clamp(0, src as isize - 1) as usize;
    (0..dst)
        .map(|d| match filter {
            ResampleFilter::Area => {
                let lo = d as f64 * scale;
                let hi = (d + 1) as f64 * scale;
                let mut taps = Vec::new();
                let mut s = lo.floor() as usize;
                while (s as f64) < hi && s < src {
                    let cover = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    if cover > 0.0 {
                        taps.push((s, cover / (hi - lo)));
                    }
                    s += 1;
                }
                taps
            }
            ResampleFilter::Bilinear => {
                let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = pos.floor();
                let t = pos - i0;
                let i0 = i0 as isize;
                vec![(clamp(i0), 1.0 - t), (clamp(i0 + 1), t)]
            }
            ResampleFilter::Bicubic => {
                let pos = (d as f64 + 0.5) * scale - 0.5;
                let i0 = pos.floor();
                let t = pos - i0;
                let i0 = i0 as isize;
                (-1..=2)
                    .map(|k| (clamp(i0 + k), cubic(k as f64 - t)))
                    .collect()
            }
        })
        .collect()
}

/// Keys cubic convolution kernel with `a = -0.75`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.75;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Separable resampling to `height x width`; equal sizes return a copy.
pub fn resample(
    img: &ImageBuffer,
    height: usize,
    width: usize,
    filter: ResampleFilter,
) -> Result<ImageBuffer, DegradeError> {
    if height < 1 || width < 1 {
        return Err(DegradeError::DegenerateSize { height, width });
    }
    if height == img.height() && width == img.width() {
        return Ok(img.clone());
    }
    let xt = axis_taps(img.width(), width, filter);
    let yt = axis_taps(img.height(), height, filter);

    let mut rows = vec![0.0f64; img.height() * width * 3];
    for y in 0..img.height() {
        for (x, taps) in xt.iter().enumerate() {
            for c in 0..3 {
                rows[(y * width + x) * 3 + c] =
                    taps.iter().map(|(s, w)| w * img.get(y, *s, c) as f64).sum();
            }
        }
    }
    let mut out = ImageBuffer::new(height, width);
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..width {
            for c in 0..3 {
                let v: f64 = taps.iter().map(|(s, w)| w * rows[(s * width + x) * 3 + c]).sum();
                out.set(y, x, c, v as f32);
            }
        }
    }
    out.clamp_in_place();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Poisson,
}

/// Gaussian: `strength` is the standard deviation on the `[0, 1]` scale.
/// Poisson: `strength` scales the shot-noise residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub strength: f64,
}

pub fn add_noise<R: Rng + ?Sized>(img: &mut ImageBuffer, noise: NoiseSpec, rng: &mut R) {
    if noise.strength == 0.0 {
        return;
    }
    match noise.kind {
        NoiseKind::Gaussian => {
            for v in img.data_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + noise.strength * n) as f32;
            }
        }
        NoiseKind::Poisson => {
            // Photon count resolution follows the number of distinct 8-bit
            // levels, rounded up to a power of two.
            let mut seen = [false; 256];
            for v in img.data() {
                seen[super::image_buffer::quantize(*v) as usize] = true;
            }
            let levels = seen.iter().filter(|s| **s).count().max(2);
            let vals = 2f64.powf((levels as f64).log2().ceil());
            for v in img.data_mut() {
                let base = super::image_buffer::quantize(*v) as f64 / 255.0;
                let lambda = base * vals;
                let count = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                let residual = count / vals - base;
                *v = (*v as f64 + noise.strength * residual) as f32;
            }
        }
    }
    img.clamp_in_place();
}

/// JPEG encode/decode round trip at `quality` with 4:2:0 chroma subsampling.
pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer, DegradeError> {
    let (h, w) = (img.height(), img.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(DegradeError::Shape("image too large for JPEG".into()));
    }
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
    encoder
        .encode(&img.to_rgb8_bytes(), w as u16, h as u16, ColorType::Rgb)
        .map_err(|e| DegradeError::Jpeg(e.to_string()))?;
    let mut decoder = jpeg_decoder::Decoder::new(bytes.as_slice());
    let pixels = decoder.decode().map_err(|e| DegradeError::Jpeg(e.to_string()))?;
    let data: Vec<f32> = match decoder.info().map(|i| i.pixel_format) {
        Some(jpeg_decoder::PixelFormat::RGB24) => pixels.iter().map(|v| *v as f32 / 255.0).collect(),
        Some(jpeg_decoder::PixelFormat::L8) => pixels
            .iter()
            .flat_map(|v| [*v as f32 / 255.0; 3])
            .collect(),
        other => return Err(DegradeError::Jpeg(format!("unexpected pixel format {other:?}"))),
    };
    ImageBuffer::from_data(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{make_kernel, KernelFamily, KernelShape};
    use rand::SeedableRng;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x, c| ((y * 7 + x * 3 + c * 11) % 17) as f32 / 16.0)
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn delta_convolution_is_identity() {
        let img = ramp(9, 11);
        let k = BlurKernel::identity(7).unwrap();
        assert_eq!(convolve(&img, &k), img);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = ImageBuffer::filled(10, 10, 0.25);
        let k = make_kernel(KernelFamily::Anisotropic, 9, KernelShape {
            sigma_x: 2.0,
            sigma_y: 0.5,
            theta: 0.3,
            beta: 1.0,
        })
        .unwrap();
        let out = convolve(&img, &k);
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn resample_sizes_and_constants() {
        let img = ImageBuffer::filled(64, 64, 0.5);
        for f in ResampleFilter::ALL {
            let out = resample(&img, 32, 32, f).unwrap();
            assert_eq!((out.height(), out.width()), (32, 32));
            assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
            let up = resample(&img, 96, 80, f).unwrap();
            assert_eq!((up.height(), up.width()), (96, 80));
            assert!(up.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        }
        assert!(matches!(
            resample(&img, 0, 4, ResampleFilter::Area),
            Err(DegradeError::DegenerateSize { .. })
        ));
    }

    #[test]
    fn area_halving_averages_blocks() {
        let img = ramp(4, 4);
        let out = resample(&img, 2, 2, ResampleFilter::Area).unwrap();
        let expect = (img.get(0, 0, 0) + img.get(0, 1, 0) + img.get(1, 0, 0) + img.get(1, 1, 0)) / 4.0;
        assert!((out.get(0, 0, 0) - expect).abs() < 1e-6);
    }

    #[test]
    fn noise_with_zero_strength_is_noop() {
        let img = ramp(5, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for kind in [NoiseKind::Gaussian, NoiseKind::Poisson] {
            let mut out = img.clone();
            add_noise(&mut out, NoiseSpec { kind, strength: 0.0 }, &mut rng);
            assert_eq!(out, img);
        }
    }

    #[test]
    fn noise_changes_image_and_stays_in_range() {
        let img = ramp(16, 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for kind in [NoiseKind::Gaussian, NoiseKind::Poisson] {
            let mut out = img.clone();
            add_noise(&mut out, NoiseSpec { kind, strength: 0.1 }, &mut rng);
            assert_ne!(out, img);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn jpeg_keeps_flat_gray() {
        let img = ImageBuffer::filled(16, 24, 128.0 / 255.0);
        for q in [20, 30, 40] {
            let out = jpeg_roundtrip(&img, q).unwrap();
            let ref_bytes = img.to_rgb8_bytes();
            for (a, b) in out.to_rgb8_bytes().iter().zip(&ref_bytes) {
                assert!((*a as i32 - *b as i32).abs() <= 2);
            }
        }
    }

    #[test]
    fn jpeg_is_lossy_on_texture() {
        let img = ramp(32, 32);
        let out = jpeg_roundtrip(&img, 20).unwrap();
        assert_ne!(out.to_rgb8_bytes(), img.to_rgb8_bytes());
        assert_eq!(jpeg_roundtrip(&img, 20).unwrap(), out);
    }
}
