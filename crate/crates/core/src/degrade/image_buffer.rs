use std::path::Path;

use image::RgbImage;

use super::DegradeError;

/// RGB image with `f32` samples in `[0, 1]`, interleaved row-major (`H x W x 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize) -> Self {
        ImageBuffer {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        ImageBuffer {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DegradeError> {
        if data.len() != height * width * 3 {
            return Err(DegradeError::Shape(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DegradeError::Shape("non-finite sample".into()));
        }
        Ok(ImageBuffer {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut img = ImageBuffer::new(height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.data[(y * width + x) * 3 + c] = f(y, x, c).clamp(0.0, 1.0);
                }
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn clamp_in_place(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        ImageBuffer {
            height: h as usize,
            width: w as usize,
            data: img.as_raw().iter().map(|v| *v as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize(*v)).collect()
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8_bytes())
            .expect("buffer length matches dimensions")
    }

    pub fn load(path: &Path) -> Result<Self, DegradeError> {
        let img = image::open(path).map_err(|e| DegradeError::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// PNG encoding of the 8-bit quantization.
    pub fn encode_png(&self) -> Result<Vec<u8>, DegradeError> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| DegradeError::Image(e.to_string()))?;
        Ok(out.into_inner())
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Peak signal-to-noise ratio in dB over 8-bit quantized samples.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, DegradeError> {
    if a.height != b.height || a.width != b.width {
        return Err(DegradeError::Shape("psnr needs equal dimensions".into()));
    }
    let qa = a.to_rgb8_bytes();
    let qb = b.to_rgb8_bytes();
    let mse = qa
        .iter()
        .zip(&qb)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / qa.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}
