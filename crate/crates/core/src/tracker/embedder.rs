use crate::degrade::ImageBuffer;
use crate::mot_io::BoundingBox;
use crate::nncore::Tensor;

/// Maps a frame to a `[C, H, W]` semantic feature map.
pub trait FrameEmbedder {
    fn output_shape(&self) -> [usize; 3];
    fn embed(&self, img: &ImageBuffer) -> Tensor;
}

pub const GRID_CHANNELS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;

/// Hand-crafted cell statistics on a fixed grid. Channels per cell:
/// mean RGB (0..3), RGB variance (3..6), a magnitude-weighted histogram of
/// unsigned gradient orientation (6..14), luminance mean and std (14, 15).
///
/// Cells tile the image exactly; a pixel straddling a cell border
/// contributes to each side in proportion to its overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridEmbedder {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridEmbedder {
    fn default() -> Self {
        GridEmbedder { rows: 14, cols: 14 }
    }
}

fn luminance(img: &ImageBuffer, y: usize, x: usize) -> f64 {
    0.299 * img.get(y, x, 0) as f64 + 0.587 * img.get(y, x, 1) as f64 + 0.114 * img.get(y, x, 2) as f64
}

/// `(first cell, weight)` pairs: how pixel `[p, p+1)` splits across cells
/// of width `n / cells`.
fn cell_weights(p: usize, n: usize, cells: usize) -> impl Iterator<Item = (usize, f64)> {
    let size = n as f64 / cells as f64;
    let first = ((p as f64 / size).floor() as usize).min(cells - 1);
    let last = ((((p + 1) as f64) / size).ceil() as usize).min(cells);
    (first..last).filter_map(move |c| {
        let lo = (c as f64 * size).max(p as f64);
        let hi = ((c + 1) as f64 * size).min((p + 1) as f64);
        (hi > lo).then_some((c, hi - lo))
    })
}

impl FrameEmbedder for GridEmbedder {
    fn output_shape(&self) -> [usize; 3] {
        [GRID_CHANNELS, self.rows, self.cols]
    }

    fn embed(&self, img: &ImageBuffer) -> Tensor {
        let (h, w) = (img.height(), img.width());
        let cells = self.rows * self.cols;
        // Weighted first and second moments per cell.
        let mut weight = vec![0.0; cells];
        let mut sum = vec![[0.0f64; 4]; cells];
        let mut hist = vec![[0.0f64; ORIENTATION_BINS]; cells];
        let lum = |y: isize, x: isize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            luminance(img, yy, xx)
        };
        let row_w: Vec<Vec<(usize, f64)>> = (0..h).map(|y| cell_weights(y, h, self.rows).collect()).collect();
        let col_w: Vec<Vec<(usize, f64)>> = (0..w).map(|x| cell_weights(x, w, self.cols).collect()).collect();
        for y in 0..h {
            for x in 0..w {
                let px = [
                    img.get(y, x, 0) as f64,
                    img.get(y, x, 1) as f64,
                    img.get(y, x, 2) as f64,
                    luminance(img, y, x),
                ];
                let (yi, xi) = (y as isize, x as isize);
                let gx = lum(yi, xi + 1) - lum(yi, xi - 1);
                let gy = lum(yi + 1, xi) - lum(yi - 1, xi);
                let mag = gx.hypot(gy);
                let bin = if mag > 0.0 {
                    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                    ((theta / std::f64::consts::PI * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1)
                } else {
                    0
                };
                for &(r, wr) in &row_w[y] {
                    for &(c, wc) in &col_w[x] {
                        let cell = r * self.cols + c;
                        let wt = wr * wc;
                        weight[cell] += wt;
                        for k in 0..4 {
                            sum[cell][k] += wt * px[k];
                        }
                        hist[cell][bin] += wt * mag;
                    }
                }
            }
        }
        let mean: Vec<[f64; 4]> = (0..cells)
            .map(|i| {
                let wt = weight[i].max(f64::MIN_POSITIVE);
                std::array::from_fn(|k| sum[i][k] / wt)
            })
            .collect();
        // Second pass around the mean avoids cancellation in the variance.
        let mut spread = vec![[0.0f64; 4]; cells];
        for y in 0..h {
            for x in 0..w {
                let px = [
                    img.get(y, x, 0) as f64,
                    img.get(y, x, 1) as f64,
                    img.get(y, x, 2) as f64,
                    luminance(img, y, x),
                ];
                for &(r, wr) in &row_w[y] {
                    for &(c, wc) in &col_w[x] {
                        let cell = r * self.cols + c;
                        for k in 0..4 {
                            let d = px[k] - mean[cell][k];
                            spread[cell][k] += wr * wc * d * d;
                        }
                    }
                }
            }
        }

        let mut out = Tensor::zeros(&[GRID_CHANNELS, self.rows, self.cols]);
        let plane = self.rows * self.cols;
        let data = out.data_mut();
        for i in 0..cells {
            let wt = weight[i].max(f64::MIN_POSITIVE);
            for k in 0..3 {
                data[k * plane + i] = mean[i][k];
                data[(3 + k) * plane + i] = spread[i][k] / wt;
            }
            for b in 0..ORIENTATION_BINS {
                data[(6 + b) * plane + i] = hist[i][b] / wt;
            }
            data[14 * plane + i] = mean[i][3];
            data[15 * plane + i] = (spread[i][3] / wt).sqrt();
        }
        out
    }
}

/// Area-weighted average of the map cells a box covers, in image
/// coordinates. A box entirely outside the image pools to zeros.
pub fn pool_box(map: &Tensor, bbox: &BoundingBox, image_width: usize, image_height: usize) -> Vec<f64> {
    let (c, rows, cols) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let cell_w = image_width as f64 / cols as f64;
    let cell_h = image_height as f64 / rows as f64;
    let mut acc = vec![0.0; c];
    let mut total = 0.0;
    for r in 0..rows {
        let oy = (bbox.bottom().min((r + 1) as f64 * cell_h) - bbox.top.max(r as f64 * cell_h)).max(0.0);
        if oy == 0.0 {
            continue;
        }
        for col in 0..cols {
            let ox = (bbox.right().min((col + 1) as f64 * cell_w) - bbox.left.max(col as f64 * cell_w)).max(0.0);
            let wt = ox * oy;
            if wt == 0.0 {
                continue;
            }
            total += wt;
            for (k, a) in acc.iter_mut().enumerate() {
                *a += wt * map.at3(k, r, col);
            }
        }
    }
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    acc
}
