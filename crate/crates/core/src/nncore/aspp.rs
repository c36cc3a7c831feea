//! Atrous spatial pyramid pooling.
//!
//! Branches: one `1x1` projection, one dilated `3x3` convolution per rate,
//! and a global-average-pool projection broadcast back over the map. The
//! branch outputs are concatenated and merged by a `1x1` convolution.

use rand::Rng;

use super::layers::{conv2d, ConvParams};
use super::{NnError, Tensor};

pub const DEFAULT_RATES: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct AtrousBranch {
    pub conv: ConvParams,
    pub rate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsppParams {
    pub project: ConvParams,
    pub atrous: Vec<AtrousBranch>,
    pub pooled: ConvParams,
    pub merge: ConvParams,
}

impl AsppParams {
    /// Every branch is `branch_width` wide; `merge` maps to `c_out`.
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        branch_width: usize,
        c_out: usize,
        rates: &[usize],
        rng: &mut R,
    ) -> Self {
        let project = ConvParams::init(c_in, branch_width, 1, rng);
        let atrous = rates
            .iter()
            .map(|rate| AtrousBranch {
                conv: ConvParams::init(c_in, branch_width, 3, rng),
                rate: *rate,
            })
            .collect();
        let pooled = ConvParams::init(c_in, branch_width, 1, rng);
        let merge = ConvParams::init(branch_width * (rates.len() + 2), c_out, 1, rng);
        AsppParams {
            project,
            atrous,
            pooled,
            merge,
        }
    }

    pub fn branch_count(&self) -> usize {
        self.atrous.len() + 2
    }
}

pub fn aspp(x: &Tensor, p: &AsppParams) -> Result<Tensor, NnError> {
    let (c, h, w) = x.dims3()?;
    if h == 0 || w == 0 {
        return Err(NnError::Shape("aspp needs a non-empty map".into()));
    }
    let mut branches = vec![conv2d(x, &p.project, 1)?];
    for b in &p.atrous {
        branches.push(conv2d(x, &b.conv, b.rate)?);
    }

    let plane = (h * w) as f64;
    let means: Vec<f64> = (0..c)
        .map(|ch| x.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / plane)
        .collect();
    let pooled = conv2d(&Tensor::from_vec(&[c, 1, 1], means)?, &p.pooled, 1)?;
    let bw = pooled.len();
    let mut broadcast = vec![0.0; bw * h * w];
    for ch in 0..bw {
        broadcast[ch * h * w..(ch + 1) * h * w].fill(pooled.data()[ch]);
    }
    branches.push(Tensor::from_vec(&[bw, h, w], broadcast)?);

    let refs: Vec<&Tensor> = branches.iter().collect();
    conv2d(&Tensor::concat_channels(&refs)?, &p.merge, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_merge_gives_zero() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut p = AsppParams::init(3, 4, 5, &DEFAULT_RATES, &mut r);
        p.merge.zero();
        let x = Tensor::uniform(&[3, 4, 4], 1.0, &mut r);
        let y = aspp(&x, &p).unwrap();
        assert_eq!(y.shape(), &[5, 4, 4]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_branch_matches_conv2d() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for selected in 0..3 {
            let (c, bw) = (3, 4);
            let mut p = AsppParams::init(c, bw, bw, &DEFAULT_RATES, &mut r);
            p.project.zero();
            p.pooled.zero();
            for (i, b) in p.atrous.iter_mut().enumerate() {
                if i != selected {
                    b.conv.zero();
                }
            }
            // Merge picks the selected branch's channels verbatim.
            p.merge.zero();
            let offset = (selected + 1) * bw;
            let merge_in = p.merge.c_in();
            for o in 0..bw {
                p.merge.weight.data_mut()[o * merge_in + offset + o] = 1.0;
            }
            let x = Tensor::uniform(&[c, 5, 6], 1.0, &mut r);
            let y = aspp(&x, &p).unwrap();
            let b = &p.atrous[selected];
            let expect = conv2d(&x, &b.conv, b.rate).unwrap();
            assert!(y.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn keeps_spatial_extent() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(1, 1), (2, 7), (6, 3)] {
            let p = AsppParams::init(2, 3, 6, &DEFAULT_RATES, &mut r);
            let y = aspp(&Tensor::uniform(&[2, h, w], 1.0, &mut r), &p).unwrap();
            assert_eq!(y.shape(), &[6, h, w]);
        }
    }
}
