//! Multi-head self-attention and the channel/spatial gating blocks.

use rand::Rng;

use super::layers::{conv2d, relu, sigmoid, softmax, ConvParams, LinearParams};
use super::{NnError, Tensor};

pub const DEFAULT_HEADS: usize = 4;
pub const CHANNEL_REDUCTION: usize = 16;
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub heads: usize,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl MhaParams {
    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, rng: &mut R) -> Result<Self, NnError> {
        if heads == 0 || width % heads != 0 {
            return Err(NnError::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(MhaParams {
            heads,
            query: LinearParams::init(width, width, rng),
            key: LinearParams::init(width, width, rng),
            value: LinearParams::init(width, width, rng),
            output: LinearParams::init(width, width, rng),
        })
    }

    /// Largest head count `<= preferred` that divides `width`.
    pub fn heads_for(width: usize, preferred: usize) -> usize {
        (1..=preferred.max(1)).rev().find(|h| width % h == 0).unwrap_or(1)
    }

    pub fn width(&self) -> usize {
        self.query.in_features()
    }
}

/// Scaled dot-product self-attention over the rows of `x: [L, d]`.
pub fn mha(x: &Tensor, p: &MhaParams) -> Result<Tensor, NnError> {
    let (l, d) = x.dims2()?;
    if p.heads == 0 || d % p.heads != 0 {
        return Err(NnError::Shape(format!("width {d} not divisible by {} heads", p.heads)));
    }
    let q = p.query.apply_rows(x)?;
    let k = p.key.apply_rows(x)?;
    let v = p.value.apply_rows(x)?;
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = vec![0.0; l * d];
    for head in 0..p.heads {
        let off = head * dh;
        let mut scores = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                let dot: f64 = (0..dh).map(|t| q.at2(i, off + t) * k.at2(j, off + t)).sum();
                scores[i * l + j] = dot * scale;
            }
        }
        let attn = softmax(&Tensor::from_vec(&[l, l], scores)?, 1)?;
        for i in 0..l {
            for t in 0..dh {
                concat[i * d + off + t] = (0..l).map(|j| attn.at2(i, j) * v.at2(j, off + t)).sum();
            }
        }
    }
    p.output.apply_rows(&Tensor::from_vec(&[l, d], concat)?)
}

/// Attention over a `[C, H, W]` map read as `H*W` tokens of width `C`.
pub fn mha_map(x: &Tensor, p: &MhaParams) -> Result<Tensor, NnError> {
    let (_, h, w) = x.dims3()?;
    mha(&x.map_to_tokens()?, p)?.tokens_to_map(h, w)
}

/// Shared two-layer MLP applied to average- and max-pooled channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams {
    pub squeeze: LinearParams,
    pub excite: LinearParams,
}

impl ChannelAttentionParams {
    pub fn hidden_width(channels: usize) -> usize {
        (channels / CHANNEL_REDUCTION).max(1)
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let hidden = Self::hidden_width(channels);
        ChannelAttentionParams {
            squeeze: LinearParams::init(channels, hidden, rng),
            excite: LinearParams::init(hidden, channels, rng),
        }
    }

    pub fn zero(&mut self) {
        self.squeeze.zero();
        self.excite.zero();
    }
}

/// Per-channel gate `sigmoid(MLP(avg) + MLP(max))`.
pub fn channel_gate(x: &Tensor, p: &ChannelAttentionParams) -> Result<Vec<f64>, NnError> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    let mut avg = Vec::with_capacity(c);
    let mut max = Vec::with_capacity(c);
    for ch in 0..c {
        let s = &x.data()[ch * plane..(ch + 1) * plane];
        avg.push(s.iter().sum::<f64>() / plane as f64);
        max.push(s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let mlp = |v: &[f64]| -> Result<Vec<f64>, NnError> {
        let hidden: Vec<f64> = p.squeeze.apply_vec(v)?.into_iter().map(relu).collect();
        p.excite.apply_vec(&hidden)
    };
    let a = mlp(&avg)?;
    let m = mlp(&max)?;
    Ok(a.iter().zip(&m).map(|(x, y)| sigmoid(x + y)).collect())
}

pub fn channel_attention(x: &Tensor, p: &ChannelAttentionParams) -> Result<Tensor, NnError> {
    let (c, h, w) = x.dims3()?;
    let gate = channel_gate(x, p)?;
    let plane = h * w;
    let mut out = x.clone();
    for ch in 0..c {
        out.data_mut()[ch * plane..(ch + 1) * plane]
            .iter_mut()
            .for_each(|v| *v *= gate[ch]);
    }
    Ok(out)
}

/// A `7x7` convolution from the `[mean, max]` channel summary to one gate map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttentionParams {
    pub conv: ConvParams,
}

impl SpatialAttentionParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SpatialAttentionParams {
            conv: ConvParams::init(2, 1, SPATIAL_KERNEL, rng),
        }
    }

    pub fn zero(&mut self) {
        self.conv.zero();
    }
}

/// Per-pixel gate map `[1, H, W]`.
pub fn spatial_gate(x: &Tensor, p: &SpatialAttentionParams) -> Result<Tensor, NnError> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    let mut summary = vec![0.0; 2 * plane];
    for px in 0..plane {
        let vals = (0..c).map(|ch| x.data()[ch * plane + px]);
        summary[px] = vals.clone().sum::<f64>() / c as f64;
        summary[plane + px] = vals.fold(f64::NEG_INFINITY, f64::max);
    }
    let logits = conv2d(&Tensor::from_vec(&[2, h, w], summary)?, &p.conv, 1)?;
    Ok(logits.map(sigmoid))
}

pub fn spatial_attention(x: &Tensor, p: &SpatialAttentionParams) -> Result<Tensor, NnError> {
    let (c, h, w) = x.dims3()?;
    let gate = spatial_gate(x, p)?;
    let plane = h * w;
    let mut out = x.clone();
    for ch in 0..c {
        for px in 0..plane {
            out.data_mut()[ch * plane + px] *= gate.data()[px];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_head_identity_example() {
        // softmax([1, 0]) = [0.7311, 0.2689] weights V = [1, 0]; row two is uniform.
        let p = MhaParams {
            heads: 1,
            query: LinearParams::identity(1),
            key: LinearParams::identity(1),
            value: LinearParams::identity(1),
            output: LinearParams::identity(1),
        };
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap();
        let y = mha(&x, &p).unwrap();
        let e = std::f64::consts::E;
        assert!((y.data()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((y.data()[0] - 0.7311).abs() < 1e-4);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut p = MhaParams::init(8, 4, &mut rng(1)).unwrap();
        p.output.zero();
        let x = Tensor::uniform(&[5, 8], 2.0, &mut rng(2));
        assert!(mha(&x, &p).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_indivisible_width() {
        assert!(MhaParams::init(6, 4, &mut rng(1)).is_err());
        let mut p = MhaParams::init(8, 4, &mut rng(1)).unwrap();
        p.heads = 3;
        assert!(mha(&Tensor::zeros(&[2, 8]), &p).is_err());
        assert_eq!(MhaParams::heads_for(6, 4), 3);
        assert_eq!(MhaParams::heads_for(7, 4), 1);
    }

    #[test]
    fn zero_channel_mlp_halves_input() {
        let mut p = ChannelAttentionParams::init(4, &mut rng(1));
        p.zero();
        let x = Tensor::uniform(&[4, 3, 3], 1.0, &mut rng(2));
        assert_eq!(channel_attention(&x, &p).unwrap(), x.scale(0.5));
    }

    #[test]
    fn channel_argmax_is_scale_invariant() {
        let mut r = rng(5);
        for _ in 0..20 {
            let mut p = ChannelAttentionParams::init(8, &mut r);
            p.squeeze.bias.data_mut().fill(0.0);
            p.excite.bias.data_mut().fill(0.0);
            let x = Tensor::uniform(&[8, 3, 4], 1.0, &mut r);
            let argmax = |g: Vec<f64>| {
                g.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let base = argmax(channel_gate(&x, &p).unwrap());
            for k in [0.1, 0.5, 3.0] {
                assert_eq!(argmax(channel_gate(&x.scale(k), &p).unwrap()), base);
            }
        }
    }

    #[test]
    fn zero_spatial_conv_halves_input() {
        let mut p = SpatialAttentionParams::init(&mut rng(1));
        p.zero();
        let x = Tensor::uniform(&[3, 4, 5], 1.0, &mut rng(2));
        assert_eq!(spatial_attention(&x, &p).unwrap(), x.scale(0.5));
    }

    #[test]
    fn constant_input_gives_constant_spatial_gate() {
        let p = SpatialAttentionParams::init(&mut rng(4));
        let x = Tensor::full(&[3, 5, 6], 0.8);
        let g = spatial_gate(&x, &p).unwrap();
        let first = g.data()[0];
        assert!(g.data().iter().all(|v| (v - first).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn gates_are_strictly_inside_unit_interval(seed in 0u64..500, c in 1usize..6, h in 1usize..5, w in 1usize..5) {
            let mut r = rng(seed);
            let x = Tensor::uniform(&[c, h, w], 3.0, &mut r);
            let cp = ChannelAttentionParams::init(c, &mut r);
            let sp = SpatialAttentionParams::init(&mut r);
            prop_assert!(channel_gate(&x, &cp).unwrap().iter().all(|s| *s > 0.0 && *s < 1.0));
            prop_assert!(spatial_gate(&x, &sp).unwrap().data().iter().all(|s| *s > 0.0 && *s < 1.0));
            let ca = channel_attention(&x, &cp).unwrap();
            let sa = spatial_attention(&x, &sp).unwrap();
            prop_assert_eq!(ca.shape(), x.shape());
            prop_assert_eq!(sa.shape(), x.shape());
        }

        #[test]
        fn mha_keeps_shape(seed in 0u64..500, l in 1usize..7, heads in 1usize..4, per in 1usize..4) {
            let mut r = rng(seed);
            let d = heads * per;
            let p = MhaParams::init(d, heads, &mut r).unwrap();
            let x = Tensor::uniform(&[l, d], 1.0, &mut r);
            let y = mha(&x, &p).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert_eq!(y.clone(), mha(&x, &p).unwrap());
        }
    }
}
