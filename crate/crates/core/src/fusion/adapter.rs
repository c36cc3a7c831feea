use rand::Rng;

use super::{check_shape, FusionShape};
use crate::nncore::{
    channel_attention, mha_map, spatial_attention, ChannelAttentionParams, MhaParams, NamedArrays,
    NnError, ParamSet, SpatialAttentionParams, Tensor,
};

/// One channel/spatial attention pair, applied to both inputs, plus one
/// attention block per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub channel: ChannelAttentionParams,
    pub spatial: SpatialAttentionParams,
    pub mha_channel: MhaParams,
    pub mha_spatial: MhaParams,
}

impl AdapterParams {
    pub fn init<R: Rng + ?Sized>(shape: FusionShape, rng: &mut R) -> Result<Self, NnError> {
        shape.validate()?;
        Ok(AdapterParams {
            channel: ChannelAttentionParams::init(shape.channels, rng),
            spatial: SpatialAttentionParams::init(rng),
            mha_channel: MhaParams::init(shape.channels, shape.heads, rng)?,
            mha_spatial: MhaParams::init(shape.channels, shape.heads, rng)?,
        })
    }

    /// Zeroes both attention output projections, which reduces the adapter
    /// to the identity on `X_s`.
    pub fn zero_branch_outputs(&mut self) {
        self.mha_channel.output.zero();
        self.mha_spatial.output.zero();
    }
}

impl ParamSet for AdapterParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        self.channel.export(&format!("{prefix}.channel"), out);
        self.spatial.export(&format!("{prefix}.spatial"), out);
        self.mha_channel.export(&format!("{prefix}.mha_channel"), out);
        self.mha_spatial.export(&format!("{prefix}.mha_spatial"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(AdapterParams {
            channel: ChannelAttentionParams::import(&format!("{prefix}.channel"), a)?,
            spatial: SpatialAttentionParams::import(&format!("{prefix}.spatial"), a)?,
            mha_channel: MhaParams::import(&format!("{prefix}.mha_channel"), a)?,
            mha_spatial: MhaParams::import(&format!("{prefix}.mha_spatial"), a)?,
        })
    }
}

/// `(channel_attention(x), spatial_attention(x))`.
pub fn casa(x: &Tensor, params: &AdapterParams) -> Result<(Tensor, Tensor), NnError> {
    Ok((
        channel_attention(x, &params.channel)?,
        spatial_attention(x, &params.spatial)?,
    ))
}

#[derive(Debug, Clone)]
pub struct AdapterActivations {
    pub x_q: Tensor,
    pub x_s: Tensor,
    pub f_qc: Tensor,
    pub f_qs: Tensor,
    pub f_sc: Tensor,
    pub f_ss: Tensor,
    pub f_c: Tensor,
    pub f_s: Tensor,
    pub f_as: Tensor,
}

impl AdapterActivations {
    pub fn tensors(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("x_q", &self.x_q),
            ("x_s", &self.x_s),
            ("f_qc", &self.f_qc),
            ("f_qs", &self.f_qs),
            ("f_sc", &self.f_sc),
            ("f_ss", &self.f_ss),
            ("f_c", &self.f_c),
            ("f_s", &self.f_s),
            ("f_as", &self.f_as),
        ]
    }

    pub fn export(&self, prefix: &str, out: &mut NamedArrays) {
        for (name, t) in self.tensors() {
            out.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// `F_as = X_s + (MHA_c(F_qc * F_sc) + MHA_s(F_qs * F_ss))`.
pub fn adapter_forward(
    x_q: &Tensor,
    x_s: &Tensor,
    params: &AdapterParams,
) -> Result<AdapterActivations, NnError> {
    x_s.dims3()?;
    check_shape(x_q, x_s.shape(), "adapter query map")?;
    let (f_qc, f_qs) = casa(x_q, params)?;
    let (f_sc, f_ss) = casa(x_s, params)?;
    let f_c = mha_map(&f_qc.mul(&f_sc)?, &params.mha_channel)?;
    let f_s = mha_map(&f_qs.mul(&f_ss)?, &params.mha_spatial)?;
    let f_as = x_s.add(&f_c.add(&f_s)?)?;
    Ok(AdapterActivations {
        x_q: x_q.clone(),
        x_s: x_s.clone(),
        f_qc,
        f_qs,
        f_sc,
        f_ss,
        f_c,
        f_s,
        f_as,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (AdapterParams, Tensor, Tensor) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = AdapterParams::init(FusionShape::new(4, 3, 3, 5, 4), &mut r).unwrap();
        let x_q = Tensor::uniform(&[4, 3, 3], 1.0, &mut r);
        let x_s = Tensor::uniform(&[4, 3, 3], 1.0, &mut r);
        (p, x_q, x_s)
    }

    #[test]
    fn zero_gates_halve_both_branches() {
        let (mut p, x, _) = setup(1);
        p.channel.zero();
        p.spatial.zero();
        let (c, s) = casa(&x, &p).unwrap();
        assert_eq!(c, x.scale(0.5));
        assert_eq!(s, x.scale(0.5));
    }

    #[test]
    fn shared_gates_give_equal_branches_on_equal_inputs() {
        let (p, x, _) = setup(2);
        let t = adapter_forward(&x, &x, &p).unwrap();
        assert_eq!(t.f_qc, t.f_sc);
        assert_eq!(t.f_qs, t.f_ss);
    }

    #[test]
    fn zeroed_outputs_return_semantics_exactly() {
        for seed in 0..10 {
            let (mut p, x_q, x_s) = setup(seed);
            p.zero_branch_outputs();
            let t = adapter_forward(&x_q, &x_s, &p).unwrap();
            assert_eq!(t.f_as, x_s);
        }
    }

    #[test]
    fn zero_queries_with_zero_biases_return_semantics() {
        let (mut p, _, x_s) = setup(3);
        for m in [&mut p.mha_channel, &mut p.mha_spatial] {
            for l in [&mut m.query, &mut m.key, &mut m.value, &mut m.output] {
                l.bias.data_mut().fill(0.0);
            }
        }
        let t = adapter_forward(&Tensor::zeros(&[4, 3, 3]), &x_s, &p).unwrap();
        assert!(t.f_c.data().iter().all(|v| *v == 0.0));
        assert_eq!(t.f_as, x_s);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (p, x_q, _) = setup(4);
        assert!(adapter_forward(&x_q, &Tensor::zeros(&[4, 3, 2]), &p).is_err());
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let (p, x_q, x_s) = setup(5);
        let a = adapter_forward(&x_q, &x_s, &p).unwrap();
        let b = adapter_forward(&x_q, &x_s, &p).unwrap();
        assert_eq!(a.f_as.data(), b.f_as.data());
    }
}
