use rand::Rng;

use super::{check_shape, reshape_queries, FusionShape, QueryLayout};
use crate::nncore::{
    aspp, conv2d, mha_map, silu, softmax, AsppParams, ConvParams, LinearParams, MhaParams,
    NamedArrays, NnError, ParamSet, Tensor, DEFAULT_RATES,
};

/// Number of stride-1 `3x3` convolutions ahead of the final dense layer.
pub const EXTRACT_CONVS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct VsfmParams {
    pub shape: FusionShape,
    /// `M -> C`, shared with the grid form the adapter consumes.
    pub query_projection: LinearParams,
    pub mha_semantic: MhaParams,
    pub mha_query: MhaParams,
    /// `2C -> 2C`.
    pub aspp: AsppParams,
    /// `1x1`, `2C -> C`.
    pub gate_conv: ConvParams,
    pub mha_fused: MhaParams,
    /// Each halves the channel count (floored at 1) and is followed by SiLU.
    pub extract_convs: Vec<ConvParams>,
    /// Flattened last conv map to `N*M`.
    pub extract_fc: LinearParams,
}

fn extract_widths(channels: usize) -> Vec<usize> {
    let mut widths = vec![channels];
    for _ in 0..EXTRACT_CONVS {
        let last = *widths.last().unwrap();
        widths.push((last / 2).max(1));
    }
    widths
}

impl VsfmParams {
    pub fn init<R: Rng + ?Sized>(shape: FusionShape, rng: &mut R) -> Result<Self, NnError> {
        shape.validate()?;
        let c = shape.channels;
        let widths = extract_widths(c);
        let extract_convs = widths
            .windows(2)
            .map(|pair| ConvParams::init(pair[0], pair[1], 3, rng))
            .collect();
        let flat = widths[EXTRACT_CONVS] * shape.height * shape.width;
        Ok(VsfmParams {
            shape,
            query_projection: LinearParams::init(shape.query_dim, c, rng),
            mha_semantic: MhaParams::init(c, shape.heads, rng)?,
            mha_query: MhaParams::init(c, shape.heads, rng)?,
            aspp: AsppParams::init(2 * c, c, 2 * c, &DEFAULT_RATES, rng),
            gate_conv: ConvParams::init(2 * c, c, 1, rng),
            mha_fused: MhaParams::init(c, shape.heads, rng)?,
            extract_convs,
            extract_fc: LinearParams::init(flat, shape.queries * shape.query_dim, rng),
        })
    }

    /// Zeroes the final dense layer, which reduces the module to the identity
    /// on `X_q`.
    pub fn zero_extract_output(&mut self) {
        self.extract_fc.zero();
    }
}

impl ParamSet for VsfmParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        let s = self.shape;
        let dims = [s.channels, s.height, s.width, s.queries, s.query_dim, s.heads];
        out.insert(
            format!("{prefix}.shape"),
            Tensor::from_vec(&[6], dims.iter().map(|d| *d as f64).collect()).expect("rank-1"),
        );
        self.query_projection.export(&format!("{prefix}.query_projection"), out);
        self.mha_semantic.export(&format!("{prefix}.mha_semantic"), out);
        self.mha_query.export(&format!("{prefix}.mha_query"), out);
        self.aspp.export(&format!("{prefix}.aspp"), out);
        self.gate_conv.export(&format!("{prefix}.gate_conv"), out);
        self.mha_fused.export(&format!("{prefix}.mha_fused"), out);
        for (i, conv) in self.extract_convs.iter().enumerate() {
            conv.export(&format!("{prefix}.extract{i}"), out);
        }
        self.extract_fc.export(&format!("{prefix}.extract_fc"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        let dims = a.get(&format!("{prefix}.shape"))?;
        if dims.len() != 6 {
            return Err(NnError::Container(format!("{prefix}.shape needs 6 entries")));
        }
        let d: Vec<usize> = dims.data().iter().map(|v| *v as usize).collect();
        let shape = FusionShape {
            channels: d[0],
            height: d[1],
            width: d[2],
            queries: d[3],
            query_dim: d[4],
            heads: d[5],
        };
        let extract_convs = (0..EXTRACT_CONVS)
            .map(|i| ConvParams::import(&format!("{prefix}.extract{i}"), a))
            .collect::<Result<_, _>>()?;
        Ok(VsfmParams {
            shape,
            query_projection: LinearParams::import(&format!("{prefix}.query_projection"), a)?,
            mha_semantic: MhaParams::import(&format!("{prefix}.mha_semantic"), a)?,
            mha_query: MhaParams::import(&format!("{prefix}.mha_query"), a)?,
            aspp: AsppParams::import(&format!("{prefix}.aspp"), a)?,
            gate_conv: ConvParams::import(&format!("{prefix}.gate_conv"), a)?,
            mha_fused: MhaParams::import(&format!("{prefix}.mha_fused"), a)?,
            extract_convs,
            extract_fc: LinearParams::import(&format!("{prefix}.extract_fc"), a)?,
        })
    }
}

/// Test hook replacing the learned gate with a constant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum GateOverride {
    #[default]
    Learned,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VsfmOptions<'a> {
    pub gate: GateOverride,
    /// Query scores used to pick which queries fit on the grid.
    pub scores: Option<&'a [f64]>,
}

#[derive(Debug, Clone)]
pub struct VsfmActivations {
    pub x_as: Tensor,
    pub x_q: Tensor,
    pub x_rq: Tensor,
    pub layout: QueryLayout,
    pub f_sq: Tensor,
    pub f_s: Tensor,
    pub w: Tensor,
    pub f_f: Tensor,
    pub f_m: Tensor,
    pub f_e: Tensor,
    pub f_fq: Tensor,
}

impl VsfmActivations {
    pub fn tensors(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("x_as", &self.x_as),
            ("x_q", &self.x_q),
            ("x_rq", &self.x_rq),
            ("f_sq", &self.f_sq),
            ("f_s", &self.f_s),
            ("w", &self.w),
            ("f_f", &self.f_f),
            ("f_m", &self.f_m),
            ("f_e", &self.f_e),
            ("f_fq", &self.f_fq),
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

pub fn vsfm_forward(x_as: &Tensor, x_q: &Tensor, params: &VsfmParams) -> Result<VsfmActivations, NnError> {
    vsfm_forward_with(x_as, x_q, params, &VsfmOptions::default())
}

pub fn vsfm_forward_with(
    x_as: &Tensor,
    x_q: &Tensor,
    params: &VsfmParams,
    options: &VsfmOptions<'_>,
) -> Result<VsfmActivations, NnError> {
    let shape = params.shape;
    check_shape(x_as, &shape.map_shape(), "semantic map")?;
    check_shape(x_q, &shape.query_shape(), "query matrix")?;

    let (x_rq, layout) = reshape_queries(x_q, shape.map_shape(), &params.query_projection, options.scores)?;
    let semantic = mha_map(x_as, &params.mha_semantic)?;
    let queries = mha_map(&x_rq, &params.mha_query)?;
    let f_sq = aspp(&Tensor::concat_channels(&[&semantic, &queries])?, &params.aspp)?;
    let f_s = softmax(&conv2d(&f_sq, &params.gate_conv, 1)?, 0)?;

    let w = match options.gate {
        GateOverride::Learned => f_s.clone(),
        GateOverride::Ones => Tensor::full(f_s.shape(), 1.0),
        GateOverride::Zeros => Tensor::zeros(f_s.shape()),
    };
    let f_f = w
        .mul(x_as)?
        .add(&w.map(|v| 1.0 - v).mul(&x_rq)?)?;
    let f_m = mha_map(&f_f, &params.mha_fused)?;

    let mut h = f_m.clone();
    for conv in &params.extract_convs {
        h = conv2d(&h, conv, 1)?.map(silu);
    }
    let flat = h.into_data();
    let f_e = Tensor::from_vec(&shape.query_shape(), params.extract_fc.apply_vec(&flat)?)?;
    let f_fq = x_q.add(&f_e)?;

    Ok(VsfmActivations {
        x_as: x_as.clone(),
        x_q: x_q.clone(),
        x_rq,
        layout,
        f_sq,
        f_s,
        w,
        f_f,
        f_m,
        f_e,
        f_fq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, shape: FusionShape) -> (VsfmParams, Tensor, Tensor) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = VsfmParams::init(shape, &mut r).unwrap();
        let x_as = Tensor::uniform(&shape.map_shape(), 1.0, &mut r);
        let x_q = Tensor::uniform(&shape.query_shape(), 1.0, &mut r);
        (p, x_as, x_q)
    }

    fn small() -> FusionShape {
        FusionShape::new(4, 3, 3, 5, 4)
    }

    #[test]
    fn extract_widths_halve_and_floor_at_one() {
        assert_eq!(extract_widths(8), vec![8, 4, 2, 1]);
        assert_eq!(extract_widths(4), vec![4, 2, 1, 1]);
        assert_eq!(extract_widths(1), vec![1, 1, 1, 1]);
    }

    #[test]
    fn zeroed_extractor_returns_queries_exactly() {
        for seed in 0..10 {
            let (mut p, x_as, x_q) = setup(seed, small());
            p.zero_extract_output();
            let t = vsfm_forward(&x_as, &x_q, &p).unwrap();
            assert_eq!(t.f_fq, x_q);
        }
    }

    #[test]
    fn gate_endpoints_select_one_operand() {
        let (p, x_as, x_q) = setup(1, small());
        let ones = VsfmOptions {
            gate: GateOverride::Ones,
            ..Default::default()
        };
        let zeros = VsfmOptions {
            gate: GateOverride::Zeros,
            ..Default::default()
        };
        let t = vsfm_forward_with(&x_as, &x_q, &p, &ones).unwrap();
        assert_eq!(t.f_f, x_as);
        let t = vsfm_forward_with(&x_as, &x_q, &p, &zeros).unwrap();
        assert_eq!(t.f_f, t.x_rq);
    }

    #[test]
    fn rejects_wrong_query_count() {
        let (p, x_as, _) = setup(2, small());
        assert!(vsfm_forward(&x_as, &Tensor::zeros(&[4, 4]), &p).is_err());
        assert!(vsfm_forward(&Tensor::zeros(&[4, 3, 2]), &Tensor::zeros(&[5, 4]), &p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn gate_is_a_channel_distribution(seed in 0u64..10_000, c in 2usize..6, h in 1usize..4, w in 1usize..4, n in 1usize..10, m in 1usize..5) {
            let shape = FusionShape::new(c, h, w, n, m);
            let (p, x_as, x_q) = setup(seed, shape);
            let t = vsfm_forward(&x_as, &x_q, &p).unwrap();
            prop_assert_eq!(t.f_fq.shape(), x_q.shape());
            prop_assert!(t.is_finite());
            for y in 0..h {
                for x in 0..w {
                    let mut total = 0.0;
                    for ch in 0..c {
                        let g = t.w.at3(ch, y, x);
                        prop_assert!(g > 0.0 && g < 1.0);
                        total += g;
                    }
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
