use lqtrack::fusion::{fuse, FusionParams, FusionShape};
use lqtrack::nncore::Tensor;
use lqtrack::oracle;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, shape: FusionShape) -> (FusionParams, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = FusionParams::init(shape, &mut rng).unwrap();
    let x_s = Tensor::uniform(&shape.map_shape(), 1.0, &mut rng);
    let x_q = Tensor::uniform(&shape.query_shape(), 1.0, &mut rng);
    (p, x_s, x_q)
}

fn shape() -> impl Strategy<Value = FusionShape> {
    (prop_oneof![Just(2usize), Just(4), Just(6), Just(8)], 1usize..5, 1usize..5, 1usize..10, 1usize..6)
        .prop_map(|(c, h, w, n, m)| FusionShape::new(c, h, w, n, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composed_forward_matches_oracle(seed in any::<u64>(), shape in shape()) {
        let (p, x_s, x_q) = instance(seed, shape);
        let t = fuse(&x_s, &x_q, &p, None).unwrap();
        let want = oracle::fusion::fused(&x_s, &x_q, &p.adapter, &p.vsfm);
        prop_assert_eq!(t.vsfm.f_fq.shape(), x_q.shape());
        let d = t.vsfm.f_fq.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d < 1e-9, "max diff {d:e}");
    }

    #[test]
    fn repeated_calls_are_bit_identical(seed in any::<u64>(), shape in shape()) {
        let (p, x_s, x_q) = instance(seed, shape);
        let a = fuse(&x_s, &x_q, &p, None).unwrap().vsfm.f_fq;
        let b = fuse(&x_s, &x_q, &p, None).unwrap().vsfm.f_fq;
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
