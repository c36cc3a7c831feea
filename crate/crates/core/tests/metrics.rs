use lqtrack::metrics::{evaluate, hungarian, idf1, mota, hota, MATCH_THRESHOLD};
use lqtrack::mot_io::{BoundingBox, TrackSet};
use lqtrack::oracle;
use lqtrack::synth::{random_scenario, ScenarioLimits};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(seed: u64) -> (TrackSet, TrackSet) {
    random_scenario(&mut ChaCha8Rng::seed_from_u64(seed), ScenarioLimits::default())
}

fn relabel(ts: &TrackSet, f: impl Fn(i64) -> i64) -> TrackSet {
    let mut out = TrackSet::default();
    for (id, t) in &ts.tracks {
        out.tracks.insert(f(*id), t.clone());
    }
    out
}

fn cost_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (0usize..=6, 0usize..=6).prop_flat_map(|(n, m)| {
        let cell = prop_oneof![
            4 => -10.0f64..10.0,
            3 => (0i32..4).prop_map(f64::from),
            1 => Just(f64::INFINITY),
        ];
        proptest::collection::vec(proptest::collection::vec(cell, m), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hungarian_matches_enumeration(cost in cost_matrix()) {
        let got = hungarian(&cost);
        let (rows, total) = oracle::metrics::assignment(&cost);
        prop_assert_eq!(got.cost, oracle::metrics::min_cost(&cost));
        prop_assert_eq!(&got.rows, &rows);
        prop_assert_eq!(got.cost, total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn metrics_match_oracles(seed in any::<u64>()) {
        let (gt, pred) = scenario(seed);
        let h = hota(&gt, &pred).unwrap();
        let (oh, od, oa) = oracle::metrics::hota(&gt, &pred);
        prop_assert!((h.hota - oh).abs() < 1e-9 && (h.deta - od).abs() < 1e-9 && (h.assa - oa).abs() < 1e-9);
        let m = mota(&gt, &pred, MATCH_THRESHOLD).unwrap().mota;
        prop_assert!((m - oracle::metrics::mota(&gt, &pred, MATCH_THRESHOLD)).abs() < 1e-9);
        let i = idf1(&gt, &pred, MATCH_THRESHOLD).unwrap().idf1;
        prop_assert!((i - oracle::metrics::idf1(&gt, &pred, MATCH_THRESHOLD)).abs() < 1e-9);
    }

    #[test]
    fn scores_are_bounded(seed in any::<u64>()) {
        let (gt, pred) = scenario(seed);
        let r = evaluate(&gt, &pred).unwrap();
        for v in [r.hota, r.deta, r.assa, r.idf1] {
            prop_assert!((0.0..=100.0).contains(&v), "{v}");
        }
        prop_assert!(r.mota <= 100.0);
    }

    #[test]
    fn relabelling_predictions_changes_nothing(seed in any::<u64>(), shift in 1i64..1000, reverse in any::<bool>()) {
        let (gt, pred) = scenario(seed);
        let moved = relabel(&pred, |id| if reverse { 10_000 - id } else { id + shift });
        let (a, b) = (evaluate(&gt, &pred).unwrap(), evaluate(&gt, &moved).unwrap());
        // Sums run in identity order, so only the last bits may move.
        for (x, y) in a.columns().iter().zip(b.columns()) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn spurious_prediction_never_helps(seed in any::<u64>(), frame in 1i64..=5, x in 100.0f64..200.0) {
        let (gt, pred) = scenario(seed);
        let mut more = pred.clone();
        // Far outside the scenario canvas, on an identity no scenario uses.
        more.tracks.entry(99).or_default().insert(frame, (BoundingBox::new(x, x, 5.0, 5.0).unwrap(), 1.0));
        let (a, b) = (evaluate(&gt, &pred).unwrap(), evaluate(&gt, &more).unwrap());
        prop_assert!(b.mota <= a.mota);
        prop_assert!(b.deta <= a.deta);
        prop_assert_eq!(b.counts.fp, a.counts.fp + 1);
    }

    #[test]
    fn ground_truth_against_itself_is_perfect(seed in any::<u64>()) {
        let (gt, _) = scenario(seed);
        prop_assert_eq!(evaluate(&gt, &gt).unwrap().columns(), [100.0; 5]);
    }
}
