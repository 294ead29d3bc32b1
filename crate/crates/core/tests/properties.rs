//! Property tests over the structural invariants.

use proptest::prelude::*;
use saan_core::data::augment::{apply_chw, AugmentOp};
use saan_core::data::pnm;
use saan_core::metrics::MetricsReport;
use saan_core::similarity::{cosine_similarity_map, distance_from_similarity};
use saan_core::tensor::{Tape, Tensor};

fn small_dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..3, 1usize..5, 1usize..6, 1usize..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concat_then_split_recovers_the_parts(
        (n, c1, h, w) in small_dims(),
        c2 in 1usize..5,
        values in proptest::collection::vec(-10.0f64..10.0, 0..1),
    ) {
        let _ = values;
        let a = Tensor::from_vec(
            &[n, c1, h, w],
            (0..n * c1 * h * w).map(|i| i as f64 * 0.5).collect::<Vec<_>>(),
        );
        let b = Tensor::from_vec(
            &[n, c2, h, w],
            (0..n * c2 * h * w).map(|i| -(i as f64) * 0.25).collect::<Vec<_>>(),
        );
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone());
        let bv = tape.leaf(b.clone());
        let cat = tape.concat(&[av, bv], 1).unwrap();
        let parts = tape.split(cat, 1, &[c1, c2]).unwrap();
        prop_assert_eq!(tape.value(parts[0]).data(), a.data());
        prop_assert_eq!(tape.value(parts[1]).data(), b.data());
    }

    #[test]
    fn flips_and_quarter_turns_invert(
        c in 1usize..4,
        size in 1usize..8,
        seed in 0u64..1000,
    ) {
        let t = Tensor::<f32>::uniform(
            &[c, size, size],
            0.0,
            1.0,
            &mut saan_core::rng::Rng::from_seed(seed),
        );
        for op in [AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::Rot180] {
            let twice = apply_chw(&apply_chw(&t, op).unwrap(), op).unwrap();
            prop_assert_eq!(twice.data(), t.data());
        }
        let mut cur = t.clone();
        for _ in 0..4 {
            cur = apply_chw(&cur, AugmentOp::Rot90).unwrap();
        }
        prop_assert_eq!(cur.data(), t.data());
        let back = apply_chw(&apply_chw(&t, AugmentOp::Rot90).unwrap(), AugmentOp::Rot270).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn iou_is_f1_over_two_minus_f1(
        tp in 0u64..5000,
        fp in 0u64..5000,
        fn_ in 0u64..5000,
        tn in 0u64..5000,
    ) {
        let m = MetricsReport::from_counts(tp, fp, fn_, tn);
        if m.f1 > 0.0 {
            prop_assert!((m.iou - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
        }
        prop_assert!(m.precision >= 0.0 && m.precision <= 1.0);
        prop_assert!(m.iou <= m.f1 + 1e-12);
    }

    #[test]
    fn image_round_trip_stays_within_half_a_level(
        seed in 0u64..500,
        c in prop::sample::select(vec![1usize, 3]),
        h in 1usize..7,
        w in 1usize..7,
    ) {
        let t = Tensor::<f32>::uniform(
            &[c, h, w],
            0.0,
            1.0,
            &mut saan_core::rng::Rng::from_seed(seed),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pnm");
        pnm::write_image(&path, &t).unwrap();
        let back = pnm::read_image(&path).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6);
        }
    }

    #[test]
    fn distance_and_similarity_satisfy_the_circle_identity(
        seed in 0u64..500,
        c in 1usize..9,
    ) {
        let mut rng = saan_core::rng::Rng::from_seed(seed);
        // signed features: sim spans [-1, 1], d spans [0, 2]
        let f1 = Tensor::<f64>::uniform(&[1, c, 3, 3], -1.0, 1.0, &mut rng);
        let f2 = Tensor::<f64>::uniform(&[1, c, 3, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let a = tape.leaf(f1);
        let b = tape.leaf(f2);
        let sim = cosine_similarity_map(&mut tape, a, b).unwrap();
        let d = distance_from_similarity(&mut tape, sim, 1e-12).unwrap();
        for (&s, &dv) in tape.value(sim).data().iter().zip(tape.value(d).data()) {
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((0.0..=2.0 + 1e-6).contains(&dv));
            prop_assert!((dv * dv + 2.0 * s - 2.0).abs() < 1e-5);
        }
        // nonnegative (post-activation) features: sim in [0, 1], d within
        // [0, sqrt(2)]
        let f1 = Tensor::<f64>::uniform(&[1, c, 3, 3], 0.0, 1.0, &mut rng);
        let f2 = Tensor::<f64>::uniform(&[1, c, 3, 3], 0.0, 1.0, &mut rng);
        let a = tape.leaf(f1);
        let b = tape.leaf(f2);
        let sim = cosine_similarity_map(&mut tape, a, b).unwrap();
        let d = distance_from_similarity(&mut tape, sim, 1e-12).unwrap();
        for (&s, &dv) in tape.value(sim).data().iter().zip(tape.value(d).data()) {
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=2.0f64.sqrt() + 1e-6).contains(&dv));
            prop_assert!((dv * dv + 2.0 * s - 2.0).abs() < 1e-5);
        }
    }
}
